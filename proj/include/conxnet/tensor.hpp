#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

namespace conxnet {

/// Ordered list of extents, outermost first. Activations use (batch, channels,
/// height, width).
using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << ", ";
        os << s[i];
    }
    os << ')';
    return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

inline void validate_shape(const Shape& s) {
    if (s.size() > 4)
        throw std::invalid_argument("tensor rank " + std::to_string(s.size()) +
                                    " exceeds 4: " + shape_str(s));
    for (std::size_t d : s)
        if (d == 0)
            throw std::invalid_argument("tensor extent must be >= 1, got " + shape_str(s));
}

/// Dense row-major N-d array of floating-point values, rank 0..4.
/// Plain value type: copy/move freely, no views, every op materializes.
template <typename T>
struct Tensor {
    static_assert(std::is_floating_point_v<T>);

    Shape shape;
    std::vector<T> data;

    Tensor() : data(1, T(0)) {}  // rank-0 scalar

    explicit Tensor(Shape s, T fill = T(0)) : shape(std::move(s)) {
        validate_shape(shape);
        data.assign(shape_numel(shape), fill);
    }

    static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
    static Tensor full(Shape s, T v) { return Tensor(std::move(s), v); }

    static Tensor from(Shape s, std::vector<T> values) {
        Tensor t(std::move(s));
        if (values.size() != t.data.size())
            throw std::invalid_argument("tensor data length " + std::to_string(values.size()) +
                                        " does not match shape " + shape_str(t.shape));
        t.data = std::move(values);
        return t;
    }

    std::size_t size() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    std::size_t extent(std::size_t axis) const {
        assert(axis < shape.size());
        return shape[axis];
    }

    template <typename... Ix>
    std::size_t offset(Ix... ix) const {
        assert(sizeof...(ix) == rank());
        const std::size_t idx[] = {static_cast<std::size_t>(ix)...};
        std::size_t off = 0;
        for (std::size_t a = 0; a < sizeof...(ix); ++a) {
            assert(idx[a] < shape[a]);
            off = off * shape[a] + idx[a];
        }
        return off;
    }

    template <typename... Ix>
    T& operator()(Ix... ix) { return data[offset(ix...)]; }
    template <typename... Ix>
    const T& operator()(Ix... ix) const { return data[offset(ix...)]; }

    T* ptr() { return data.data(); }
    const T* ptr() const { return data.data(); }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out{shape};
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

template <typename T>
bool all_finite(const Tensor<T>& t) {
    for (T v : t.data)
        if (!std::isfinite(v)) return false;
    return true;
}

enum class EwOp { add, sub, mul };

namespace detail {
template <typename T>
inline T apply_ew(EwOp op, T a, T b) {
    switch (op) {
        case EwOp::add: return a + b;
        case EwOp::sub: return a - b;
        default: return a * b;
    }
}
}  // namespace detail

/// Pointwise add/sub/mul. Shapes must match, or b may be a per-channel vector
/// broadcast over (batch, H, W) of a rank-4 a.
template <typename T>
Tensor<T> elementwise(EwOp op, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.same_shape(b)) {
        Tensor<T> out{a.shape};
        for (std::size_t i = 0; i < a.size(); ++i)
            out.data[i] = detail::apply_ew(op, a.data[i], b.data[i]);
        return out;
    }
    if (a.rank() == 4 && b.rank() == 1 && b.shape[0] == a.shape[1]) {
        Tensor<T> out{a.shape};
        const std::size_t n = a.shape[0], c = a.shape[1], hw = a.shape[2] * a.shape[3];
        std::size_t i = 0;
        for (std::size_t in = 0; in < n; ++in)
            for (std::size_t ic = 0; ic < c; ++ic) {
                const T bv = b.data[ic];
                for (std::size_t s = 0; s < hw; ++s, ++i)
                    out.data[i] = detail::apply_ew(op, a.data[i], bv);
            }
        return out;
    }
    throw std::invalid_argument("elementwise: shape mismatch " + shape_str(a.shape) + " vs " +
                                shape_str(b.shape));
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(EwOp::add, a, b); }
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(EwOp::sub, a, b); }
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(EwOp::mul, a, b); }

/// c[i][j] = sum_k a[i][k] * b[k][j], k ascending per output element.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2)
        throw std::invalid_argument("matmul: expects rank-2 operands, got " +
                                    shape_str(a.shape) + " and " + shape_str(b.shape));
    if (a.shape[1] != b.shape[0])
        throw std::invalid_argument("matmul: inner dimensions differ, " + shape_str(a.shape) +
                                    " x " + shape_str(b.shape));
    const std::size_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
    Tensor<T> c{{m, n}};
    for (std::size_t i = 0; i < m; ++i) {
        T* crow = c.ptr() + i * n;
        const T* arow = a.ptr() + i * k;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const T av = arow[kk];
            const T* brow = b.ptr() + kk * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    return c;
}

enum class ReduceOp { sum, mean, max };

/// Reduce over a set of axes. Reduced extents are removed, or kept as 1 when
/// keepdims is set. Accumulation order is the row-major input scan, always.
template <typename T>
Tensor<T> reduce(ReduceOp op, const Tensor<T>& t, const std::vector<std::size_t>& axes,
                 bool keepdims = false) {
    std::vector<bool> reduced(t.rank(), false);
    for (std::size_t ax : axes) {
        if (ax >= t.rank())
            throw std::invalid_argument("reduce: axis " + std::to_string(ax) +
                                        " invalid for shape " + shape_str(t.shape));
        reduced[ax] = true;
    }

    Shape out_shape;
    std::size_t count = 1;
    for (std::size_t a = 0; a < t.rank(); ++a) {
        if (reduced[a]) {
            count *= t.shape[a];
            if (keepdims) out_shape.push_back(1);
        } else {
            out_shape.push_back(t.shape[a]);
        }
    }

    Tensor<T> out{out_shape};
    if (op == ReduceOp::max)
        std::fill(out.data.begin(), out.data.end(), -std::numeric_limits<T>::infinity());

    // Per input axis: its stride in the output index (0 when reduced away).
    std::vector<std::size_t> out_mul(t.rank(), 0);
    {
        std::size_t stride = 1;
        for (std::size_t a = t.rank(); a-- > 0;) {
            if (!reduced[a]) {
                out_mul[a] = stride;
                stride *= t.shape[a];
            } else if (keepdims) {
                out_mul[a] = 0;  // extent 1 in the output
            }
        }
    }

    std::vector<std::size_t> idx(t.rank(), 0);
    for (std::size_t lin = 0; lin < t.size(); ++lin) {
        std::size_t o = 0;
        for (std::size_t a = 0; a < t.rank(); ++a) o += out_mul[a] * idx[a];
        if (op == ReduceOp::max)
            out.data[o] = std::max(out.data[o], t.data[lin]);
        else
            out.data[o] += t.data[lin];
        for (std::size_t a = t.rank(); a-- > 0;) {
            if (++idx[a] < t.shape[a]) break;
            idx[a] = 0;
        }
    }

    if (op == ReduceOp::mean)
        for (T& v : out.data) v /= static_cast<T>(count);
    return out;
}

template <typename T>
T reduce_scalar(ReduceOp op, const Tensor<T>& t) {
    std::vector<std::size_t> axes(t.rank());
    for (std::size_t a = 0; a < axes.size(); ++a) axes[a] = a;
    return reduce(op, t, axes).data[0];
}

template <typename T>
Tensor<T> uniform_tensor(Shape s, T lo, T hi, std::mt19937_64& rng) {
    Tensor<T> t{std::move(s)};
    std::uniform_real_distribution<T> dist(lo, hi);
    for (T& v : t.data) v = dist(rng);
    return t;
}

template <typename T>
Tensor<T> uniform_tensor(Shape s, T lo, T hi, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return uniform_tensor(std::move(s), lo, hi, rng);
}

}  // namespace conxnet
