#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "conxnet/tensor.hpp"

namespace conxnet {

/// Named view of a parameter tensor and its gradient accumulator.
template <typename T>
struct ParamRef {
    std::string name;
    Tensor<T>* value = nullptr;
    Tensor<T>* grad = nullptr;
};

/// Margin used to keep sigmoid outputs strictly inside (0,1); IEEE rounding
/// would otherwise saturate to exactly 1 for large single-precision inputs.
template <typename T>
constexpr T unit_margin() {
    return std::is_same_v<T, float> ? T(1e-7) : T(1e-12);
}

template <typename T>
class Layer {
public:
    virtual ~Layer() = default;

    virtual Tensor<T> forward(const Tensor<T>& x) = 0;
    virtual Tensor<T> backward(const Tensor<T>& grad_out) = 0;

    virtual std::vector<ParamRef<T>> params() { return {}; }
    /// Persisted non-trainable state (batch-norm running statistics).
    virtual std::vector<ParamRef<T>> buffers() { return {}; }

    virtual void set_training(bool on) { training_ = on; }
    bool training() const { return training_; }

    virtual std::string kind() const = 0;

protected:
    bool training_ = true;

    void require_cache(bool have) const {
        if (!have)
            throw std::logic_error(kind() + ": backward called before forward");
    }
    void require_grad_shape(const Tensor<T>& grad_out, const Shape& expect) const {
        if (grad_out.shape != expect)
            throw std::invalid_argument(kind() + ": grad shape " + shape_str(grad_out.shape) +
                                        " does not match forward output " + shape_str(expect));
    }
};

namespace detail {

// Fixed-order 16-lane dot product; deterministic and wide enough to vectorize.
template <typename T>
inline T dot_span(const T* a, const T* b, std::ptrdiff_t n) {
    T acc[16] = {};
    std::ptrdiff_t i = 0;
    for (; i + 16 <= n; i += 16)
        for (int l = 0; l < 16; ++l) acc[l] += a[i + l] * b[i + l];
    T s = 0;
    for (int l = 0; l < 16; ++l) s += acc[l];
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

}  // namespace detail

/// Direct 2-D convolution with zero padding. Weights are (out_ch, in_ch, kH, kW);
/// per output element the taps accumulate in (channel, row, col) order on top
/// of the bias, matching the reference nested-loop formulation bit for bit.
template <typename T>
class Conv2D : public Layer<T> {
public:
    Conv2D(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, std::size_t stride = 1,
           std::size_t padding = 0)
        : in_ch_(in_ch), out_ch_(out_ch), k_(kernel), stride_(stride), pad_(padding),
          weight_({out_ch, in_ch, kernel, kernel}), bias_({out_ch}),
          grad_weight_({out_ch, in_ch, kernel, kernel}), grad_bias_({out_ch}) {
        if (in_ch == 0 || out_ch == 0)
            throw std::invalid_argument("conv2d: channel counts must be >= 1");
        if (kernel == 0) throw std::invalid_argument("conv2d: kernel extent must be >= 1");
        if (stride == 0) throw std::invalid_argument("conv2d: stride must be >= 1");
    }

    Tensor<T> forward(const Tensor<T>& x) override {
        check_input(x);
        const std::ptrdiff_t N = x.shape[0], C = in_ch_, H = x.shape[2], W = x.shape[3];
        const std::ptrdiff_t K = k_, S = stride_, P = pad_;
        if (H + 2 * P < K || W + 2 * P < K)
            throw std::invalid_argument("conv2d: degenerate output extent for input " +
                                        shape_str(x.shape) + " with kernel " + std::to_string(k_) +
                                        ", stride " + std::to_string(stride_) + ", padding " +
                                        std::to_string(pad_));
        const std::ptrdiff_t Ho = (H + 2 * P - K) / S + 1;
        const std::ptrdiff_t Wo = (W + 2 * P - K) / S + 1;
        const std::ptrdiff_t O = out_ch_;

        Tensor<T> out{{std::size_t(N), std::size_t(O), std::size_t(Ho), std::size_t(Wo)}};
        const T* xp = x.ptr();
        const T* wp = weight_.ptr();
        T* op = out.ptr();

        for (std::ptrdiff_t n = 0; n < N; ++n)
            for (std::ptrdiff_t o = 0; o < O; ++o) {
                const T bias = bias_.data[o];
                const T* wo = wp + o * C * K * K;
                for (std::ptrdiff_t i = 0; i < Ho; ++i) {
                    T* orow = op + ((n * O + o) * Ho + i) * Wo;
                    for (std::ptrdiff_t j = 0; j < Wo; ++j) orow[j] = bias;
                    for (std::ptrdiff_t c = 0; c < C; ++c) {
                        const T* wc = wo + c * K * K;
                        const T* xc = xp + (n * C + c) * H * W;
                        for (std::ptrdiff_t u = 0; u < K; ++u) {
                            const std::ptrdiff_t xi = i * S + u - P;
                            if (xi < 0 || xi >= H) continue;
                            const T* xrow = xc + xi * W;
                            const T* wrow = wc + u * K;
                            for (std::ptrdiff_t v = 0; v < K; ++v) {
                                const T wv = wrow[v];
                                if (S == 1) {
                                    const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, P - v);
                                    const std::ptrdiff_t hi =
                                        std::min<std::ptrdiff_t>(Wo, W - v + P);
                                    const T* xs = xrow + v - P;
                                    for (std::ptrdiff_t j = lo; j < hi; ++j)
                                        orow[j] += wv * xs[j];
                                } else {
                                    for (std::ptrdiff_t j = 0; j < Wo; ++j) {
                                        const std::ptrdiff_t xj = j * S + v - P;
                                        if (xj < 0 || xj >= W) continue;
                                        orow[j] += wv * xrow[xj];
                                    }
                                }
                            }
                        }
                    }
                }
            }

        input_cache_ = x;
        out_shape_ = out.shape;
        has_cache_ = true;
        return out;
    }

    Tensor<T> backward(const Tensor<T>& grad_out) override {
        this->require_cache(has_cache_);
        this->require_grad_shape(grad_out, out_shape_);
        const Tensor<T>& x = input_cache_;
        const std::ptrdiff_t N = x.shape[0], C = in_ch_, H = x.shape[2], W = x.shape[3];
        const std::ptrdiff_t K = k_, S = stride_, P = pad_;
        const std::ptrdiff_t O = out_ch_, Ho = out_shape_[2], Wo = out_shape_[3];

        grad_weight_ = Tensor<T>{{std::size_t(O), std::size_t(C), std::size_t(K), std::size_t(K)}};
        grad_bias_ = Tensor<T>{{std::size_t(O)}};
        Tensor<T> grad_in{x.shape};

        const T* gp = grad_out.ptr();
        const T* xp = x.ptr();
        const T* wp = weight_.ptr();
        T* gwp = grad_weight_.ptr();
        T* gip = grad_in.ptr();

        for (std::ptrdiff_t n = 0; n < N; ++n)
            for (std::ptrdiff_t o = 0; o < O; ++o) {
                T bsum = 0;
                for (std::ptrdiff_t i = 0; i < Ho; ++i) {
                    const T* grow = gp + ((n * O + o) * Ho + i) * Wo;
                    for (std::ptrdiff_t j = 0; j < Wo; ++j) bsum += grow[j];

                    const T* wo = wp + o * C * K * K;
                    T* gwo = gwp + o * C * K * K;
                    for (std::ptrdiff_t c = 0; c < C; ++c) {
                        const T* xc = xp + (n * C + c) * H * W;
                        T* gic = gip + (n * C + c) * H * W;
                        for (std::ptrdiff_t u = 0; u < K; ++u) {
                            const std::ptrdiff_t xi = i * S + u - P;
                            if (xi < 0 || xi >= H) continue;
                            const T* xrow = xc + xi * W;
                            T* girow = gic + xi * W;
                            const T* wrow = wo + (c * K + u) * K;
                            T* gwrow = gwo + (c * K + u) * K;
                            for (std::ptrdiff_t v = 0; v < K; ++v) {
                                if (S == 1) {
                                    const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, P - v);
                                    const std::ptrdiff_t hi =
                                        std::min<std::ptrdiff_t>(Wo, W - v + P);
                                    if (lo >= hi) continue;
                                    const T* xs = xrow + v - P;
                                    T* gis = girow + v - P;
                                    gwrow[v] += detail::dot_span(grow + lo, xs + lo, hi - lo);
                                    const T wv = wrow[v];
                                    for (std::ptrdiff_t j = lo; j < hi; ++j)
                                        gis[j] += wv * grow[j];
                                } else {
                                    const T wv = wrow[v];
                                    T wacc = 0;
                                    for (std::ptrdiff_t j = 0; j < Wo; ++j) {
                                        const std::ptrdiff_t xj = j * S + v - P;
                                        if (xj < 0 || xj >= W) continue;
                                        wacc += grow[j] * xrow[xj];
                                        girow[xj] += wv * grow[j];
                                    }
                                    gwrow[v] += wacc;
                                }
                            }
                        }
                    }
                }
                grad_bias_.data[o] += bsum;
            }

        return grad_in;
    }

    std::vector<ParamRef<T>> params() override {
        return {{"weight", &weight_, &grad_weight_}, {"bias", &bias_, &grad_bias_}};
    }

    std::string kind() const override { return "conv2d"; }

    Tensor<T>& weight() { return weight_; }
    Tensor<T>& bias() { return bias_; }
    std::size_t in_channels() const { return in_ch_; }
    std::size_t out_channels() const { return out_ch_; }
    std::size_t kernel() const { return k_; }

private:
    void check_input(const Tensor<T>& x) const {
        if (x.rank() != 4)
            throw std::invalid_argument("conv2d: input must be rank 4 (N,C,H,W), got " +
                                        shape_str(x.shape));
        if (x.shape[1] != in_ch_)
            throw std::invalid_argument("conv2d: input has " + std::to_string(x.shape[1]) +
                                        " channels, layer expects " + std::to_string(in_ch_));
    }

    std::size_t in_ch_, out_ch_, k_, stride_, pad_;
    Tensor<T> weight_, bias_, grad_weight_, grad_bias_;
    Tensor<T> input_cache_;
    Shape out_shape_;
    bool has_cache_ = false;
};

/// Per-channel batch normalization over (N,H,W). Train mode normalizes with
/// batch statistics and updates running stats as
/// running <- momentum*running + (1-momentum)*batch; eval mode applies the
/// running statistics as constants.
template <typename T>
class BatchNorm2D : public Layer<T> {
public:
    explicit BatchNorm2D(std::size_t channels, T momentum = T(0.9), T eps = T(1e-5))
        : channels_(channels), momentum_(momentum), eps_(eps), gamma_({channels}, T(1)),
          beta_({channels}), grad_gamma_({channels}), grad_beta_({channels}),
          running_mean_({channels}), running_var_({channels}, T(1)) {
        if (channels == 0) throw std::invalid_argument("batchnorm: channels must be >= 1");
        if (!(momentum > T(0) && momentum < T(1)))
            throw std::invalid_argument("batchnorm: momentum must lie in (0,1)");
        if (!(eps > T(0))) throw std::invalid_argument("batchnorm: epsilon must be positive");
    }

    Tensor<T> forward(const Tensor<T>& x) override {
        check_input(x);
        const std::size_t N = x.shape[0], C = channels_, H = x.shape[2], W = x.shape[3];
        const std::size_t hw = H * W;
        const std::size_t m = N * hw;

        Tensor<T> out{x.shape};
        xhat_ = Tensor<T>{x.shape};
        inv_std_.assign(C, T(0));

        if (this->training_) {
            if (N < 2)
                throw std::invalid_argument(
                    "batchnorm: train mode requires batch size >= 2, got " + std::to_string(N));

            mean_.assign(C, T(0));
            var_.assign(C, T(0));
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t c = 0; c < C; ++c) {
                    const T* xc = x.ptr() + (n * C + c) * hw;
                    T s = 0;
                    for (std::size_t i = 0; i < hw; ++i) s += xc[i];
                    mean_[c] += s;
                }
            for (std::size_t c = 0; c < C; ++c) mean_[c] /= static_cast<T>(m);

            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t c = 0; c < C; ++c) {
                    const T* xc = x.ptr() + (n * C + c) * hw;
                    const T mu = mean_[c];
                    T s = 0;
                    for (std::size_t i = 0; i < hw; ++i) {
                        const T d = xc[i] - mu;
                        s += d * d;
                    }
                    var_[c] += s;
                }
            for (std::size_t c = 0; c < C; ++c) var_[c] /= static_cast<T>(m);

            for (std::size_t c = 0; c < C; ++c)
                inv_std_[c] = T(1) / std::sqrt(var_[c] + eps_);

            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t c = 0; c < C; ++c) {
                    const T mu = mean_[c], is = inv_std_[c];
                    const T g = gamma_.data[c], b = beta_.data[c];
                    const T* xc = x.ptr() + (n * C + c) * hw;
                    T* hc = xhat_.ptr() + (n * C + c) * hw;
                    T* oc = out.ptr() + (n * C + c) * hw;
                    for (std::size_t i = 0; i < hw; ++i) {
                        const T h = (xc[i] - mu) * is;
                        hc[i] = h;
                        oc[i] = g * h + b;
                    }
                }

            for (std::size_t c = 0; c < C; ++c) {
                running_mean_.data[c] = momentum_ * running_mean_.data[c] +
                                        (T(1) - momentum_) * mean_[c];
                running_var_.data[c] = momentum_ * running_var_.data[c] +
                                       (T(1) - momentum_) * var_[c];
            }
            cache_train_ = true;
        } else {
            for (std::size_t c = 0; c < C; ++c)
                inv_std_[c] = T(1) / std::sqrt(running_var_.data[c] + eps_);
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t c = 0; c < C; ++c) {
                    const T mu = running_mean_.data[c], is = inv_std_[c];
                    const T g = gamma_.data[c], b = beta_.data[c];
                    const T* xc = x.ptr() + (n * C + c) * hw;
                    T* hc = xhat_.ptr() + (n * C + c) * hw;
                    T* oc = out.ptr() + (n * C + c) * hw;
                    for (std::size_t i = 0; i < hw; ++i) {
                        const T h = (xc[i] - mu) * is;
                        hc[i] = h;
                        oc[i] = g * h + b;
                    }
                }
            cache_train_ = false;
        }

        in_shape_ = x.shape;
        has_cache_ = true;
        return out;
    }

    Tensor<T> backward(const Tensor<T>& grad_out) override {
        this->require_cache(has_cache_);
        this->require_grad_shape(grad_out, in_shape_);
        const std::size_t N = in_shape_[0], C = channels_;
        const std::size_t hw = in_shape_[2] * in_shape_[3];
        const std::size_t m = N * hw;

        grad_gamma_ = Tensor<T>{{C}};
        grad_beta_ = Tensor<T>{{C}};
        Tensor<T> grad_in{in_shape_};

        std::vector<T> gsum(C, T(0)), gxsum(C, T(0));
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t c = 0; c < C; ++c) {
                const T* gc = grad_out.ptr() + (n * C + c) * hw;
                const T* hc = xhat_.ptr() + (n * C + c) * hw;
                T s = 0, sx = 0;
                for (std::size_t i = 0; i < hw; ++i) {
                    s += gc[i];
                    sx += gc[i] * hc[i];
                }
                gsum[c] += s;
                gxsum[c] += sx;
            }
        for (std::size_t c = 0; c < C; ++c) {
            grad_beta_.data[c] = gsum[c];
            grad_gamma_.data[c] = gxsum[c];
        }

        if (cache_train_) {
            // Full batch-statistics gradient: the batch mean and variance
            // depend on every input element of the channel.
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t c = 0; c < C; ++c) {
                    const T scale = gamma_.data[c] * inv_std_[c];
                    const T mg = gsum[c] / static_cast<T>(m);
                    const T mgx = gxsum[c] / static_cast<T>(m);
                    const T* gc = grad_out.ptr() + (n * C + c) * hw;
                    const T* hc = xhat_.ptr() + (n * C + c) * hw;
                    T* ic = grad_in.ptr() + (n * C + c) * hw;
                    for (std::size_t i = 0; i < hw; ++i)
                        ic[i] = scale * (gc[i] - mg - hc[i] * mgx);
                }
        } else {
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t c = 0; c < C; ++c) {
                    const T scale = gamma_.data[c] * inv_std_[c];
                    const T* gc = grad_out.ptr() + (n * C + c) * hw;
                    T* ic = grad_in.ptr() + (n * C + c) * hw;
                    for (std::size_t i = 0; i < hw; ++i) ic[i] = scale * gc[i];
                }
        }
        return grad_in;
    }

    std::vector<ParamRef<T>> params() override {
        return {{"gamma", &gamma_, &grad_gamma_}, {"beta", &beta_, &grad_beta_}};
    }
    std::vector<ParamRef<T>> buffers() override {
        return {{"running_mean", &running_mean_, nullptr},
                {"running_var", &running_var_, nullptr}};
    }

    std::string kind() const override { return "batchnorm2d"; }

    Tensor<T>& gamma() { return gamma_; }
    Tensor<T>& beta() { return beta_; }
    Tensor<T>& running_mean() { return running_mean_; }
    Tensor<T>& running_var() { return running_var_; }
    std::size_t channels() const { return channels_; }

private:
    void check_input(const Tensor<T>& x) const {
        if (x.rank() != 4)
            throw std::invalid_argument("batchnorm: input must be rank 4 (N,C,H,W), got " +
                                        shape_str(x.shape));
        if (x.shape[1] != channels_)
            throw std::invalid_argument("batchnorm: input has " + std::to_string(x.shape[1]) +
                                        " channels, layer expects " + std::to_string(channels_));
    }

    std::size_t channels_;
    T momentum_, eps_;
    Tensor<T> gamma_, beta_, grad_gamma_, grad_beta_, running_mean_, running_var_;
    Tensor<T> xhat_;
    std::vector<T> mean_, var_, inv_std_;
    Shape in_shape_;
    bool cache_train_ = false;
    bool has_cache_ = false;
};

/// 2x2 max pooling with stride 2, floor division on odd extents. Ties resolve
/// to the first element of the window in row-major scan order, so backward
/// routing is deterministic.
template <typename T>
class MaxPool2D : public Layer<T> {
public:
    Tensor<T> forward(const Tensor<T>& x) override {
        if (x.rank() != 4)
            throw std::invalid_argument("maxpool: input must be rank 4 (N,C,H,W), got " +
                                        shape_str(x.shape));
        const std::size_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
        if (H < 2 || W < 2)
            throw std::invalid_argument("maxpool: spatial extent " + shape_str(x.shape) +
                                        " is smaller than the 2x2 window");
        const std::size_t Ho = H / 2, Wo = W / 2;

        Tensor<T> out{{N, C, Ho, Wo}};
        argmax_.assign(N * C * Ho * Wo, 0);

        const T* xp = x.ptr();
        T* op = out.ptr();
        std::size_t cell = 0;
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t c = 0; c < C; ++c) {
                const std::size_t base = (n * C + c) * H * W;
                for (std::size_t i = 0; i < Ho; ++i)
                    for (std::size_t j = 0; j < Wo; ++j, ++cell) {
                        std::size_t best = base + (2 * i) * W + 2 * j;
                        T bv = xp[best];
                        const std::size_t cand[3] = {base + (2 * i) * W + 2 * j + 1,
                                                     base + (2 * i + 1) * W + 2 * j,
                                                     base + (2 * i + 1) * W + 2 * j + 1};
                        for (std::size_t k = 0; k < 3; ++k)
                            if (xp[cand[k]] > bv) {  // strict: first index wins ties
                                bv = xp[cand[k]];
                                best = cand[k];
                            }
                        op[cell] = bv;
                        argmax_[cell] = best;
                    }
            }

        input_cache_ = x;
        in_shape_ = x.shape;
        out_shape_ = out.shape;
        has_cache_ = true;
        return out;
    }

    Tensor<T> backward(const Tensor<T>& grad_out) override {
        this->require_cache(has_cache_);
        this->require_grad_shape(grad_out, out_shape_);
        Tensor<T> grad_in{in_shape_};
        for (std::size_t cell = 0; cell < argmax_.size(); ++cell)
            grad_in.data[argmax_[cell]] += grad_out.data[cell];
        return grad_in;
    }

    std::string kind() const override { return "maxpool2d"; }

    /// Input of the most recent forward; the pre-pool activations grad-cam reads.
    const Tensor<T>& cached_input() const {
        this->require_cache(has_cache_);
        return input_cache_;
    }
    const std::vector<std::size_t>& argmax() const { return argmax_; }

private:
    Tensor<T> input_cache_;
    std::vector<std::size_t> argmax_;
    Shape in_shape_, out_shape_;
    bool has_cache_ = false;
};

/// Fully connected layer: y = x*W + b with W (in, out).
template <typename T>
class Dense : public Layer<T> {
public:
    Dense(std::size_t in, std::size_t out)
        : in_(in), out_(out), weight_({in, out}), bias_({out}), grad_weight_({in, out}),
          grad_bias_({out}) {
        if (in == 0 || out == 0) throw std::invalid_argument("dense: widths must be >= 1");
    }

    Tensor<T> forward(const Tensor<T>& x) override {
        if (x.rank() != 2)
            throw std::invalid_argument("dense: input must be rank 2 (N,width), got " +
                                        shape_str(x.shape));
        if (x.shape[1] != in_)
            throw std::invalid_argument("dense: input width " + std::to_string(x.shape[1]) +
                                        " does not match layer width " + std::to_string(in_));
        Tensor<T> out = matmul(x, weight_);
        for (std::size_t n = 0; n < x.shape[0]; ++n) {
            T* row = out.ptr() + n * out_;
            for (std::size_t o = 0; o < out_; ++o) row[o] += bias_.data[o];
        }
        input_cache_ = x;
        out_shape_ = out.shape;
        has_cache_ = true;
        return out;
    }

    Tensor<T> backward(const Tensor<T>& grad_out) override {
        this->require_cache(has_cache_);
        this->require_grad_shape(grad_out, out_shape_);
        const std::size_t N = input_cache_.shape[0];

        grad_weight_ = Tensor<T>{{in_, out_}};
        grad_bias_ = Tensor<T>{{out_}};
        Tensor<T> grad_in{{N, in_}};

        for (std::size_t n = 0; n < N; ++n) {
            const T* grow = grad_out.ptr() + n * out_;
            const T* xrow = input_cache_.ptr() + n * in_;
            for (std::size_t o = 0; o < out_; ++o) grad_bias_.data[o] += grow[o];
            for (std::size_t i = 0; i < in_; ++i) {
                const T xv = xrow[i];
                T* gwrow = grad_weight_.ptr() + i * out_;
                for (std::size_t o = 0; o < out_; ++o) gwrow[o] += xv * grow[o];
            }
            T* girow = grad_in.ptr() + n * in_;
            for (std::size_t i = 0; i < in_; ++i)
                girow[i] = detail::dot_span(grow, weight_.ptr() + i * out_,
                                            static_cast<std::ptrdiff_t>(out_));
        }
        return grad_in;
    }

    std::vector<ParamRef<T>> params() override {
        return {{"weight", &weight_, &grad_weight_}, {"bias", &bias_, &grad_bias_}};
    }

    std::string kind() const override { return "dense"; }

    Tensor<T>& weight() { return weight_; }
    Tensor<T>& bias() { return bias_; }
    std::size_t in_width() const { return in_; }
    std::size_t out_width() const { return out_; }

private:
    std::size_t in_, out_;
    Tensor<T> weight_, bias_, grad_weight_, grad_bias_;
    Tensor<T> input_cache_;
    Shape out_shape_;
    bool has_cache_ = false;
};

/// max(0,x); the derivative at exactly 0 is defined as 0.
template <typename T>
class ReLULayer : public Layer<T> {
public:
    Tensor<T> forward(const Tensor<T>& x) override {
        Tensor<T> out{x.shape};
        for (std::size_t i = 0; i < x.size(); ++i)
            out.data[i] = x.data[i] > T(0) ? x.data[i] : T(0);
        input_cache_ = x;
        has_cache_ = true;
        return out;
    }

    Tensor<T> backward(const Tensor<T>& grad_out) override {
        this->require_cache(has_cache_);
        this->require_grad_shape(grad_out, input_cache_.shape);
        Tensor<T> grad_in{input_cache_.shape};
        for (std::size_t i = 0; i < grad_in.size(); ++i)
            grad_in.data[i] = input_cache_.data[i] > T(0) ? grad_out.data[i] : T(0);
        return grad_in;
    }

    std::string kind() const override { return "relu"; }

private:
    Tensor<T> input_cache_;
    bool has_cache_ = false;
};

namespace detail {
template <typename T>
inline T sigmoid_scalar(T v) {
    T y;
    if (v >= T(0)) {
        y = T(1) / (T(1) + std::exp(-v));
    } else {
        const T e = std::exp(v);
        y = e / (T(1) + e);
    }
    const T margin = unit_margin<T>();
    return std::clamp(y, margin, T(1) - margin);
}
}  // namespace detail

/// Logistic unit; output strictly in (0,1), derivative y*(1-y) from the
/// cached output.
template <typename T>
class SigmoidLayer : public Layer<T> {
public:
    Tensor<T> forward(const Tensor<T>& x) override {
        Tensor<T> out{x.shape};
        for (std::size_t i = 0; i < x.size(); ++i)
            out.data[i] = detail::sigmoid_scalar(x.data[i]);
        output_cache_ = out;
        has_cache_ = true;
        return out;
    }

    Tensor<T> backward(const Tensor<T>& grad_out) override {
        this->require_cache(has_cache_);
        this->require_grad_shape(grad_out, output_cache_.shape);
        Tensor<T> grad_in{output_cache_.shape};
        for (std::size_t i = 0; i < grad_in.size(); ++i) {
            const T y = output_cache_.data[i];
            grad_in.data[i] = grad_out.data[i] * y * (T(1) - y);
        }
        return grad_in;
    }

    std::string kind() const override { return "sigmoid"; }

private:
    Tensor<T> output_cache_;
    bool has_cache_ = false;
};

/// Row-major reshape (N, ...) -> (N, product of the rest); backward restores
/// the original shape.
template <typename T>
class FlattenLayer : public Layer<T> {
public:
    Tensor<T> forward(const Tensor<T>& x) override {
        if (x.rank() < 2)
            throw std::invalid_argument("flatten: input must have rank >= 2, got " +
                                        shape_str(x.shape));
        in_shape_ = x.shape;
        has_cache_ = true;
        Tensor<T> out{{x.shape[0], x.size() / x.shape[0]}};
        out.data = x.data;
        return out;
    }

    Tensor<T> backward(const Tensor<T>& grad_out) override {
        this->require_cache(has_cache_);
        this->require_grad_shape(grad_out, {in_shape_[0], shape_numel(in_shape_) / in_shape_[0]});
        Tensor<T> grad_in{in_shape_};
        grad_in.data = grad_out.data;
        return grad_in;
    }

    std::string kind() const override { return "flatten"; }

private:
    Shape in_shape_;
    bool has_cache_ = false;
};

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    Tensor<T> out{x.shape};
    for (std::size_t i = 0; i < x.size(); ++i)
        out.data[i] = x.data[i] > T(0) ? x.data[i] : T(0);
    return out;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    Tensor<T> out{x.shape};
    for (std::size_t i = 0; i < x.size(); ++i)
        out.data[i] = detail::sigmoid_scalar(x.data[i]);
    return out;
}

}  // namespace conxnet
