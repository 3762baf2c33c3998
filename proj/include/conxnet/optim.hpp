#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "conxnet/layers.hpp"
#include "conxnet/tensor.hpp"

namespace conxnet {

/// Raised when a non-finite value surfaces during training.
struct NonFiniteError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

template <typename T>
struct LossValue {
    T value;
    Tensor<T> grad;  // d(loss)/d(predictions), same shape as the predictions
};

/// Mean binary cross-entropy. Probabilities are clamped to
/// [delta, 1-delta] before the logs; the clamp is flat, so elements outside
/// it get zero gradient. Targets must be exactly 0 or 1.
template <typename T>
LossValue<T> bce_loss(const Tensor<T>& preds, const Tensor<T>& targets, T delta = T(1e-7)) {
    if (preds.shape != targets.shape)
        throw std::invalid_argument("bce: prediction shape " + shape_str(preds.shape) +
                                    " does not match target shape " + shape_str(targets.shape));
    const std::size_t n = preds.size();
    if (n == 0) throw std::invalid_argument("bce: empty prediction tensor");

    LossValue<T> out;
    out.grad = Tensor<T>{preds.shape};
    const T lo = delta, hi = T(1) - delta;
    T sum = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const T t = targets.data[i];
        if (t != T(0) && t != T(1))
            throw std::invalid_argument("bce: target " + std::to_string(static_cast<double>(t)) +
                                        " at index " + std::to_string(i) + " is not 0 or 1");
        const T p = preds.data[i];
        const T pc = std::clamp(p, lo, hi);
        sum += t == T(1) ? -std::log(pc) : -std::log(T(1) - pc);
        if (p < lo || p > hi) {
            out.grad.data[i] = T(0);
        } else {
            out.grad.data[i] = (pc - t) / (pc * (T(1) - pc) * static_cast<T>(n));
        }
    }
    out.value = sum / static_cast<T>(n);
    return out;
}

/// Adam moment buffers keyed by parameter name, plus the shared step count.
template <typename T>
struct AdamState {
    T lr = T(1e-3);
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T eps = T(1e-8);
    std::int64_t t = 0;
    std::map<std::string, std::pair<Tensor<T>, Tensor<T>>> moments;  // name -> (m, v)
};

/// One Adam update over the given parameters. Moment buffers are created on
/// first sight of a name; the step count advances once per call.
template <typename T>
void adam_step(AdamState<T>& state, const std::vector<ParamRef<T>>& params) {
    state.t += 1;
    const T bc1 = T(1) - std::pow(state.beta1, static_cast<T>(state.t));
    const T bc2 = T(1) - std::pow(state.beta2, static_cast<T>(state.t));
    for (const ParamRef<T>& p : params) {
        if (p.value == nullptr || p.grad == nullptr)
            throw std::invalid_argument("adam: parameter '" + p.name + "' has no value/grad");
        auto it = state.moments.find(p.name);
        if (it == state.moments.end()) {
            it = state.moments
                     .emplace(p.name, std::make_pair(Tensor<T>{p.value->shape},
                                                     Tensor<T>{p.value->shape}))
                     .first;
        }
        Tensor<T>& m = it->second.first;
        Tensor<T>& v = it->second.second;
        if (m.shape != p.value->shape)
            throw std::invalid_argument("adam: parameter '" + p.name + "' changed shape from " +
                                        shape_str(m.shape) + " to " + shape_str(p.value->shape));
        if (p.grad->shape != p.value->shape)
            throw std::invalid_argument("adam: gradient shape " + shape_str(p.grad->shape) +
                                        " does not match parameter '" + p.name + "' shape " +
                                        shape_str(p.value->shape));
        for (std::size_t i = 0; i < m.size(); ++i) {
            const T g = p.grad->data[i];
            m.data[i] = state.beta1 * m.data[i] + (T(1) - state.beta1) * g;
            v.data[i] = state.beta2 * v.data[i] + (T(1) - state.beta2) * g * g;
            const T mhat = m.data[i] / bc1;
            const T vhat = v.data[i] / bc2;
            p.value->data[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
        }
    }
}

struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0.0;
    std::size_t checked = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double tolerance = 1e-4;
    bool pass = true;
};

namespace detail {

inline double rel_err(double a, double n) {
    return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-8});
}

/// Central finite differences on up to max_samples elements of `param`,
/// compared against `analytic` under the callers re-evaluation closure.
template <typename T, typename LossFn>
GradCheckEntry fd_check_tensor(const std::string& name, Tensor<T>& param,
                               const Tensor<T>& analytic, LossFn&& loss, T step,
                               std::size_t max_samples, std::mt19937_64& rng) {
    GradCheckEntry entry;
    entry.name = name;
    const std::size_t n = param.size();
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    if (n > max_samples) {
        for (std::size_t i = 0; i < max_samples; ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, n - 1);
            std::swap(idx[i], idx[pick(rng)]);
        }
        idx.resize(max_samples);
    }
    for (std::size_t i : idx) {
        const T saved = param.data[i];
        param.data[i] = saved + step;
        const double lp = static_cast<double>(loss());
        param.data[i] = saved - step;
        const double lm = static_cast<double>(loss());
        param.data[i] = saved;
        const double numeric = (lp - lm) / (2.0 * static_cast<double>(step));
        const double a = static_cast<double>(analytic.data[i]);
        const double e = rel_err(a, numeric);
        if (e > entry.max_rel_err) {
            entry.max_rel_err = e;
            entry.worst_analytic = a;
            entry.worst_numeric = numeric;
        }
        ++entry.checked;
    }
    return entry;
}

}  // namespace detail

/// Random tensor whose elements keep a magnitude of at least `lo` (random
/// sign) — clear of the ReLU kink for finite-difference probing.
template <typename T>
Tensor<T> kink_free_uniform(const Shape& shape, std::uint64_t seed, T lo = T(0.2), T hi = T(1)) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> mag(static_cast<double>(lo), static_cast<double>(hi));
    std::uniform_int_distribution<int> coin(0, 1);
    Tensor<T> out{shape};
    for (auto& v : out.data) {
        const double m = mag(rng);
        v = static_cast<T>(coin(rng) ? m : -m);
    }
    return out;
}

/// Random rank-4 tensor whose 2x2 pooling windows have well-separated
/// elements (disjoint value bands by window position), so max selections are
/// stable under finite-difference perturbations.
template <typename T>
Tensor<T> pool_safe_uniform(const Shape& shape, std::uint64_t seed) {
    validate_shape(shape);
    if (shape.size() != 4)
        throw std::invalid_argument("pool_safe_uniform: expected rank-4 shape, got " +
                                    shape_str(shape));
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 0.2);
    Tensor<T> out{shape};
    const std::size_t H = shape[2], W = shape[3];
    std::size_t i = 0;
    for (std::size_t n = 0; n < shape[0] * shape[1]; ++n)
        for (std::size_t h = 0; h < H; ++h)
            for (std::size_t w = 0; w < W; ++w, ++i)
                out.data[i] = static_cast<T>(unit(rng) + 0.25 * double(2 * (h % 2) + (w % 2)));
    return out;
}

/// Verifies a layer's backward pass against central finite differences of the
/// projection loss sum(R * layer(x)) for a fixed random R. Checks the input
/// gradient and every parameter gradient; samples at most max_samples
/// elements per tensor.
template <typename T>
GradCheckReport gradient_check_layer(Layer<T>& layer, const Tensor<T>& x0, std::uint64_t seed,
                                     T step = T(1e-5), double tolerance = 1e-4,
                                     std::size_t max_samples = 200) {
    std::mt19937_64 rng(seed);
    Tensor<T> x = x0;
    Tensor<T> y0 = layer.forward(x);
    Tensor<T> r = uniform_tensor<T>(y0.shape, T(-1), T(1), rng);

    auto loss = [&]() {
        Tensor<T> y = layer.forward(x);
        T s = 0;
        for (std::size_t i = 0; i < y.size(); ++i) s += r.data[i] * y.data[i];
        return s;
    };

    // Analytic pass; snapshot the gradients before FD reruns overwrite caches.
    layer.forward(x);
    Tensor<T> gx = layer.backward(r);
    std::vector<std::pair<std::string, Tensor<T>>> param_grads;
    for (const ParamRef<T>& p : layer.params()) param_grads.emplace_back(p.name, *p.grad);

    GradCheckReport report;
    report.tolerance = tolerance;
    report.entries.push_back(
        detail::fd_check_tensor("input", x, gx, loss, step, max_samples, rng));
    for (auto& [name, grad] : param_grads) {
        Tensor<T>* pv = nullptr;
        for (const ParamRef<T>& p : layer.params())
            if (p.name == name) pv = p.value;
        report.entries.push_back(
            detail::fd_check_tensor(name, *pv, grad, loss, step, max_samples, rng));
    }
    for (const GradCheckEntry& e : report.entries)
        if (!(e.max_rel_err <= tolerance)) report.pass = false;
    return report;
}

}  // namespace conxnet
