#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>

#include "conxnet/image_io.hpp"
#include "conxnet/model.hpp"
#include "conxnet/tensor.hpp"

namespace conxnet {

enum class TargetClass { Normal = 0, Covid = 1 };

inline TargetClass parse_target_class(const std::string& s) {
    if (s == "covid") return TargetClass::Covid;
    if (s == "normal") return TargetClass::Normal;
    throw std::invalid_argument("unknown class '" + s + "' (expected covid|normal)");
}

/// Class-activation map over the last block's pre-pool features.
template <typename T>
struct ActivationMap {
    Tensor<T> values;  // (H',W'), all in [0,1]; max is 1 unless identically 0
    TargetClass target = TargetClass::Covid;
};

/// Gradient-weighted activation map: backward the target-class score (the
/// sigmoid output for covid, its complement for normal) to the block-4
/// pre-pool activations A_k, weight each channel by the spatial mean of its
/// gradient, rectify the weighted sum, and normalize by the maximum.
template <typename T>
ActivationMap<T> grad_cam(ConXNet<T>& model, const Tensor<T>& image, TargetClass target) {
    if (model.training())
        throw std::logic_error("grad_cam requires an eval-mode model");
    if (image.rank() != 4 || image.shape[0] != 1)
        throw std::invalid_argument("grad_cam: expected a single (1,1,H,W) image, got " +
                                    shape_str(image.shape));

    model.forward(image);
    Tensor<T> seed{{1, 1}};
    seed.data[0] = target == TargetClass::Covid ? T(1) : T(-1);
    const Tensor<T> grads = model.backward_range(ConXNet<T>::kOutputIndex,
                                                 ConXNet<T>::kLastPoolIndex, seed);
    const Tensor<T>& acts = model.pool(4).cached_input();

    const std::size_t C = acts.shape[1], H = acts.shape[2], W = acts.shape[3];
    ActivationMap<T> out;
    out.target = target;
    out.values = Tensor<T>{{H, W}};
    for (std::size_t c = 0; c < C; ++c) {
        const T* g = grads.ptr() + c * H * W;
        T alpha = 0;
        for (std::size_t i = 0; i < H * W; ++i) alpha += g[i];
        alpha /= static_cast<T>(H * W);
        const T* a = acts.ptr() + c * H * W;
        for (std::size_t i = 0; i < H * W; ++i) out.values.data[i] += alpha * a[i];
    }

    T peak = 0;
    for (auto& v : out.values.data) {
        if (v < T(0)) v = T(0);
        if (v > peak) peak = v;
    }
    if (peak > T(0))
        for (auto& v : out.values.data) v /= peak;
    return out;
}

/// 256-entry blue->cyan->green->yellow->red ramp, linearly interpolated
/// between anchors at 0, 64, 128, 192, 255.
inline const std::array<std::array<unsigned char, 3>, 256>& heat_ramp() {
    static const auto lut = [] {
        std::array<std::array<unsigned char, 3>, 256> t{};
        constexpr int anchor_pos[5] = {0, 64, 128, 192, 255};
        constexpr int anchor_rgb[5][3] = {
            {0, 0, 255}, {0, 255, 255}, {0, 255, 0}, {255, 255, 0}, {255, 0, 0}};
        for (int seg = 0; seg < 4; ++seg) {
            const int p0 = anchor_pos[seg], p1 = anchor_pos[seg + 1];
            for (int i = p0; i <= p1; ++i) {
                const double f = static_cast<double>(i - p0) / static_cast<double>(p1 - p0);
                for (int c = 0; c < 3; ++c)
                    t[i][c] = static_cast<unsigned char>(std::lround(
                        anchor_rgb[seg][c] + f * (anchor_rgb[seg + 1][c] - anchor_rgb[seg][c])));
            }
        }
        return t;
    }();
    return lut;
}

/// Blend the ramp-colored map over a grayscale base:
/// out = (1 - alpha*m)*gray + alpha*m*ramp(m), per channel, clamped to bytes.
/// The map is bilinearly upsampled to the image size.
template <typename T>
ImageU8 overlay_heatmap(const Tensor<T>& gray, const ActivationMap<T>& map, double alpha = 0.4) {
    if (!(alpha >= 0.0 && alpha <= 1.0))
        throw std::invalid_argument("overlay: alpha must lie in [0,1], got " +
                                    std::to_string(alpha));
    std::size_t h, w, off = 0;
    if (gray.rank() == 2) {
        h = gray.shape[0];
        w = gray.shape[1];
    } else if (gray.rank() == 3 && gray.shape[0] == 1) {
        h = gray.shape[1];
        w = gray.shape[2];
    } else {
        throw std::invalid_argument("overlay: base image must be (H,W) or (1,H,W), got " +
                                    shape_str(gray.shape));
    }

    Tensor<T> up = resize_bilinear_2d(map.values, h, w);
    const auto& ramp = heat_ramp();

    ImageU8 out;
    out.width = w;
    out.height = h;
    out.channels = 3;
    out.pixels.resize(h * w * 3);
    for (std::size_t i = 0; i < h * w; ++i) {
        const double m = std::clamp(static_cast<double>(up.data[i]), 0.0, 1.0);
        const double base =
            std::clamp(static_cast<double>(gray.data[off + i]), 0.0, 1.0) * 255.0;
        const auto& rgb = ramp[static_cast<std::size_t>(std::lround(m * 255.0))];
        const double wgt = alpha * m;
        for (std::size_t c = 0; c < 3; ++c) {
            const double v = (1.0 - wgt) * base + wgt * static_cast<double>(rgb[c]);
            out.pixels[i * 3 + c] =
                static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 255.0)));
        }
    }
    return out;
}

/// Raw map dump, one CSV row per map row.
template <typename T>
void write_map_csv(const std::string& path, const ActivationMap<T>& map) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write map CSV '" + path + "'");
    char buf[40];
    for (std::size_t i = 0; i < map.values.shape[0]; ++i) {
        for (std::size_t j = 0; j < map.values.shape[1]; ++j) {
            std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(map.values(i, j)));
            out << (j ? "," : "") << buf;
        }
        out << '\n';
    }
    out.close();
    if (!out) throw std::runtime_error("failed writing map CSV '" + path + "'");
}

}  // namespace conxnet
