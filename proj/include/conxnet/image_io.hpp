#pragma once

#include <png.h>

#include <cstdio>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

#include "conxnet/tensor.hpp"

namespace conxnet {

/// 8-bit interleaved image, 1 (gray) or 3 (RGB) channels.
struct ImageU8 {
    std::size_t width = 0, height = 0, channels = 0;
    std::vector<unsigned char> pixels;  // row-major, height*width*channels

    unsigned char& at(std::size_t y, std::size_t x, std::size_t c) {
        return pixels[(y * width + x) * channels + c];
    }
    unsigned char at(std::size_t y, std::size_t x, std::size_t c) const {
        return pixels[(y * width + x) * channels + c];
    }
};

/// Decodes any 8/16-bit gray, palette, or RGB(A) PNG to 8-bit gray or RGB.
inline ImageU8 read_png(const std::string& path) {
    FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw std::runtime_error("cannot open PNG '" + path + "'");
    unsigned char sig[8];
    if (std::fread(sig, 1, 8, fp) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
        std::fclose(fp);
        throw std::runtime_error("'" + path + "' is not a PNG file");
    }
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw std::runtime_error("libpng initialization failed for '" + path + "'");
    }

    ImageU8 img;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw std::runtime_error("failed to decode PNG '" + path + "'");
    }

    png_init_io(png, fp);
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    const png_byte color = png_get_color_type(png, info);
    const png_byte depth = png_get_bit_depth(png, info);
    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    const bool has_trns = png_get_valid(png, info, PNG_INFO_tRNS) != 0;
    if (has_trns) png_set_tRNS_to_alpha(png);
    if ((color & PNG_COLOR_MASK_ALPHA) != 0 || has_trns) png_set_strip_alpha(png);
    png_read_update_info(png, info);

    img.width = png_get_image_width(png, info);
    img.height = png_get_image_height(png, info);
    img.channels = png_get_channels(png, info);
    if (img.channels != 1 && img.channels != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw std::runtime_error("unsupported channel layout in '" + path + "'");
    }

    const std::size_t rowbytes = png_get_rowbytes(png, info);
    img.pixels.resize(img.height * rowbytes);
    rows.resize(img.height);
    for (std::size_t y = 0; y < img.height; ++y) rows[y] = img.pixels.data() + y * rowbytes;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    return img;
}

inline void write_png(const ImageU8& img, const std::string& path) {
    if (img.channels != 1 && img.channels != 3)
        throw std::invalid_argument("write_png: channels must be 1 or 3, got " +
                                    std::to_string(img.channels));
    if (img.width == 0 || img.height == 0)
        throw std::invalid_argument("write_png: empty image");
    if (img.pixels.size() != img.width * img.height * img.channels)
        throw std::invalid_argument("write_png: pixel buffer size does not match dimensions");

    FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw std::runtime_error("cannot write PNG '" + path + "'");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw std::runtime_error("libpng initialization failed for '" + path + "'");
    }

    std::vector<png_bytep> rows(img.height);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw std::runtime_error("failed to encode PNG '" + path + "'");
    }

    png_init_io(png, fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
                 static_cast<png_uint_32>(img.height), 8,
                 img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    const std::size_t rowbytes = img.width * img.channels;
    for (std::size_t y = 0; y < img.height; ++y)
        rows[y] = const_cast<png_bytep>(img.pixels.data() + y * rowbytes);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    if (std::fclose(fp) != 0) throw std::runtime_error("failed to flush PNG '" + path + "'");
}

/// (1,H,W) tensor in [0,1]; RGB collapses through the Rec.601 luma weights.
template <typename T>
Tensor<T> image_to_unit_gray(const ImageU8& img) {
    Tensor<T> out{{1, img.height, img.width}};
    const T inv = T(1) / T(255);
    for (std::size_t y = 0; y < img.height; ++y)
        for (std::size_t x = 0; x < img.width; ++x) {
            T v;
            if (img.channels == 1) {
                v = static_cast<T>(img.at(y, x, 0)) * inv;
            } else {
                const T luma = T(0.299) * static_cast<T>(img.at(y, x, 0)) +
                               T(0.587) * static_cast<T>(img.at(y, x, 1)) +
                               T(0.114) * static_cast<T>(img.at(y, x, 2));
                v = luma * inv;
            }
            out(0, y, x) = std::clamp(v, T(0), T(1));
        }
    return out;
}

/// Rounds a rank-2 (H,W) or rank-3 (1,H,W) unit-range tensor to 8-bit gray.
template <typename T>
ImageU8 unit_gray_to_image(const Tensor<T>& t) {
    std::size_t h, w, off = 0;
    if (t.rank() == 2) {
        h = t.shape[0];
        w = t.shape[1];
    } else if (t.rank() == 3 && t.shape[0] == 1) {
        h = t.shape[1];
        w = t.shape[2];
    } else {
        throw std::invalid_argument("unit_gray_to_image: expected (H,W) or (1,H,W), got " +
                                    shape_str(t.shape));
    }
    ImageU8 img;
    img.width = w;
    img.height = h;
    img.channels = 1;
    img.pixels.resize(h * w);
    for (std::size_t i = 0; i < h * w; ++i) {
        const T v = std::clamp(t.data[off + i], T(0), T(1));
        img.pixels[i] = static_cast<unsigned char>(std::lround(static_cast<double>(v) * 255.0));
    }
    return img;
}

/// Bilinear resampling with the half-pixel center convention:
/// src = (dst + 0.5) * (in/out) - 0.5, clamped to the valid range.
template <typename T>
Tensor<T> resize_bilinear_2d(const Tensor<T>& src, std::size_t out_h, std::size_t out_w) {
    if (src.rank() != 2)
        throw std::invalid_argument("resize: expected rank-2 (H,W) input, got " +
                                    shape_str(src.shape));
    if (out_h == 0 || out_w == 0)
        throw std::invalid_argument("resize: output extents must be >= 1");
    const std::size_t h = src.shape[0], w = src.shape[1];
    Tensor<T> out{{out_h, out_w}};
    const double sy = static_cast<double>(h) / static_cast<double>(out_h);
    const double sx = static_cast<double>(w) / static_cast<double>(out_w);
    for (std::size_t i = 0; i < out_h; ++i) {
        double fy = (static_cast<double>(i) + 0.5) * sy - 0.5;
        fy = std::min(std::max(fy, 0.0), static_cast<double>(h - 1));
        const std::size_t y0 = static_cast<std::size_t>(fy);
        const std::size_t y1 = std::min(y0 + 1, h - 1);
        const T wy = static_cast<T>(fy - static_cast<double>(y0));
        for (std::size_t j = 0; j < out_w; ++j) {
            double fx = (static_cast<double>(j) + 0.5) * sx - 0.5;
            fx = std::min(std::max(fx, 0.0), static_cast<double>(w - 1));
            const std::size_t x0 = static_cast<std::size_t>(fx);
            const std::size_t x1 = std::min(x0 + 1, w - 1);
            const T wx = static_cast<T>(fx - static_cast<double>(x0));
            const T a = src(y0, x0), b = src(y0, x1), c = src(y1, x0), d = src(y1, x1);
            const T top = a + (b - a) * wx;
            const T bot = c + (d - c) * wx;
            out(i, j) = top + (bot - top) * wy;
        }
    }
    return out;
}

}  // namespace conxnet
