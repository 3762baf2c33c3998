#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "oracles.hpp"

namespace fs = std::filesystem;

using conxnet::ActivationMap;
using conxnet::ConXNet;
using conxnet::ImageU8;
using conxnet::ModelConfig;
using conxnet::TargetClass;
using conxnet::Tensor;
using conxnet::uniform_tensor;

namespace {

ConXNet<float> eval_model(std::uint64_t seed = 21) {
    ModelConfig cfg;
    cfg.input_h = cfg.input_w = 32;
    cfg.block_filters = {4, 4, 8, 8};
    cfg.dense_hidden = 16;
    cfg.seed = seed;
    ConXNet<float> model{cfg};
    model.set_training(false);
    return model;
}

fs::path scratch(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / ("conxnet_heat_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

ActivationMap<float> constant_map(std::size_t h, std::size_t w, float v) {
    ActivationMap<float> m;
    m.values = Tensor<float>{{h, w}};
    std::fill(m.values.data.begin(), m.values.data.end(), v);
    return m;
}

}  // namespace

TEST(GradCam, MapIsUnitRangeWithUnitPeak) {
    auto model = eval_model();
    Tensor<float> x = uniform_tensor<float>({1, 1, 32, 32}, 0.0f, 1.0f, 90u);
    auto map = conxnet::grad_cam(model, x, TargetClass::Covid);
    ASSERT_EQ(map.values.shape, (conxnet::Shape{4, 4}));  // 32 through three pools
    float peak = 0.0f;
    for (float v : map.values.data) {
        EXPECT_GE(v, 0.0f);
        EXPECT_LE(v, 1.0f);
        peak = std::max(peak, v);
    }
    ASSERT_GT(peak, 0.0f);
    EXPECT_EQ(peak, 1.0f);
}

TEST(GradCam, ZeroHeadGradientGivesAllZeroMap) {
    auto model = eval_model();
    // A zeroed first dense layer cuts the only gradient path back to block 4.
    std::fill(model.dense(1).weight().data.begin(), model.dense(1).weight().data.end(), 0.0f);
    Tensor<float> x = uniform_tensor<float>({1, 1, 32, 32}, 0.0f, 1.0f, 91u);
    auto map = conxnet::grad_cam(model, x, TargetClass::Covid);
    for (float v : map.values.data) EXPECT_EQ(v, 0.0f);
}

TEST(GradCam, TargetClassesClaimDisjointCells) {
    // Flipping the target negates the pre-rectification map exactly, so a
    // cell can survive rectification for at most one of the two classes.
    bool saw_both_nonzero = false;
    for (std::uint64_t seed = 23; seed < 43; ++seed) {
        auto model = eval_model(seed);
        Tensor<float> x = uniform_tensor<float>({1, 1, 32, 32}, 0.0f, 1.0f, 92u + seed);
        auto covid = conxnet::grad_cam(model, x, TargetClass::Covid);
        auto normal = conxnet::grad_cam(model, x, TargetClass::Normal);
        EXPECT_EQ(covid.target, TargetClass::Covid);
        EXPECT_EQ(normal.target, TargetClass::Normal);

        float covid_mass = 0.0f, normal_mass = 0.0f;
        for (std::size_t i = 0; i < covid.values.size(); ++i) {
            EXPECT_TRUE(covid.values.data[i] == 0.0f || normal.values.data[i] == 0.0f)
                << "seed " << seed << " cell " << i;
            covid_mass += covid.values.data[i];
            normal_mass += normal.values.data[i];
        }
        saw_both_nonzero |= covid_mass > 0.0f && normal_mass > 0.0f;
    }
    EXPECT_TRUE(saw_both_nonzero);
}

TEST(GradCam, RepeatCallsAreBitIdentical) {
    auto model = eval_model();
    Tensor<float> x = uniform_tensor<float>({1, 1, 32, 32}, 0.0f, 1.0f, 93u);
    auto a = conxnet::grad_cam(model, x, TargetClass::Covid);
    auto b = conxnet::grad_cam(model, x, TargetClass::Covid);
    EXPECT_TRUE(oracle::bit_identical(a.values, b.values));
}

TEST(GradCam, RejectsTrainingModeAndBadShapes) {
    auto model = eval_model();
    Tensor<float> x = uniform_tensor<float>({1, 1, 32, 32}, 0.0f, 1.0f, 94u);
    model.set_training(true);
    EXPECT_THROW(conxnet::grad_cam(model, x, TargetClass::Covid), std::logic_error);
    model.set_training(false);
    EXPECT_THROW(conxnet::grad_cam(model, Tensor<float>::zeros({2, 1, 32, 32}),
                                   TargetClass::Covid),
                 std::invalid_argument);
    EXPECT_THROW(conxnet::grad_cam(model, Tensor<float>::zeros({1, 32, 32}),
                                   TargetClass::Covid),
                 std::invalid_argument);
}

TEST(TargetClassParse, AcceptsBothNamesRejectsOthers) {
    EXPECT_EQ(conxnet::parse_target_class("covid"), TargetClass::Covid);
    EXPECT_EQ(conxnet::parse_target_class("normal"), TargetClass::Normal);
    EXPECT_THROW(conxnet::parse_target_class("pneumonia"), std::invalid_argument);
    EXPECT_THROW(conxnet::parse_target_class("COVID"), std::invalid_argument);
}

TEST(HeatRamp, HitsAnchorsAndSweepsBlueToRed) {
    const auto& ramp = conxnet::heat_ramp();
    EXPECT_EQ(ramp[0], (std::array<unsigned char, 3>{0, 0, 255}));
    EXPECT_EQ(ramp[64], (std::array<unsigned char, 3>{0, 255, 255}));
    EXPECT_EQ(ramp[128], (std::array<unsigned char, 3>{0, 255, 0}));
    EXPECT_EQ(ramp[192], (std::array<unsigned char, 3>{255, 255, 0}));
    EXPECT_EQ(ramp[255], (std::array<unsigned char, 3>{255, 0, 0}));
    for (int i = 1; i < 256; ++i) {
        EXPECT_GE(ramp[i][0], ramp[i - 1][0]);  // red never falls
        EXPECT_LE(ramp[i][2], ramp[i - 1][2]);  // blue never rises
    }
}

TEST(Overlay, ZeroMapReproducesGrayscale) {
    Tensor<float> gray = uniform_tensor<float>({8, 8}, 0.0f, 1.0f, 95u);
    ImageU8 out = conxnet::overlay_heatmap(gray, constant_map(4, 4, 0.0f), 0.8);
    ASSERT_EQ(out.width, 8u);
    ASSERT_EQ(out.height, 8u);
    ASSERT_EQ(out.channels, 3u);
    for (std::size_t i = 0; i < 64; ++i) {
        const auto want = static_cast<unsigned char>(
            std::lround(static_cast<double>(gray.data[i]) * 255.0));
        EXPECT_EQ(out.pixels[i * 3 + 0], want);
        EXPECT_EQ(out.pixels[i * 3 + 1], want);
        EXPECT_EQ(out.pixels[i * 3 + 2], want);
    }
}

TEST(Overlay, SaturatedMapAtFullAlphaIsPureRampRed) {
    Tensor<float> gray = uniform_tensor<float>({6, 6}, 0.0f, 1.0f, 96u);
    ImageU8 out = conxnet::overlay_heatmap(gray, constant_map(3, 3, 1.0f), 1.0);
    for (std::size_t i = 0; i < 36; ++i) {
        EXPECT_EQ(out.pixels[i * 3 + 0], 255);
        EXPECT_EQ(out.pixels[i * 3 + 1], 0);
        EXPECT_EQ(out.pixels[i * 3 + 2], 0);
    }
}

TEST(Overlay, AcceptsChannelFirstBaseToo) {
    Tensor<float> flat = uniform_tensor<float>({5, 7}, 0.0f, 1.0f, 97u);
    Tensor<float> chan{{1, 5, 7}};
    chan.data = flat.data;
    auto map = constant_map(2, 2, 0.5f);
    ImageU8 a = conxnet::overlay_heatmap(flat, map, 0.4);
    ImageU8 b = conxnet::overlay_heatmap(chan, map, 0.4);
    EXPECT_EQ(a.pixels, b.pixels);
}

TEST(Overlay, SinglePixelMapBlendsUniformly) {
    Tensor<float> gray = Tensor<float>::zeros({4, 4});
    ImageU8 out = conxnet::overlay_heatmap(gray, constant_map(1, 1, 0.5f), 1.0);
    for (std::size_t i = 1; i < 16; ++i) {
        EXPECT_EQ(out.pixels[i * 3 + 0], out.pixels[0]);
        EXPECT_EQ(out.pixels[i * 3 + 1], out.pixels[1]);
        EXPECT_EQ(out.pixels[i * 3 + 2], out.pixels[2]);
    }
}

TEST(Overlay, RejectsBadAlphaAndBadBase) {
    Tensor<float> gray = Tensor<float>::zeros({4, 4});
    auto map = constant_map(2, 2, 0.5f);
    EXPECT_THROW(conxnet::overlay_heatmap(gray, map, -0.1), std::invalid_argument);
    EXPECT_THROW(conxnet::overlay_heatmap(gray, map, 1.1), std::invalid_argument);
    EXPECT_THROW(conxnet::overlay_heatmap(gray, map, std::nan("")), std::invalid_argument);
    EXPECT_THROW(conxnet::overlay_heatmap(Tensor<float>::zeros({2, 4, 4}), map, 0.4),
                 std::invalid_argument);
    EXPECT_THROW(conxnet::overlay_heatmap(Tensor<float>::zeros({16}), map, 0.4),
                 std::invalid_argument);
}

TEST(Overlay, ByteOutputIsDeterministic) {
    auto model = eval_model();
    Tensor<float> x = uniform_tensor<float>({1, 1, 32, 32}, 0.0f, 1.0f, 98u);
    auto map = conxnet::grad_cam(model, x, TargetClass::Covid);
    Tensor<float> gray{{32, 32}};
    gray.data = x.data;
    ImageU8 a = conxnet::overlay_heatmap(gray, map, 0.4);
    ImageU8 b = conxnet::overlay_heatmap(gray, map, 0.4);
    EXPECT_EQ(a.pixels, b.pixels);
}

TEST(Upsample, HotCellStaysInsideItsFootprint) {
    Tensor<float> map = Tensor<float>::zeros({4, 4});
    map(1, 2) = 1.0f;
    Tensor<float> up = conxnet::resize_bilinear_2d(map, 32, 32);
    std::size_t best = 0;
    for (std::size_t i = 1; i < up.size(); ++i)
        if (up.data[i] > up.data[best]) best = i;
    const std::size_t r = best / 32, c = best % 32;
    EXPECT_GE(r, 8u);
    EXPECT_LT(r, 16u);
    EXPECT_GE(c, 16u);
    EXPECT_LT(c, 24u);
}

TEST(Overlay, PngRoundTripPreservesBytes) {
    fs::path dir = scratch("png");
    auto model = eval_model();
    Tensor<float> x = uniform_tensor<float>({1, 1, 32, 32}, 0.0f, 1.0f, 99u);
    auto map = conxnet::grad_cam(model, x, TargetClass::Covid);
    Tensor<float> gray{{32, 32}};
    gray.data = x.data;
    ImageU8 out = conxnet::overlay_heatmap(gray, map, 0.4);

    const std::string path = (dir / "overlay.png").string();
    conxnet::write_png(out, path);
    ImageU8 back = conxnet::read_png(path);
    EXPECT_EQ(back.width, out.width);
    EXPECT_EQ(back.height, out.height);
    EXPECT_EQ(back.channels, out.channels);
    EXPECT_EQ(back.pixels, out.pixels);

    EXPECT_THROW(conxnet::write_png(out, (dir / "missing" / "overlay.png").string()),
                 std::runtime_error);
}

TEST(MapCsv, WritesOneRowPerMapRow) {
    fs::path dir = scratch("csv");
    ActivationMap<float> m;
    m.values = Tensor<float>::from({2, 3}, {0.0f, 0.5f, 1.0f, 0.25f, 0.75f, 0.125f});
    const std::string path = (dir / "map.csv").string();
    conxnet::write_map_csv(path, m);

    std::ifstream in(path);
    std::string r1, r2, extra;
    ASSERT_TRUE(std::getline(in, r1));
    ASSERT_TRUE(std::getline(in, r2));
    EXPECT_FALSE(std::getline(in, extra));
    EXPECT_EQ(r1, "0,0.5,1");
    EXPECT_EQ(r2, "0.25,0.75,0.125");

    EXPECT_THROW(conxnet::write_map_csv((dir / "missing" / "map.csv").string(), m),
                 std::runtime_error);
}
