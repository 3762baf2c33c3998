#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <set>

#include "oracles.hpp"

namespace fs = std::filesystem;

using conxnet::BatchIterator;
using conxnet::DatasetSplit;
using conxnet::LabeledImage;
using conxnet::Tensor;
using conxnet::kLabelCovid;
using conxnet::kLabelNormal;

namespace {

fs::path scratch(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / ("conxnet_data_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::vector<unsigned char> slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_gray_png(const fs::path& p, const Tensor<double>& t) {
    conxnet::write_png(conxnet::unit_gray_to_image(t), p.string());
}

// A small pool of in-memory 1x1 images for split/balance tests.
std::vector<LabeledImage<float>> tiny_pool(std::size_t n_covid, std::size_t n_normal) {
    std::vector<LabeledImage<float>> pool;
    for (std::size_t i = 0; i < n_covid + n_normal; ++i) {
        LabeledImage<float> li;
        li.pixels = Tensor<float>::full({1, 1, 1}, static_cast<float>(i) / 100.0f);
        li.label = i < n_covid ? kLabelCovid : kLabelNormal;
        li.source_path = "mem_" + std::to_string(i);
        pool.push_back(std::move(li));
    }
    return pool;
}

}  // namespace

// ------------------------------------------------------------------ synth ---

TEST(Synth, WritesCountedCorpus) {
    fs::path dir = scratch("counts");
    auto res = conxnet::synth_generate(5, 16, 1u, dir.string());
    EXPECT_EQ(res.written, 10u);
    std::size_t covid = 0, normal = 0;
    for (const auto& e : fs::directory_iterator(dir / "COVID")) covid += e.is_regular_file();
    for (const auto& e : fs::directory_iterator(dir / "Normal")) normal += e.is_regular_file();
    EXPECT_EQ(covid, 5u);
    EXPECT_EQ(normal, 5u);

    auto blobs = conxnet::read_blob_table(res.blob_table);
    ASSERT_EQ(blobs.size(), 5u);
    for (const auto& b : blobs) {
        EXPECT_GE(b.cx, 0.30 * 16);
        EXPECT_LE(b.cx, 0.70 * 16);
        EXPECT_GE(b.cy, 0.30 * 16);
        EXPECT_LE(b.cy, 0.70 * 16);
        EXPECT_GE(b.rx, 0.10 * 16);
        EXPECT_LE(b.ry, 0.18 * 16);
    }
}

TEST(Synth, SameSeedGivesByteIdenticalCorpus) {
    fs::path a = scratch("det_a"), b = scratch("det_b");
    conxnet::synth_generate(3, 24, 77u, a.string());
    conxnet::synth_generate(3, 24, 77u, b.string());
    for (const char* sub : {"COVID", "Normal"}) {
        for (const auto& e : fs::directory_iterator(a / sub)) {
            fs::path twin = b / sub / e.path().filename();
            ASSERT_TRUE(fs::exists(twin)) << twin;
            EXPECT_EQ(slurp(e.path()), slurp(twin)) << e.path();
        }
    }
    EXPECT_EQ(slurp(a / "blobs.tsv"), slurp(b / "blobs.tsv"));

    fs::path c = scratch("det_c");
    conxnet::synth_generate(3, 24, 78u, c.string());
    EXPECT_NE(slurp(a / "COVID" / "covid_0000.png"), slurp(c / "COVID" / "covid_0000.png"));
}

TEST(Synth, RejectsBadArguments) {
    fs::path dir = scratch("synth_bad");
    EXPECT_THROW(conxnet::synth_generate(5, 15, 1u, dir.string()), std::invalid_argument);
    EXPECT_THROW(conxnet::synth_generate(0, 16, 1u, dir.string()), std::invalid_argument);
}

// ---------------------------------------------------------------- loading ---

TEST(Load, PoolHasDirectoryLabels) {
    fs::path dir = scratch("labels");
    fs::create_directories(dir / "COVID");
    fs::create_directories(dir / "Normal");
    std::mt19937_64 rng(5);
    for (int i = 0; i < 3; ++i) {
        Tensor<double> t = conxnet::uniform_tensor<double>({8, 8}, 0.0, 1.0, rng);
        write_gray_png(dir / "COVID" / ("c" + std::to_string(i) + ".png"), t);
    }
    for (int i = 0; i < 2; ++i) {
        Tensor<double> t = conxnet::uniform_tensor<double>({8, 8}, 0.0, 1.0, rng);
        write_gray_png(dir / "Normal" / ("n" + std::to_string(i) + ".png"), t);
    }

    auto load = conxnet::load_dataset<float>(dir.string(), 8);
    EXPECT_EQ(load.skipped, 0u);
    ASSERT_EQ(load.pool.size(), 5u);
    std::size_t covid = 0;
    for (const auto& li : load.pool) {
        covid += li.label == kLabelCovid;
        ASSERT_EQ(li.pixels.shape, (conxnet::Shape{1, 8, 8}));
        for (float v : li.pixels.data) {
            EXPECT_GE(v, 0.0f);
            EXPECT_LE(v, 1.0f);
        }
        EXPECT_FALSE(li.source_path.empty());
    }
    EXPECT_EQ(covid, 3u);
}

TEST(Load, AllBlackDecodesToZeros) {
    fs::path dir = scratch("black");
    write_gray_png(dir / "black.png", Tensor<double>::zeros({8, 8}));
    Tensor<float> t = conxnet::load_image_tensor<float>((dir / "black.png").string(), 8);
    for (float v : t.data) EXPECT_EQ(v, 0.0f);
}

TEST(Load, CheckerboardResizeMatchesBilinearOracle) {
    fs::path dir = scratch("checker");
    Tensor<double> board{{64, 64}};
    for (std::size_t i = 0; i < 64; ++i)
        for (std::size_t j = 0; j < 64; ++j) board(i, j) = ((i / 8 + j / 8) % 2) ? 1.0 : 0.0;
    write_gray_png(dir / "board.png", board);

    Tensor<float> got = conxnet::load_image_tensor<float>((dir / "board.png").string(), 32);

    // Decode the actual stored bytes, then resize with the reference kernel.
    conxnet::ImageU8 img = conxnet::read_png((dir / "board.png").string());
    Tensor<float> gray = conxnet::image_to_unit_gray<float>(img);
    Tensor<float> plane{{64, 64}};
    plane.data = gray.data;
    Tensor<float> want = oracle::bilinear_reference(plane, 32, 32);

    ASSERT_EQ(got.shape, (conxnet::Shape{1, 32, 32}));
    EXPECT_LE(oracle::max_abs_diff(got, want), 1e-3);
}

TEST(Load, SkipsUnreadableFilesWithCount) {
    fs::path dir = scratch("skip");
    fs::create_directories(dir / "COVID");
    fs::create_directories(dir / "Normal");
    write_gray_png(dir / "COVID" / "ok.png", Tensor<double>::full({8, 8}, 0.5));
    std::ofstream(dir / "COVID" / "junk.png") << "not a png at all";
    write_gray_png(dir / "Normal" / "ok.png", Tensor<double>::full({8, 8}, 0.5));

    auto load = conxnet::load_dataset<float>(dir.string(), 8);
    EXPECT_EQ(load.pool.size(), 2u);
    EXPECT_EQ(load.skipped, 1u);
}

TEST(Load, MissingOrEmptyClassDirIsFatal) {
    fs::path dir = scratch("fatal");
    fs::create_directories(dir / "COVID");
    write_gray_png(dir / "COVID" / "ok.png", Tensor<double>::full({8, 8}, 0.5));
    EXPECT_THROW(conxnet::load_dataset<float>(dir.string(), 8), std::runtime_error);

    fs::create_directories(dir / "Normal");  // exists but empty
    EXPECT_THROW(conxnet::load_dataset<float>(dir.string(), 8), std::runtime_error);
}

TEST(Load, IngestionIsIdempotent) {
    fs::path dir = scratch("idem");
    std::mt19937_64 rng(6);
    write_gray_png(dir / "x.png", conxnet::uniform_tensor<double>({16, 16}, 0.0, 1.0, rng));
    Tensor<float> a = conxnet::load_image_tensor<float>((dir / "x.png").string(), 8);
    Tensor<float> b = conxnet::load_image_tensor<float>((dir / "x.png").string(), 8);
    EXPECT_TRUE(oracle::bit_identical(a, b));
}

// ---------------------------------------------------------------- balance ---

TEST(Balance, TrimsToPerClassCount) {
    auto pool = tiny_pool(10, 20);
    auto balanced = conxnet::balance(pool, 10, 3u);
    ASSERT_EQ(balanced.size(), 20u);
    std::size_t covid = 0;
    for (const auto& li : balanced) covid += li.label == kLabelCovid;
    EXPECT_EQ(covid, 10u);
}

TEST(Balance, DeterministicForFixedSeed) {
    auto pool = tiny_pool(15, 25);
    auto a = conxnet::balance(pool, 12, 9u);
    auto b = conxnet::balance(pool, 12, 9u);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].source_path, b[i].source_path);
}

TEST(Balance, InsufficientClassThrows) {
    auto pool = tiny_pool(4, 20);
    EXPECT_THROW(conxnet::balance(pool, 5, 1u), std::invalid_argument);
    EXPECT_THROW(conxnet::balance(pool, 0, 1u), std::invalid_argument);
}

// ------------------------------------------------------------------ split ---

TEST(Split, BalancedSevenThousandPool) {
    std::vector<int> labels(7000);
    for (std::size_t i = 0; i < 3500; ++i) labels[i] = 1;
    auto s = conxnet::split_stratified(labels, 0.70, 42u);
    EXPECT_EQ(s.train.size(), 4900u);
    EXPECT_EQ(s.test.size(), 2100u);

    std::size_t train_covid = 0;
    for (std::size_t i : s.train) train_covid += labels[i] == 1;
    EXPECT_EQ(train_covid, 2450u);
}

TEST(Split, TenSampleRounding) {
    std::vector<int> labels = {1, 1, 1, 1, 1, 0, 0, 0, 0, 0};
    auto s = conxnet::split_stratified(labels, 0.70, 7u);
    EXPECT_EQ(s.train.size(), 7u);
    EXPECT_EQ(s.test.size(), 3u);
}

TEST(Split, DisjointUnionAndStratificationOnRandomPools) {
    std::mt19937_64 rng(511);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t nc = 4 + rng() % 60, nn = 4 + rng() % 60;
        std::vector<int> labels(nc + nn, 0);
        for (std::size_t i = 0; i < nc; ++i) labels[i] = 1;
        std::shuffle(labels.begin(), labels.end(), rng);

        auto s = conxnet::split_stratified(labels, 0.70, rng());
        std::set<std::size_t> train(s.train.begin(), s.train.end());
        std::set<std::size_t> test(s.test.begin(), s.test.end());
        EXPECT_EQ(train.size(), s.train.size());
        EXPECT_EQ(test.size(), s.test.size());
        EXPECT_EQ(train.size() + test.size(), labels.size());
        for (std::size_t i : test) EXPECT_EQ(train.count(i), 0u);

        // Per-class train fraction within one sample of the global ratio.
        for (int cls : {0, 1}) {
            std::size_t cls_total = 0, cls_train = 0;
            for (std::size_t i = 0; i < labels.size(); ++i) cls_total += labels[i] == cls;
            for (std::size_t i : s.train) cls_train += labels[i] == cls;
            EXPECT_LE(std::abs(static_cast<double>(cls_train) - 0.70 * cls_total), 1.0)
                << "class " << cls << " trial " << trial;
            EXPECT_GT(cls_train, 0u);
            EXPECT_LT(cls_train, cls_total);
        }
    }
}

TEST(Split, DeterministicPerSeed) {
    std::vector<int> labels(100);
    for (std::size_t i = 0; i < 50; ++i) labels[i] = 1;
    auto a = conxnet::split_stratified(labels, 0.70, 5u);
    auto b = conxnet::split_stratified(labels, 0.70, 5u);
    EXPECT_EQ(a.train, b.train);
    EXPECT_EQ(a.test, b.test);
    auto c = conxnet::split_stratified(labels, 0.70, 6u);
    EXPECT_NE(a.train, c.train);
}

TEST(Split, RejectsBadArguments) {
    std::vector<int> labels = {1, 1, 0, 0};
    EXPECT_THROW(conxnet::split_stratified(labels, 0.0, 1u), std::invalid_argument);
    EXPECT_THROW(conxnet::split_stratified(labels, 1.0, 1u), std::invalid_argument);
    EXPECT_THROW(conxnet::split_stratified(std::vector<int>{}, 0.7, 1u), std::invalid_argument);
    EXPECT_THROW(conxnet::split_stratified(std::vector<int>{1, 0, 2}, 0.7, 1u),
                 std::invalid_argument);
    // One-sample class cannot land in both splits.
    EXPECT_THROW(conxnet::split_stratified(std::vector<int>{1, 0, 0, 0, 0, 0}, 0.7, 1u),
                 std::invalid_argument);
}

// ---------------------------------------------------------------- batching ---

TEST(Batch, EveryEpochVisitsEachIndexOnce) {
    std::vector<std::size_t> idx = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
    BatchIterator it(idx, 3, 13u);
    for (std::size_t epoch = 0; epoch < 3; ++epoch) {
        auto batches = it.epoch_batches(epoch);
        ASSERT_EQ(batches.size(), 4u);
        EXPECT_EQ(batches[3].size(), 1u);
        std::set<std::size_t> seen;
        for (const auto& b : batches) seen.insert(b.begin(), b.end());
        EXPECT_EQ(seen.size(), 10u);
    }
}

TEST(Batch, DropLastSkipsShortTail) {
    std::vector<std::size_t> idx = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
    BatchIterator it(idx, 3, 13u, true);
    auto batches = it.epoch_batches(0);
    ASSERT_EQ(batches.size(), 3u);
    for (const auto& b : batches) EXPECT_EQ(b.size(), 3u);
}

TEST(Batch, ShuffleIsSeededAndEpochDependent) {
    std::vector<std::size_t> idx(32);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    BatchIterator a(idx, 8, 21u), b(idx, 8, 21u), c(idx, 8, 22u);
    EXPECT_EQ(a.epoch_batches(0), b.epoch_batches(0));
    EXPECT_NE(a.epoch_batches(0), a.epoch_batches(1));
    EXPECT_NE(a.epoch_batches(0), c.epoch_batches(0));
    EXPECT_THROW(BatchIterator(idx, 0, 1u), std::invalid_argument);
}

TEST(Batch, StacksImagesAndTargets) {
    auto pool = tiny_pool(2, 2);
    Tensor<float> x = conxnet::make_batch(pool, {3, 0});
    ASSERT_EQ(x.shape, (conxnet::Shape{2, 1, 1, 1}));
    EXPECT_EQ(x.data[0], pool[3].pixels.data[0]);
    EXPECT_EQ(x.data[1], pool[0].pixels.data[0]);

    Tensor<float> t = conxnet::make_targets(pool, {3, 0});
    ASSERT_EQ(t.shape, (conxnet::Shape{2, 1}));
    EXPECT_EQ(t.data[0], 0.0f);  // index 3 is Normal
    EXPECT_EQ(t.data[1], 1.0f);  // index 0 is COVID
}

// --------------------------------------------------------------- manifest ---

TEST(Manifest, RecordsPathLabelSplit) {
    fs::path dir = scratch("manifest");
    auto pool = tiny_pool(2, 2);
    DatasetSplit split;
    split.train = {0, 2};
    split.test = {1};
    conxnet::write_manifest((dir / "m.tsv").string(), pool, split);

    std::ifstream in(dir / "m.tsv");
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);) lines.push_back(line);
    ASSERT_EQ(lines.size(), 4u);
    EXPECT_EQ(lines[0], "mem_0\t1\ttrain");
    EXPECT_EQ(lines[1], "mem_1\t1\ttest");
    EXPECT_EQ(lines[2], "mem_2\t0\ttrain");
    EXPECT_EQ(lines[3], "mem_3\t0\tunused");
}

// ---------------------------------------------------- class separability ---

TEST(Separability, LinearProbeLearnsSyntheticCorpus) {
    fs::path dir = scratch("probe");
    const std::size_t per_class = 80, size = 32;
    conxnet::synth_generate(per_class, size, 9001u, dir.string());
    auto load = conxnet::load_dataset<float>(dir.string(), size);
    ASSERT_EQ(load.pool.size(), 2 * per_class);

    auto split = conxnet::split_stratified(load.pool, 0.70, 1u);

    auto flatten = [&](const std::vector<std::size_t>& idx) {
        Tensor<float> x{{idx.size(), size * size}};
        for (std::size_t n = 0; n < idx.size(); ++n)
            std::copy(load.pool[idx[n]].pixels.data.begin(),
                      load.pool[idx[n]].pixels.data.end(),
                      x.data.begin() + n * size * size);
        return x;
    };
    Tensor<float> xtr = flatten(split.train), xte = flatten(split.test);
    Tensor<float> ttr = conxnet::make_targets(load.pool, split.train);
    Tensor<float> tte = conxnet::make_targets(load.pool, split.test);

    conxnet::Dense<float> probe(size * size, 1);
    conxnet::SigmoidLayer<float> sig;
    conxnet::AdamState<float> opt;
    opt.lr = 0.01f;
    for (int it = 0; it < 300; ++it) {
        Tensor<float> p = sig.forward(probe.forward(xtr));
        auto lv = conxnet::bce_loss(p, ttr);
        probe.backward(sig.backward(lv.grad));
        conxnet::adam_step(opt, probe.params());
    }

    Tensor<float> pte = sig.forward(probe.forward(xte));
    auto metrics = conxnet::compute_metrics(conxnet::confusion(pte, tte));
    std::cout << "probe test accuracy " << metrics.accuracy << "\n";
    EXPECT_GE(metrics.accuracy, 0.80);
}
