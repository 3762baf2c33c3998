#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "conxnet/image_io.hpp"
#include "conxnet/tensor.hpp"

namespace conxnet {

inline constexpr int kLabelCovid = 1;
inline constexpr int kLabelNormal = 0;

template <typename T>
struct LabeledImage {
    Tensor<T> pixels;  // (1,H,W) in [0,1]
    int label = kLabelNormal;
    std::string source_path;
};

template <typename T>
struct DatasetLoad {
    std::vector<LabeledImage<T>> pool;
    std::size_t skipped = 0;
};

namespace detail {

inline bool has_png_extension(const std::filesystem::path& p) {
    std::string e = p.extension().string();
    std::transform(e.begin(), e.end(), e.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return e == ".png";
}

inline std::vector<std::filesystem::path> sorted_pngs(const std::filesystem::path& dir) {
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir))
        if (entry.is_regular_file() && has_png_extension(entry.path()))
            files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    return files;
}

}  // namespace detail

/// Decode one PNG to a (1,size,size) unit-range grayscale tensor.
template <typename T>
Tensor<T> load_image_tensor(const std::string& path, std::size_t size) {
    const ImageU8 img = read_png(path);
    Tensor<T> gray = image_to_unit_gray<T>(img);
    if (gray.shape[1] == size && gray.shape[2] == size) return gray;
    Tensor<T> plane{{gray.shape[1], gray.shape[2]}};
    plane.data = gray.data;
    Tensor<T> resized = resize_bilinear_2d(plane, size, size);
    Tensor<T> out{{1, size, size}};
    out.data = std::move(resized.data);
    return out;
}

/// Loads root/COVID and root/Normal. Unreadable files are skipped with a
/// warning and counted; a missing or effectively empty class directory is
/// fatal. Files are visited in sorted name order, so the pool layout is
/// deterministic: all COVID images first, then all Normal.
template <typename T>
DatasetLoad<T> load_dataset(const std::string& root, std::size_t size) {
    DatasetLoad<T> out;
    const std::filesystem::path base(root);
    const struct {
        const char* name;
        int label;
    } classes[2] = {{"COVID", kLabelCovid}, {"Normal", kLabelNormal}};

    for (const auto& cls : classes) {
        const std::filesystem::path dir = base / cls.name;
        if (!std::filesystem::is_directory(dir))
            throw std::runtime_error("class directory '" + dir.string() + "' is missing");
        std::size_t loaded = 0;
        for (const auto& file : detail::sorted_pngs(dir)) {
            try {
                LabeledImage<T> li;
                li.pixels = load_image_tensor<T>(file.string(), size);
                li.label = cls.label;
                li.source_path = file.string();
                out.pool.push_back(std::move(li));
                ++loaded;
            } catch (const std::exception& e) {
                std::fprintf(stderr, "warning: skipping unreadable image %s (%s)\n",
                             file.string().c_str(), e.what());
                ++out.skipped;
            }
        }
        if (loaded == 0)
            throw std::runtime_error("class directory '" + dir.string() +
                                     "' contains no readable PNG images");
    }
    return out;
}

/// Seeded uniform sampling without replacement down to per_class per label.
/// Selection order is canonicalized (original pool order within each class).
template <typename T>
std::vector<LabeledImage<T>> balance(const std::vector<LabeledImage<T>>& pool,
                                     std::size_t per_class, std::uint64_t seed) {
    if (per_class == 0) throw std::invalid_argument("balance: per_class must be >= 1");
    std::vector<std::size_t> by_class[2];
    for (std::size_t i = 0; i < pool.size(); ++i) {
        const int l = pool[i].label;
        if (l != 0 && l != 1)
            throw std::invalid_argument("balance: label " + std::to_string(l) + " is not 0 or 1");
        by_class[l].push_back(i);
    }
    std::mt19937_64 rng(seed);
    std::vector<LabeledImage<T>> out;
    for (int l : {kLabelCovid, kLabelNormal}) {
        auto& idx = by_class[l];
        if (idx.size() < per_class)
            throw std::invalid_argument("balance: class " + std::to_string(l) + " has only " +
                                        std::to_string(idx.size()) + " samples, need " +
                                        std::to_string(per_class));
        std::shuffle(idx.begin(), idx.end(), rng);
        idx.resize(per_class);
        std::sort(idx.begin(), idx.end());
        for (std::size_t i : idx) out.push_back(pool[i]);
    }
    return out;
}

struct DatasetSplit {
    std::vector<std::size_t> train, test;  // indices into the pool
    double ratio = 0.7;
    std::uint64_t seed = 0;
};

/// Stratified split: each class is shuffled (one seeded stream) and cut so
/// the global train count is floor(ratio*N), with the per-class deficit
/// against per-class floors distributed by largest fractional remainder
/// (ties to the lower class id).
inline DatasetSplit split_stratified(const std::vector<int>& labels, double ratio,
                                     std::uint64_t seed) {
    if (!(ratio > 0.0 && ratio < 1.0))
        throw std::invalid_argument("split: ratio must lie in (0,1), got " + std::to_string(ratio));
    if (labels.empty()) throw std::invalid_argument("split: empty pool");

    std::vector<std::size_t> by_class[2];
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != 0 && labels[i] != 1)
            throw std::invalid_argument("split: label " + std::to_string(labels[i]) +
                                        " is not 0 or 1");
        by_class[labels[i]].push_back(i);
    }

    const std::size_t total_train =
        static_cast<std::size_t>(ratio * static_cast<double>(labels.size()));
    std::size_t base[2];
    double rem[2];
    std::size_t assigned = 0;
    for (int c = 0; c < 2; ++c) {
        const double t = ratio * static_cast<double>(by_class[c].size());
        base[c] = static_cast<std::size_t>(t);
        rem[c] = t - static_cast<double>(base[c]);
        assigned += base[c];
    }
    for (std::size_t d = assigned; d < total_train; ++d) {
        const int c = (rem[1] > rem[0]) ? 1 : 0;  // tie goes to class 0
        base[c] += 1;
        rem[c] = -1.0;
    }

    DatasetSplit out;
    out.ratio = ratio;
    out.seed = seed;
    std::mt19937_64 rng(seed);
    for (int c = 0; c < 2; ++c) {
        auto idx = by_class[c];
        std::shuffle(idx.begin(), idx.end(), rng);
        if (!idx.empty() && (base[c] == 0 || base[c] >= idx.size()))
            throw std::invalid_argument("split: class " + std::to_string(c) + " with " +
                                        std::to_string(idx.size()) +
                                        " samples cannot populate both splits at ratio " +
                                        std::to_string(ratio));
        out.train.insert(out.train.end(), idx.begin(), idx.begin() + base[c]);
        out.test.insert(out.test.end(), idx.begin() + base[c], idx.end());
    }
    std::sort(out.train.begin(), out.train.end());
    std::sort(out.test.begin(), out.test.end());
    return out;
}

template <typename T>
DatasetSplit split_stratified(const std::vector<LabeledImage<T>>& pool, double ratio,
                              std::uint64_t seed) {
    std::vector<int> labels(pool.size());
    for (std::size_t i = 0; i < pool.size(); ++i) labels[i] = pool[i].label;
    return split_stratified(labels, ratio, seed);
}

/// Deterministic per-epoch shuffled batching over a fixed index list.
class BatchIterator {
public:
    BatchIterator(std::vector<std::size_t> indices, std::size_t batch_size, std::uint64_t seed,
                  bool drop_last = false)
        : indices_(std::move(indices)), batch_size_(batch_size), seed_(seed),
          drop_last_(drop_last) {
        if (batch_size_ == 0) throw std::invalid_argument("batch: batch size must be >= 1");
    }

    /// Batches for the given epoch; each epoch reshuffles with a stream
    /// derived only from (seed, epoch).
    std::vector<std::vector<std::size_t>> epoch_batches(std::size_t epoch) const {
        std::vector<std::size_t> order = indices_;
        std::mt19937_64 rng(seed_ + 0x9E3779B97F4A7C15ull * (static_cast<std::uint64_t>(epoch) + 1));
        std::shuffle(order.begin(), order.end(), rng);
        std::vector<std::vector<std::size_t>> batches;
        for (std::size_t i = 0; i < order.size(); i += batch_size_) {
            const std::size_t end = std::min(i + batch_size_, order.size());
            if (drop_last_ && end - i < batch_size_) break;
            batches.emplace_back(order.begin() + i, order.begin() + end);
        }
        return batches;
    }

    std::size_t batch_size() const { return batch_size_; }

private:
    std::vector<std::size_t> indices_;
    std::size_t batch_size_;
    std::uint64_t seed_;
    bool drop_last_;
};

/// Stack pool images at the given indices into an (N,1,H,W) batch.
template <typename T>
Tensor<T> make_batch(const std::vector<LabeledImage<T>>& pool,
                     const std::vector<std::size_t>& indices) {
    if (indices.empty()) throw std::invalid_argument("batch: empty index list");
    const Shape& s0 = pool[indices[0]].pixels.shape;
    Tensor<T> out{{indices.size(), 1, s0[1], s0[2]}};
    const std::size_t plane = s0[1] * s0[2];
    for (std::size_t n = 0; n < indices.size(); ++n) {
        const Tensor<T>& px = pool[indices[n]].pixels;
        if (px.shape != s0)
            throw std::invalid_argument("batch: image shapes differ: " + shape_str(px.shape) +
                                        " vs " + shape_str(s0));
        std::copy(px.data.begin(), px.data.end(), out.data.begin() + n * plane);
    }
    return out;
}

template <typename T>
Tensor<T> make_targets(const std::vector<LabeledImage<T>>& pool,
                       const std::vector<std::size_t>& indices) {
    Tensor<T> out{{indices.size(), 1}};
    for (std::size_t n = 0; n < indices.size(); ++n)
        out.data[n] = static_cast<T>(pool[indices[n]].label);
    return out;
}

/// Ground-truth lesion record for one synthetic positive image, in pixel
/// coordinates of the generated image.
struct BlobRecord {
    std::string file;  // file name relative to the COVID directory
    double cx, cy, rx, ry;
};

struct SynthResult {
    std::size_t written = 0;
    std::string covid_dir, normal_dir;
    std::string blob_table;  // TSV with the injected blob geometry
};

namespace detail {

/// Smooth background: low-frequency field from a bilinearly upsampled seeded
/// coarse grid plus fine pixel noise.
template <typename T>
Tensor<T> synth_background(std::size_t size, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Tensor<T> grid{{5, 5}};
    for (auto& v : grid.data) v = static_cast<T>(unit(rng));
    Tensor<T> up = resize_bilinear_2d(grid, size, size);
    std::uniform_real_distribution<double> jitter(-0.02, 0.02);
    Tensor<T> img{{size, size}};
    for (std::size_t i = 0; i < img.size(); ++i) {
        const double v = 0.25 + 0.30 * static_cast<double>(up.data[i]) + jitter(rng);
        img.data[i] = static_cast<T>(std::clamp(v, 0.0, 1.0));
    }
    return img;
}

}  // namespace detail

/// Writes n_per_class Normal and COVID PNGs plus a blob-geometry table.
/// Normal images are smooth noise fields; COVID images add one bright
/// elliptical blob at a seeded position. Byte-identical for a fixed seed.
inline SynthResult synth_generate(std::size_t n_per_class, std::size_t size, std::uint64_t seed,
                                  const std::string& out_dir) {
    if (size < 16) throw std::invalid_argument("synth: size must be >= 16, got " +
                                               std::to_string(size));
    if (n_per_class == 0) throw std::invalid_argument("synth: n_per_class must be >= 1");

    namespace fs = std::filesystem;
    const fs::path base(out_dir);
    const fs::path covid = base / "COVID";
    const fs::path normal = base / "Normal";
    std::error_code ec;
    fs::create_directories(covid, ec);
    if (ec) throw std::runtime_error("synth: cannot create '" + covid.string() + "': " + ec.message());
    fs::create_directories(normal, ec);
    if (ec) throw std::runtime_error("synth: cannot create '" + normal.string() + "': " + ec.message());

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> center(0.30, 0.70);
    std::uniform_real_distribution<double> radius(0.10, 0.18);
    std::uniform_real_distribution<double> amplitude(0.50, 0.75);

    SynthResult res;
    res.covid_dir = covid.string();
    res.normal_dir = normal.string();

    char name[32];
    for (std::size_t i = 0; i < n_per_class; ++i) {
        std::snprintf(name, sizeof name, "normal_%04zu.png", i);
        Tensor<double> img = detail::synth_background<double>(size, rng);
        write_png(unit_gray_to_image(img), (normal / name).string());
        ++res.written;
    }

    std::vector<BlobRecord> blobs;
    for (std::size_t i = 0; i < n_per_class; ++i) {
        std::snprintf(name, sizeof name, "covid_%04zu.png", i);
        Tensor<double> img = detail::synth_background<double>(size, rng);
        BlobRecord b;
        b.file = name;
        b.cx = center(rng) * static_cast<double>(size);
        b.cy = center(rng) * static_cast<double>(size);
        b.rx = radius(rng) * static_cast<double>(size);
        b.ry = radius(rng) * static_cast<double>(size);
        const double amp = amplitude(rng);
        for (std::size_t y = 0; y < size; ++y)
            for (std::size_t x = 0; x < size; ++x) {
                const double dx = (static_cast<double>(x) - b.cx) / b.rx;
                const double dy = (static_cast<double>(y) - b.cy) / b.ry;
                const double d2 = dx * dx + dy * dy;
                if (d2 < 1.0) {
                    const double bump = amp * (1.0 - d2) * (1.0 - d2);
                    img(y, x) = std::clamp(img(y, x) + bump, 0.0, 1.0);
                }
            }
        write_png(unit_gray_to_image(img), (covid / name).string());
        blobs.push_back(b);
        ++res.written;
    }

    const fs::path table = base / "blobs.tsv";
    std::ofstream tsv(table);
    if (!tsv) throw std::runtime_error("synth: cannot write '" + table.string() + "'");
    tsv << "file\tcx\tcy\trx\try\n";
    tsv << std::fixed << std::setprecision(6);
    for (const BlobRecord& b : blobs)
        tsv << b.file << '\t' << b.cx << '\t' << b.cy << '\t' << b.rx << '\t' << b.ry << '\n';
    tsv.close();
    if (!tsv) throw std::runtime_error("synth: failed writing '" + table.string() + "'");
    res.blob_table = table.string();
    return res;
}

inline std::vector<BlobRecord> read_blob_table(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open blob table '" + path + "'");
    std::vector<BlobRecord> out;
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        BlobRecord b;
        if (!(ss >> b.file >> b.cx >> b.cy >> b.rx >> b.ry))
            throw std::runtime_error("malformed blob table line: " + line);
        out.push_back(b);
    }
    return out;
}

/// Reproducibility audit: one `path<TAB>label<TAB>split` line per pool image.
template <typename T>
void write_manifest(const std::string& path, const std::vector<LabeledImage<T>>& pool,
                    const DatasetSplit& split) {
    std::vector<char> where(pool.size(), '?');
    for (std::size_t i : split.train) where[i] = 't';
    for (std::size_t i : split.test) where[i] = 'e';
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write manifest '" + path + "'");
    for (std::size_t i = 0; i < pool.size(); ++i)
        out << pool[i].source_path << '\t' << pool[i].label << '\t'
            << (where[i] == 't' ? "train" : where[i] == 'e' ? "test" : "unused") << '\n';
    out.close();
    if (!out) throw std::runtime_error("failed writing manifest '" + path + "'");
}

}  // namespace conxnet
