#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "conxnet/data.hpp"
#include "conxnet/layers.hpp"
#include "conxnet/metrics.hpp"
#include "conxnet/optim.hpp"
#include "conxnet/tensor.hpp"

namespace conxnet {

struct ModelConfig {
    std::size_t input_h = 64, input_w = 64;
    std::array<std::size_t, 4> block_filters{16, 32, 64, 128};
    std::size_t kernel = 3;
    std::size_t dense_hidden = 64;
    std::uint64_t seed = 0;
    double lr = 1e-3;
    std::size_t epochs = 100;
    std::size_t batch_size = 32;
};

/// Split/balance protocol carried inside checkpoints so evaluation can
/// rebuild the exact train/test partition.
struct TrainProtocol {
    double train_ratio = 0.70;
    std::size_t per_class = 0;  // 0 = use the full balanced pool (min class size)
};

inline void validate(const ModelConfig& cfg) {
    if (cfg.input_h % 16 != 0 || cfg.input_w % 16 != 0)
        throw std::invalid_argument("model: input size " + std::to_string(cfg.input_h) + "x" +
                                    std::to_string(cfg.input_w) +
                                    " is not divisible by 16 (four 2x2 pools)");
    for (std::size_t f : cfg.block_filters)
        if (f == 0) throw std::invalid_argument("model: block filter counts must be >= 1");
    if (cfg.dense_hidden == 0) throw std::invalid_argument("model: dense width must be >= 1");
    if (cfg.kernel == 0 || cfg.kernel % 2 == 0)
        throw std::invalid_argument("model: kernel must be odd to preserve spatial extent, got " +
                                    std::to_string(cfg.kernel));
    if (cfg.batch_size == 0) throw std::invalid_argument("model: batch size must be >= 1");
}

/// Four Conv-ReLU-BatchNorm-MaxPool blocks, then Flatten, Dense, ReLU,
/// Dense(1), Sigmoid. Output is an (N,1) probability of the positive class.
template <typename T>
class ConXNet {
public:
    explicit ConXNet(const ModelConfig& cfg) : cfg_(cfg) {
        validate(cfg);
        std::size_t in_c = 1;
        for (std::size_t b = 0; b < 4; ++b) {
            const std::string prefix = "block" + std::to_string(b + 1);
            const std::size_t out_c = cfg.block_filters[b];
            add(std::make_unique<Conv2D<T>>(in_c, out_c, cfg.kernel, 1, cfg.kernel / 2),
                prefix + ".conv");
            add(std::make_unique<ReLULayer<T>>(), "");
            add(std::make_unique<BatchNorm2D<T>>(out_c), prefix + ".bn");
            add(std::make_unique<MaxPool2D<T>>(), "");
            in_c = out_c;
        }
        flatten_width_ = cfg.block_filters[3] * (cfg.input_h / 16) * (cfg.input_w / 16);
        add(std::make_unique<FlattenLayer<T>>(), "");
        add(std::make_unique<Dense<T>>(flatten_width_, cfg.dense_hidden), "head.dense1");
        add(std::make_unique<ReLULayer<T>>(), "");
        add(std::make_unique<Dense<T>>(cfg.dense_hidden, 1), "head.dense2");
        add(std::make_unique<SigmoidLayer<T>>(), "");
        init_params();
    }

    Tensor<T> forward(const Tensor<T>& batch) {
        if (batch.rank() != 4 || batch.shape[1] != 1 || batch.shape[2] != cfg_.input_h ||
            batch.shape[3] != cfg_.input_w)
            throw std::invalid_argument(
                "model: input must be (N,1," + std::to_string(cfg_.input_h) + "," +
                std::to_string(cfg_.input_w) + "), got " + shape_str(batch.shape));
        if (training_ && batch.shape[0] < 2)
            throw std::invalid_argument("model: train-mode forward requires batch size >= 2");
        Tensor<T> x = batch;
        for (auto& l : layers_) x = l->forward(x);
        return x;
    }

    /// Backward through layers [downto, from] in reverse; returns the
    /// gradient with respect to the input of layer `downto`.
    Tensor<T> backward_range(std::size_t from, std::size_t downto, Tensor<T> grad) {
        if (from >= layers_.size() || downto > from)
            throw std::invalid_argument("model: bad backward layer range");
        for (std::size_t i = from + 1; i-- > downto;) grad = layers_[i]->backward(grad);
        return grad;
    }

    Tensor<T> backward(const Tensor<T>& grad_out) {
        return backward_range(layers_.size() - 1, 0, grad_out);
    }

    void set_training(bool on) {
        training_ = on;
        for (auto& l : layers_) l->set_training(on);
    }
    bool training() const { return training_; }

    std::vector<ParamRef<T>> params() {
        std::vector<ParamRef<T>> out;
        for (std::size_t i = 0; i < layers_.size(); ++i)
            for (ParamRef<T> p : layers_[i]->params()) {
                p.name = prefixes_[i] + "." + p.name;
                out.push_back(p);
            }
        return out;
    }
    std::vector<ParamRef<T>> buffers() {
        std::vector<ParamRef<T>> out;
        for (std::size_t i = 0; i < layers_.size(); ++i)
            for (ParamRef<T> p : layers_[i]->buffers()) {
                p.name = prefixes_[i] + "." + p.name;
                out.push_back(p);
            }
        return out;
    }

    const ModelConfig& config() const { return cfg_; }
    std::size_t flatten_width() const { return flatten_width_; }
    std::size_t layer_count() const { return layers_.size(); }
    Layer<T>& layer(std::size_t i) { return *layers_.at(i); }

    Conv2D<T>& conv(std::size_t block) {
        return dynamic_cast<Conv2D<T>&>(*layers_.at((block - 1) * 4));
    }
    BatchNorm2D<T>& bn(std::size_t block) {
        return dynamic_cast<BatchNorm2D<T>&>(*layers_.at((block - 1) * 4 + 2));
    }
    MaxPool2D<T>& pool(std::size_t block) {
        return dynamic_cast<MaxPool2D<T>&>(*layers_.at((block - 1) * 4 + 3));
    }
    Dense<T>& dense(std::size_t i) { return dynamic_cast<Dense<T>&>(*layers_.at(i == 1 ? 17 : 19)); }

    static constexpr std::size_t kLastPoolIndex = 15;
    static constexpr std::size_t kOutputIndex = 20;

private:
    void add(std::unique_ptr<Layer<T>> l, std::string prefix) {
        layers_.push_back(std::move(l));
        prefixes_.push_back(std::move(prefix));
    }

    void init_params() {
        std::mt19937_64 rng(cfg_.seed);
        auto he_fill = [&rng](Tensor<T>& w, std::size_t fan_in) {
            std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
            for (auto& v : w.data) v = static_cast<T>(dist(rng));
        };
        for (std::size_t b = 1; b <= 4; ++b) {
            Conv2D<T>& c = conv(b);
            he_fill(c.weight(), c.in_channels() * c.kernel() * c.kernel());
        }
        he_fill(dense(1).weight(), dense(1).in_width());
        he_fill(dense(2).weight(), dense(2).in_width());
    }

    ModelConfig cfg_;
    std::vector<std::unique_ptr<Layer<T>>> layers_;
    std::vector<std::string> prefixes_;
    std::size_t flatten_width_ = 0;
    bool training_ = true;
};

// ---------------------------------------------------------------------------
// Checkpoint format: 8-byte magic "CONXNET1", u32 version (=1), u32-length-
// prefixed config text (key=value lines), then per-tensor records — u32 name
// length + name bytes, u32 rank, u32 extents, little-endian float32 payload —
// until end of file. Parameters first, then batch-norm running statistics.
// ---------------------------------------------------------------------------

namespace detail {

inline constexpr char kCheckpointMagic[8] = {'C', 'O', 'N', 'X', 'N', 'E', 'T', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void put_u32(std::ostream& os, std::uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), 4);
}

inline std::uint32_t get_u32(std::istream& is, const char* what) {
    std::uint32_t v;
    is.read(reinterpret_cast<char*>(&v), 4);
    if (!is) throw std::runtime_error(std::string("truncated checkpoint (") + what + ")");
    return v;
}

template <typename T>
void put_tensor(std::ostream& os, const std::string& name, const Tensor<T>& t) {
    put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape) put_u32(os, static_cast<std::uint32_t>(e));
    std::vector<float> payload(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) payload[i] = static_cast<float>(t.data[i]);
    os.write(reinterpret_cast<const char*>(payload.data()),
             static_cast<std::streamsize>(payload.size() * sizeof(float)));
}

inline std::string config_text(const ModelConfig& c, const TrainProtocol& p,
                               std::uint32_t epoch) {
    char buf[128];
    std::string s;
    auto line = [&s](const std::string& kv) { s += kv + "\n"; };
    line("input_h=" + std::to_string(c.input_h));
    line("input_w=" + std::to_string(c.input_w));
    line("filters=" + std::to_string(c.block_filters[0]) + "," +
         std::to_string(c.block_filters[1]) + "," + std::to_string(c.block_filters[2]) + "," +
         std::to_string(c.block_filters[3]));
    line("kernel=" + std::to_string(c.kernel));
    line("dense_hidden=" + std::to_string(c.dense_hidden));
    line("seed=" + std::to_string(c.seed));
    std::snprintf(buf, sizeof buf, "lr=%.17g", c.lr);
    line(buf);
    line("epochs=" + std::to_string(c.epochs));
    line("batch_size=" + std::to_string(c.batch_size));
    std::snprintf(buf, sizeof buf, "train_ratio=%.17g", p.train_ratio);
    line(buf);
    line("per_class=" + std::to_string(p.per_class));
    line("epoch=" + std::to_string(epoch));
    return s;
}

inline void parse_config_text(const std::string& text, ModelConfig& c, TrainProtocol& p,
                              std::uint32_t& epoch) {
    std::map<std::string, std::string> kv;
    std::istringstream ss(text);
    std::string ln;
    while (std::getline(ss, ln)) {
        if (ln.empty()) continue;
        const auto eq = ln.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("malformed checkpoint config line: " + ln);
        kv[ln.substr(0, eq)] = ln.substr(eq + 1);
    }
    auto need = [&kv](const char* key) -> const std::string& {
        auto it = kv.find(key);
        if (it == kv.end())
            throw std::runtime_error(std::string("checkpoint config missing key '") + key + "'");
        return it->second;
    };
    c.input_h = std::stoul(need("input_h"));
    c.input_w = std::stoul(need("input_w"));
    {
        std::istringstream fs(need("filters"));
        std::string tok;
        for (std::size_t i = 0; i < 4; ++i) {
            if (!std::getline(fs, tok, ','))
                throw std::runtime_error("checkpoint config: filters needs 4 entries");
            c.block_filters[i] = std::stoul(tok);
        }
    }
    c.kernel = std::stoul(need("kernel"));
    c.dense_hidden = std::stoul(need("dense_hidden"));
    c.seed = std::stoull(need("seed"));
    c.lr = std::stod(need("lr"));
    c.epochs = std::stoul(need("epochs"));
    c.batch_size = std::stoul(need("batch_size"));
    p.train_ratio = std::stod(need("train_ratio"));
    p.per_class = std::stoul(need("per_class"));
    epoch = static_cast<std::uint32_t>(std::stoul(need("epoch")));
}

}  // namespace detail

template <typename T>
void save_checkpoint(ConXNet<T>& model, const TrainProtocol& protocol, std::uint32_t epoch,
                     const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write checkpoint '" + path + "'");
    os.write(detail::kCheckpointMagic, 8);
    detail::put_u32(os, detail::kCheckpointVersion);
    const std::string cfg = detail::config_text(model.config(), protocol, epoch);
    detail::put_u32(os, static_cast<std::uint32_t>(cfg.size()));
    os.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
    for (const ParamRef<T>& p : model.params()) detail::put_tensor(os, p.name, *p.value);
    for (const ParamRef<T>& b : model.buffers()) detail::put_tensor(os, b.name, *b.value);
    os.close();
    if (!os) throw std::runtime_error("failed writing checkpoint '" + path + "'");
}

template <typename T>
struct Checkpoint {
    ConXNet<T> model;
    TrainProtocol protocol;
    std::uint32_t epoch = 0;
};

/// Loads a checkpoint; the returned model is in eval mode.
template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint '" + path + "'");

    char magic[8];
    is.read(magic, 8);
    if (!is || std::string(magic, 8) != std::string(detail::kCheckpointMagic, 8))
        throw std::runtime_error("'" + path + "' is not a checkpoint (bad magic)");
    const std::uint32_t version = detail::get_u32(is, "version");
    if (version != detail::kCheckpointVersion)
        throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));

    const std::uint32_t cfg_len = detail::get_u32(is, "config length");
    std::string cfg_text(cfg_len, '\0');
    is.read(cfg_text.data(), cfg_len);
    if (!is) throw std::runtime_error("truncated checkpoint (config)");

    ModelConfig cfg;
    TrainProtocol protocol;
    std::uint32_t epoch = 0;
    detail::parse_config_text(cfg_text, cfg, protocol, epoch);

    Checkpoint<T> out{ConXNet<T>(cfg), protocol, epoch};
    std::map<std::string, Tensor<T>*> targets;
    for (const ParamRef<T>& p : out.model.params()) targets[p.name] = p.value;
    for (const ParamRef<T>& b : out.model.buffers()) targets[b.name] = b.value;

    std::map<std::string, bool> seen;
    while (is.peek() != std::char_traits<char>::eof()) {
        const std::uint32_t name_len = detail::get_u32(is, "tensor name length");
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        if (!is) throw std::runtime_error("truncated checkpoint (tensor name)");
        const std::uint32_t rank = detail::get_u32(is, "tensor rank");
        Shape shape(rank);
        for (std::uint32_t i = 0; i < rank; ++i)
            shape[i] = detail::get_u32(is, "tensor extent");

        auto it = targets.find(name);
        if (it == targets.end())
            throw std::runtime_error("unknown tensor '" + name + "' in checkpoint");
        if (seen.count(name))
            throw std::runtime_error("duplicate tensor '" + name + "' in checkpoint");
        if (it->second->shape != shape)
            throw std::runtime_error("shape mismatch for tensor '" + name + "': checkpoint has " +
                                     shape_str(shape) + ", model expects " +
                                     shape_str(it->second->shape));

        std::vector<float> payload(shape_numel(shape));
        is.read(reinterpret_cast<char*>(payload.data()),
                static_cast<std::streamsize>(payload.size() * sizeof(float)));
        if (!is) throw std::runtime_error("truncated checkpoint (tensor payload)");
        for (std::size_t i = 0; i < payload.size(); ++i)
            it->second->data[i] = static_cast<T>(payload[i]);
        seen[name] = true;
    }
    for (const auto& [name, ptr] : targets)
        if (!seen.count(name))
            throw std::runtime_error("truncated checkpoint (missing tensor '" + name + "')");

    out.model.set_training(false);
    return out;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TrainLogRow {
    std::size_t epoch;
    double loss;           // batch-size-weighted mean train BCE
    double test_accuracy;  // eval-mode accuracy at threshold 0.5
};

/// Eval-mode probabilities for the given pool indices, in order.
template <typename T>
std::vector<double> predict_probs(ConXNet<T>& model, const std::vector<LabeledImage<T>>& pool,
                                  const std::vector<std::size_t>& indices,
                                  std::size_t batch_size) {
    const bool was_training = model.training();
    model.set_training(false);
    std::vector<double> probs;
    probs.reserve(indices.size());
    for (std::size_t i = 0; i < indices.size(); i += batch_size) {
        const std::size_t end = std::min(i + batch_size, indices.size());
        std::vector<std::size_t> chunk(indices.begin() + i, indices.begin() + end);
        Tensor<T> p = model.forward(make_batch(pool, chunk));
        for (std::size_t n = 0; n < p.size(); ++n)
            probs.push_back(static_cast<double>(p.data[n]));
    }
    model.set_training(was_training);
    return probs;
}

template <typename T>
double eval_accuracy(ConXNet<T>& model, const std::vector<LabeledImage<T>>& pool,
                     const std::vector<std::size_t>& indices, std::size_t batch_size) {
    const std::vector<double> probs = predict_probs(model, pool, indices, batch_size);
    std::vector<int> targets(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) targets[i] = pool[indices[i]].label;
    return compute_metrics(confusion(probs, targets)).accuracy;
}

/// Seeded-shuffle epochs of forward/BCE/backward/Adam. Tail batches of size 1
/// are skipped (train-mode batch norm needs at least 2 samples). Aborts with
/// NonFiniteError naming the epoch and batch if the loss leaves the finite
/// range.
template <typename T>
std::vector<TrainLogRow> train_model(ConXNet<T>& model, const std::vector<LabeledImage<T>>& pool,
                                     const DatasetSplit& split, std::ostream* progress = nullptr) {
    if (split.train.empty() || split.test.empty())
        throw std::invalid_argument("train: both splits must be non-empty");
    const ModelConfig& cfg = model.config();

    AdamState<T> opt;
    opt.lr = static_cast<T>(cfg.lr);
    BatchIterator batches(split.train, cfg.batch_size, cfg.seed);

    std::vector<TrainLogRow> log;
    model.set_training(true);
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        double loss_sum = 0.0;
        std::size_t seen = 0, batch_no = 0;
        for (const std::vector<std::size_t>& batch : batches.epoch_batches(epoch)) {
            ++batch_no;
            if (batch.size() < 2) continue;  // batch-norm cannot normalize a singleton
            Tensor<T> x = make_batch(pool, batch);
            Tensor<T> t = make_targets(pool, batch);
            Tensor<T> p = model.forward(x);
            LossValue<T> loss = bce_loss(p, t);
            if (!std::isfinite(static_cast<double>(loss.value)))
                throw NonFiniteError("training aborted: non-finite loss at epoch " +
                                     std::to_string(epoch) + ", batch " +
                                     std::to_string(batch_no));
            loss_sum += static_cast<double>(loss.value) * static_cast<double>(batch.size());
            seen += batch.size();
            model.backward(loss.grad);
            adam_step(opt, model.params());
        }
        const double mean_loss = seen > 0 ? loss_sum / static_cast<double>(seen) : 0.0;
        const double acc = eval_accuracy(model, pool, split.test, cfg.batch_size);
        model.set_training(true);
        log.push_back({epoch, mean_loss, acc});
        if (progress) {
            char buf[96];
            std::snprintf(buf, sizeof buf, "epoch %3zu  loss %.6f  test_accuracy %.4f\n", epoch,
                          mean_loss, acc);
            (*progress) << buf << std::flush;
        }
    }
    return log;
}

inline void write_training_log(const std::string& path, const std::vector<TrainLogRow>& log) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write training log '" + path + "'");
    out << "epoch,loss,test_accuracy\n";
    char buf[96];
    for (const TrainLogRow& r : log) {
        std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g\n", r.epoch, r.loss, r.test_accuracy);
        out << buf;
    }
    out.close();
    if (!out) throw std::runtime_error("failed writing training log '" + path + "'");
}

/// Finite-difference check of the whole assembled model under the BCE loss:
/// input gradient plus every parameter gradient, sampled.
template <typename T>
GradCheckReport gradient_check_model(ConXNet<T>& model, const Tensor<T>& x0,
                                     const Tensor<T>& targets, std::uint64_t seed, T step = T(1e-5),
                                     double tolerance = 1e-4, std::size_t max_samples = 200) {
    std::mt19937_64 rng(seed);
    Tensor<T> x = x0;
    model.set_training(true);

    auto loss = [&]() { return bce_loss(model.forward(x), targets).value; };

    LossValue<T> lv = bce_loss(model.forward(x), targets);
    Tensor<T> gx = model.backward(lv.grad);
    std::vector<std::pair<std::string, Tensor<T>>> param_grads;
    for (const ParamRef<T>& p : model.params()) param_grads.emplace_back(p.name, *p.grad);

    GradCheckReport report;
    report.tolerance = tolerance;
    report.entries.push_back(detail::fd_check_tensor("input", x, gx, loss, step, max_samples, rng));
    for (auto& [name, grad] : param_grads) {
        Tensor<T>* pv = nullptr;
        for (const ParamRef<T>& p : model.params())
            if (p.name == name) pv = p.value;
        report.entries.push_back(detail::fd_check_tensor(name, *pv, grad, loss, step, max_samples, rng));
    }
    for (const GradCheckEntry& e : report.entries)
        if (!(e.max_rel_err <= tolerance)) report.pass = false;
    return report;
}

}  // namespace conxnet
