// conxnet: train, evaluate, and inspect the 4-block CNN on COVID/Normal
// chest X-ray style corpora; also carries the perceptron gate demos and the
// finite-difference gradient checker.
//
// Exit codes: 0 success, 1 usage error, 2 runtime/data error, 3 numerical
// abort during training.

#include <cstdint>
#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "conxnet/conxnet.hpp"

namespace cx = conxnet;

namespace {

struct PreparedData {
    std::vector<cx::LabeledImage<float>> pool;  // balanced
    cx::DatasetSplit split;
    std::size_t per_class = 0;  // resolved count actually used
    std::size_t skipped = 0;
};

PreparedData prepare_data(const std::string& data_dir, std::size_t input_size, double ratio,
                          std::size_t per_class, std::uint64_t seed) {
    cx::DatasetLoad<float> loaded = cx::load_dataset<float>(data_dir, input_size);
    std::size_t counts[2] = {0, 0};
    for (const auto& li : loaded.pool) counts[li.label] += 1;
    PreparedData out;
    out.per_class = per_class ? per_class : std::min(counts[0], counts[1]);
    out.skipped = loaded.skipped;
    out.pool = cx::balance(loaded.pool, out.per_class, seed);
    out.split = cx::split_stratified(out.pool, ratio, seed);
    return out;
}

void print_split_metrics(cx::ConXNet<float>& model, const PreparedData& data,
                         const std::vector<std::size_t>& indices) {
    const std::vector<double> probs =
        cx::predict_probs(model, data.pool, indices, model.config().batch_size);
    std::vector<int> targets(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) targets[i] = data.pool[indices[i]].label;
    const cx::ConfusionMatrix cm = cx::confusion(probs, targets);
    const cx::MetricsReport r = cx::compute_metrics(cm);
    std::cout << cx::metrics_table(r) << cx::metrics_line(r, cm) << "\n";
}

int cmd_synth(const std::string& out_dir, std::size_t n_per_class, std::size_t size,
              std::uint64_t seed) {
    const cx::SynthResult res = cx::synth_generate(n_per_class, size, seed, out_dir);
    std::cout << "wrote " << res.written << " images (" << n_per_class << " per class, " << size
              << "x" << size << ") under " << out_dir << "\n"
              << "blob table: " << res.blob_table << "\n";
    return 0;
}

int cmd_train(const std::string& data_dir, cx::ModelConfig cfg, cx::TrainProtocol protocol,
              const std::string& out_path, const std::string& log_path,
              const std::string& manifest_path) {
    PreparedData data = prepare_data(data_dir, cfg.input_h, protocol.train_ratio,
                                     protocol.per_class, cfg.seed);
    if (data.skipped)
        std::cout << "skipped " << data.skipped << " unreadable files\n";
    std::cout << "pool: " << data.pool.size() << " images (" << data.per_class
              << " per class), train " << data.split.train.size() << " / test "
              << data.split.test.size() << "\n";

    cx::ConXNet<float> model(cfg);
    const std::vector<cx::TrainLogRow> log = cx::train_model(model, data.pool, data.split,
                                                             &std::cout);

    protocol.per_class = data.per_class;
    cx::save_checkpoint(model, protocol, static_cast<std::uint32_t>(cfg.epochs), out_path);
    cx::write_training_log(log_path, log);
    if (!manifest_path.empty()) cx::write_manifest(manifest_path, data.pool, data.split);

    std::cout << "checkpoint: " << out_path << "\ntraining log: " << log_path << "\n\n"
              << "test-split metrics:\n";
    print_split_metrics(model, data, data.split.test);
    return 0;
}

int cmd_eval(const std::string& weights, const std::string& data_dir, const std::string& which) {
    cx::Checkpoint<float> ckpt = cx::load_checkpoint<float>(weights);
    const cx::ModelConfig& cfg = ckpt.model.config();
    PreparedData data = prepare_data(data_dir, cfg.input_h, ckpt.protocol.train_ratio,
                                     ckpt.protocol.per_class, cfg.seed);

    std::vector<std::size_t> indices;
    if (which == "train") {
        indices = data.split.train;
    } else if (which == "test") {
        indices = data.split.test;
    } else {
        indices = data.split.train;
        indices.insert(indices.end(), data.split.test.begin(), data.split.test.end());
    }
    std::cout << "evaluating " << indices.size() << " images (" << which << " split)\n";
    print_split_metrics(ckpt.model, data, indices);
    return 0;
}

int cmd_predict(const std::string& weights, const std::string& image_path) {
    cx::Checkpoint<float> ckpt = cx::load_checkpoint<float>(weights);
    const cx::ModelConfig& cfg = ckpt.model.config();
    cx::Tensor<float> img = cx::load_image_tensor<float>(image_path, cfg.input_h);
    cx::Tensor<float> batch{{1, 1, cfg.input_h, cfg.input_w}};
    batch.data = img.data;
    const cx::Tensor<float> p = ckpt.model.forward(batch);
    const double prob = static_cast<double>(p.data[0]);
    std::printf("probability=%.6f class=%s\n", prob, prob >= 0.5 ? "COVID" : "Normal");
    return 0;
}

int cmd_heatmap(const std::string& weights, const std::string& image_path,
                const std::string& out_path, const std::string& cls, double alpha,
                const std::string& map_csv) {
    cx::Checkpoint<float> ckpt = cx::load_checkpoint<float>(weights);
    const cx::ModelConfig& cfg = ckpt.model.config();
    cx::Tensor<float> img = cx::load_image_tensor<float>(image_path, cfg.input_h);
    cx::Tensor<float> batch{{1, 1, cfg.input_h, cfg.input_w}};
    batch.data = img.data;

    const cx::ActivationMap<float> map =
        cx::grad_cam(ckpt.model, batch, cx::parse_target_class(cls));
    const cx::ImageU8 overlay = cx::overlay_heatmap(img, map, alpha);
    cx::write_png(overlay, out_path);
    if (!map_csv.empty()) cx::write_map_csv(map_csv, map);

    const double prob = static_cast<double>(ckpt.model.forward(batch).data[0]);
    std::printf("probability=%.6f class=%s overlay=%s\n", prob,
                prob >= 0.5 ? "COVID" : "Normal", out_path.c_str());
    return 0;
}

void print_report(const std::string& label, const cx::GradCheckReport& report, bool& all_pass) {
    for (const cx::GradCheckEntry& e : report.entries) {
        const bool ok = e.max_rel_err <= report.tolerance;
        if (!ok) all_pass = false;
        std::printf("%-24s %-12s max_rel_err %.3e (%zu elements)  %s\n", label.c_str(),
                    e.name.c_str(), e.max_rel_err, e.checked, ok ? "PASS" : "FAIL");
    }
}

int cmd_gradcheck(std::size_t size, std::uint64_t seed) {
    using T = double;
    if (size < 4) throw std::invalid_argument("gradcheck: size must be >= 4");
    bool all_pass = true;

    {
        cx::Conv2D<T> conv(2, 3, 3, 1, 1);
        conv.weight() = cx::uniform_tensor<T>(conv.weight().shape, -0.5, 0.5, seed + 1);
        conv.bias() = cx::uniform_tensor<T>(conv.bias().shape, -0.2, 0.2, seed + 2);
        const auto x = cx::uniform_tensor<T>({2, 2, size, size}, -1.0, 1.0, seed + 3);
        print_report("conv2d", cx::gradient_check_layer(conv, x, seed + 4), all_pass);
    }
    {
        cx::BatchNorm2D<T> bn(3);
        bn.gamma() = cx::uniform_tensor<T>({3}, 0.5, 1.5, seed + 5);
        bn.beta() = cx::uniform_tensor<T>({3}, -0.5, 0.5, seed + 6);
        const auto x = cx::uniform_tensor<T>({4, 3, size, size}, -1.0, 1.0, seed + 7);
        print_report("batchnorm2d(train)", cx::gradient_check_layer(bn, x, seed + 8), all_pass);
        bn.set_training(false);
        print_report("batchnorm2d(eval)", cx::gradient_check_layer(bn, x, seed + 9), all_pass);
    }
    {
        cx::MaxPool2D<T> pool;
        const auto x = cx::pool_safe_uniform<T>({2, 2, size, size}, seed + 10);
        print_report("maxpool2d", cx::gradient_check_layer(pool, x, seed + 11), all_pass);
    }
    {
        cx::Dense<T> dense(8, 5);
        dense.weight() = cx::uniform_tensor<T>(dense.weight().shape, -0.5, 0.5, seed + 12);
        dense.bias() = cx::uniform_tensor<T>(dense.bias().shape, -0.2, 0.2, seed + 13);
        const auto x = cx::uniform_tensor<T>({3, 8}, -1.0, 1.0, seed + 14);
        print_report("dense", cx::gradient_check_layer(dense, x, seed + 15), all_pass);
    }
    {
        cx::ReLULayer<T> relu;
        const auto x = cx::kink_free_uniform<T>({3, 2, size, size}, seed + 16);
        print_report("relu", cx::gradient_check_layer(relu, x, seed + 17), all_pass);
    }
    {
        cx::SigmoidLayer<T> sig;
        const auto x = cx::uniform_tensor<T>({3, 7}, -3.0, 3.0, seed + 18);
        print_report("sigmoid", cx::gradient_check_layer(sig, x, seed + 19), all_pass);
    }
    {
        cx::FlattenLayer<T> flat;
        const auto x = cx::uniform_tensor<T>({2, 3, 4, 5}, -1.0, 1.0, seed + 20);
        print_report("flatten", cx::gradient_check_layer(flat, x, seed + 21), all_pass);
    }
    {
        if (size % 16 != 0)
            throw std::invalid_argument("gradcheck: model check needs size divisible by 16");
        cx::ModelConfig cfg;
        cfg.input_h = cfg.input_w = size;
        cfg.block_filters = {4, 6, 8, 8};
        cfg.dense_hidden = 16;
        cfg.seed = seed;
        cx::ConXNet<T> model(cfg);
        const auto x = cx::uniform_tensor<T>({2, 1, size, size}, 0.05, 0.95, seed + 22);
        cx::Tensor<T> targets{{2, 1}};
        targets.data = {1.0, 0.0};
        print_report("model", cx::gradient_check_model(model, x, targets, seed + 23), all_pass);
    }

    std::printf("gradcheck: %s (tolerance 1e-04)\n", all_pass ? "PASS" : "FAIL");
    return all_pass ? 0 : 2;
}

int cmd_perceptron(const std::string& gate_name) {
    const cx::GateKind gate = cx::parse_gate(gate_name);
    const std::size_t max_epochs = gate == cx::GateKind::Xor ? 1000 : 100;
    cx::Perceptron p = cx::make_gate_perceptron(gate);
    const auto data = cx::gate_dataset(gate);
    const cx::PerceptronTrainResult res = cx::perceptron_train(p, data, max_epochs);

    std::printf("gate=%s theta=%g C=%g\n", gate_name.c_str(), p.theta, p.learning_rate);
    if (res.converged)
        std::printf("converged at epoch %zu\n", res.converged_epoch);
    else
        std::printf("did not converge within %zu epochs (best epoch accuracy %.2f)\n", max_epochs,
                    res.best_accuracy);
    const auto table = cx::truth_table(p);
    std::printf("truth table: %d,%d,%d,%d\n", table[0], table[1], table[2], table[3]);
    std::printf("weights: %g, %g\n", p.weights[0], p.weights[1]);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ConXNet chest X-ray classifier toolkit"};
    app.require_subcommand(1);
    int rc = 0;

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic blob-vs-noise PNG corpus");
    std::string synth_out;
    std::size_t synth_n = 0, synth_size = 64;
    std::uint64_t synth_seed = 0;
    synth->add_option("--out", synth_out, "output directory")->required();
    synth->add_option("--n-per-class", synth_n, "images per class")->required();
    synth->add_option("--size", synth_size, "image side length (>= 16)")->capture_default_str();
    synth->add_option("--seed", synth_seed, "generator seed")->required();
    synth->callback([&] { rc = cmd_synth(synth_out, synth_n, synth_size, synth_seed); });

    // train
    auto* train = app.add_subcommand("train", "train on a COVID/ Normal/ PNG directory");
    std::string train_data, train_out = "model.ckpt", train_log = "training_log.csv";
    std::string train_manifest;
    cx::ModelConfig cfg;
    cx::TrainProtocol protocol;
    std::size_t input_size = 64;
    std::vector<std::size_t> filters;
    train->add_option("--data", train_data, "dataset root (COVID/ and Normal/)")->required();
    train->add_option("--seed", cfg.seed, "split/init/shuffle seed")->required();
    train->add_option("--epochs", cfg.epochs, "training epochs")->capture_default_str();
    train->add_option("--batch", cfg.batch_size, "batch size")->capture_default_str();
    train->add_option("--lr", cfg.lr, "Adam learning rate")->capture_default_str();
    train->add_option("--input-size", input_size, "square input size (divisible by 16)")->capture_default_str();
    train->add_option("--filters", filters, "four block filter counts")
        ->delimiter(',')
        ->expected(4);
    train->add_option("--dense-hidden", cfg.dense_hidden, "hidden dense width")->capture_default_str();
    train->add_option("--train-ratio", protocol.train_ratio, "train fraction")->capture_default_str();
    train->add_option("--per-class", protocol.per_class,
                      "balanced per-class count (0 = smaller class size)")->capture_default_str();
    train->add_option("--out", train_out, "checkpoint path")->capture_default_str();
    train->add_option("--log", train_log, "CSV training log path")->capture_default_str();
    train->add_option("--manifest", train_manifest, "optional path<TAB>label<TAB>split manifest");
    train->callback([&] {
        cfg.input_h = cfg.input_w = input_size;
        if (!filters.empty())
            for (std::size_t i = 0; i < 4; ++i) cfg.block_filters[i] = filters[i];
        rc = cmd_train(train_data, cfg, protocol, train_out, train_log, train_manifest);
    });

    // eval
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    std::string eval_weights, eval_data, eval_split = "test";
    eval->add_option("--weights", eval_weights, "checkpoint path")->required();
    eval->add_option("--data", eval_data, "dataset root")->required();
    eval->add_option("--split", eval_split, "test|train|all")->capture_default_str()
        ->check(CLI::IsMember({"test", "train", "all"}));
    eval->callback([&] { rc = cmd_eval(eval_weights, eval_data, eval_split); });

    // predict
    auto* predict = app.add_subcommand("predict", "classify a single PNG");
    std::string pred_weights, pred_image;
    predict->add_option("--weights", pred_weights, "checkpoint path")->required();
    predict->add_option("--image", pred_image, "input PNG")->required();
    predict->callback([&] { rc = cmd_predict(pred_weights, pred_image); });

    // heatmap
    auto* heat = app.add_subcommand("heatmap", "write a class-activation overlay PNG");
    std::string heat_weights, heat_image, heat_out, heat_cls = "covid", heat_csv;
    double heat_alpha = 0.4;
    heat->add_option("--weights", heat_weights, "checkpoint path")->required();
    heat->add_option("--image", heat_image, "input PNG")->required();
    heat->add_option("--out", heat_out, "overlay PNG path")->required();
    heat->add_option("--class", heat_cls, "covid|normal")->capture_default_str()
        ->check(CLI::IsMember({"covid", "normal"}));
    heat->add_option("--alpha", heat_alpha, "overlay opacity in [0,1]")->capture_default_str();
    heat->add_option("--map-csv", heat_csv, "optional raw map CSV path");
    heat->callback(
        [&] { rc = cmd_heatmap(heat_weights, heat_image, heat_out, heat_cls, heat_alpha, heat_csv); });

    // gradcheck
    auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every layer + model");
    std::size_t gc_size = 16;
    std::uint64_t gc_seed = 1;
    gc->add_option("--size", gc_size, "spatial input size (divisible by 16)")->capture_default_str();
    gc->add_option("--seed", gc_seed, "probe seed")->capture_default_str();
    gc->callback([&] { rc = cmd_gradcheck(gc_size, gc_seed); });

    // perceptron
    auto* per = app.add_subcommand("perceptron", "train a threshold unit on a logic gate");
    std::string per_gate;
    per->add_option("--gate", per_gate, "and|or|nand|xor")
        ->required()
        ->check(CLI::IsMember({"and", "or", "nand", "xor"}));
    per->callback([&] { rc = cmd_perceptron(per_gate); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const cx::NonFiniteError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return rc;
}
