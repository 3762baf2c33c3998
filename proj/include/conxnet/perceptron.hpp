#pragma once

#include <array>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace conxnet {

/// Single threshold unit: fires 1 iff sum(a_i * w_i) strictly exceeds theta.
/// theta is a fixed hyperparameter; the error-driven rule updates only the
/// weights.
struct Perceptron {
    std::vector<double> weights;
    double theta = 0.0;
    double learning_rate = 0.1;  // the constant C in the update rule
};

inline Perceptron make_perceptron(std::size_t arity, double theta, double learning_rate) {
    if (arity == 0) throw std::invalid_argument("perceptron: arity must be >= 1");
    if (!(learning_rate > 0.0))
        throw std::invalid_argument("perceptron: learning rate must be positive");
    Perceptron p;
    p.weights.assign(arity, 0.0);
    p.theta = theta;
    p.learning_rate = learning_rate;
    return p;
}

inline int perceptron_forward(const Perceptron& p, const std::vector<double>& a) {
    if (a.size() != p.weights.size())
        throw std::invalid_argument("perceptron: input arity " + std::to_string(a.size()) +
                                    " does not match weight count " +
                                    std::to_string(p.weights.size()));
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * p.weights[i];
    return s > p.theta ? 1 : 0;
}

/// w_i += C * (t - x) * a_i. Returns true when the prediction was wrong and
/// the weights moved.
inline bool perceptron_update(Perceptron& p, const std::vector<double>& a, int t) {
    if (t != 0 && t != 1)
        throw std::invalid_argument("perceptron: target must be 0 or 1, got " + std::to_string(t));
    const int x = perceptron_forward(p, a);
    if (x == t) return false;
    const double err = p.learning_rate * static_cast<double>(t - x);
    for (std::size_t i = 0; i < a.size(); ++i) p.weights[i] += err * a[i];
    return true;
}

struct GateSample {
    std::vector<double> inputs;
    int target;
};

struct PerceptronTrainResult {
    bool converged = false;
    std::size_t epochs_run = 0;
    std::size_t converged_epoch = 0;  // 1-based epoch that made zero updates
    double best_accuracy = 0.0;       // best per-epoch fraction of correct pre-update predictions
};

/// Epochs of sequential updates in dataset order; converged means some epoch
/// made zero weight updates.
inline PerceptronTrainResult perceptron_train(Perceptron& p, const std::vector<GateSample>& data,
                                              std::size_t max_epochs) {
    if (data.empty()) throw std::invalid_argument("perceptron: empty training dataset");
    if (max_epochs < 1) throw std::invalid_argument("perceptron: max_epochs must be >= 1");

    PerceptronTrainResult res;
    for (std::size_t epoch = 1; epoch <= max_epochs; ++epoch) {
        std::size_t updates = 0, correct = 0;
        for (const GateSample& s : data) {
            if (perceptron_update(p, s.inputs, s.target))
                ++updates;
            else
                ++correct;
        }
        res.epochs_run = epoch;
        const double acc = static_cast<double>(correct) / static_cast<double>(data.size());
        if (acc > res.best_accuracy) res.best_accuracy = acc;
        if (updates == 0) {
            res.converged = true;
            res.converged_epoch = epoch;
            break;
        }
    }
    return res;
}

enum class GateKind { And, Or, Nand, Xor };

inline GateKind parse_gate(const std::string& name) {
    if (name == "and") return GateKind::And;
    if (name == "or") return GateKind::Or;
    if (name == "nand") return GateKind::Nand;
    if (name == "xor") return GateKind::Xor;
    throw std::invalid_argument("unknown gate '" + name + "' (expected and|or|nand|xor)");
}

inline std::vector<GateSample> gate_dataset(GateKind g) {
    auto t = [g](int a, int b) {
        switch (g) {
            case GateKind::And: return a & b;
            case GateKind::Or: return a | b;
            case GateKind::Nand: return 1 - (a & b);
            case GateKind::Xor: return a ^ b;
        }
        return 0;
    };
    std::vector<GateSample> d;
    for (int a = 0; a <= 1; ++a)
        for (int b = 0; b <= 1; ++b)
            d.push_back({{double(a), double(b)}, t(a, b)});
    return d;
}

/// Thresholds that make each separable gate reachable from zero weights;
/// NAND needs a negative threshold so the all-zero input can fire.
inline double gate_theta(GateKind g) { return g == GateKind::Nand ? -1.5 : 0.5; }

inline Perceptron make_gate_perceptron(GateKind g, double learning_rate = 0.1) {
    return make_perceptron(2, gate_theta(g), learning_rate);
}

/// Outputs over {0,1}^2 in the order (0,0),(0,1),(1,0),(1,1).
inline std::array<int, 4> truth_table(const Perceptron& p) {
    std::array<int, 4> out{};
    std::size_t k = 0;
    for (int a = 0; a <= 1; ++a)
        for (int b = 0; b <= 1; ++b) out[k++] = perceptron_forward(p, {double(a), double(b)});
    return out;
}

}  // namespace conxnet
