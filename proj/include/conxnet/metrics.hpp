#pragma once

#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

#include "conxnet/tensor.hpp"

namespace conxnet {

/// Positive class is COVID (label 1).
struct ConfusionMatrix {
    std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;
    std::uint64_t total() const { return tp + fp + tn + fn; }
};

inline void confusion_tally(ConfusionMatrix& cm, double prob, int target, double threshold) {
    if (target != 0 && target != 1)
        throw std::invalid_argument("confusion: target " + std::to_string(target) +
                                    " is not 0 or 1");
    const int pred = prob >= threshold ? 1 : 0;  // tie classified positive
    if (pred == 1)
        (target == 1 ? cm.tp : cm.fp) += 1;
    else
        (target == 0 ? cm.tn : cm.fn) += 1;
}

template <typename T>
ConfusionMatrix confusion(const Tensor<T>& preds, const Tensor<T>& targets,
                          double threshold = 0.5) {
    if (preds.size() != targets.size())
        throw std::invalid_argument("confusion: " + std::to_string(preds.size()) +
                                    " predictions vs " + std::to_string(targets.size()) +
                                    " targets");
    ConfusionMatrix cm;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const T t = targets.data[i];
        if (t != T(0) && t != T(1))
            throw std::invalid_argument("confusion: target at index " + std::to_string(i) +
                                        " is not 0 or 1");
        confusion_tally(cm, static_cast<double>(preds.data[i]), t == T(1) ? 1 : 0, threshold);
    }
    return cm;
}

inline ConfusionMatrix confusion(const std::vector<double>& probs, const std::vector<int>& targets,
                                 double threshold = 0.5) {
    if (probs.size() != targets.size())
        throw std::invalid_argument("confusion: " + std::to_string(probs.size()) +
                                    " predictions vs " + std::to_string(targets.size()) +
                                    " targets");
    ConfusionMatrix cm;
    for (std::size_t i = 0; i < probs.size(); ++i)
        confusion_tally(cm, probs[i], targets[i], threshold);
    return cm;
}

/// accuracy = (tp+tn)/total; ratios with a zero denominator are flagged
/// undefined rather than coerced to 0 or 1.
struct MetricsReport {
    double accuracy = 0.0;
    double precision = 0.0, recall = 0.0, f1 = 0.0;
    bool precision_defined = false, recall_defined = false, f1_defined = false;
};

inline MetricsReport compute_metrics(const ConfusionMatrix& cm) {
    const std::uint64_t total = cm.total();
    if (total == 0) throw std::invalid_argument("metrics: empty confusion matrix");
    MetricsReport r;
    r.accuracy = static_cast<double>(cm.tp + cm.tn) / static_cast<double>(total);
    if (cm.tp + cm.fp > 0) {
        r.precision = static_cast<double>(cm.tp) / static_cast<double>(cm.tp + cm.fp);
        r.precision_defined = true;
    }
    if (cm.tp + cm.fn > 0) {
        r.recall = static_cast<double>(cm.tp) / static_cast<double>(cm.tp + cm.fn);
        r.recall_defined = true;
    }
    if (r.precision_defined && r.recall_defined && r.precision + r.recall > 0.0) {
        r.f1 = 2.0 * r.precision * r.recall / (r.precision + r.recall);
        r.f1_defined = true;
    }
    return r;
}

namespace detail {
inline std::string ratio_str(double v, bool defined) {
    if (!defined) return "undefined";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}
}  // namespace detail

/// Single machine-readable record.
inline std::string metrics_line(const MetricsReport& r, const ConfusionMatrix& cm) {
    std::string s = "accuracy=" + detail::ratio_str(r.accuracy, true);
    s += " precision=" + detail::ratio_str(r.precision, r.precision_defined);
    s += " recall=" + detail::ratio_str(r.recall, r.recall_defined);
    s += " f1=" + detail::ratio_str(r.f1, r.f1_defined);
    s += " tp=" + std::to_string(cm.tp) + " fp=" + std::to_string(cm.fp) +
         " tn=" + std::to_string(cm.tn) + " fn=" + std::to_string(cm.fn);
    return s;
}

/// Human-readable table (percentages), plus recall for completeness.
inline std::string metrics_table(const MetricsReport& r) {
    auto pct = [](double v, bool defined) {
        if (!defined) return std::string("undefined");
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.2f%%", v * 100.0);
        return std::string(buf);
    };
    std::string s;
    s += "Accuracy    Precision   Recall      F1-Measure\n";
    auto cell = [](const std::string& v) {
        std::string c = v;
        while (c.size() < 12) c += ' ';
        return c;
    };
    s += cell(pct(r.accuracy, true)) + cell(pct(r.precision, r.precision_defined)) +
         cell(pct(r.recall, r.recall_defined)) + pct(r.f1, r.f1_defined) + "\n";
    return s;
}

}  // namespace conxnet
