#pragma once

#include <cmath>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bldg/common.hpp"

namespace bldg {

// K x K counts, rows = true class, cols = predicted class.
struct ConfusionMatrix {
    int k = 0;
    std::vector<long long> counts;  // k * k, row-major

    explicit ConfusionMatrix(int classes = 0) : k(classes), counts(static_cast<std::size_t>(classes) * classes, 0) {}

    long long& at(int t, int p) { return counts[static_cast<std::size_t>(t) * k + p]; }
    long long at(int t, int p) const { return counts[static_cast<std::size_t>(t) * k + p]; }

    long long total() const {
        long long s = 0;
        for (long long c : counts) s += c;
        return s;
    }

    nlohmann::json to_json() const {
        nlohmann::json rows = nlohmann::json::array();
        for (int t = 0; t < k; ++t) {
            nlohmann::json row = nlohmann::json::array();
            for (int p = 0; p < k; ++p) row.push_back(at(t, p));
            rows.push_back(row);
        }
        return rows;
    }
};

inline ConfusionMatrix confusion(std::span<const int> predicted, std::span<const int> truth,
                                 int k) {
    require(predicted.size() == truth.size(), "confusion: length mismatch (", predicted.size(),
            " vs ", truth.size(), ")");
    require(k >= 2, "confusion: need k >= 2");
    ConfusionMatrix cm(k);
    for (std::size_t i = 0; i < truth.size(); ++i) {
        require(truth[i] >= 0 && truth[i] < k, "confusion: true label out of range");
        require(predicted[i] >= 0 && predicted[i] < k, "confusion: predicted label out of range");
        cm.at(truth[i], predicted[i]) += 1;
    }
    return cm;
}

struct MetricsBundle {
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double specificity = 0.0;
    double f1 = 0.0;

    nlohmann::json to_json() const {
        return {{"accuracy", accuracy},
                {"precision", precision},
                {"recall", recall},
                {"specificity", specificity},
                {"f1", f1}};
    }

    double by_name(const std::string& name) const {
        if (name == "accuracy") return accuracy;
        if (name == "precision") return precision;
        if (name == "recall") return recall;
        if (name == "specificity") return specificity;
        if (name == "f1") return f1;
        fail("unknown metric '", name, "'");
    }
};

inline const std::vector<std::string>& metric_names() {
    static const std::vector<std::string> names = {"accuracy", "precision", "recall",
                                                   "specificity", "f1"};
    return names;
}

// Accuracy plus macro-averaged one-vs-rest precision, recall, specificity
// and F1. Classes with an empty denominator contribute 0 to the mean.
inline MetricsBundle macro_metrics(const ConfusionMatrix& cm) {
    require(cm.k >= 2, "macro_metrics: need k >= 2");
    const long long total = cm.total();
    require(total > 0, "macro_metrics: empty confusion matrix");

    MetricsBundle out;
    long long trace = 0;
    for (int c = 0; c < cm.k; ++c) trace += cm.at(c, c);
    out.accuracy = static_cast<double>(trace) / static_cast<double>(total);

    for (int c = 0; c < cm.k; ++c) {
        long long tp = cm.at(c, c), fp = 0, fn = 0;
        for (int o = 0; o < cm.k; ++o) {
            if (o == c) continue;
            fp += cm.at(o, c);
            fn += cm.at(c, o);
        }
        const long long tn = total - tp - fp - fn;
        const double prec = (tp + fp) > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
        const double rec = (tp + fn) > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
        const double spec = (tn + fp) > 0 ? static_cast<double>(tn) / (tn + fp) : 0.0;
        const double f1 = (prec + rec) > 0.0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
        out.precision += prec;
        out.recall += rec;
        out.specificity += spec;
        out.f1 += f1;
    }
    out.precision /= cm.k;
    out.recall /= cm.k;
    out.specificity /= cm.k;
    out.f1 /= cm.k;
    return out;
}

// Normalized entropy of a class distribution over a K-class scheme;
// 1 = balanced, 0 = single class. Zero-count classes are skipped in the
// entropy sum but K keeps its place in the normalizer.
inline double shannon_equitability(std::span<const long long> class_counts) {
    const int k = static_cast<int>(class_counts.size());
    require(k >= 2, "shannon_equitability: need a scheme with >= 2 classes");
    long long total = 0;
    for (long long c : class_counts) {
        require(c >= 0, "shannon_equitability: negative count");
        total += c;
    }
    require(total > 0, "shannon_equitability: empty distribution");
    double h = 0.0;
    for (long long c : class_counts) {
        if (c == 0) continue;
        const double p = static_cast<double>(c) / static_cast<double>(total);
        h -= p * std::log(p);
    }
    return h / std::log(static_cast<double>(k));
}

// Five metrics over the train/test/hold/full node sets, plus confusion
// matrices and the Shannon equitability of the evaluated labels.
struct MetricsReport {
    std::vector<std::string> split_order = {"train", "test", "hold", "full"};
    std::map<std::string, MetricsBundle> metrics;
    std::map<std::string, nlohmann::json> confusions;
    double shannon = 0.0;

    nlohmann::json to_json() const {
        nlohmann::json j;
        for (const auto& name : split_order) {
            if (!metrics.count(name)) continue;
            j["splits"][name]["metrics"] = metrics.at(name).to_json();
            j["splits"][name]["confusion"] = confusions.at(name);
        }
        j["shannon_equitability"] = shannon;
        return j;
    }
};

}  // namespace bldg
