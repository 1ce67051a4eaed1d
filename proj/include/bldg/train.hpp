#pragma once

#include <cmath>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "bldg/common.hpp"
#include "bldg/graph.hpp"
#include "bldg/metrics.hpp"
#include "bldg/model.hpp"

namespace bldg {

enum class ClassWeightMode { InverseFrequency, None };

inline const char* class_weight_mode_name(ClassWeightMode m) {
    return m == ClassWeightMode::InverseFrequency ? "inverse-frequency" : "none";
}

inline ClassWeightMode class_weight_mode_from_name(const std::string& name) {
    if (name == "inverse-frequency") return ClassWeightMode::InverseFrequency;
    if (name == "none") return ClassWeightMode::None;
    fail("unknown class weight mode '", name, "' (inverse-frequency | none)");
}

struct TrainConfig {
    int epochs = 300;
    std::uint64_t seed = 0;
    ModelConfig model;
    SplitFractions fractions;
    ClassWeightMode class_weight_mode = ClassWeightMode::InverseFrequency;
    std::string selection_metric = "f1";  // evaluated on the test split
    double lr = 0.0003;
    unsigned threads = 1;

    void validate() const {
        require(epochs >= 1, "epochs must be >= 1, got ", epochs);
        model.validate();
        fractions.validate();
        require(lr > 0.0, "learning rate must be > 0");
        (void)MetricsBundle{}.by_name(selection_metric);
    }
};

// w_c = n_train / (K * n_c) over the train-mask labels.
inline std::vector<double> class_weights(std::span<const int> labels,
                                         std::span<const int> train_mask, int k) {
    require(k >= 2, "class_weights: need k >= 2");
    require(!train_mask.empty(), "class_weights: empty train mask");
    std::vector<long long> counts(k, 0);
    for (int i : train_mask) {
        const int y = labels[i];
        require(y >= 0 && y < k, "class_weights: label out of range at node ", i);
        counts[y] += 1;
    }
    std::vector<double> w(k);
    for (int c = 0; c < k; ++c) {
        require(counts[c] > 0, "class ", c, " is absent from the train mask");
        w[c] = static_cast<double>(train_mask.size()) / (static_cast<double>(k) * counts[c]);
    }
    return w;
}

struct EpochRecord {
    double train_loss = 0.0;
    MetricsBundle test;
};

struct History {
    std::vector<EpochRecord> epochs;
    int selected_epoch = -1;

    void save_jsonl(const std::string& path) const {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        require(out.good(), "cannot write history: ", path);
        for (std::size_t e = 0; e < epochs.size(); ++e) {
            nlohmann::json j;
            j["epoch"] = e;
            j["train_loss"] = epochs[e].train_loss;
            j["test"] = epochs[e].test.to_json();
            out << j.dump() << "\n";
        }
    }
};

namespace detail {

inline std::vector<int> argmax_rows(const std::vector<float>& probs, int n, int k) {
    std::vector<int> out(n, 0);
    for (int i = 0; i < n; ++i) {
        const float* row = probs.data() + static_cast<std::size_t>(i) * k;
        int best = 0;
        for (int c = 1; c < k; ++c)
            if (row[c] > row[best]) best = c;  // ties keep the lowest index
        out[i] = best;
    }
    return out;
}

inline MetricsBundle metrics_over(const std::vector<int>& predicted,
                                  std::span<const int> labels, std::span<const int> subset,
                                  int k) {
    std::vector<int> pred, truth;
    pred.reserve(subset.size());
    truth.reserve(subset.size());
    for (int i : subset) {
        pred.push_back(predicted[i]);
        truth.push_back(labels[i]);
    }
    return macro_metrics(confusion(pred, truth, k));
}

}  // namespace detail

// Semi-supervised full-graph training: one optimizer step per epoch on the
// train-masked weighted CE, test metrics after every epoch, checkpoint of
// the best selection-metric epoch (ties keep the earliest).
inline std::pair<Checkpoint, History> fit(const BuildingGraph& graph, const TrainConfig& cfg) {
    cfg.validate();
    graph.validate();
    const ModelConfig& mc = cfg.model;
    const int n = graph.num_nodes();
    const int k = mc.num_classes;
    require(graph.feature_dim == mc.feature_dim(), "graph feature dim ", graph.feature_dim,
            " does not match model dim ", mc.feature_dim());
    for (int lab : graph.labels)
        require(lab < k, "graph label ", lab, " exceeds num_classes ", k);

    const std::vector<int> train_idx = graph.split_indices(Split::Train);
    std::vector<int> train_mask;
    for (int i : train_idx)
        if (graph.labels[i] >= 0) train_mask.push_back(i);
    require(!train_mask.empty(), "fit: train mask is empty");
    std::vector<int> test_mask;
    for (int i : graph.split_indices(Split::Test))
        if (graph.labels[i] >= 0) test_mask.push_back(i);
    // Model selection falls back to the train split when no test nodes exist.
    const std::vector<int>& selection_mask = test_mask.empty() ? train_mask : test_mask;

    std::vector<double> weights(k, 1.0);
    if (cfg.class_weight_mode == ClassWeightMode::InverseFrequency)
        weights = class_weights(graph.labels, train_mask, k);

    Rng rng(cfg.seed);
    ParamSet<float> params = ParamSet<float>::init(mc, rng);
    AdamState<float> adam = AdamState<float>::shaped(mc);
    adam.lr = cfg.lr;

    const FeatureView<float> feats{graph.features.data(), n, graph.feature_dim};
    const NormalizedAdjacency<float> adj =
        mc.identity_adjacency ? NormalizedAdjacency<float>::identity(n)
                              : NormalizedAdjacency<float>::build(n, graph.weighted_edges());

    History history;
    history.epochs.resize(cfg.epochs);
    Checkpoint best;
    best.config = mc;
    double best_score = -std::numeric_limits<double>::infinity();

    std::vector<float> X(static_cast<std::size_t>(n) * mc.gcn_input_dim());
    GcnPass<float> eval_pass;
    Rng no_dropout_rng(0);

    for (int e = 0; e <= cfg.epochs; ++e) {
        compute_embeddings(params, mc, feats, X.data(), cfg.threads);

        // Inference pass: these are the post-update metrics of epoch e-1.
        gcn_forward(params, mc, adj, X.data(), n, false, no_dropout_rng, eval_pass);
        const std::vector<int> predicted = detail::argmax_rows(eval_pass.probs, n, k);
        const MetricsBundle test_metrics =
            detail::metrics_over(predicted, graph.labels, selection_mask, k);
        if (e > 0) {
            history.epochs[e - 1].test = test_metrics;
            const double score = test_metrics.by_name(cfg.selection_metric);
            if (score > best_score) {
                best_score = score;
                best.params = params;
                best.adam = adam;
                best.epoch = e - 1;
                best.best = BestRecord{e - 1, test_metrics.accuracy, test_metrics.precision,
                                       test_metrics.recall, test_metrics.specificity,
                                       test_metrics.f1};
            }
        }
        if (e == cfg.epochs) break;

        GradientResult<float> grad =
            model_gradients(params, mc, feats, adj, graph.labels, train_mask, weights, rng,
                            cfg.threads, X.data());
        require(std::isfinite(grad.loss), "fit: loss diverged (non-finite) at epoch ", e);
        history.epochs[e].train_loss = grad.loss;
        adam_step(params, grad.grads, adam);
    }
    history.selected_epoch = best.epoch;
    return {std::move(best), std::move(history)};
}

struct Prediction {
    std::vector<int> classes;   // argmax per node, ties to the lowest index
    std::vector<float> probs;   // n x k, rows sum to 1
    std::vector<float> hidden;  // n x gcn_hidden first-layer activations (pre-dropout)
    int k = 0;
};

inline Prediction predict(const BuildingGraph& graph, const Checkpoint& ck, unsigned threads = 1) {
    graph.validate();
    const ModelConfig& mc = ck.config;
    mc.validate();
    require(graph.feature_dim == mc.feature_dim(), "checkpoint model dim ", mc.feature_dim(),
            " does not match graph feature dim ", graph.feature_dim);
    const int n = graph.num_nodes();

    const FeatureView<float> feats{graph.features.data(), n, graph.feature_dim};
    const NormalizedAdjacency<float> adj =
        mc.identity_adjacency ? NormalizedAdjacency<float>::identity(n)
                              : NormalizedAdjacency<float>::build(n, graph.weighted_edges());
    std::vector<float> X(static_cast<std::size_t>(n) * mc.gcn_input_dim());
    compute_embeddings(ck.params, mc, feats, X.data(), threads);
    GcnPass<float> pass;
    Rng rng(0);
    gcn_forward(ck.params, mc, adj, X.data(), n, false, rng, pass);

    Prediction out;
    out.k = mc.num_classes;
    out.classes = detail::argmax_rows(pass.probs, n, mc.num_classes);
    out.probs = std::move(pass.probs);
    out.hidden = std::move(pass.H1);
    return out;
}

struct ExperimentResult {
    Checkpoint checkpoint;
    History history;
    MetricsReport report;
};

// Five metrics plus confusion matrices on the train/test/hold/full labeled
// node sets for an already-trained checkpoint.
inline MetricsReport evaluate_report(const BuildingGraph& graph, const Checkpoint& ck,
                                     unsigned threads = 1) {
    const Prediction pred = predict(graph, ck, threads);
    const int k = ck.config.num_classes;
    MetricsReport report;

    auto add_split = [&](const std::string& name, const std::vector<int>& subset) {
        if (subset.empty()) return;
        std::vector<int> p, t;
        for (int i : subset) {
            p.push_back(pred.classes[i]);
            t.push_back(graph.labels[i]);
        }
        const ConfusionMatrix cm = confusion(p, t, k);
        report.metrics[name] = macro_metrics(cm);
        report.confusions[name] = cm.to_json();
    };
    auto labeled_in = [&](Split s) {
        std::vector<int> out;
        for (int i = 0; i < graph.num_nodes(); ++i)
            if (graph.splits[i] == s && graph.labels[i] >= 0) out.push_back(i);
        return out;
    };
    add_split("train", labeled_in(Split::Train));
    add_split("test", labeled_in(Split::Test));
    add_split("hold", labeled_in(Split::Hold));
    const std::vector<int> full = graph.labeled_indices();
    add_split("full", full);

    std::vector<long long> counts(k, 0);
    for (int i : full) counts[graph.labels[i]] += 1;
    report.shannon = shannon_equitability(counts);
    return report;
}

// Trains on the tagged graph and reports all five metrics on the train,
// test, hold and full labeled node sets.
inline ExperimentResult run_experiment(const BuildingGraph& graph, const TrainConfig& cfg) {
    ExperimentResult result;
    auto [checkpoint, history] = fit(graph, cfg);
    result.checkpoint = std::move(checkpoint);
    result.history = std::move(history);
    result.report = evaluate_report(graph, result.checkpoint, cfg.threads);
    return result;
}

}  // namespace bldg
