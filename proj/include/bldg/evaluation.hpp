#pragma once

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "bldg/common.hpp"
#include "bldg/graph.hpp"
#include "bldg/stats.hpp"
#include "bldg/train.hpp"

namespace bldg {

namespace detail {

inline std::string format_float(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

}  // namespace detail

// CSV of per-node embeddings: id, the first GCN layer's activations in
// inference mode (pre-dropout), true label (-1 when unlabeled), predicted
// label. One header row plus one row per node.
inline void export_embeddings(const BuildingGraph& graph, const Checkpoint& ck,
                              const std::string& path, unsigned threads = 1) {
    const Prediction pred = predict(graph, ck, threads);
    const int h = ck.config.gcn_hidden;
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(out.good(), "cannot write embeddings: ", path);
    out << "id";
    for (int c = 0; c < h; ++c) out << ",e" << c;
    out << ",true_label,predicted_label\n";
    for (int i = 0; i < graph.num_nodes(); ++i) {
        out << graph.ids[i];
        const float* row = pred.hidden.data() + static_cast<std::size_t>(i) * h;
        for (int c = 0; c < h; ++c) out << "," << detail::format_float(row[c]);
        out << "," << graph.labels[i] << "," << pred.classes[i] << "\n";
    }
    require(out.good(), "write failed: ", path);
}

struct CompareConfig {
    int runs = 30;
    std::uint64_t seed = 0;
    SplitFractions fractions;  // hold share fixes the hold set once
};

namespace detail {

// Stratified train/test re-split of the non-hold labeled nodes.
inline void resample_splits(BuildingGraph& graph, const std::vector<Split>& base_tags,
                            const SplitFractions& fractions, std::uint64_t seed) {
    std::map<int, std::vector<int>> by_class;
    for (int i = 0; i < graph.num_nodes(); ++i) {
        graph.splits[i] = base_tags[i];
        if (base_tags[i] != Split::Hold && graph.labels[i] >= 0)
            by_class[graph.labels[i]].push_back(i);
    }
    const double f = fractions.train + fractions.test;
    Rng rng(seed);
    for (auto& [cls, idxs] : by_class) {
        rng.shuffle(idxs);
        const std::vector<int> counts = detail::largest_remainder(
            {fractions.train / f, fractions.test / f}, static_cast<int>(idxs.size()));
        require(counts[0] >= 1 && counts[1] >= 1, "compare_models: class ", cls,
                " too small to cover train and test");
        int at = 0;
        for (int r = 0; r < counts[0]; ++r) graph.splits[idxs[at++]] = Split::Train;
        for (int r = 0; r < counts[1]; ++r) graph.splits[idxs[at++]] = Split::Test;
    }
}

}  // namespace detail

// Paired comparison protocol: the hold split is partitioned once; every
// run re-samples the remaining labeled nodes into train/test, trains both
// configurations on identical splits, and records hold-set metric
// differences (A minus B). Each metric gets a paired t-test and a Wilcoxon
// signed rank test at the configured significance level.
inline ComparisonReport compare_models(const BuildingGraph& graph_in, const TrainConfig& cfg_a,
                                       const TrainConfig& cfg_b, const CompareConfig& cc) {
    require(cc.runs >= 2, "compare_models: need runs >= 2");
    cc.fractions.validate();

    BuildingGraph graph = graph_in;  // split tags are rewritten per run
    const SplitAssignment base =
        assign_splits(graph.labels, cc.fractions, mix_seed(cc.seed, 0));
    std::vector<Split> base_tags(graph.num_nodes(), Split::None);
    for (int i = 0; i < graph.num_nodes(); ++i)
        base_tags[i] = base.tags[i] == Split::Hold ? Split::Hold : Split::None;

    const std::size_t nm = metric_names().size();
    std::vector<std::vector<double>> diffs(nm);
    for (int run = 0; run < cc.runs; ++run) {
        detail::resample_splits(graph, base_tags, cc.fractions, mix_seed(cc.seed, 1 + run));
        const std::uint64_t train_seed = mix_seed(cc.seed, 1000 + run);

        TrainConfig ta = cfg_a, tb = cfg_b;
        ta.seed = train_seed;
        tb.seed = train_seed;
        const ExperimentResult ra = run_experiment(graph, ta);
        const ExperimentResult rb = run_experiment(graph, tb);
        const MetricsBundle& ma = ra.report.metrics.at("hold");
        const MetricsBundle& mb = rb.report.metrics.at("hold");
        for (std::size_t m = 0; m < nm; ++m)
            diffs[m].push_back(ma.by_name(metric_names()[m]) - mb.by_name(metric_names()[m]));
    }

    ComparisonReport report;
    report.runs = cc.runs;
    for (std::size_t m = 0; m < nm; ++m) {
        MetricComparison mc;
        mc.metric = metric_names()[m];
        mc.differences = diffs[m];
        for (double d : diffs[m]) mc.mean_difference += d;
        mc.mean_difference /= cc.runs;

        const std::vector<double> zeros(diffs[m].size(), 0.0);
        const TTestResult t = paired_t_test(diffs[m], zeros);
        mc.t_stat = t.t;
        mc.t_p = t.p;
        mc.t_significant = t.p < report.alpha;
        bool any_nonzero = false;
        for (double d : diffs[m]) any_nonzero |= (d != 0.0);
        if (any_nonzero) {
            const WilcoxonResult w = wilcoxon_signed_rank(diffs[m], zeros);
            mc.w_stat = w.w;
            mc.w_p = w.p;
            mc.w_significant = w.p < report.alpha;
        } else {
            // Identical performance on every run: nothing to test.
            mc.w_stat = 0.0;
            mc.w_p = 1.0;
            mc.w_significant = false;
        }
        report.metrics.push_back(std::move(mc));
    }
    return report;
}

}  // namespace bldg
