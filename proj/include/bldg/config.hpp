#pragma once

#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bldg/common.hpp"
#include "bldg/evaluation.hpp"
#include "bldg/graph.hpp"
#include "bldg/synth.hpp"
#include "bldg/train.hpp"

namespace bldg {

namespace detail {

// Strict object reader: every key must be consumed, unknown keys are
// rejected with the offending dotted path.
class JsonCursor {
public:
    JsonCursor(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
        require(j_.is_object(), "config node '", path_, "' must be a JSON object");
    }

    template <typename T>
    T get(const std::string& key, const T& fallback) {
        consumed_.insert(key);
        if (!j_.contains(key) || j_[key].is_null()) return fallback;
        try {
            return j_[key].get<T>();
        } catch (const nlohmann::json::exception&) {
            fail("config value '", child(key), "' has the wrong type");
        }
    }

    bool has(const std::string& key) {
        consumed_.insert(key);
        return j_.contains(key) && !j_[key].is_null();
    }

    const nlohmann::json& raw(const std::string& key) {
        consumed_.insert(key);
        return j_[key];
    }

    std::string child(const std::string& key) const {
        return path_.empty() ? key : concat(path_, ".", key);
    }

    void finish() const {
        for (const auto& [key, val] : j_.items())
            require(consumed_.count(key), "unknown config key '", child(key), "'");
    }

private:
    const nlohmann::json& j_;
    std::string path_;
    std::set<std::string> consumed_;
};

}  // namespace detail

struct DataConfig {
    std::string kind = "synth";  // synth | files
    synth::CityConfig synth_cfg;
    std::string footprints;
    std::string pre_raster;
    std::string post_raster;
    std::string schema;  // optional pre-calibrated meta schema
};

struct GraphSection {
    double buffer_m = 5.0;
    ChipGrid chip;
    EdgeWeightConfig edge;
    std::vector<int> class_map;       // empty = identity
    std::vector<int> damage_classes;  // empty = every merged class except 0
    bool prune = false;
    std::size_t subsample_cap = 0;    // 0 = disabled
    SplitFractions fractions;
    bool use_meta = false;
    std::uint64_t seed = 0;
};

struct CompareSection {
    int runs = 30;
    std::uint64_t seed = 0;
    bool baseline_identity_adjacency = true;
};

// One JSON document drives every subcommand; unknown keys are rejected and
// all randomness flows from the section seeds.
struct PipelineConfig {
    DataConfig data;
    GraphSection graph;
    ModelConfig model{.channels = {16, 32, 64, 128}, .num_classes = 3};
    TrainConfig train;
    CompareSection compare;

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["data"]["kind"] = data.kind;
        j["data"]["synth"] = data.synth_cfg.to_json();
        j["data"]["files"] = {{"footprints", data.footprints},
                              {"pre_raster", data.pre_raster},
                              {"post_raster", data.post_raster},
                              {"schema", data.schema}};
        j["graph"] = {{"buffer_m", graph.buffer_m},
                      {"chip", {{"origin", {graph.chip.origin.x, graph.chip.origin.y}},
                                {"tile_m", graph.chip.tile}}},
                      {"edge", {{"sigma", graph.edge.sigma}}},
                      {"class_map", graph.class_map},
                      {"damage_classes", graph.damage_classes},
                      {"prune", graph.prune},
                      {"subsample_cap", graph.subsample_cap},
                      {"split", {{"fractions", {graph.fractions.train, graph.fractions.test,
                                                graph.fractions.hold}},
                                 {"seed", graph.seed}}},
                      {"use_meta", graph.use_meta}};
        // input plane and meta width are derived from the data, not config
        j["model"] = {{"channels", model.channels},
                      {"gcn_hidden", model.gcn_hidden},
                      {"num_classes", model.num_classes},
                      {"dropout", model.dropout},
                      {"identity_adjacency", model.identity_adjacency}};
        j["train"] = {{"epochs", train.epochs},
                      {"seed", train.seed},
                      {"lr", train.lr},
                      {"class_weights", class_weight_mode_name(train.class_weight_mode)},
                      {"selection_metric", train.selection_metric},
                      {"threads", train.threads}};
        j["compare"] = {{"runs", compare.runs},
                        {"seed", compare.seed},
                        {"baseline", {{"identity_adjacency", compare.baseline_identity_adjacency}}}};
        return j;
    }

    static PipelineConfig from_json(const nlohmann::json& doc) {
        PipelineConfig cfg;
        detail::JsonCursor root(doc, "");

        if (root.has("data")) {
            detail::JsonCursor data(root.raw("data"), "data");
            cfg.data.kind = data.get<std::string>("kind", cfg.data.kind);
            require(cfg.data.kind == "synth" || cfg.data.kind == "files",
                    "config value 'data.kind' must be \"synth\" or \"files\"");
            if (data.has("synth")) {
                detail::JsonCursor sy(data.raw("synth"), "data.synth");
                auto& s = cfg.data.synth_cfg;
                s.count = sy.get<int>("count", s.count);
                s.extent_m = sy.get<double>("extent_m", s.extent_m);
                s.footprint_min_m = sy.get<double>("footprint_min_m", s.footprint_min_m);
                s.footprint_max_m = sy.get<double>("footprint_max_m", s.footprint_max_m);
                if (sy.has("epicenter")) {
                    const auto v = sy.get<std::vector<double>>("epicenter", {});
                    require(v.size() == 2, "config value 'data.synth.epicenter' must be [x, y]");
                    s.epicenter = Point{v[0], v[1]};
                }
                s.decay_radius_m = sy.get<double>("decay_radius_m", s.decay_radius_m);
                s.thresholds = sy.get<std::vector<double>>("thresholds", s.thresholds);
                s.noise_sd = sy.get<double>("noise_sd", s.noise_sd);
                s.meta_correlation = sy.get<double>("meta_correlation", s.meta_correlation);
                s.meta_missing_rate = sy.get<double>("meta_missing_rate", s.meta_missing_rate);
                s.resolution_m = sy.get<double>("resolution_m", s.resolution_m);
                s.seed = sy.get<std::uint64_t>("seed", s.seed);
                sy.finish();
                try {
                    s.validate();
                } catch (const Error& e) {
                    fail("config section 'data.synth' is invalid: ", e.what());
                }
            }
            if (data.has("files")) {
                detail::JsonCursor fl(data.raw("files"), "data.files");
                cfg.data.footprints = fl.get<std::string>("footprints", "");
                cfg.data.pre_raster = fl.get<std::string>("pre_raster", "");
                cfg.data.post_raster = fl.get<std::string>("post_raster", "");
                cfg.data.schema = fl.get<std::string>("schema", "");
                fl.finish();
            }
            data.finish();
        }

        if (root.has("graph")) {
            detail::JsonCursor g(root.raw("graph"), "graph");
            cfg.graph.buffer_m = g.get<double>("buffer_m", cfg.graph.buffer_m);
            require(cfg.graph.buffer_m >= 0.0, "config value 'graph.buffer_m' must be >= 0");
            if (g.has("chip")) {
                detail::JsonCursor ch(g.raw("chip"), "graph.chip");
                if (ch.has("origin")) {
                    const auto v = ch.get<std::vector<double>>("origin", {});
                    require(v.size() == 2, "config value 'graph.chip.origin' must be [x, y]");
                    cfg.graph.chip.origin = {v[0], v[1]};
                }
                cfg.graph.chip.tile = ch.get<double>("tile_m", cfg.graph.chip.tile);
                ch.finish();
                require(cfg.graph.chip.tile > 0.0, "config value 'graph.chip.tile_m' must be > 0");
            }
            if (g.has("edge")) {
                detail::JsonCursor ed(g.raw("edge"), "graph.edge");
                cfg.graph.edge.sigma = ed.get<double>("sigma", cfg.graph.edge.sigma);
                ed.finish();
            }
            cfg.graph.class_map = g.get<std::vector<int>>("class_map", cfg.graph.class_map);
            cfg.graph.damage_classes =
                g.get<std::vector<int>>("damage_classes", cfg.graph.damage_classes);
            cfg.graph.prune = g.get<bool>("prune", cfg.graph.prune);
            cfg.graph.subsample_cap = g.get<std::size_t>("subsample_cap", cfg.graph.subsample_cap);
            if (g.has("split")) {
                detail::JsonCursor sp(g.raw("split"), "graph.split");
                if (sp.has("fractions")) {
                    const auto v = sp.get<std::vector<double>>("fractions", {});
                    require(v.size() == 3,
                            "config value 'graph.split.fractions' must hold 3 fractions");
                    cfg.graph.fractions = {v[0], v[1], v[2]};
                }
                cfg.graph.seed = sp.get<std::uint64_t>("seed", cfg.graph.seed);
                sp.finish();
                try {
                    cfg.graph.fractions.validate();
                } catch (const Error& e) {
                    fail("config value 'graph.split.fractions' is invalid: ", e.what());
                }
            }
            cfg.graph.use_meta = g.get<bool>("use_meta", cfg.graph.use_meta);
            g.finish();
        }

        if (root.has("model")) {
            detail::JsonCursor m(root.raw("model"), "model");
            cfg.model.channels = m.get<std::vector<int>>("channels", cfg.model.channels);
            cfg.model.gcn_hidden = m.get<int>("gcn_hidden", cfg.model.gcn_hidden);
            cfg.model.num_classes = m.get<int>("num_classes", cfg.model.num_classes);
            cfg.model.dropout = m.get<double>("dropout", cfg.model.dropout);
            cfg.model.identity_adjacency =
                m.get<bool>("identity_adjacency", cfg.model.identity_adjacency);
            m.finish();
            // input plane and meta width follow the data; validated at use
        }

        if (root.has("train")) {
            detail::JsonCursor t(root.raw("train"), "train");
            cfg.train.epochs = t.get<int>("epochs", cfg.train.epochs);
            require(cfg.train.epochs >= 1, "config value 'train.epochs' must be >= 1");
            cfg.train.seed = t.get<std::uint64_t>("seed", cfg.train.seed);
            cfg.train.lr = t.get<double>("lr", cfg.train.lr);
            require(cfg.train.lr > 0.0, "config value 'train.lr' must be > 0");
            cfg.train.class_weight_mode = class_weight_mode_from_name(
                t.get<std::string>("class_weights", "inverse-frequency"));
            cfg.train.selection_metric =
                t.get<std::string>("selection_metric", cfg.train.selection_metric);
            (void)MetricsBundle{}.by_name(cfg.train.selection_metric);
            cfg.train.threads = t.get<unsigned>("threads", cfg.train.threads);
            t.finish();
        }

        if (root.has("compare")) {
            detail::JsonCursor c(root.raw("compare"), "compare");
            cfg.compare.runs = c.get<int>("runs", cfg.compare.runs);
            require(cfg.compare.runs >= 2, "config value 'compare.runs' must be >= 2");
            cfg.compare.seed = c.get<std::uint64_t>("seed", cfg.compare.seed);
            if (c.has("baseline")) {
                detail::JsonCursor b(c.raw("baseline"), "compare.baseline");
                cfg.compare.baseline_identity_adjacency =
                    b.get<bool>("identity_adjacency", cfg.compare.baseline_identity_adjacency);
                b.finish();
            }
            c.finish();
        }
        root.finish();

        cfg.train.fractions = cfg.graph.fractions;
        cfg.train.model = cfg.model;
        return cfg;
    }
};

// Applies dotted-path overrides ("train.epochs=50") onto the raw document;
// values parse as JSON when possible, otherwise as strings.
inline void apply_override(nlohmann::json& doc, const std::string& assignment) {
    const auto eq = assignment.find('=');
    require(eq != std::string::npos && eq > 0, "override must look like key.path=value, got '",
            assignment, "'");
    const std::string pathstr = assignment.substr(0, eq);
    const std::string valstr = assignment.substr(eq + 1);
    nlohmann::json value = nlohmann::json::parse(valstr, nullptr, false);
    if (value.is_discarded()) value = valstr;

    nlohmann::json* node = &doc;
    std::size_t start = 0;
    std::vector<std::string> parts;
    while (true) {
        const auto dot = pathstr.find('.', start);
        parts.push_back(pathstr.substr(start, dot == std::string::npos ? dot : dot - start));
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) node = &(*node)[parts[i]];
    (*node)[parts.back()] = value;
}

inline PipelineConfig parse_config(const std::string& path,
                                   const std::vector<std::string>& overrides = {}) {
    nlohmann::json doc = nlohmann::json::object();
    if (!path.empty()) {
        std::ifstream in(path, std::ios::binary);
        require(in.good(), "cannot open config file: ", path);
        try {
            in >> doc;
        } catch (const nlohmann::json::exception& e) {
            fail("malformed JSON config ", path, ": ", e.what());
        }
    }
    for (const auto& o : overrides) apply_override(doc, o);
    return PipelineConfig::from_json(doc);
}

// ---- pipeline stages shared by the CLI and tests ----

struct PipelineInputs {
    std::vector<BuildingRecord> records;
    RasterImage pre;
    RasterImage post;
    std::optional<MetaSchema> schema;
};

inline PipelineInputs load_inputs(const PipelineConfig& cfg) {
    PipelineInputs in;
    if (cfg.data.kind == "synth") {
        synth::Scenario sc = synth::generate_scenario(cfg.data.synth_cfg);
        in.records = std::move(sc.city.records);
        in.pre = std::move(sc.pre);
        in.post = std::move(sc.post);
    } else {
        require(!cfg.data.footprints.empty(), "config value 'data.files.footprints' is required");
        require(!cfg.data.pre_raster.empty(), "config value 'data.files.pre_raster' is required");
        require(!cfg.data.post_raster.empty(), "config value 'data.files.post_raster' is required");
        in.records = load_footprints(cfg.data.footprints);
        in.pre = load_raster(cfg.data.pre_raster);
        in.post = load_raster(cfg.data.post_raster);
    }
    if (cfg.graph.use_meta) {
        if (!cfg.data.schema.empty())
            in.schema = MetaSchema::load(cfg.data.schema);
        else
            in.schema = MetaSchema::calibrate(in.records);
    }
    return in;
}

// merge -> optional chip prune -> optional stratified subsample -> splits
// -> feature assembly. Node order follows the surviving record order.
inline BuildingGraph build_pipeline_graph(const PipelineConfig& cfg, PipelineInputs& in) {
    std::vector<BuildingRecord> records = std::move(in.records);
    require(!records.empty(), "no building records to build a graph from");

    if (!cfg.graph.class_map.empty()) {
        ClassMap cm;
        cm.to_merged = cfg.graph.class_map;
        cm.validate();
        for (auto& rec : records)
            if (rec.label) rec.label = cm.apply(*rec.label);
    }
    const int k = cfg.model.num_classes;
    for (const auto& rec : records)
        if (rec.label)
            require(*rec.label < k, "record ", rec.id, " has label ", *rec.label,
                    " but model.num_classes is ", k);

    if (cfg.graph.prune) {
        std::set<int> damage(cfg.graph.damage_classes.begin(), cfg.graph.damage_classes.end());
        if (damage.empty())
            for (int c = 1; c < k; ++c) damage.insert(c);
        records = prune_chips(records, cfg.graph.chip, damage);
        require(!records.empty(), "chip pruning removed every record");
    }

    if (cfg.graph.subsample_cap > 0)
        records = stratified_subsample(records, cfg.graph.subsample_cap,
                                       mix_seed(cfg.graph.seed, 101));

    std::vector<int> labels(records.size(), -1);
    for (std::size_t i = 0; i < records.size(); ++i)
        if (records[i].label) labels[i] = *records[i].label;
    const SplitAssignment splits =
        assign_splits(labels, cfg.graph.fractions, mix_seed(cfg.graph.seed, 202));

    GraphBuildConfig gb;
    gb.buffer_m = cfg.graph.buffer_m;
    gb.edge = cfg.graph.edge;
    gb.use_meta = cfg.graph.use_meta;
    gb.threads = cfg.train.threads;
    BuildingGraph graph =
        build_graph(records, in.pre, in.post, in.schema ? &*in.schema : nullptr, gb);
    graph.splits = splits.tags;
    return graph;
}

inline TrainConfig train_config_for_graph(const PipelineConfig& cfg, const BuildingGraph& graph) {
    TrainConfig tc = cfg.train;
    tc.model = cfg.model;
    tc.model.meta_dim = graph.meta_dim;
    tc.model.input_size = kCropSize;
    tc.model.in_channels = kCropChannels;
    tc.fractions = cfg.graph.fractions;
    tc.model.validate();
    return tc;
}

}  // namespace bldg
