#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bldg/common.hpp"
#include "bldg/container.hpp"
#include "bldg/geometry.hpp"
#include "bldg/ingest.hpp"
#include "bldg/model.hpp"

namespace bldg {

enum class Split : std::int8_t { None = -1, Train = 0, Test = 1, Hold = 2 };

inline const char* split_name(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Test: return "test";
        case Split::Hold: return "hold";
        default: return "none";
    }
}

inline Split split_from_name(const std::string& name) {
    if (name == "train") return Split::Train;
    if (name == "test") return Split::Test;
    if (name == "hold") return Split::Hold;
    if (name == "none") return Split::None;
    fail("unknown split name '", name, "'");
}

struct GraphEdge {
    std::uint32_t i = 0;
    std::uint32_t j = 0;  // i < j
    float w = 1.0f;
};

// The single per-region graph: one node per retained building, Delaunay
// edges over buffered-envelope centroids, Gaussian similarity weights.
struct BuildingGraph {
    int feature_dim = 0;
    int meta_dim = 0;
    std::vector<std::string> ids;
    std::vector<int> labels;          // -1 == unlabeled
    std::vector<Split> splits;        // Split::None == untagged
    std::vector<GraphEdge> edges;
    std::vector<float> features;      // n x feature_dim, row-major
    nlohmann::json config_echo = nlohmann::json::object();

    int num_nodes() const { return static_cast<int>(ids.size()); }

    const float* feature_row(int i) const {
        return features.data() + static_cast<std::size_t>(i) * feature_dim;
    }

    void validate() const {
        const int n = num_nodes();
        require(static_cast<int>(labels.size()) == n && static_cast<int>(splits.size()) == n,
                "graph node arrays are inconsistent");
        require(features.size() == static_cast<std::size_t>(n) * feature_dim,
                "graph feature buffer size mismatch");
        std::set<std::string> seen;
        for (const auto& id : ids)
            require(seen.insert(id).second, "duplicate node id '", id, "'");
        std::set<std::pair<std::uint32_t, std::uint32_t>> eseen;
        for (const auto& e : edges) {
            require(e.i < static_cast<std::uint32_t>(n) && e.j < static_cast<std::uint32_t>(n),
                    "edge index out of range");
            require(e.i < e.j, "edges must satisfy i < j");
            require(e.w > 0.0f && e.w <= 1.0f, "edge weight must lie in (0, 1], got ", e.w);
            require(eseen.insert({e.i, e.j}).second, "duplicate edge (", e.i, ", ", e.j, ")");
        }
    }

    std::vector<int> split_indices(Split s) const {
        std::vector<int> out;
        for (int i = 0; i < num_nodes(); ++i)
            if (splits[i] == s) out.push_back(i);
        return out;
    }

    std::vector<int> labeled_indices() const {
        std::vector<int> out;
        for (int i = 0; i < num_nodes(); ++i)
            if (labels[i] >= 0) out.push_back(i);
        return out;
    }

    std::vector<WeightedEdge> weighted_edges() const {
        std::vector<WeightedEdge> out;
        out.reserve(edges.size());
        for (const auto& e : edges)
            out.push_back({static_cast<int>(e.i), static_cast<int>(e.j), e.w});
        return out;
    }
};

// Square tiling used to derive chip ids when the data does not supply them.
struct ChipGrid {
    Point origin{0.0, 0.0};
    double tile = 512.0;

    void validate() const { require(tile > 0.0, "chip tile must be > 0, got ", tile); }

    std::string chip_of(const Point& p) const {
        validate();
        const auto cx = static_cast<long long>(std::floor((p.x - origin.x) / tile));
        const auto cy = static_cast<long long>(std::floor((p.y - origin.y) / tile));
        return concat(cx, "_", cy);
    }
};

inline std::string chip_of_record(const BuildingRecord& rec, const ChipGrid& grid) {
    if (rec.chip_id) return *rec.chip_id;
    return grid.chip_of(centroid(buffered_envelope(rec.polygon, 0.0)));
}

// Keeps exactly the records whose chip contains at least one labeled
// building of a damage class.
inline std::vector<BuildingRecord> prune_chips(const std::vector<BuildingRecord>& records,
                                               const ChipGrid& grid,
                                               const std::set<int>& damage_classes) {
    require(!records.empty(), "prune_chips: empty input");
    std::set<std::string> damaged_chips;
    for (const auto& rec : records)
        if (rec.label && damage_classes.count(*rec.label))
            damaged_chips.insert(chip_of_record(rec, grid));
    std::vector<BuildingRecord> kept;
    for (const auto& rec : records)
        if (damaged_chips.count(chip_of_record(rec, grid))) kept.push_back(rec);
    return kept;
}

namespace detail {

// Largest-remainder split of `total` into parts proportional to `shares`.
// Ties go to the lower index.
inline std::vector<int> largest_remainder(const std::vector<double>& shares, int total) {
    const int k = static_cast<int>(shares.size());
    std::vector<int> counts(k, 0);
    std::vector<std::pair<double, int>> rema(k);
    int assigned = 0;
    for (int i = 0; i < k; ++i) {
        const double exact = shares[i] * total;
        counts[i] = static_cast<int>(std::floor(exact));
        assigned += counts[i];
        rema[i] = {exact - counts[i], i};
    }
    std::sort(rema.begin(), rema.end(), [](const auto& a, const auto& b) {
        return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    for (int r = 0; r < total - assigned; ++r) counts[rema[r].second] += 1;
    return counts;
}

}  // namespace detail

// Seeded stratified subsample: per-class quotas are cap * p_c rounded by
// largest remainder, drawn without replacement. cap >= n is the identity.
inline std::vector<BuildingRecord> stratified_subsample(const std::vector<BuildingRecord>& records,
                                                        std::size_t cap, std::uint64_t seed) {
    if (cap >= records.size()) return records;
    std::map<int, std::vector<int>> by_class;
    for (int i = 0; i < static_cast<int>(records.size()); ++i) {
        require(records[i].label.has_value(),
                "stratified_subsample requires labeled records (record ", i, " has no label)");
        by_class[*records[i].label].push_back(i);
    }
    require(cap >= by_class.size(), "subsample cap ", cap, " is below the ", by_class.size(),
            " classes present");

    std::vector<double> shares;
    std::vector<const std::vector<int>*> pools;
    for (const auto& [cls, idxs] : by_class) {
        shares.push_back(static_cast<double>(idxs.size()) / records.size());
        pools.push_back(&idxs);
    }
    const std::vector<int> quotas = detail::largest_remainder(shares, static_cast<int>(cap));

    Rng rng(seed);
    std::vector<int> chosen;
    for (std::size_t c = 0; c < pools.size(); ++c) {
        std::vector<int> pool = *pools[c];
        rng.shuffle(pool);
        const int take = std::min<int>(quotas[c], static_cast<int>(pool.size()));
        chosen.insert(chosen.end(), pool.begin(), pool.begin() + take);
    }
    std::sort(chosen.begin(), chosen.end());
    std::vector<BuildingRecord> out;
    out.reserve(chosen.size());
    for (int i : chosen) out.push_back(records[i]);
    return out;
}

// Total map raw class -> merged class; the image must cover 0..K_out-1.
struct ClassMap {
    std::vector<int> to_merged;  // indexed by raw class

    int raw_classes() const { return static_cast<int>(to_merged.size()); }

    int merged_classes() const {
        int k = 0;
        for (int m : to_merged) k = std::max(k, m + 1);
        return k;
    }

    void validate() const {
        require(!to_merged.empty(), "class map must not be empty");
        const int k = merged_classes();
        std::vector<bool> covered(k, false);
        for (int m : to_merged) {
            require(m >= 0, "merged class indices must be >= 0");
            covered[m] = true;
        }
        for (int m = 0; m < k; ++m)
            require(covered[m], "class map image must cover 0..", k - 1, " (missing ", m, ")");
    }

    static ClassMap identity(int k) {
        ClassMap m;
        m.to_merged.resize(k);
        std::iota(m.to_merged.begin(), m.to_merged.end(), 0);
        return m;
    }

    int apply(int raw) const {
        require(raw >= 0 && raw < raw_classes(), "label ", raw, " outside raw class range [0, ",
                raw_classes(), ")");
        return to_merged[raw];
    }
};

inline std::vector<int> merge_classes(std::span<const int> labels, const ClassMap& map) {
    map.validate();
    std::vector<int> out;
    out.reserve(labels.size());
    for (int lab : labels) out.push_back(map.apply(lab));
    return out;
}

struct SplitFractions {
    double train = 0.2;
    double test = 0.1;
    double hold = 0.7;

    void validate() const {
        require(train > 0.0 && test > 0.0 && hold > 0.0, "split fractions must be positive");
        require(std::abs(train + test + hold - 1.0) <= 1e-9, "split fractions must sum to 1, got ",
                train + test + hold);
    }
};

struct SplitAssignment {
    SplitFractions fractions;
    std::uint64_t seed = 0;
    std::vector<Split> tags;  // aligned with the labels passed in
};

// Per class: seeded shuffle, then largest-remainder partition into
// train/test/hold. Every class must land at least one member per split.
inline SplitAssignment assign_splits(std::span<const int> labels, const SplitFractions& fractions,
                                     std::uint64_t seed) {
    fractions.validate();
    SplitAssignment out;
    out.fractions = fractions;
    out.seed = seed;
    out.tags.assign(labels.size(), Split::None);

    std::map<int, std::vector<int>> by_class;
    for (int i = 0; i < static_cast<int>(labels.size()); ++i)
        if (labels[i] >= 0) by_class[labels[i]].push_back(i);
    require(!by_class.empty(), "assign_splits: no labeled entries");

    Rng rng(seed);
    for (auto& [cls, idxs] : by_class) {
        rng.shuffle(idxs);
        const std::vector<int> counts = detail::largest_remainder(
            {fractions.train, fractions.test, fractions.hold}, static_cast<int>(idxs.size()));
        require(counts[0] >= 1 && counts[1] >= 1 && counts[2] >= 1, "class ", cls, " has only ",
                idxs.size(), " members; cannot cover train/test/hold");
        int at = 0;
        for (int s = 0; s < 3; ++s)
            for (int r = 0; r < counts[s]; ++r) out.tags[idxs[at++]] = static_cast<Split>(s);
    }
    return out;
}

// Per-channel mean and population standard deviation of the pre crop (6)
// then the post crop (6).
inline std::array<double, 12> node_descriptor(std::span<const float> feature, int crop_values,
                                              int channels = 3) {
    require(static_cast<int>(feature.size()) >= 2 * crop_values,
            "node_descriptor: feature vector too short");
    std::array<double, 12> out{};
    const int pixels = crop_values / channels;
    for (int half = 0; half < 2; ++half) {
        const float* src = feature.data() + static_cast<std::size_t>(half) * crop_values;
        for (int ch = 0; ch < channels; ++ch) {
            double sum = 0.0, sq = 0.0;
            for (int p = 0; p < pixels; ++p) {
                const double v = src[static_cast<std::size_t>(p) * channels + ch];
                sum += v;
                sq += v * v;
            }
            const double mean = sum / pixels;
            const double var = std::max(0.0, sq / pixels - mean * mean);
            out[half * 6 + ch] = mean;
            out[half * 6 + 3 + ch] = std::sqrt(var);
        }
    }
    return out;
}

struct EdgeWeightConfig {
    double sigma = 0.0;  // <= 0 selects the mean descriptor distance over edges
    static constexpr int descriptor_dims = 12;
};

// Gaussian similarity kernel, w = exp(-|di - dj|^2 / (2 sigma^2)) in (0, 1].
inline double edge_weight(const std::array<double, 12>& di, const std::array<double, 12>& dj,
                          const EdgeWeightConfig& cfg) {
    require(cfg.sigma > 0.0, "edge weight sigma must be > 0, got ", cfg.sigma);
    double sq = 0.0;
    for (int k = 0; k < 12; ++k) {
        const double d = di[k] - dj[k];
        sq += d * d;
    }
    return std::exp(-sq / (2.0 * cfg.sigma * cfg.sigma));
}

struct GraphBuildConfig {
    double buffer_m = 5.0;
    EdgeWeightConfig edge;
    bool use_meta = false;
    unsigned threads = 1;
};

namespace detail {

// Nearest-neighbor chain for degenerate geometry: start at index 0, walk
// to the closest unvisited point each step.
inline std::vector<std::pair<int, int>> chain_edges(const std::vector<Point>& pts) {
    const int n = static_cast<int>(pts.size());
    std::vector<std::pair<int, int>> edges;
    if (n < 2) return edges;
    std::vector<bool> used(n, false);
    int cur = 0;
    used[0] = true;
    for (int step = 1; step < n; ++step) {
        int best = -1;
        double best_d = 0.0;
        for (int j = 0; j < n; ++j) {
            if (used[j]) continue;
            const double d = distance(pts[cur], pts[j]);
            if (best < 0 || d < best_d) {
                best = j;
                best_d = d;
            }
        }
        edges.emplace_back(std::min(cur, best), std::max(cur, best));
        used[best] = true;
        cur = best;
    }
    std::sort(edges.begin(), edges.end());
    edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
    return edges;
}

}  // namespace detail

// Assembles the per-region graph: crops and meta per record, Delaunay
// connectivity over buffered-envelope centroids (duplicates perturbed by
// +1e-6 m in x; chain fallback for degenerate layouts), Gaussian edge
// weights with sigma defaulting to the mean descriptor distance.
inline BuildingGraph build_graph(const std::vector<BuildingRecord>& records,
                                 const RasterImage& pre_raster, const RasterImage& post_raster,
                                 const MetaSchema* schema, const GraphBuildConfig& cfg,
                                 MetaEncodeStats* meta_stats = nullptr) {
    require(!records.empty(), "build_graph: zero records");
    require(cfg.buffer_m >= 0.0, "build_graph: buffer must be >= 0");
    if (cfg.use_meta) require(schema != nullptr, "build_graph: meta requested without a schema");

    const int n = static_cast<int>(records.size());
    const int meta_dim = cfg.use_meta ? kMetaDim : 0;
    const int feature_dim = kFeatureDimNoMeta + meta_dim;

    BuildingGraph graph;
    graph.feature_dim = feature_dim;
    graph.meta_dim = meta_dim;
    graph.ids.resize(n);
    graph.labels.assign(n, -1);
    graph.splits.assign(n, Split::None);
    graph.features.assign(static_cast<std::size_t>(n) * feature_dim, 0.0f);

    std::vector<Point> centroids(n);
    std::vector<std::array<double, 12>> descriptors(n);
    std::vector<MetaEncodeStats> chunk_stats(chunk_count(n, 16));

    for_chunks(static_cast<std::size_t>(n), 16, cfg.threads,
               [&](std::size_t chunk_idx, std::size_t begin, std::size_t end) {
                   for (std::size_t i = begin; i < end; ++i) {
                       const BuildingRecord& rec = records[i];
                       const Envelope env = buffered_envelope(rec.polygon, cfg.buffer_m);
                       centroids[i] = centroid(env);
                       const Crop pre = extract_crop(pre_raster, env);
                       const Crop post = extract_crop(post_raster, env);
                       float* row = graph.features.data() + i * feature_dim;
                       std::copy(pre.values.begin(), pre.values.end(), row);
                       std::copy(post.values.begin(), post.values.end(), row + kCropValues);
                       if (cfg.use_meta) {
                           const auto meta = encode_meta(rec, *schema, &chunk_stats[chunk_idx]);
                           std::copy(meta.begin(), meta.end(), row + 2 * kCropValues);
                       }
                       descriptors[i] = node_descriptor(
                           std::span<const float>(row, feature_dim), kCropValues);
                   }
               });
    for (int i = 0; i < n; ++i) {
        graph.ids[i] = records[i].id;
        if (records[i].label) graph.labels[i] = *records[i].label;
    }
    if (meta_stats)
        for (const auto& s : chunk_stats) meta_stats->clamped += s.clamped;

    // Duplicate centroids would break the triangulation predicates; nudge
    // repeats in input order.
    {
        std::set<std::pair<double, double>> seen;
        for (auto& p : centroids)
            while (!seen.insert({p.x, p.y}).second) p.x += 1e-6;
    }

    std::vector<std::pair<int, int>> edge_list;
    if (n == 1) {
        // no edges
    } else {
        try {
            const Triangulation tri = delaunay(centroids);
            edge_list = triangulation_edges(tri);
        } catch (const DegenerateGeometry&) {
            edge_list = detail::chain_edges(centroids);
        }
    }

    double sigma = cfg.edge.sigma;
    if (sigma <= 0.0) {
        double sum = 0.0;
        for (const auto& [i, j] : edge_list) {
            double sq = 0.0;
            for (int k = 0; k < 12; ++k) {
                const double d = descriptors[i][k] - descriptors[j][k];
                sq += d * d;
            }
            sum += std::sqrt(sq);
        }
        sigma = edge_list.empty() ? 1.0 : sum / static_cast<double>(edge_list.size());
        if (sigma <= 0.0) sigma = 1.0;  // all descriptors identical
    }

    EdgeWeightConfig ew;
    ew.sigma = sigma;
    for (const auto& [i, j] : edge_list) {
        const double w = edge_weight(descriptors[i], descriptors[j], ew);
        graph.edges.push_back({static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j),
                               static_cast<float>(std::max(w, 1e-30))});
    }

    graph.config_echo = {{"buffer_m", cfg.buffer_m}, {"sigma", sigma}, {"use_meta", cfg.use_meta}};
    graph.validate();
    return graph;
}

constexpr char kGraphMagic[4] = {'B', 'L', 'D', 'G'};
constexpr std::uint16_t kGraphVersion = 1;

inline void save_graph(const std::string& path, const BuildingGraph& graph) {
    graph.validate();
    nlohmann::json header;
    header["feature_dim"] = graph.feature_dim;
    header["meta_dim"] = graph.meta_dim;
    nlohmann::json nodes = nlohmann::json::array();
    for (int i = 0; i < graph.num_nodes(); ++i) {
        nlohmann::json node;
        node["id"] = graph.ids[i];
        node["label"] = graph.labels[i] >= 0 ? nlohmann::json(graph.labels[i]) : nlohmann::json();
        node["split"] = graph.splits[i] != Split::None
                            ? nlohmann::json(split_name(graph.splits[i]))
                            : nlohmann::json();
        nodes.push_back(node);
    }
    header["nodes"] = nodes;
    nlohmann::json edges = nlohmann::json::array();
    for (const auto& e : graph.edges) edges.push_back({e.i, e.j, e.w});
    header["edges"] = edges;
    header["config"] = graph.config_echo;
    write_container(path, kGraphMagic, kGraphVersion, header, graph.features.data(),
                    graph.features.size());
}

inline BuildingGraph load_graph(const std::string& path) {
    ContainerData c = read_container(path, kGraphMagic);
    require(c.version == kGraphVersion, path, ": unsupported graph version ", c.version);
    BuildingGraph graph;
    try {
        graph.feature_dim = c.header.at("feature_dim").get<int>();
        graph.meta_dim = c.header.at("meta_dim").get<int>();
        for (const auto& node : c.header.at("nodes")) {
            graph.ids.push_back(node.at("id").get<std::string>());
            graph.labels.push_back(node.at("label").is_null() ? -1 : node.at("label").get<int>());
            graph.splits.push_back(node.at("split").is_null()
                                       ? Split::None
                                       : split_from_name(node.at("split").get<std::string>()));
        }
        for (const auto& e : c.header.at("edges")) {
            require(e.is_array() && e.size() == 3, path, ": malformed edge entry");
            graph.edges.push_back({e[0].get<std::uint32_t>(), e[1].get<std::uint32_t>(),
                                   e[2].get<float>()});
        }
        graph.config_echo = c.header.value("config", nlohmann::json::object());
    } catch (const nlohmann::json::exception& e) {
        fail(path, ": malformed graph header: ", e.what());
    }
    graph.features = std::move(c.payload);
    require(graph.features.size() ==
                static_cast<std::size_t>(graph.num_nodes()) * graph.feature_dim,
            path, ": feature payload does not match node count");
    graph.validate();
    return graph;
}

}  // namespace bldg
