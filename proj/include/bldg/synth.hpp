#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bldg/common.hpp"
#include "bldg/geometry.hpp"
#include "bldg/ingest.hpp"
#include "bldg/raster.hpp"

namespace bldg {

// Even-odd ray casting; boundary behavior is unspecified (used on sample
// points, never on vertices).
inline bool point_in_polygon(const Point& p, const std::vector<Point>& ring) {
    bool inside = false;
    const int n = static_cast<int>(ring.size());
    for (int i = 0, j = n - 1; i < n; j = i++) {
        if ((ring[i].y > p.y) != (ring[j].y > p.y)) {
            const double xcross =
                (ring[j].x - ring[i].x) * (p.y - ring[i].y) / (ring[j].y - ring[i].y) + ring[i].x;
            if (p.x < xcross) inside = !inside;
        }
    }
    return inside;
}

namespace synth {

// Deterministic disaster-scenario generator: jittered-grid rectangular
// footprints, a latent per-building susceptibility that meta attributes
// correlate with, damage decaying from an epicenter, and pre/post raster
// rendering where the damage class perturbs the footprint pixels.
struct CityConfig {
    int count = 300;
    double extent_m = 1000.0;
    double footprint_min_m = 10.0;
    double footprint_max_m = 24.0;
    std::optional<Point> epicenter;            // default: region center
    double decay_radius_m = 250.0;
    std::vector<double> thresholds = {0.25, 0.6};  // ascending, in (0,1)
    double noise_sd = 0.05;
    double meta_correlation = 0.0;             // 0 = uninformative meta
    double meta_missing_rate = 0.2;
    double resolution_m = 0.5;
    std::uint64_t seed = 7;

    int num_classes() const { return static_cast<int>(thresholds.size()) + 1; }

    Point center() const {
        return epicenter ? *epicenter : Point{extent_m / 2.0, extent_m / 2.0};
    }

    void validate() const {
        require(count >= 0, "count must be >= 0");
        require(extent_m > 0.0, "extent must be > 0");
        require(footprint_min_m > 0.0 && footprint_min_m <= footprint_max_m,
                "footprint size range is invalid");
        require(decay_radius_m > 0.0, "decay radius must be > 0");
        require(!thresholds.empty(), "need at least one damage threshold");
        double prev = 0.0;
        for (double t : thresholds) {
            require(t > prev && t < 1.0, "thresholds must ascend within (0, 1)");
            prev = t;
        }
        require(noise_sd >= 0.0, "noise sd must be >= 0");
        require(meta_correlation >= 0.0 && meta_correlation <= 1.0,
                "meta correlation must lie in [0, 1]");
        require(meta_missing_rate >= 0.0 && meta_missing_rate < 1.0,
                "meta missing rate must lie in [0, 1)");
        require(resolution_m > 0.0, "resolution must be > 0");
    }

    nlohmann::json to_json() const {
        nlohmann::json j{{"count", count},
                         {"extent_m", extent_m},
                         {"footprint_min_m", footprint_min_m},
                         {"footprint_max_m", footprint_max_m},
                         {"decay_radius_m", decay_radius_m},
                         {"thresholds", thresholds},
                         {"noise_sd", noise_sd},
                         {"meta_correlation", meta_correlation},
                         {"meta_missing_rate", meta_missing_rate},
                         {"resolution_m", resolution_m},
                         {"seed", seed}};
        if (epicenter) j["epicenter"] = {epicenter->x, epicenter->y};
        return j;
    }
};

struct City {
    std::vector<BuildingRecord> records;
    std::vector<double> susceptibility;  // s_i in [0.5, 1.5], aligned with records
};

struct Scenario {
    City city;
    RasterImage pre;
    RasterImage post;
};

namespace detail {

inline double mixed_latent(Rng& rng, double correlation, double u_norm) {
    const double v = rng.uniform();
    return correlation * u_norm + (1.0 - correlation) * v;
}

}  // namespace detail

// Jittered-grid placement of rotated rectangular footprints; every
// footprint stays within its own grid cell, so no two overlap. Meta
// attributes mix the normalized susceptibility with fresh noise at the
// configured correlation strength.
inline City generate_city(const CityConfig& cfg) {
    cfg.validate();
    City city;
    if (cfg.count == 0) return city;

    const int cells = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(cfg.count))));
    const double cell = cfg.extent_m / cells;
    // Rotated half-diagonal plus jitter must fit inside the cell.
    const double half_diag = cfg.footprint_max_m * std::sqrt(2.0) / 2.0;
    const double jitter = 0.5 * cell - half_diag;
    require(jitter >= 0.0, "buildings cannot fit extent: max footprint ", cfg.footprint_max_m,
            " m needs cells of at least ", 2.0 * half_diag, " m, have ", cell, " m");

    Rng rng(mix_seed(cfg.seed, 0));
    for (int i = 0; i < cfg.count; ++i) {
        const int cx = i % cells;
        const int cy = i / cells;
        const double jx = rng.uniform(-jitter, jitter);
        const double jy = rng.uniform(-jitter, jitter);
        const Point c{(cx + 0.5) * cell + jx, (cy + 0.5) * cell + jy};
        const double w = rng.uniform(cfg.footprint_min_m, cfg.footprint_max_m);
        const double h = rng.uniform(cfg.footprint_min_m, cfg.footprint_max_m);
        const double ang = rng.uniform(0.0, M_PI / 2.0);
        const double ca = std::cos(ang), sa = std::sin(ang);

        BuildingRecord rec;
        rec.id = concat("b", i);
        const double hw = w / 2.0, hh = h / 2.0;
        for (const auto& [px, py] : {std::pair{-hw, -hh}, {hw, -hh}, {hw, hh}, {-hw, hh}})
            rec.polygon.ring.push_back({c.x + px * ca - py * sa, c.y + px * sa + py * ca});

        const double s = rng.uniform(0.5, 1.5);
        const double u = s - 0.5;  // normalized susceptibility in [0, 1]
        const double rho = cfg.meta_correlation;

        // Older, taller, denser stock is more susceptible at correlation 1.
        rec.meta_raw.emplace("apartments",
                             std::round(1.0 + 30.0 * detail::mixed_latent(rng, rho, u)));
        rec.meta_raw.emplace("mean_dsm", 4.0 + 90.0 * detail::mixed_latent(rng, rho, u));
        rec.meta_raw.emplace("mean_height", 2.0 + 50.0 * detail::mixed_latent(rng, rho, u));
        rec.meta_raw.emplace("area", w * h);
        rec.meta_raw.emplace("perimeter", 2.0 * (w + h));
        rec.meta_raw.emplace("built_year",
                             std::round(2021.0 - 700.0 * detail::mixed_latent(rng, rho, u)));
        rec.meta_raw.emplace("floors",
                             std::round(1.0 + 15.0 * detail::mixed_latent(rng, rho, u)));
        rec.meta_raw.emplace("era",
                             1.0 + std::floor(4.999 * detail::mixed_latent(rng, rho, u)));
        const double mh = detail::mixed_latent(rng, rho, u);
        rec.meta_raw.emplace("heritage",
                             std::string(rng.uniform() < 0.1 + 0.5 * mh ? "yes" : "no"));
        static const char* kFunctions[10] = {"residential", "commercial", "industrial",
                                             "religious",   "educational", "medical",
                                             "government",  "hospitality", "cultural", "mixed"};
        rec.meta_raw.emplace("function", std::string(kFunctions[rng.uniform_int(10)]));

        // Missingness is drawn for every attribute to keep the stream fixed.
        static const char* kAttrs[10] = {"apartments", "mean_dsm", "mean_height", "area",
                                         "perimeter",  "built_year", "floors",    "era",
                                         "heritage",   "function"};
        for (const char* attr : kAttrs)
            if (rng.uniform() < cfg.meta_missing_rate) rec.meta_raw.erase(attr);

        city.records.push_back(std::move(rec));
        city.susceptibility.push_back(s);
    }
    return city;
}

// intensity = s * exp(-d^2 / (2 r^2)) + N(0, noise); the label counts the
// thresholds strictly below the intensity.
inline void assign_damage(City& city, const CityConfig& cfg) {
    cfg.validate();
    require(city.records.size() == city.susceptibility.size(),
            "assign_damage: city is missing susceptibility data");
    Rng rng(mix_seed(cfg.seed, 1));
    const Point epi = cfg.center();
    const double r2 = 2.0 * cfg.decay_radius_m * cfg.decay_radius_m;
    for (std::size_t i = 0; i < city.records.size(); ++i) {
        const Point c = centroid(buffered_envelope(city.records[i].polygon, 0.0));
        const double d = distance(c, epi);
        const double noise = rng.normal(0.0, 1.0) * cfg.noise_sd;
        const double intensity = city.susceptibility[i] * std::exp(-d * d / r2) + noise;
        int label = 0;
        for (double t : cfg.thresholds)
            if (t < intensity) ++label;
        city.records[i].label = label;
    }
}

// Pre: flat per-building texture with a darker outline on a plain
// background. Post: the same image with footprint pixels darkened by
// 0.15 * class and speckled at sd 0.05 * class. Background pixels are
// untouched; class-0 footprints are bit-identical between pre and post.
inline std::pair<RasterImage, RasterImage> render_rasters(const City& city,
                                                          const CityConfig& cfg) {
    cfg.validate();
    constexpr double kMarginM = 16.0;
    const double res = cfg.resolution_m;
    const int size = static_cast<int>(std::ceil((cfg.extent_m + 2.0 * kMarginM) / res)) + 1;
    require(size <= 8192, "raster too small for extent at configured resolution: would need ",
            size, " px per side (max 8192); increase resolution_m");

    RasterImage pre;
    pre.width = pre.height = size;
    pre.transform = {-kMarginM, res, 0.0, cfg.extent_m + kMarginM, 0.0, -res};
    pre.pixels.assign(static_cast<std::size_t>(size) * size * 3,
                      static_cast<std::uint8_t>(204));

    Rng rng(mix_seed(cfg.seed, 2));
    auto to_byte = [](double v) {
        return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
    };

    // Per-building pixel masks are kept for the post pass.
    struct Footprint {
        std::vector<std::pair<int, int>> inside;  // (col, row)
    };
    std::vector<Footprint> footprints(city.records.size());

    for (std::size_t b = 0; b < city.records.size(); ++b) {
        const auto& ring = city.records[b].polygon.ring;
        const double lum = rng.uniform(0.55, 0.9);
        double rgb[3];
        for (double& ch : rgb) ch = std::clamp(lum + rng.uniform(-0.05, 0.05), 0.0, 1.0);

        const Envelope env = buffered_envelope(city.records[b].polygon, 0.0);
        const auto [c0, r0] = world_to_pixel(pre.transform, {env.min.x, env.max.y});
        const auto [c1, r1] = world_to_pixel(pre.transform, {env.max.x, env.min.y});
        const int col_lo = std::max(0, static_cast<int>(std::floor(std::min(c0, c1))) - 1);
        const int col_hi = std::min(size - 1, static_cast<int>(std::ceil(std::max(c0, c1))) + 1);
        const int row_lo = std::max(0, static_cast<int>(std::floor(std::min(r0, r1))) - 1);
        const int row_hi = std::min(size - 1, static_cast<int>(std::ceil(std::max(r0, r1))) + 1);

        auto inside_at = [&](int col, int row) {
            return point_in_polygon(pre.transform.pixel_to_world(col, row), ring);
        };
        for (int row = row_lo; row <= row_hi; ++row) {
            for (int col = col_lo; col <= col_hi; ++col) {
                if (!inside_at(col, row)) continue;
                footprints[b].inside.emplace_back(col, row);
                const bool edge = !inside_at(col - 1, row) || !inside_at(col + 1, row) ||
                                  !inside_at(col, row - 1) || !inside_at(col, row + 1);
                std::uint8_t* px = pre.at(col, row);
                for (int ch = 0; ch < 3; ++ch)
                    px[ch] = to_byte(edge ? rgb[ch] * 0.55 : rgb[ch]);
            }
        }
    }

    RasterImage post = pre;
    for (std::size_t b = 0; b < city.records.size(); ++b) {
        require(city.records[b].label.has_value(), "render_rasters: building ", city.records[b].id,
                " has no damage label (run assign_damage first)");
        const int cls = *city.records[b].label;
        if (cls == 0) continue;
        const double drop = 0.15 * cls;
        const double speckle_sd = 0.05 * cls;
        for (const auto& [col, row] : footprints[b].inside) {
            const double speckle = rng.normal(0.0, 1.0) * speckle_sd;
            std::uint8_t* px = post.at(col, row);
            for (int ch = 0; ch < 3; ++ch)
                px[ch] = to_byte(px[ch] / 255.0 - drop + speckle);
        }
    }
    return {std::move(pre), std::move(post)};
}

inline Scenario generate_scenario(const CityConfig& cfg) {
    Scenario sc;
    sc.city = generate_city(cfg);
    assign_damage(sc.city, cfg);
    auto [pre, post] = render_rasters(sc.city, cfg);
    sc.pre = std::move(pre);
    sc.post = std::move(post);
    return sc;
}

inline nlohmann::json record_to_geojson(const BuildingRecord& rec) {
    nlohmann::json coords = nlohmann::json::array();
    for (const Point& p : rec.polygon.ring) coords.push_back({p.x, p.y});
    coords.push_back({rec.polygon.ring.front().x, rec.polygon.ring.front().y});
    nlohmann::json props;
    props["id"] = rec.id;
    props["label"] = rec.label ? nlohmann::json(*rec.label) : nlohmann::json();
    if (rec.chip_id) props["chip_id"] = *rec.chip_id;
    for (const auto& [key, val] : rec.meta_raw) {
        if (std::holds_alternative<double>(val))
            props[key] = std::get<double>(val);
        else
            props[key] = std::get<std::string>(val);
    }
    return {{"type", "Feature"},
            {"geometry", {{"type", "Polygon"}, {"coordinates", {coords}}}},
            {"properties", props}};
}

inline void write_footprints(const std::string& path, const std::vector<BuildingRecord>& records) {
    nlohmann::json fc{{"type", "FeatureCollection"}, {"features", nlohmann::json::array()}};
    for (const auto& rec : records) fc["features"].push_back(record_to_geojson(rec));
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(out.good(), "cannot write footprints: ", path);
    out << fc.dump(2) << "\n";
}

// Writes buildings.geojson, pre/post PNG+sidecar pairs and manifest.json
// into `dir`; the manifest echoes the config and the true labels.
inline void write_scenario(const std::string& dir, const Scenario& sc, const CityConfig& cfg) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    write_footprints((fs::path(dir) / "buildings.geojson").string(), sc.city.records);
    write_raster((fs::path(dir) / "pre.png").string(), sc.pre);
    write_raster((fs::path(dir) / "post.png").string(), sc.post);
    nlohmann::json manifest;
    manifest["config"] = cfg.to_json();
    manifest["num_classes"] = cfg.num_classes();
    nlohmann::json labels = nlohmann::json::array();
    for (const auto& rec : sc.city.records)
        labels.push_back({{"id", rec.id}, {"label", rec.label ? nlohmann::json(*rec.label)
                                                              : nlohmann::json()}});
    manifest["labels"] = labels;
    std::ofstream out(fs::path(dir) / "manifest.json", std::ios::binary | std::ios::trunc);
    require(out.good(), "cannot write manifest in ", dir);
    out << manifest.dump(2) << "\n";
}

}  // namespace synth
}  // namespace bldg
