#pragma once

#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "bldg/common.hpp"
#include "bldg/geometry.hpp"
#include "bldg/raster.hpp"

namespace bldg {

using MetaValue = std::variant<double, std::string>;

struct BuildingRecord {
    std::string id;
    Polygon polygon;
    std::optional<int> label;
    std::optional<std::string> chip_id;
    std::map<std::string, MetaValue> meta_raw;  // absent key == missing value
};

struct LoadOptions {
    std::string id_property = "id";
    std::string label_property = "label";
    std::string chip_property = "chip_id";
    // Any other scalar property is kept as a raw meta attribute.
};

namespace detail {

inline Polygon parse_geojson_polygon(const nlohmann::json& geom, const std::string& where) {
    require(geom.is_object() && geom.contains("type"), where, ": geometry missing type");
    const std::string type = geom["type"].get<std::string>();
    require(type == "Polygon", where, ": unsupported geometry kind '", type, "' (Polygon only)");
    require(geom.contains("coordinates") && geom["coordinates"].is_array() &&
                !geom["coordinates"].empty(),
            where, ": polygon has no coordinate rings");
    const auto& ring = geom["coordinates"][0];  // outer ring; holes are ignored
    Polygon poly;
    for (const auto& pt : ring) {
        require(pt.is_array() && pt.size() >= 2, where, ": malformed ring coordinate");
        poly.ring.push_back({pt[0].get<double>(), pt[1].get<double>()});
    }
    // GeoJSON rings repeat the first vertex; our rings are implicitly closed.
    if (poly.ring.size() >= 2 && poly.ring.front().x == poly.ring.back().x &&
        poly.ring.front().y == poly.ring.back().y)
        poly.ring.pop_back();
    try {
        poly.validate();
    } catch (const Error& e) {
        fail(where, ": ", e.what());
    }
    return poly;
}

}  // namespace detail

// Parses a GeoJSON FeatureCollection of Polygon features into records.
// The id property is required and must be unique; label/chip/meta are read
// when present.
inline std::vector<BuildingRecord> load_footprints(const std::string& path,
                                                   const LoadOptions& opts = {}) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "cannot open footprint file: ", path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        fail("malformed GeoJSON in ", path, ": ", e.what());
    }
    require(doc.is_object() && doc.value("type", "") == "FeatureCollection",
            path, ": not a GeoJSON FeatureCollection");
    require(doc.contains("features") && doc["features"].is_array(), path, ": missing features");

    std::vector<BuildingRecord> records;
    std::set<std::string> seen_ids;
    int index = 0;
    for (const auto& feat : doc["features"]) {
        const std::string where = concat(path, " feature #", index++);
        require(feat.is_object() && feat.value("type", "") == "Feature", where, ": not a Feature");
        require(feat.contains("geometry"), where, ": missing geometry");
        BuildingRecord rec;
        rec.polygon = detail::parse_geojson_polygon(feat["geometry"], where);

        const nlohmann::json props =
            feat.contains("properties") && feat["properties"].is_object() ? feat["properties"]
                                                                          : nlohmann::json::object();
        if (props.contains(opts.id_property) && !props[opts.id_property].is_null()) {
            const auto& idv = props[opts.id_property];
            rec.id = idv.is_string() ? idv.get<std::string>() : idv.dump();
        } else if (feat.contains("id") && !feat["id"].is_null()) {
            rec.id = feat["id"].is_string() ? feat["id"].get<std::string>() : feat["id"].dump();
        } else {
            fail(where, ": missing id property '", opts.id_property, "'");
        }
        require(seen_ids.insert(rec.id).second, where, ": duplicate id '", rec.id, "'");

        for (const auto& [key, val] : props.items()) {
            if (key == opts.id_property) continue;
            if (key == opts.label_property) {
                if (!val.is_null()) {
                    require(val.is_number_integer(), where, ": label must be an integer");
                    const int lab = val.get<int>();
                    require(lab >= 0, where, ": label must be >= 0");
                    rec.label = lab;
                }
                continue;
            }
            if (key == opts.chip_property) {
                if (!val.is_null())
                    rec.chip_id = val.is_string() ? val.get<std::string>() : val.dump();
                continue;
            }
            if (val.is_null()) continue;  // null == missing
            if (val.is_number())
                rec.meta_raw.emplace(key, val.get<double>());
            else if (val.is_boolean())
                rec.meta_raw.emplace(key, std::string(val.get<bool>() ? "yes" : "no"));
            else if (val.is_string())
                rec.meta_raw.emplace(key, val.get<std::string>());
            // nested objects/arrays are not meta attributes; skipped
        }
        records.push_back(std::move(rec));
    }
    return records;
}

constexpr int kMetaDim = 20;

// 20-dim meta layout: 8 min-max normalized numerics, 2 heritage one-hot
// slots, 10 building-function one-hot slots. Missing encodes exactly 0, so
// normalized numerics live in (0, 1] with the minimum floored just above 0.
struct MetaSchema {
    struct NumericField {
        std::string name;
        double min = 0.0;
        double max = 1.0;
    };

    std::vector<NumericField> numeric = {
        {"apartments"}, {"mean_dsm"}, {"mean_height"}, {"area"},
        {"perimeter"},  {"built_year"}, {"floors"},    {"era"},
    };
    std::string heritage_field = "heritage";
    std::vector<std::string> heritage_categories = {"yes", "no"};
    std::string function_field = "function";
    std::vector<std::string> function_categories = {
        "residential", "commercial", "industrial",  "religious", "educational",
        "medical",     "government", "hospitality", "cultural",  "mixed",
    };

    int dim() const {
        return static_cast<int>(numeric.size() + heritage_categories.size() +
                                function_categories.size());
    }

    void validate() const {
        require(dim() == kMetaDim, "meta schema layout must total ", kMetaDim, " dims, got ", dim());
        for (const auto& f : numeric)
            require(f.min < f.max, "meta field '", f.name, "' needs min < max (",
                    f.min, " vs ", f.max, ")");
    }

    // Min/max over the non-missing values of each numeric field.
    static MetaSchema calibrate(const std::vector<BuildingRecord>& records) {
        MetaSchema schema;
        for (auto& f : schema.numeric) {
            bool found = false;
            double lo = 0.0, hi = 0.0;
            for (const auto& rec : records) {
                auto it = rec.meta_raw.find(f.name);
                if (it == rec.meta_raw.end() || !std::holds_alternative<double>(it->second))
                    continue;
                const double v = std::get<double>(it->second);
                if (!found) {
                    lo = hi = v;
                    found = true;
                } else {
                    lo = std::min(lo, v);
                    hi = std::max(hi, v);
                }
            }
            require(found, "cannot calibrate meta field '", f.name, "': no values present");
            require(lo < hi, "cannot calibrate meta field '", f.name,
                    "': all values identical (", lo, ")");
            f.min = lo;
            f.max = hi;
        }
        schema.validate();
        return schema;
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        for (const auto& f : numeric)
            j["numeric"].push_back({{"name", f.name}, {"min", f.min}, {"max", f.max}});
        j["heritage_field"] = heritage_field;
        j["heritage_categories"] = heritage_categories;
        j["function_field"] = function_field;
        j["function_categories"] = function_categories;
        return j;
    }

    static MetaSchema from_json(const nlohmann::json& j) {
        MetaSchema s;
        try {
            s.numeric.clear();
            for (const auto& f : j.at("numeric"))
                s.numeric.push_back({f.at("name").get<std::string>(), f.at("min").get<double>(),
                                     f.at("max").get<double>()});
            s.heritage_field = j.at("heritage_field").get<std::string>();
            s.heritage_categories = j.at("heritage_categories").get<std::vector<std::string>>();
            s.function_field = j.at("function_field").get<std::string>();
            s.function_categories = j.at("function_categories").get<std::vector<std::string>>();
        } catch (const nlohmann::json::exception& e) {
            fail("malformed meta schema: ", e.what());
        }
        s.validate();
        return s;
    }

    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        require(out.good(), "cannot write meta schema: ", path);
        out << to_json().dump(2) << "\n";
    }

    static MetaSchema load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        require(in.good(), "cannot open meta schema: ", path);
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            fail("malformed meta schema file ", path, ": ", e.what());
        }
        return from_json(j);
    }
};

struct MetaEncodeStats {
    std::size_t clamped = 0;  // values outside the calibration range
};

// Keeps the minimum of a calibrated range distinguishable from "missing".
constexpr double kMetaFloor = 1e-6;

inline std::array<float, kMetaDim> encode_meta(const BuildingRecord& record,
                                               const MetaSchema& schema,
                                               MetaEncodeStats* stats = nullptr) {
    schema.validate();
    std::array<float, kMetaDim> out{};
    int slot = 0;
    for (const auto& f : schema.numeric) {
        double encoded = 0.0;  // missing
        auto it = record.meta_raw.find(f.name);
        if (it != record.meta_raw.end() && std::holds_alternative<double>(it->second)) {
            const double v = std::get<double>(it->second);
            double scaled = (v - f.min) / (f.max - f.min);
            if (scaled < 0.0 || scaled > 1.0) {
                scaled = std::clamp(scaled, 0.0, 1.0);
                if (stats) ++stats->clamped;
            }
            encoded = std::max(scaled, kMetaFloor);
        }
        out[slot++] = static_cast<float>(encoded);
    }
    auto one_hot = [&](const std::string& field, const std::vector<std::string>& cats) {
        auto it = record.meta_raw.find(field);
        if (it != record.meta_raw.end() && std::holds_alternative<std::string>(it->second)) {
            const std::string& v = std::get<std::string>(it->second);
            for (std::size_t k = 0; k < cats.size(); ++k)
                if (cats[k] == v) {
                    out[slot + static_cast<int>(k)] = 1.0f;
                    break;
                }
            // unknown categories (e.g. "Other") leave every slot at 0
        }
        slot += static_cast<int>(cats.size());
    };
    one_hot(schema.heritage_field, schema.heritage_categories);
    one_hot(schema.function_field, schema.function_categories);
    return out;
}

constexpr int kFeatureDimNoMeta = 2 * kCropValues;          // 98304
constexpr int kFeatureDimWithMeta = kFeatureDimNoMeta + kMetaDim;  // 98324

// Flat node feature vector: pre crop, post crop, then the optional meta
// block. Slicing at 49152 and 98304 recovers the crops exactly.
inline std::vector<float> node_feature_vector(const Crop& pre, const Crop& post,
                                              const std::array<float, kMetaDim>* meta = nullptr) {
    std::vector<float> v;
    v.reserve(meta ? kFeatureDimWithMeta : kFeatureDimNoMeta);
    v.insert(v.end(), pre.values.begin(), pre.values.end());
    v.insert(v.end(), post.values.begin(), post.values.end());
    if (meta) v.insert(v.end(), meta->begin(), meta->end());
    return v;
}

}  // namespace bldg
