#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "bldg/ingest.hpp"
#include "bldg/raster.hpp"

using namespace bldg;

namespace {

std::string write_temp(const std::string& name, const std::string& content) {
    const auto path = std::filesystem::temp_directory_path() / name;
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << content;
    return path.string();
}

const char* kThreeFeatures = R"({
  "type": "FeatureCollection",
  "features": [
    {"type": "Feature",
     "geometry": {"type": "Polygon", "coordinates": [[[0,0],[10,0],[10,10],[0,10],[0,0]]]},
     "properties": {"id": "a", "label": 1, "area": 100.0, "heritage": "yes"}},
    {"type": "Feature",
     "geometry": {"type": "Polygon", "coordinates": [[[20,0],[30,0],[30,10],[20,10],[20,0]]]},
     "properties": {"id": "b", "label": null, "chip_id": "0_0"}},
    {"type": "Feature",
     "geometry": {"type": "Polygon", "coordinates": [[[40,0],[50,0],[50,10],[40,10],[40,0]]]},
     "properties": {"id": "c", "label": 0, "built_year": 1950}}
  ]
})";

// Direct bilinear evaluation, independent of extract_crop's loops.
double oracle_bilinear(const RasterImage& img, double col, double row, int ch) {
    const int c0 = static_cast<int>(std::floor(col));
    const int r0 = static_cast<int>(std::floor(row));
    double acc = 0.0;
    for (int dr = 0; dr <= 1; ++dr)
        for (int dc = 0; dc <= 1; ++dc) {
            const int cc = c0 + dc, rr = r0 + dr;
            if (cc < 0 || rr < 0 || cc >= img.width || rr >= img.height) continue;
            const double wc = dc == 0 ? 1.0 - (col - c0) : col - c0;
            const double wr = dr == 0 ? 1.0 - (row - r0) : row - r0;
            acc += wc * wr * img.at(cc, rr)[ch];
        }
    return acc / 255.0;
}

RasterImage make_raster(int w, int h, Geotransform gt) {
    RasterImage img;
    img.width = w;
    img.height = h;
    img.transform = gt;
    img.pixels.assign(static_cast<std::size_t>(w) * h * 3, 0);
    return img;
}

}  // namespace

TEST_CASE("load_footprints parses a three-feature fixture", "[ingest]") {
    const auto path = write_temp("fixture3.geojson", kThreeFeatures);
    const auto records = load_footprints(path);
    REQUIRE(records.size() == 3);
    CHECK(records[0].id == "a");
    CHECK(records[0].polygon.ring.size() == 4);  // closing vertex stripped
    CHECK(records[0].label == 1);
    CHECK(std::get<double>(records[0].meta_raw.at("area")) == 100.0);
    CHECK(std::get<std::string>(records[0].meta_raw.at("heritage")) == "yes");
    CHECK_FALSE(records[1].label.has_value());
    CHECK(records[1].chip_id == "0_0");
    CHECK(records[2].label == 0);
}

TEST_CASE("load_footprints rejects MultiPolygon", "[ingest]") {
    const auto path = write_temp("multipoly.geojson", R"({
      "type": "FeatureCollection",
      "features": [{"type": "Feature",
        "geometry": {"type": "MultiPolygon", "coordinates": [[[[0,0],[1,0],[1,1],[0,0]]]]},
        "properties": {"id": "m"}}]})");
    CHECK_THROWS_WITH(load_footprints(path), Catch::Matchers::ContainsSubstring("MultiPolygon"));
}

TEST_CASE("load_footprints rejects duplicate and missing ids", "[ingest]") {
    const auto dup = write_temp("dup.geojson", R"({
      "type": "FeatureCollection",
      "features": [
        {"type": "Feature", "geometry": {"type": "Polygon", "coordinates": [[[0,0],[1,0],[1,1],[0,0]]]}, "properties": {"id": "x"}},
        {"type": "Feature", "geometry": {"type": "Polygon", "coordinates": [[[2,0],[3,0],[3,1],[2,0]]]}, "properties": {"id": "x"}}
      ]})");
    CHECK_THROWS_WITH(load_footprints(dup), Catch::Matchers::ContainsSubstring("duplicate id"));
    const auto noid = write_temp("noid.geojson", R"({
      "type": "FeatureCollection",
      "features": [{"type": "Feature", "geometry": {"type": "Polygon", "coordinates": [[[0,0],[1,0],[1,1],[0,0]]]}, "properties": {}}]})");
    CHECK_THROWS_WITH(load_footprints(noid), Catch::Matchers::ContainsSubstring("missing id"));
}

TEST_CASE("load_footprints rejects malformed JSON", "[ingest]") {
    const auto path = write_temp("broken.geojson", "{not json");
    CHECK_THROWS_WITH(load_footprints(path), Catch::Matchers::ContainsSubstring("malformed"));
}

TEST_CASE("world_to_pixel inverts the affine map", "[ingest]") {
    const Geotransform identity{0, 1, 0, 0, 0, 1};
    auto [c, r] = world_to_pixel(identity, {7, 9});
    CHECK(c == 7.0);
    CHECK(r == 9.0);

    // hand inversion: x = 100 + 2 col, y = 50 - 2 row
    const Geotransform gt{100, 2, 0, 50, 0, -2};
    auto [c2, r2] = world_to_pixel(gt, {104, 46});
    CHECK(c2 == Catch::Approx(2.0).margin(1e-12));
    CHECK(r2 == Catch::Approx(2.0).margin(1e-12));

    const Geotransform singular{0, 1, 1, 0, 1, 1};
    CHECK_THROWS_AS(world_to_pixel(singular, {1, 1}), Error);
}

TEST_CASE("world_to_pixel round trip", "[ingest]") {
    const Geotransform gt{-16.0, 0.5, 0.0, 1016.0, 0.0, -0.5};
    Rng rng(5);
    for (int i = 0; i < 200; ++i) {
        const double col = rng.uniform(0, 2000), row = rng.uniform(0, 2000);
        const Point w = gt.pixel_to_world(col, row);
        auto [c, r] = world_to_pixel(gt, w);
        REQUIRE(std::abs(c - col) < 1e-9);
        REQUIRE(std::abs(r - row) < 1e-9);
    }
}

TEST_CASE("extract_crop over an aligned window reproduces the source", "[ingest]") {
    RasterImage img = make_raster(128, 128, {0, 1, 0, 0, 0, 1});
    Rng rng(21);
    for (auto& b : img.pixels) b = static_cast<std::uint8_t>(rng.uniform_int(256));
    // window [0,128)^2 in pixel space: y axis grows with row here
    const Crop crop = extract_crop(img, {{0, 0}, {128, 128}});
    for (int v = 0; v < 128; ++v)
        for (int u = 0; u < 128; ++u)
            for (int ch = 0; ch < 3; ++ch) {
                const float expect = img.at(u, v)[ch] / 255.0f;
                REQUIRE(crop.values[(v * 128 + u) * 3 + ch] == expect);
            }
}

TEST_CASE("extract_crop of a constant raster is constant", "[ingest]") {
    RasterImage img = make_raster(64, 64, {0, 1, 0, 0, 0, 1});
    std::fill(img.pixels.begin(), img.pixels.end(), static_cast<std::uint8_t>(102));
    const Crop crop = extract_crop(img, {{3.7, 5.1}, {40.2, 44.9}});
    for (float v : crop.values) REQUIRE(v == Catch::Approx(102.0 / 255.0).margin(1e-7));
}

TEST_CASE("extract_crop matches the brute-force bilinear oracle", "[ingest]") {
    RasterImage img = make_raster(256, 256, {0, 1, 0, 0, 0, 1});
    for (int r = 0; r < 256; ++r)
        for (int c = 0; c < 256; ++c) {
            const std::uint8_t v = ((r / 8 + c / 8) % 2) ? 255 : 0;  // checkerboard
            for (int ch = 0; ch < 3; ++ch) img.at(c, r)[ch] = v;
        }
    const Envelope env{{0, 0}, {256, 256}};
    const Crop crop = extract_crop(img, env);
    for (int v = 0; v < 128; ++v)
        for (int u = 0; u < 128; ++u) {
            const double col = 0 + (u + 0.5) * 2.0 - 0.5;
            const double row = 0 + (v + 0.5) * 2.0 - 0.5;
            for (int ch = 0; ch < 3; ++ch) {
                const double expect = oracle_bilinear(img, col, row, ch);
                REQUIRE(crop.values[(v * 128 + u) * 3 + ch] == Catch::Approx(expect).margin(1e-6));
            }
        }
}

TEST_CASE("extract_crop zero-pads outside the raster and rejects empty windows", "[ingest]") {
    RasterImage img = make_raster(32, 32, {0, 1, 0, 0, 0, 1});
    std::fill(img.pixels.begin(), img.pixels.end(), static_cast<std::uint8_t>(255));
    const Crop crop = extract_crop(img, {{-32, -32}, {32, 32}});
    // the top-left quadrant of the window lies fully outside
    CHECK(crop.values[0] == 0.0f);
    CHECK(crop.values[(96 * 128 + 96) * 3] == 1.0f);  // interior of the covered quadrant
    CHECK_THROWS_AS(extract_crop(img, {{100, 100}, {140, 140}}), Error);
}

TEST_CASE("crop extraction is deterministic", "[ingest]") {
    RasterImage img = make_raster(64, 64, {10, 0.5, 0, 60, 0, -0.5});
    Rng rng(9);
    for (auto& b : img.pixels) b = static_cast<std::uint8_t>(rng.uniform_int(256));
    const Envelope env{{12.3, 35.9}, {27.6, 51.2}};
    const Crop a = extract_crop(img, env);
    const Crop b = extract_crop(img, env);
    REQUIRE(a.values == b.values);
}

TEST_CASE("png raster round trip", "[ingest]") {
    RasterImage img = make_raster(40, 25, {-16, 0.5, 0, 116, 0, -0.5});
    Rng rng(13);
    for (auto& b : img.pixels) b = static_cast<std::uint8_t>(rng.uniform_int(256));
    const auto path =
        (std::filesystem::temp_directory_path() / "roundtrip_test.png").string();
    write_raster(path, img);
    const RasterImage back = load_raster(path);
    CHECK(back.width == img.width);
    CHECK(back.height == img.height);
    CHECK(back.pixels == img.pixels);
    CHECK(back.transform.a == img.transform.a);
    CHECK(back.transform.f == img.transform.f);
}

TEST_CASE("meta schema calibration and encoding", "[ingest]") {
    std::vector<BuildingRecord> records(3);
    records[0].id = "a";
    records[0].meta_raw = {{"apartments", 1.0}, {"mean_dsm", 3.78}, {"mean_height", 1.66},
                           {"area", 17.58},     {"perimeter", 17.81}, {"built_year", 1219.0},
                           {"floors", 1.0},     {"era", 1.0}};
    records[1].id = "b";
    records[1].meta_raw = {{"apartments", 60.0}, {"mean_dsm", 113.7}, {"mean_height", 95.65},
                           {"area", 16574.86},   {"perimeter", 1062.72}, {"built_year", 2021.0},
                           {"floors", 26.0},     {"era", 5.0}};
    records[2].id = "c";  // everything missing

    const MetaSchema schema = MetaSchema::calibrate(records);
    CHECK(schema.dim() == kMetaDim);

    SECTION("missing attributes encode to a zero vector") {
        const auto v = encode_meta(records[2], schema);
        for (float x : v) CHECK(x == 0.0f);
    }
    SECTION("built year 2021 against min 1219 / max 2021 fills the slot to 1") {
        const auto v = encode_meta(records[1], schema);
        CHECK(v[5] == 1.0f);  // built_year is the sixth numeric slot
        for (float x : v) CHECK((x >= 0.0f && x <= 1.0f));
    }
    SECTION("unknown heritage category leaves both one-hot slots zero") {
        BuildingRecord rec;
        rec.id = "d";
        rec.meta_raw = {{"heritage", std::string("Other")}};
        const auto v = encode_meta(rec, schema);
        CHECK(v[8] == 0.0f);
        CHECK(v[9] == 0.0f);
    }
    SECTION("known categories set exactly one slot") {
        BuildingRecord rec;
        rec.id = "e";
        rec.meta_raw = {{"heritage", std::string("yes")}, {"function", std::string("commercial")}};
        const auto v = encode_meta(rec, schema);
        CHECK(v[8] == 1.0f);
        CHECK(v[9] == 0.0f);
        CHECK(v[10 + 1] == 1.0f);  // commercial is the second function slot
    }
    SECTION("out-of-range values clamp and count a warning") {
        BuildingRecord rec;
        rec.id = "f";
        rec.meta_raw = {{"built_year", 2100.0}};
        MetaEncodeStats stats;
        const auto v = encode_meta(rec, schema, &stats);
        CHECK(v[5] == 1.0f);
        CHECK(stats.clamped == 1);
    }
    SECTION("encoded values are in [0,1] and missing is exactly zero") {
        for (const auto& rec : records) {
            const auto v = encode_meta(rec, schema);
            for (float x : v) REQUIRE((x >= 0.0f && x <= 1.0f));
        }
    }
    SECTION("schema json round trip") {
        const auto path = (std::filesystem::temp_directory_path() / "schema_test.json").string();
        schema.save(path);
        const MetaSchema back = MetaSchema::load(path);
        CHECK(back.numeric[5].min == schema.numeric[5].min);
        CHECK(back.numeric[5].max == schema.numeric[5].max);
        CHECK(back.function_categories == schema.function_categories);
    }
}

TEST_CASE("node feature vector layout", "[ingest]") {
    Crop pre, post;
    Rng rng(31);
    for (auto& v : pre.values) v = static_cast<float>(rng.uniform());
    for (auto& v : post.values) v = static_cast<float>(rng.uniform());

    const auto no_meta = node_feature_vector(pre, post);
    REQUIRE(static_cast<int>(no_meta.size()) == kFeatureDimNoMeta);
    REQUIRE(kFeatureDimNoMeta == 98304);

    std::array<float, kMetaDim> meta{};
    meta[0] = 0.5f;
    const auto with_meta = node_feature_vector(pre, post, &meta);
    REQUIRE(static_cast<int>(with_meta.size()) == kFeatureDimWithMeta);
    REQUIRE(kFeatureDimWithMeta == 98324);

    // slicing at 49152 and 98304 recovers the crops exactly
    CHECK(std::equal(pre.values.begin(), pre.values.end(), with_meta.begin()));
    CHECK(std::equal(post.values.begin(), post.values.end(), with_meta.begin() + kCropValues));
    CHECK(with_meta[2 * kCropValues] == 0.5f);

    const Crop zero_pre{}, zero_post{};
    std::array<float, kMetaDim> zero_meta{};
    const auto zeros = node_feature_vector(zero_pre, zero_post, &zero_meta);
    for (float v : zeros) REQUIRE(v == 0.0f);
}
