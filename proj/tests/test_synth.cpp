#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "bldg/ingest.hpp"
#include "bldg/synth.hpp"

using namespace bldg;
using synth::CityConfig;

namespace {

bool polygons_intersect(const Polygon& a, const Polygon& b) {
    // segment intersection + containment probe; adequate for convex rects
    auto seg = [](const Point& p1, const Point& p2, const Point& q1, const Point& q2) {
        const double d1 = orient2d(q1, q2, p1), d2 = orient2d(q1, q2, p2);
        const double d3 = orient2d(p1, p2, q1), d4 = orient2d(p1, p2, q2);
        return ((d1 > 0) != (d2 > 0)) && ((d3 > 0) != (d4 > 0));
    };
    const auto& ra = a.ring;
    const auto& rb = b.ring;
    for (std::size_t i = 0; i < ra.size(); ++i)
        for (std::size_t j = 0; j < rb.size(); ++j)
            if (seg(ra[i], ra[(i + 1) % ra.size()], rb[j], rb[(j + 1) % rb.size()])) return true;
    return point_in_polygon(ra[0], rb) || point_in_polygon(rb[0], ra);
}

double mean_footprint_value(const RasterImage& img, const Polygon& poly) {
    double sum = 0.0;
    long long count = 0;
    for (int row = 0; row < img.height; ++row)
        for (int col = 0; col < img.width; ++col) {
            if (!point_in_polygon(img.transform.pixel_to_world(col, row), poly.ring)) continue;
            for (int ch = 0; ch < 3; ++ch) sum += img.at(col, row)[ch] / 255.0;
            count += 3;
        }
    return count ? sum / count : 0.0;
}

}  // namespace

TEST_CASE("generate_city basics", "[synth]") {
    CityConfig cfg;
    cfg.count = 0;
    CHECK(synth::generate_city(cfg).records.empty());

    cfg.count = 100;
    cfg.seed = 100;
    const synth::City a = synth::generate_city(cfg);
    const synth::City b = synth::generate_city(cfg);
    REQUIRE(a.records.size() == 100);
    REQUIRE(a.susceptibility.size() == 100);

    SECTION("identical seeds give identical cities") {
        for (std::size_t i = 0; i < a.records.size(); ++i) {
            REQUIRE(a.records[i].id == b.records[i].id);
            REQUIRE(a.records[i].polygon.ring.size() == b.records[i].polygon.ring.size());
            for (std::size_t v = 0; v < a.records[i].polygon.ring.size(); ++v) {
                REQUIRE(a.records[i].polygon.ring[v].x == b.records[i].polygon.ring[v].x);
                REQUIRE(a.records[i].polygon.ring[v].y == b.records[i].polygon.ring[v].y);
            }
            REQUIRE(a.susceptibility[i] == b.susceptibility[i]);
            REQUIRE(a.records[i].meta_raw.size() == b.records[i].meta_raw.size());
        }
    }
    SECTION("no two footprints overlap") {
        for (std::size_t i = 0; i < a.records.size(); ++i)
            for (std::size_t j = i + 1; j < a.records.size(); ++j)
                REQUIRE_FALSE(polygons_intersect(a.records[i].polygon, a.records[j].polygon));
    }
    SECTION("susceptibility stays in [0.5, 1.5]") {
        for (double s : a.susceptibility) REQUIRE((s >= 0.5 && s <= 1.5));
    }
    SECTION("oversized footprints are rejected") {
        CityConfig bad;
        bad.count = 400;
        bad.extent_m = 200.0;  // 10 m cells cannot host 24 m buildings
        CHECK_THROWS_WITH(synth::generate_city(bad),
                          Catch::Matchers::ContainsSubstring("cannot fit"));
    }
}

TEST_CASE("assign_damage follows the decay law", "[synth]") {
    CityConfig cfg;
    cfg.noise_sd = 0.0;
    cfg.thresholds = {0.3, 0.7};

    SECTION("a unit-susceptibility building at the epicenter lands in the top class") {
        synth::City city;
        BuildingRecord rec;
        rec.id = "center";
        const Point epi = cfg.center();
        rec.polygon.ring = {{epi.x - 5, epi.y - 5}, {epi.x + 5, epi.y - 5},
                            {epi.x + 5, epi.y + 5}, {epi.x - 5, epi.y + 5}};
        city.records.push_back(rec);
        city.susceptibility.push_back(1.0);
        synth::assign_damage(city, cfg);
        CHECK(city.records[0].label == 2);
    }
    SECTION("distant buildings decay to class zero") {
        synth::City city;
        BuildingRecord rec;
        rec.id = "far";
        rec.polygon.ring = {{0, 0}, {10, 0}, {10, 10}, {0, 10}};  // ~700 m from center
        city.records.push_back(rec);
        city.susceptibility.push_back(1.5);
        CityConfig far = cfg;
        far.decay_radius_m = 100.0;
        synth::assign_damage(city, far);
        CHECK(city.records[0].label == 0);
    }
    SECTION("empirical class frequencies match quadrature over the placement grid") {
        CityConfig big;
        big.count = 10000;
        big.extent_m = 6000.0;
        big.decay_radius_m = 1200.0;
        big.noise_sd = 0.0;
        big.thresholds = {0.3, 0.7};
        big.seed = 31;
        synth::City city = synth::generate_city(big);
        synth::assign_damage(city, big);
        std::array<double, 3> observed{};
        for (const auto& rec : city.records) observed[*rec.label] += 1.0;
        for (double& o : observed) o /= big.count;

        // Oracle: intensity = s * exp(-d^2 / 2r^2) with s ~ U[0.5, 1.5] and
        // centers near-uniform over the extent; integrate on a fine grid.
        std::array<double, 3> expect{};
        const int grid = 200, squad = 64;
        const Point epi = big.center();
        for (int gy = 0; gy < grid; ++gy)
            for (int gx = 0; gx < grid; ++gx) {
                const double x = (gx + 0.5) / grid * big.extent_m;
                const double y = (gy + 0.5) / grid * big.extent_m;
                const double d2 = (x - epi.x) * (x - epi.x) + (y - epi.y) * (y - epi.y);
                const double decay =
                    std::exp(-d2 / (2.0 * big.decay_radius_m * big.decay_radius_m));
                for (int si = 0; si < squad; ++si) {
                    const double s = 0.5 + (si + 0.5) / squad;
                    const double intensity = s * decay;
                    int cls = 0;
                    for (double t : big.thresholds)
                        if (t < intensity) ++cls;
                    expect[cls] += 1.0;
                }
            }
        const double total = static_cast<double>(grid) * grid * squad;
        for (double& e : expect) e /= total;
        for (int c = 0; c < 3; ++c)
            REQUIRE(std::abs(observed[c] - expect[c]) < 0.03);
    }
}

TEST_CASE("render_rasters perturbs only damaged footprints", "[synth]") {
    CityConfig cfg;
    cfg.count = 30;
    cfg.extent_m = 400.0;
    cfg.seed = 77;
    cfg.resolution_m = 1.0;
    cfg.noise_sd = 0.0;
    cfg.decay_radius_m = 120.0;
    synth::City city = synth::generate_city(cfg);
    synth::assign_damage(city, cfg);
    auto [pre, post] = synth::render_rasters(city, cfg);

    SECTION("class-0 footprints are bit identical between pre and post") {
        for (std::size_t b = 0; b < city.records.size(); ++b) {
            if (*city.records[b].label != 0) continue;
            const double mp = mean_footprint_value(pre, city.records[b].polygon);
            const double mq = mean_footprint_value(post, city.records[b].polygon);
            REQUIRE(mp == mq);
        }
    }
    SECTION("background pixels are identical") {
        // flip footprint pixels off via masks: compare pixels far from all buildings
        long long diff_outside = 0;
        for (int row = 0; row < pre.height; row += 3)
            for (int col = 0; col < pre.width; col += 3) {
                const Point w = pre.transform.pixel_to_world(col, row);
                bool in_any = false;
                for (const auto& rec : city.records)
                    if (point_in_polygon(w, rec.polygon.ring)) {
                        in_any = true;
                        break;
                    }
                if (in_any) continue;
                for (int ch = 0; ch < 3; ++ch)
                    if (pre.at(col, row)[ch] != post.at(col, row)[ch]) ++diff_outside;
            }
        REQUIRE(diff_outside == 0);
    }
    SECTION("max-class footprints drop by about 0.15 per class") {
        const int kmax = cfg.num_classes() - 1;
        int measured = 0;
        for (std::size_t b = 0; b < city.records.size(); ++b) {
            if (*city.records[b].label != kmax) continue;
            const double mp = mean_footprint_value(pre, city.records[b].polygon);
            const double mq = mean_footprint_value(post, city.records[b].polygon);
            REQUIRE(std::abs((mp - mq) - 0.15 * kmax) < 0.02);
            ++measured;
        }
        REQUIRE(measured > 0);
    }
}

TEST_CASE("damage is spatially clustered around the epicenter", "[synth]") {
    CityConfig cfg;
    cfg.count = 400;
    cfg.extent_m = 1200.0;
    cfg.decay_radius_m = 150.0;
    cfg.noise_sd = 0.05;
    cfg.seed = 3;
    synth::City city = synth::generate_city(cfg);
    synth::assign_damage(city, cfg);

    const Point epi = cfg.center();
    double near_sum = 0.0, far_sum = 0.0;
    int near_n = 0, far_n = 0;
    for (const auto& rec : city.records) {
        const double d = distance(centroid(buffered_envelope(rec.polygon, 0.0)), epi);
        if (d < cfg.decay_radius_m) {
            near_sum += *rec.label;
            ++near_n;
        } else if (d > 3.0 * cfg.decay_radius_m) {
            far_sum += *rec.label;
            ++far_n;
        }
    }
    REQUIRE(near_n > 0);
    REQUIRE(far_n > 0);
    CHECK(near_sum / near_n > far_sum / far_n);
}

TEST_CASE("scenario round-trips through GeoJSON and ingest losslessly", "[synth]") {
    CityConfig cfg;
    cfg.count = 25;
    cfg.extent_m = 400.0;
    cfg.seed = 2025;
    cfg.meta_correlation = 0.6;
    cfg.resolution_m = 1.0;
    const synth::Scenario sc = synth::generate_scenario(cfg);

    const auto dir = (std::filesystem::temp_directory_path() / "scenario_rt").string();
    synth::write_scenario(dir, sc, cfg);
    const auto records = load_footprints(dir + "/buildings.geojson");
    REQUIRE(records.size() == sc.city.records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& orig = sc.city.records[i];
        const auto& back = records[i];
        REQUIRE(back.id == orig.id);
        REQUIRE(back.label == orig.label);
        REQUIRE(back.polygon.ring.size() == orig.polygon.ring.size());
        for (std::size_t v = 0; v < orig.polygon.ring.size(); ++v) {
            REQUIRE(back.polygon.ring[v].x == orig.polygon.ring[v].x);  // lossless doubles
            REQUIRE(back.polygon.ring[v].y == orig.polygon.ring[v].y);
        }
        REQUIRE(back.meta_raw.size() == orig.meta_raw.size());
        for (const auto& [key, val] : orig.meta_raw) {
            REQUIRE(back.meta_raw.count(key) == 1);
            if (std::holds_alternative<double>(val))
                REQUIRE(std::get<double>(back.meta_raw.at(key)) == std::get<double>(val));
            else
                REQUIRE(std::get<std::string>(back.meta_raw.at(key)) ==
                        std::get<std::string>(val));
        }
    }

    SECTION("rasters round trip through PNG") {
        const RasterImage pre = load_raster(dir + "/pre.png");
        REQUIRE(pre.pixels == sc.pre.pixels);
        REQUIRE(pre.transform.a == sc.pre.transform.a);
    }
    SECTION("full determinism across generation runs") {
        const synth::Scenario sc2 = synth::generate_scenario(cfg);
        REQUIRE(sc2.pre.pixels == sc.pre.pixels);
        REQUIRE(sc2.post.pixels == sc.post.pixels);
        for (std::size_t i = 0; i < records.size(); ++i)
            REQUIRE(sc2.city.records[i].label == sc.city.records[i].label);
    }
}
