#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "bldg/cli.hpp"
#include "bldg/config.hpp"

using namespace bldg;

namespace {

std::string temp_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / name;
    std::filesystem::create_directories(dir);
    return dir.string();
}

std::string write_temp(const std::string& name, const std::string& content) {
    const auto path = std::filesystem::temp_directory_path() / name;
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << content;
    return path.string();
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

// Small, fast scenario + model overrides shared by the pipeline tests.
std::vector<std::string> tiny_overrides() {
    return {
        "--set", "data.synth.count=40",
        "--set", "data.synth.extent_m=400",
        "--set", "data.synth.decay_radius_m=120",
        "--set", "data.synth.resolution_m=2.0",
        "--set", "data.synth.seed=5",
        "--set", "model.channels=[2,3]",
        "--set", "model.gcn_hidden=8",
        "--set", "train.epochs=3",
        "--set", "graph.split.fractions=[0.3,0.2,0.5]",
    };
}

}  // namespace

TEST_CASE("empty config parses to documented defaults", "[cli]") {
    const auto path = write_temp("empty_cfg.json", "{}");
    const PipelineConfig cfg = parse_config(path);
    CHECK(cfg.data.kind == "synth");
    CHECK(cfg.graph.buffer_m == 5.0);
    CHECK(cfg.graph.chip.tile == 512.0);
    CHECK(cfg.graph.fractions.train == 0.2);
    CHECK(cfg.graph.fractions.test == 0.1);
    CHECK(cfg.graph.fractions.hold == 0.7);
    CHECK(cfg.model.channels == std::vector<int>{16, 32, 64, 128});
    CHECK(cfg.model.gcn_hidden == 32);
    CHECK(cfg.model.dropout == 0.5);
    CHECK(cfg.train.epochs == 300);
    CHECK(cfg.train.lr == 0.0003);
    CHECK(cfg.train.class_weight_mode == ClassWeightMode::InverseFrequency);
    CHECK(cfg.compare.runs == 30);
}

TEST_CASE("config validation names the offending path", "[cli]") {
    SECTION("bad split fractions") {
        const auto path = write_temp("bad_fractions.json",
                                     R"({"graph": {"split": {"fractions": [0.5, 0.5, 0.5]}}})");
        CHECK_THROWS_WITH(parse_config(path),
                          Catch::Matchers::ContainsSubstring("graph.split.fractions"));
    }
    SECTION("unknown keys are rejected") {
        const auto path = write_temp("unknown_key.json", R"({"train": {"epoch": 5}})");
        CHECK_THROWS_WITH(parse_config(path), Catch::Matchers::ContainsSubstring("train.epoch"));
    }
    SECTION("type mismatches name the path") {
        const auto path = write_temp("bad_type.json", R"({"train": {"epochs": "ten"}})");
        CHECK_THROWS_WITH(parse_config(path), Catch::Matchers::ContainsSubstring("train.epochs"));
    }
}

TEST_CASE("config serialization round trip", "[cli]") {
    const auto path = write_temp("rt_cfg.json", R"({
        "data": {"kind": "synth", "synth": {"count": 123, "thresholds": [0.2, 0.5, 0.8]}},
        "graph": {"buffer_m": 7.5, "use_meta": true, "class_map": [0, 1, 2, 2]},
        "model": {"channels": [4, 8], "num_classes": 4},
        "train": {"epochs": 42, "lr": 0.001},
        "compare": {"runs": 5}
    })");
    const PipelineConfig cfg = parse_config(path);
    CHECK(cfg.data.synth_cfg.count == 123);
    CHECK(cfg.graph.use_meta);
    CHECK(cfg.train.epochs == 42);

    const auto echoed = write_temp("rt_cfg2.json", cfg.to_json().dump());
    const PipelineConfig back = parse_config(echoed);
    REQUIRE(back.to_json().dump() == cfg.to_json().dump());
}

TEST_CASE("--set overrides apply dotted paths", "[cli]") {
    nlohmann::json doc = nlohmann::json::object();
    apply_override(doc, "train.epochs=12");
    apply_override(doc, "model.channels=[2,3]");
    apply_override(doc, "data.kind=synth");
    const PipelineConfig cfg = PipelineConfig::from_json(doc);
    CHECK(cfg.train.epochs == 12);
    CHECK(cfg.model.channels == std::vector<int>{2, 3});
    CHECK_THROWS_AS(apply_override(doc, "no-equals-sign"), Error);
}

TEST_CASE("dispatch exit codes", "[cli]") {
    SECTION("no arguments is a usage error") { CHECK(run_cli(std::vector<std::string>{}) == 2); }
    SECTION("unknown subcommand is a usage error") {
        CHECK(run_cli({"frobnicate"}) == 2);
    }
    SECTION("missing required flag is a usage error") {
        CHECK(run_cli({"synth"}) == 2);
    }
    SECTION("missing raster path is a data error mentioning the path") {
        const auto cfgpath = write_temp("files_cfg.json", R"({
            "data": {"kind": "files",
                     "files": {"footprints": "/nonexistent/buildings.geojson",
                                "pre_raster": "/nonexistent/pre.png",
                                "post_raster": "/nonexistent/post.png"}}})");
        const auto out = temp_dir("cli_missing") + "/graph.bldg";
        CHECK(run_cli({"--config", cfgpath, "build-graph", "--graph-out", out}) == 1);
    }
    SECTION("version exits cleanly") { CHECK(run_cli({"--version"}) == 0); }
}

TEST_CASE("cli pipeline end to end is deterministic", "[cli]") {
    const std::string dir = temp_dir("cli_pipeline");
    auto args = [&](std::initializer_list<std::string> head) {
        std::vector<std::string> v(head);
        const auto extra = tiny_overrides();
        v.insert(v.end(), extra.begin(), extra.end());
        return v;
    };

    for (const std::string run : {"r1", "r2"}) {
        const std::string base = dir + "/" + run;
        std::filesystem::create_directories(base);
        REQUIRE(run_cli(args({"synth", "--out", base + "/scene"})) == 0);
        REQUIRE(run_cli(args({"build-graph", "--graph-out", base + "/graph.bldg"})) == 0);
        REQUIRE(run_cli(args({"train", "--graph-in", base + "/graph.bldg", "--checkpoint-out",
                              base + "/model.bldc", "--history-out", base + "/history.jsonl"})) ==
                0);
        REQUIRE(run_cli(args({"eval", "--graph-in", base + "/graph.bldg", "--checkpoint",
                              base + "/model.bldc", "--report-out", base + "/report.json"})) == 0);
        REQUIRE(run_cli(args({"export-embeddings", "--graph-in", base + "/graph.bldg",
                              "--checkpoint", base + "/model.bldc", "--out",
                              base + "/embeddings.csv"})) == 0);
    }

    CHECK(slurp(dir + "/r1/graph.bldg") == slurp(dir + "/r2/graph.bldg"));
    CHECK(slurp(dir + "/r1/model.bldc") == slurp(dir + "/r2/model.bldc"));
    CHECK(slurp(dir + "/r1/report.json") == slurp(dir + "/r2/report.json"));
    CHECK(slurp(dir + "/r1/history.jsonl") == slurp(dir + "/r2/history.jsonl"));
    CHECK(slurp(dir + "/r1/embeddings.csv") == slurp(dir + "/r2/embeddings.csv"));
    CHECK(slurp(dir + "/r1/scene/pre.png") == slurp(dir + "/r2/scene/pre.png"));

    SECTION("the report carries four splits and the shannon index") {
        const auto report = nlohmann::json::parse(slurp(dir + "/r1/report.json"));
        REQUIRE(report.contains("splits"));
        for (const auto& name : {"train", "test", "hold", "full"})
            REQUIRE(report["splits"].contains(name));
        REQUIRE(report.contains("shannon_equitability"));
    }
    SECTION("a scenario written to disk feeds the files-kind pipeline") {
        const std::string base = dir + "/files_kind";
        std::filesystem::create_directories(base);
        nlohmann::json doc;
        doc["data"]["kind"] = "files";
        doc["data"]["files"] = {{"footprints", dir + "/r1/scene/buildings.geojson"},
                                {"pre_raster", dir + "/r1/scene/pre.png"},
                                {"post_raster", dir + "/r1/scene/post.png"}};
        doc["model"]["channels"] = {2, 3};
        doc["model"]["gcn_hidden"] = 8;
        doc["graph"]["split"]["fractions"] = {0.3, 0.2, 0.5};
        const auto cfgpath = write_temp("files_kind_cfg.json", doc.dump());
        REQUIRE(run_cli({"--config", cfgpath, "build-graph", "--graph-out",
                         base + "/graph.bldg"}) == 0);
        const BuildingGraph g = load_graph(base + "/graph.bldg");
        const BuildingGraph r1 = load_graph(dir + "/r1/graph.bldg");
        REQUIRE(g.num_nodes() == r1.num_nodes());
        // same split seed and records: identical structure and features
        REQUIRE(g.features == r1.features);
        REQUIRE(g.edges.size() == r1.edges.size());
    }
}

TEST_CASE("compare subcommand writes a full report", "[cli]") {
    const std::string dir = temp_dir("cli_compare");
    auto base_args = tiny_overrides();
    std::vector<std::string> synth_args{"synth", "--out", dir + "/scene"};
    std::vector<std::string> build_args{"build-graph", "--graph-out", dir + "/graph.bldg"};
    std::vector<std::string> cmp_args{"compare", "--graph-in", dir + "/graph.bldg",
                                      "--report-out", dir + "/compare.json",
                                      "--set", "compare.runs=3",
                                      "--set", "train.epochs=2"};
    for (auto* v : {&synth_args, &build_args, &cmp_args})
        v->insert(v->end(), base_args.begin(), base_args.end());

    REQUIRE(run_cli(synth_args) == 0);
    REQUIRE(run_cli(build_args) == 0);
    REQUIRE(run_cli(cmp_args) == 0);

    const auto report = nlohmann::json::parse(slurp(dir + "/compare.json"));
    CHECK(report["runs"] == 3);
    CHECK(report["alpha"] == 0.05);
    REQUIRE(report["metrics"].size() == 5);
    for (const auto& m : report["metrics"]) {
        REQUIRE(m["differences"].size() == 3);
        REQUIRE(m.contains("t_p"));
        REQUIRE(m.contains("wilcoxon_p"));
    }
}
