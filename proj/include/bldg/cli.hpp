#pragma once

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "bldg/config.hpp"
#include "bldg/evaluation.hpp"

namespace bldg {

namespace detail {

inline void write_json_file(const std::string& path, const nlohmann::json& j) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(out.good(), "cannot write: ", path);
    out << j.dump(2) << "\n";
    require(out.good(), "write failed: ", path);
}

}  // namespace detail

// Exit codes: 0 success, 1 data/validation error, 2 usage error.
inline int run_cli(int argc, const char* const* argv) {
    CLI::App app{"Building-damage graph learning pipeline"};
    app.set_version_flag("--version", "bldg 1.0.0");
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> overrides;
    app.add_option("--config", config_path, "Pipeline config JSON (defaults apply when omitted)");
    app.add_option("--set", overrides, "Override config values, e.g. --set train.epochs=50");

    auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic disaster scenario");
    std::string synth_out;
    synth_cmd->add_option("--out", synth_out, "Output directory")->required();

    auto* build_cmd = app.add_subcommand("build-graph", "Build the per-region building graph");
    std::string graph_out, schema_out;
    build_cmd->add_option("--graph-out", graph_out, "Graph container output path")->required();
    build_cmd->add_option("--schema-out", schema_out, "Write the calibrated meta schema here");

    auto* train_cmd = app.add_subcommand("train", "Train the node classifier on a graph");
    std::string train_graph_in, checkpoint_out, history_out;
    train_cmd->add_option("--graph-in", train_graph_in, "Graph container input")->required();
    train_cmd->add_option("--checkpoint-out", checkpoint_out, "Checkpoint output path")->required();
    train_cmd->add_option("--history-out", history_out, "Per-epoch history (JSON lines)");

    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a graph");
    std::string eval_graph_in, eval_checkpoint, report_out;
    eval_cmd->add_option("--graph-in", eval_graph_in, "Graph container input")->required();
    eval_cmd->add_option("--checkpoint", eval_checkpoint, "Checkpoint input")->required();
    eval_cmd->add_option("--report-out", report_out, "Metrics report JSON output")->required();

    auto* compare_cmd =
        app.add_subcommand("compare", "Paired statistical comparison against a baseline");
    std::string cmp_graph_in, cmp_report_out;
    compare_cmd->add_option("--graph-in", cmp_graph_in, "Graph container input")->required();
    compare_cmd->add_option("--report-out", cmp_report_out, "Comparison report JSON output")
        ->required();

    auto* export_cmd = app.add_subcommand("export-embeddings", "Dump per-node embeddings as CSV");
    std::string exp_graph_in, exp_checkpoint, exp_out;
    export_cmd->add_option("--graph-in", exp_graph_in, "Graph container input")->required();
    export_cmd->add_option("--checkpoint", exp_checkpoint, "Checkpoint input")->required();
    export_cmd->add_option("--out", exp_out, "CSV output path")->required();

    // --config/--set may follow the subcommand name
    for (auto* sub : app.get_subcommands({})) sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n\n" << app.help();
        return 2;
    }

    try {
        const PipelineConfig cfg = parse_config(config_path, overrides);

        if (*synth_cmd) {
            const synth::Scenario sc = synth::generate_scenario(cfg.data.synth_cfg);
            synth::write_scenario(synth_out, sc, cfg.data.synth_cfg);
            std::cout << "wrote scenario with " << sc.city.records.size() << " buildings ("
                      << cfg.data.synth_cfg.num_classes() << " classes) to " << synth_out << "\n";
        } else if (*build_cmd) {
            PipelineInputs in = load_inputs(cfg);
            if (!schema_out.empty()) {
                require(in.schema.has_value(),
                        "--schema-out requires graph.use_meta=true in the config");
                in.schema->save(schema_out);
            }
            const BuildingGraph graph = build_pipeline_graph(cfg, in);
            save_graph(graph_out, graph);
            std::cout << "wrote graph: " << graph.num_nodes() << " nodes, " << graph.edges.size()
                      << " edges, feature dim " << graph.feature_dim << " -> " << graph_out
                      << "\n";
        } else if (*train_cmd) {
            const BuildingGraph graph = load_graph(train_graph_in);
            const TrainConfig tc = train_config_for_graph(cfg, graph);
            auto [checkpoint, history] = fit(graph, tc);
            checkpoint.save(checkpoint_out);
            if (!history_out.empty()) history.save_jsonl(history_out);
            std::cout << "trained " << tc.epochs << " epochs; selected epoch "
                      << history.selected_epoch << " (test " << tc.selection_metric << " "
                      << checkpoint.best.f1 << ") -> " << checkpoint_out << "\n";
        } else if (*eval_cmd) {
            const BuildingGraph graph = load_graph(eval_graph_in);
            const Checkpoint ck = Checkpoint::load(eval_checkpoint);
            const MetricsReport report = evaluate_report(graph, ck, cfg.train.threads);
            detail::write_json_file(report_out, report.to_json());
            std::cout << "wrote metrics report -> " << report_out << "\n";
        } else if (*compare_cmd) {
            const BuildingGraph graph = load_graph(cmp_graph_in);
            TrainConfig ta = train_config_for_graph(cfg, graph);
            TrainConfig tb = ta;
            tb.model.identity_adjacency = cfg.compare.baseline_identity_adjacency;
            CompareConfig cc;
            cc.runs = cfg.compare.runs;
            cc.seed = cfg.compare.seed;
            cc.fractions = cfg.graph.fractions;
            const ComparisonReport report = compare_models(graph, ta, tb, cc);
            detail::write_json_file(cmp_report_out, report.to_json());
            std::cout << "wrote comparison report (" << report.runs << " runs) -> "
                      << cmp_report_out << "\n";
        } else if (*export_cmd) {
            const BuildingGraph graph = load_graph(exp_graph_in);
            const Checkpoint ck = Checkpoint::load(exp_checkpoint);
            export_embeddings(graph, ck, exp_out, cfg.train.threads);
            std::cout << "wrote embeddings CSV -> " << exp_out << "\n";
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

inline int run_cli(const std::vector<std::string>& args) {
    std::vector<std::string> full;
    full.push_back("bldg");
    full.insert(full.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    argv.reserve(full.size());
    for (const auto& s : full) argv.push_back(s.c_str());
    return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace bldg
