#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "astute/astute.hpp"

namespace {

astute::PassageOrder parse_order(const std::string& name) {
    return name == "as-given" ? astute::PassageOrder::as_given : astute::PassageOrder::reversed;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Astute RAG pipeline runner"};
    app.require_subcommand(1);

    std::string dataset_path;

    auto* validate = app.add_subcommand("validate", "Check a dataset file and list violations");
    validate->add_option("--dataset", dataset_path, "Dataset JSONL file")->required();

    astute::RunConfig run_cfg;
    std::string order_name = "reversed";
    std::optional<std::uint64_t> seed;
    auto* run = app.add_subcommand("run", "Execute a method over a dataset");
    run->add_option("--dataset", run_cfg.dataset_path, "Dataset JSONL file")->required();
    run->add_option("--method", run_cfg.method,
                    "astute | no-rag | rag | genread | usc | self-route");
    run->add_option("--t", run_cfg.iterations, "Consolidation iterations (t >= 1)");
    run->add_option("--max-internal", run_cfg.max_internal,
                    "Cap on internally generated passages");
    run->add_option("--order", order_name, "Passage presentation order")
        ->check(CLI::IsMember({"reversed", "as-given"}));
    run->add_option("--backend", run_cfg.backend,
                    "scripted:<file> or <config.json>#<provider>")
        ->required();
    run->add_option("--concurrency", run_cfg.concurrency, "Worker pool size");
    run->add_option("--out", run_cfg.out_dir, "Output directory");
    run->add_flag("--resume", run_cfg.resume, "Skip instances already in the results file");
    run->add_option("--seed", seed, "Base seed for sampled calls");
    run->add_option("--prompt-dir", run_cfg.prompt_dir, "Directory of template overrides");

    std::vector<std::string> results_paths;
    std::string eval_out_dir = "reports";
    auto* evaluate = app.add_subcommand("evaluate", "Score results files against a dataset");
    evaluate->add_option("--results", results_paths, "Results JSONL file(s)")
        ->required()
        ->expected(-1);
    evaluate->add_option("--dataset", dataset_path, "Dataset JSONL file")->required();
    evaluate->add_option("--out", eval_out_dir, "Report output directory");

    std::string results_a, results_b;
    std::optional<std::string> results_third;
    std::string conflicts_out_dir;
    auto* analyze =
        app.add_subcommand("analyze-conflicts", "Partition instances by method agreement");
    analyze->add_option("--first", results_a, "First results JSONL file")->required();
    analyze->add_option("--second", results_b, "Second results JSONL file")->required();
    analyze->add_option("--dataset", dataset_path, "Dataset JSONL file")->required();
    analyze->add_option("--third", results_third,
                        "Optional third results file scored per subset");
    analyze->add_option("--out", conflicts_out_dir, "Report output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? astute::kExitOk : astute::kExitFailure;
    }

    try {
        if (validate->parsed()) return astute::cmd_validate(dataset_path, std::cout, std::cerr);
        if (run->parsed()) {
            run_cfg.order = parse_order(order_name);
            run_cfg.seed = seed;
            return astute::cmd_run(run_cfg, std::cout, std::cerr);
        }
        if (evaluate->parsed())
            return astute::cmd_evaluate(results_paths, dataset_path, eval_out_dir, std::cout,
                                        std::cerr);
        if (analyze->parsed())
            return astute::cmd_analyze_conflicts(results_a, results_b, dataset_path,
                                                 results_third, conflicts_out_dir, std::cout,
                                                 std::cerr);
    } catch (const astute::IoError& e) {
        std::cerr << e.what() << '\n';
        return astute::kExitIo;
    } catch (const std::exception& e) {
        std::cerr << e.what() << '\n';
        return astute::kExitFailure;
    }
    return astute::kExitFailure;
}
