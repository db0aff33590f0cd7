#pragma once

#include <atomic>
#include <condition_variable>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "astute/baselines.hpp"
#include "astute/data_model.hpp"
#include "astute/evaluation.hpp"
#include "astute/llm_gateway.hpp"
#include "astute/pipeline.hpp"
#include "astute/prompts.hpp"

namespace astute {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;  // validation or evaluation failure
inline constexpr int kExitIo = 2;       // unreadable/unwritable files
inline constexpr int kExitBudget = 3;   // too many per-instance failures

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct RunConfig {
    std::string dataset_path;
    std::string method = "astute";
    int iterations = 1;     // t
    int max_internal = 1;   // m-hat
    PassageOrder order = PassageOrder::reversed;
    std::string backend;    // "scripted:<file>" or "<config.json>#<provider>"
    int concurrency = 1;
    std::string out_dir = "runs";
    bool resume = false;
    std::optional<std::uint64_t> seed;
    double failure_budget = 0.10;
    std::string prompt_dir;  // optional template overrides
};

inline std::shared_ptr<CompletionBackend> make_backend(const std::string& spec) {
    if (spec.empty()) throw std::invalid_argument("no backend given");
    if (spec.rfind("scripted:", 0) == 0) {
        const std::string path = spec.substr(9);
        if (!std::filesystem::exists(path)) throw IoError("cannot open script file: " + path);
        return ScriptedBackend::from_file(path);
    }
    const auto hash = spec.find('#');
    if (hash == std::string::npos)
        throw std::invalid_argument(
            "backend must be scripted:<file> or <config.json>#<provider>");
    const std::string config_path = spec.substr(0, hash);
    if (!std::filesystem::exists(config_path))
        throw IoError("cannot open provider config: " + config_path);
    return std::make_shared<HttpBackend>(
        load_provider_config(config_path, spec.substr(hash + 1)));
}

namespace detail {

inline Dataset load_dataset_checked(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open dataset file: " + path);
    return parse_dataset(in, std::filesystem::path(path).stem().string());
}

inline std::vector<ResultRecord> load_results_checked(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open results file: " + path);
    return parse_results(in);
}

inline std::string safe_file_stem(const std::string& id) {
    std::string out;
    out.reserve(id.size());
    for (char c : id) {
        const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
                        (c >= '0' && c <= '9') || c == '.' || c == '_' || c == '-';
        out += ok ? c : '_';
    }
    return out.empty() ? "_" : out;
}

inline std::string format_double(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

}  // namespace detail

// Unlike parse_dataset (which stops at the first bad record so runs never see
// partial data), validation walks the whole file and reports every violation.
inline int cmd_validate(const std::string& dataset_path, std::ostream& out, std::ostream& err) {
    std::ifstream in(dataset_path);
    if (!in) {
        err << "cannot open dataset file: " << dataset_path << '\n';
        return kExitIo;
    }
    std::set<std::string> seen_ids;
    size_t line_no = 0, instances = 0, problems = 0;
    std::string line;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        QaInstance inst;
        try {
            inst = detail::instance_from_json(nlohmann::json::parse(line), line_no);
        } catch (const nlohmann::json::parse_error& e) {
            out << "line " << line_no << ": malformed record (" << e.what() << ")" << '\n';
            ++problems;
            continue;
        } catch (const DatasetError& e) {
            out << e.what() << '\n';
            ++problems;
            continue;
        }
        ++instances;
        for (const auto& v : validate_instance(inst)) {
            out << inst.id << ": " << v << '\n';
            ++problems;
        }
        if (!seen_ids.insert(inst.id).second) {
            out << inst.id << ": duplicate id" << '\n';
            ++problems;
        }
    }
    if (problems > 0) return kExitFailure;
    out << instances << " instances OK" << '\n';
    return kExitOk;
}

namespace detail {

struct InstanceOutcome {
    std::optional<ResultRecord> record;
    nlohmann::json trace;
    std::string error;
};

inline nlohmann::json baseline_trace_json(const QaInstance& inst, const RunConfig& cfg,
                                          const BaselineResult& result) {
    nlohmann::json j;
    j["id"] = inst.id;
    j["question"] = inst.question;
    j["config"] = {
        {"method", cfg.method},
        {"order", cfg.order == PassageOrder::reversed ? "reversed" : "as-given"},
    };
    j["api_calls"] = result.api_calls;
    switch (result.route_taken) {
        case Route::retrieved: j["route"] = "retrieved"; break;
        case Route::internal: j["route"] = "internal"; break;
        case Route::not_applicable: break;
    }
    j["transcript"] = nlohmann::json::array();
    for (const auto& t : result.transcript)
        j["transcript"].push_back(
            {{"step", t.step}, {"prompt", t.prompt}, {"completion", t.completion}});
    j["final"] = {{"raw", result.final_answer.raw_response}};
    if (result.final_answer.extracted) j["final"]["extracted"] = *result.final_answer.extracted;
    return j;
}

inline InstanceOutcome process_instance(const QaInstance& inst, const RunConfig& cfg,
                                        LlmGateway& gateway, const PromptLibrary& prompts) {
    InstanceOutcome out;
    try {
        if (cfg.method == "astute") {
            PipelineConfig pcfg;
            pcfg.iterations = cfg.iterations;
            pcfg.max_internal_passages = cfg.max_internal;
            pcfg.order = cfg.order;
            pcfg.seed = cfg.seed;
            AstutePipeline pipeline(gateway, prompts);
            PipelineResult r = pipeline.run(inst, pcfg);
            out.record = ResultRecord{inst.id, "astute", r.final_answer.extracted,
                                      r.final_answer.raw_response, r.api_calls};
            out.trace = pipeline_trace_json(inst, pcfg, r);
        } else {
            BaselineParams params;
            params.order = cfg.order;
            params.seed = cfg.seed;
            BaselineRunner runner(gateway, prompts);
            BaselineResult r = runner.run(baseline_from_string(cfg.method), inst, params);
            out.record = ResultRecord{inst.id, cfg.method, r.final_answer.extracted,
                                      r.final_answer.raw_response, r.api_calls};
            out.trace = baseline_trace_json(inst, cfg, r);
        }
    } catch (const std::exception& e) {
        out.error = e.what();
    }
    return out;
}

}  // namespace detail

// Drives the worker pool over one loaded dataset. Results are emitted in
// dataset order regardless of completion order, so identical invocations
// produce byte-identical files.
inline int cmd_run(const RunConfig& cfg, LlmGateway& gateway, std::ostream& out,
                   std::ostream& err) {
    if (cfg.iterations < 1) {
        err << "t must be >= 1" << '\n';
        return kExitFailure;
    }
    if (cfg.max_internal < 1) {
        err << "max-internal must be >= 1" << '\n';
        return kExitFailure;
    }
    if (cfg.concurrency < 1) {
        err << "concurrency must be >= 1" << '\n';
        return kExitFailure;
    }
    if (cfg.method != "astute") {
        try {
            baseline_from_string(cfg.method);
        } catch (const std::invalid_argument& e) {
            err << e.what() << '\n';
            return kExitFailure;
        }
    }

    Dataset data;
    try {
        data = detail::load_dataset_checked(cfg.dataset_path);
    } catch (const IoError& e) {
        err << e.what() << '\n';
        return kExitIo;
    } catch (const DatasetError& e) {
        err << e.what() << '\n';
        return kExitFailure;
    }

    namespace fs = std::filesystem;
    const fs::path out_dir(cfg.out_dir);
    const fs::path traces_dir = out_dir / "traces";
    std::error_code ec;
    fs::create_directories(traces_dir, ec);
    if (ec) {
        err << "cannot create output directory: " << cfg.out_dir << '\n';
        return kExitIo;
    }
    const fs::path results_path = out_dir / "results.jsonl";
    const fs::path failures_path = out_dir / "failures.jsonl";

    std::set<std::string> completed;
    if (cfg.resume && fs::exists(results_path)) {
        try {
            for (const auto& r : detail::load_results_checked(results_path.string()))
                completed.insert(r.id);
        } catch (const EvalError& e) {
            err << "cannot resume from " << results_path.string() << ": " << e.what() << '\n';
            return kExitFailure;
        }
    } else if (!cfg.resume) {
        fs::remove(results_path, ec);
        fs::remove(failures_path, ec);
    }

    std::vector<size_t> todo;
    for (size_t i = 0; i < data.instances.size(); ++i)
        if (!completed.count(data.instances[i].id)) todo.push_back(i);

    std::ofstream results_out(results_path, std::ios::app);
    if (!results_out) {
        err << "cannot write results file: " << results_path.string() << '\n';
        return kExitIo;
    }
    std::ofstream failures_out;

    const PromptLibrary prompts =
        cfg.prompt_dir.empty() ? PromptLibrary::builtin() : PromptLibrary::from_dir(cfg.prompt_dir);
    const size_t ledger_start = gateway.ledger().mark();

    std::mutex mu;
    std::condition_variable cv;
    std::map<size_t, detail::InstanceOutcome> finished;  // todo position -> outcome
    std::atomic<size_t> next_claim{0};

    auto worker = [&]() {
        while (true) {
            const size_t pos = next_claim.fetch_add(1);
            if (pos >= todo.size()) return;
            detail::InstanceOutcome outcome = detail::process_instance(
                data.instances[todo[pos]], cfg, gateway, prompts);
            {
                std::lock_guard<std::mutex> lock(mu);
                finished.emplace(pos, std::move(outcome));
            }
            cv.notify_one();
        }
    };

    const size_t pool_size =
        std::min(static_cast<size_t>(cfg.concurrency), std::max<size_t>(todo.size(), 1));
    std::vector<std::thread> pool;
    pool.reserve(pool_size);
    for (size_t i = 0; i < pool_size; ++i) pool.emplace_back(worker);

    size_t failed = 0;
    std::string io_failure;
    try {
        for (size_t pos = 0; pos < todo.size(); ++pos) {
            detail::InstanceOutcome outcome;
            {
                std::unique_lock<std::mutex> lock(mu);
                cv.wait(lock, [&] { return finished.count(pos) > 0; });
                outcome = std::move(finished.at(pos));
                finished.erase(pos);
            }
            const QaInstance& inst = data.instances[todo[pos]];
            if (outcome.record) {
                append_result(results_out, *outcome.record);
                results_out.flush();
                write_file((traces_dir / (detail::safe_file_stem(inst.id) + ".json")).string(),
                           outcome.trace.dump(2) + "\n");
            } else {
                ++failed;
                if (!failures_out.is_open()) failures_out.open(failures_path, std::ios::app);
                failures_out << nlohmann::json{{"id", inst.id},
                                               {"method", cfg.method},
                                               {"error", outcome.error}}
                                    .dump()
                             << '\n';
                failures_out.flush();
                err << inst.id << ": " << outcome.error << '\n';
            }
        }
    } catch (const std::exception& e) {
        io_failure = e.what();
        next_claim.store(todo.size());  // stop handing out work before joining
    }
    for (auto& t : pool) t.join();
    if (!io_failure.empty()) {
        err << io_failure << '\n';
        return kExitIo;
    }

    const size_t total_calls = gateway.ledger().count_since(ledger_start);
    out << "method " << cfg.method << ": " << (todo.size() - failed) << "/" << todo.size()
        << " instances succeeded (" << completed.size() << " resumed, " << failed
        << " failed), total API calls: " << total_calls << '\n';

    if (!todo.empty() &&
        static_cast<double>(failed) > cfg.failure_budget * static_cast<double>(todo.size()))
        return kExitBudget;
    return kExitOk;
}

inline int cmd_run(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    std::shared_ptr<CompletionBackend> backend;
    try {
        backend = make_backend(cfg.backend);
    } catch (const IoError& e) {
        err << e.what() << '\n';
        return kExitIo;
    } catch (const std::exception& e) {
        err << e.what() << '\n';
        return kExitFailure;
    }
    LlmGateway gateway(backend);
    return cmd_run(cfg, gateway, out, err);
}

inline int cmd_evaluate(const std::vector<std::string>& results_paths,
                        const std::string& dataset_path, const std::string& out_dir,
                        std::ostream& out, std::ostream& err) {
    Dataset data;
    std::vector<std::pair<std::string, std::vector<ResultRecord>>> loaded;
    try {
        data = detail::load_dataset_checked(dataset_path);
        for (const auto& path : results_paths)
            loaded.emplace_back(path, detail::load_results_checked(path));
    } catch (const IoError& e) {
        err << e.what() << '\n';
        return kExitIo;
    } catch (const std::exception& e) {
        err << e.what() << '\n';
        return kExitFailure;
    }

    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) {
        err << "cannot create output directory: " << out_dir << '\n';
        return kExitIo;
    }

    std::vector<EvalReport> reports;
    for (const auto& [path, results] : loaded) {
        EvalReport report;
        try {
            report = evaluate_run(data, results);
        } catch (const EvalError& e) {
            err << path << ": " << e.what() << '\n';
            return kExitFailure;
        }
        if (!report.missing_ids.empty() || !report.unknown_ids.empty()) {
            err << "id mismatch in " << path << ":" << '\n';
            for (const auto& id : report.missing_ids) err << "  missing result for " << id << '\n';
            for (const auto& id : report.unknown_ids) err << "  unknown id " << id << '\n';
            return kExitFailure;
        }
        reports.push_back(std::move(report));
    }

    std::set<std::string> used_stems;
    try {
        for (size_t i = 0; i < reports.size(); ++i) {
            std::string stem =
                detail::safe_file_stem(fs::path(loaded[i].first).stem().string());
            while (used_stems.count(stem)) stem += "_2";
            used_stems.insert(stem);
            const fs::path base = fs::path(out_dir) / stem;
            write_file(base.string() + ".report.json", report_to_json(reports[i]).dump(2) + "\n");
            write_file(base.string() + ".per_dataset.csv", per_dataset_csv(reports[i]));
            write_file(base.string() + ".buckets.csv", buckets_csv(reports[i]));
            write_file(base.string() + ".histogram.csv", precision_histogram_csv(data));
            out << reports[i].method << ": accuracy " << detail::format_double(reports[i].accuracy())
                << " (" << reports[i].correct << "/" << reports[i].evaluated
                << "), mean API calls " << detail::format_double(reports[i].api_calls_mean())
                << '\n';
        }
        if (reports.size() >= 2)
            write_file((fs::path(out_dir) / "side_by_side.csv").string(),
                       side_by_side_csv(reports));
    } catch (const std::exception& e) {
        err << e.what() << '\n';
        return kExitIo;
    }
    return kExitOk;
}

inline int cmd_analyze_conflicts(const std::string& results_a, const std::string& results_b,
                                 const std::string& dataset_path,
                                 const std::optional<std::string>& results_third,
                                 const std::string& out_dir, std::ostream& out,
                                 std::ostream& err) {
    Dataset data;
    std::vector<ResultRecord> a, b, third;
    try {
        data = detail::load_dataset_checked(dataset_path);
        a = detail::load_results_checked(results_a);
        b = detail::load_results_checked(results_b);
        if (results_third) third = detail::load_results_checked(*results_third);
    } catch (const IoError& e) {
        err << e.what() << '\n';
        return kExitIo;
    } catch (const std::exception& e) {
        err << e.what() << '\n';
        return kExitFailure;
    }

    ConflictPartition part;
    try {
        part = partition_conflicts(data, a, b);
    } catch (const EvalError& e) {
        err << e.what() << '\n';
        return kExitFailure;
    }
    if (part.compared() == 0) {
        err << "empty intersection: no ids shared by both results files" << '\n';
        return kExitFailure;
    }

    nlohmann::json report;
    report["first_method"] = part.first_method;
    report["second_method"] = part.second_method;
    report["compared"] = part.compared();
    report["skipped"] = part.skipped.size();
    report["both_correct"] = part.both_correct.size();
    report["both_wrong"] = part.both_wrong.size();
    report["first_only"] = part.first_only.size();
    report["second_only"] = part.second_only.size();
    report["conflict_rate"] = part.conflict_rate();
    report["first_share_of_conflicts"] = part.first_share();
    report["second_share_of_conflicts"] = part.second_share();

    out << "compared " << part.compared() << " instances (" << part.skipped.size() << " skipped)"
        << '\n';
    out << "both correct: " << part.both_correct.size() << '\n';
    out << "both wrong: " << part.both_wrong.size() << '\n';
    out << part.first_method << " only: " << part.first_only.size() << '\n';
    out << part.second_method << " only: " << part.second_only.size() << '\n';
    out << "conflict rate: " << detail::format_double(part.conflict_rate()) << '\n';
    out << part.first_method
        << " share of conflicts: " << detail::format_double(part.first_share()) << '\n';
    out << part.second_method
        << " share of conflicts: " << detail::format_double(part.second_share()) << '\n';

    if (results_third) {
        const auto by_id = index_results(third);
        const std::string method = third.empty() ? "third" : third.front().method;
        std::vector<std::string> conflicts = part.first_only;
        conflicts.insert(conflicts.end(), part.second_only.begin(), part.second_only.end());
        nlohmann::json subsets;
        auto emit = [&](const std::string& label, const std::vector<std::string>& ids) {
            const double acc = subset_accuracy(data, by_id, ids);
            subsets[label] = {{"size", ids.size()}, {"accuracy", acc}};
            out << method << " accuracy on " << label << ": " << detail::format_double(acc)
                << " (" << ids.size() << " instances)" << '\n';
        };
        emit("both_correct", part.both_correct);
        emit("both_wrong", part.both_wrong);
        emit("conflicts", conflicts);
        report["third_method"] = method;
        report["third_method_subsets"] = subsets;
    }

    if (!out_dir.empty()) {
        std::error_code ec;
        std::filesystem::create_directories(out_dir, ec);
        if (ec) {
            err << "cannot create output directory: " << out_dir << '\n';
            return kExitIo;
        }
        try {
            write_file((std::filesystem::path(out_dir) / "conflicts.json").string(),
                       report.dump(2) + "\n");
        } catch (const std::exception& e) {
            err << e.what() << '\n';
            return kExitIo;
        }
    }
    return kExitOk;
}

}  // namespace astute
