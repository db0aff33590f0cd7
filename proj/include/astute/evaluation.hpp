#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "astute/data_model.hpp"
#include "astute/text.hpp"

namespace astute {

class EvalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// One line of a run's results file.
struct ResultRecord {
    std::string id;
    std::string method;
    std::optional<std::string> extracted;
    std::string raw;
    int api_calls = 0;

    bool operator==(const ResultRecord&) const = default;
};

inline nlohmann::json result_to_json(const ResultRecord& r) {
    nlohmann::json j;
    j["id"] = r.id;
    j["method"] = r.method;
    if (r.extracted)
        j["extracted"] = *r.extracted;
    else
        j["extracted"] = nullptr;
    j["raw"] = r.raw;
    j["api_calls"] = r.api_calls;
    return j;
}

inline ResultRecord result_from_json(const nlohmann::json& j) {
    ResultRecord r;
    r.id = j.at("id").get<std::string>();
    r.method = j.at("method").get<std::string>();
    if (j.contains("extracted") && !j["extracted"].is_null())
        r.extracted = j["extracted"].get<std::string>();
    r.raw = j.value("raw", std::string());
    r.api_calls = j.value("api_calls", 0);
    return r;
}

inline std::vector<ResultRecord> parse_results(std::istream& in) {
    std::vector<ResultRecord> out;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        try {
            out.push_back(result_from_json(nlohmann::json::parse(line)));
        } catch (const std::exception& e) {
            throw EvalError("line " + std::to_string(line_no) + ": malformed result (" +
                            e.what() + ")");
        }
    }
    return out;
}

inline std::vector<ResultRecord> load_results(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw EvalError("cannot open results file: " + path);
    return parse_results(in);
}

inline void append_result(std::ostream& out, const ResultRecord& r) {
    out << result_to_json(r).dump() << '\n';
}

// ---- answer containment -----------------------------------------------------

inline std::string normalize_text(std::string_view text) {
    return trim(collapse_whitespace(to_lower_ascii(text)));
}

// Gold answers additionally shed surrounding punctuation so "1066." matches.
inline std::string normalize_gold(std::string_view gold) {
    std::string s = normalize_text(gold);
    size_t begin = 0, end = s.size();
    while (begin < end && std::ispunct(static_cast<unsigned char>(s[begin]))) ++begin;
    while (end > begin && std::ispunct(static_cast<unsigned char>(s[end - 1]))) --end;
    return trim(std::string_view(s).substr(begin, end - begin));
}

inline bool contains_answer(std::string_view text, const std::vector<std::string>& golds) {
    const std::string hay = normalize_text(text);
    for (const auto& gold : golds) {
        const std::string needle = normalize_gold(gold);
        if (needle.empty()) continue;  // never let a vacuous gold match everything
        if (hay.find(needle) != std::string::npos) return true;
    }
    return false;
}

inline bool is_correct(const std::optional<std::string>& extracted, const std::string& raw,
                       const std::vector<std::string>& golds) {
    return contains_answer(extracted ? *extracted : raw, golds);
}

inline bool is_correct(const ResultRecord& r, const QaInstance& inst) {
    return is_correct(r.extracted, r.raw, inst.gold_answers);
}

// ---- retrieval precision ----------------------------------------------------

struct RetrievalPrecision {
    int hits = 0;
    int total = 0;

    double value() const { return total == 0 ? 0.0 : static_cast<double>(hits) / total; }

    bool operator==(const RetrievalPrecision&) const = default;
};

inline RetrievalPrecision retrieval_precision(const QaInstance& inst) {
    RetrievalPrecision p;
    p.total = static_cast<int>(inst.passages.size());
    for (const auto& passage : inst.passages)
        if (contains_answer(passage.text, inst.gold_answers)) ++p.hits;
    return p;
}

// ---- precision buckets ------------------------------------------------------

// Edges {0, .2, .4, .6, .8, 1} produce {0}, (0,0.2], (0.2,0.4], ... (0.8,1]:
// the first bucket isolates instances where retrieval found nothing at all.
inline const std::vector<double>& default_bucket_edges() {
    static const std::vector<double> edges{0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
    return edges;
}

struct PrecisionBucket {
    std::string label;
    double lower = 0.0;
    double upper = 0.0;
    bool zero_only = false;
    std::vector<std::string> ids;

    size_t count() const { return ids.size(); }
};

namespace detail {

inline std::string format_edge(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

inline void check_bucket_edges(const std::vector<double>& edges) {
    if (edges.size() < 2) throw EvalError("bucket edges need at least two values");
    if (edges.front() != 0.0) throw EvalError("bucket edges must start at 0");
    if (edges.back() != 1.0) throw EvalError("bucket edges must end at 1");
    for (size_t i = 1; i < edges.size(); ++i)
        if (edges[i] <= edges[i - 1]) throw EvalError("bucket edges must be strictly increasing");
}

}  // namespace detail

inline std::vector<PrecisionBucket> make_buckets(const std::vector<double>& edges) {
    detail::check_bucket_edges(edges);
    std::vector<PrecisionBucket> buckets;
    buckets.push_back({"{0}", 0.0, 0.0, true, {}});
    for (size_t i = 1; i < edges.size(); ++i) {
        PrecisionBucket b;
        b.lower = edges[i - 1];
        b.upper = edges[i];
        b.label = "(" + detail::format_edge(b.lower) + "," + detail::format_edge(b.upper) + "]";
        buckets.push_back(std::move(b));
    }
    return buckets;
}

inline size_t bucket_index(double precision, const std::vector<double>& edges) {
    if (precision < 0.0 || precision > 1.0) throw EvalError("precision out of range");
    if (precision == 0.0) return 0;
    for (size_t i = 1; i < edges.size(); ++i)
        if (precision <= edges[i]) return i;
    return edges.size() - 1;  // unreachable with valid edges, kept for safety
}

inline std::vector<PrecisionBucket> bucket_by_precision(
    const Dataset& data, const std::vector<double>& edges = default_bucket_edges()) {
    auto buckets = make_buckets(edges);
    for (const auto& inst : data.instances)
        buckets[bucket_index(retrieval_precision(inst).value(), edges)].ids.push_back(inst.id);
    return buckets;
}

// ---- worst-case stress sets -------------------------------------------------

// Every instance keeps only its first k negative passages; retrieval precision
// of the result is zero by construction.
inline Dataset worst_case_dataset(const Dataset& data, int k) {
    Dataset out;
    out.name = data.name + "-worst" + std::to_string(k);
    out.instances.reserve(data.instances.size());
    for (const auto& inst : data.instances) {
        QaInstance copy = inst;
        copy.passages = build_worst_case_context(inst, k);
        out.instances.push_back(std::move(copy));
    }
    return out;
}

// ---- conflict partition -----------------------------------------------------

// Splits instances by agreement between two methods' correctness; "conflicts"
// are the instances exactly one method gets right.
struct ConflictPartition {
    std::string first_method;
    std::string second_method;
    std::vector<std::string> both_correct;
    std::vector<std::string> both_wrong;
    std::vector<std::string> first_only;
    std::vector<std::string> second_only;
    std::vector<std::string> skipped;  // ids missing from either result set

    size_t compared() const {
        return both_correct.size() + both_wrong.size() + first_only.size() + second_only.size();
    }
    size_t conflicts() const { return first_only.size() + second_only.size(); }
    double conflict_rate() const {
        return compared() == 0 ? 0.0 : static_cast<double>(conflicts()) / compared();
    }
    double first_share() const {
        return conflicts() == 0 ? 0.0 : static_cast<double>(first_only.size()) / conflicts();
    }
    double second_share() const {
        return conflicts() == 0 ? 0.0 : static_cast<double>(second_only.size()) / conflicts();
    }
};

inline std::map<std::string, ResultRecord> index_results(const std::vector<ResultRecord>& results) {
    std::map<std::string, ResultRecord> by_id;
    for (const auto& r : results) {
        if (!by_id.emplace(r.id, r).second)
            throw EvalError("duplicate result id \"" + r.id + "\"");
    }
    return by_id;
}

inline ConflictPartition partition_conflicts(const Dataset& data,
                                             const std::vector<ResultRecord>& first,
                                             const std::vector<ResultRecord>& second) {
    const auto a = index_results(first);
    const auto b = index_results(second);
    ConflictPartition part;
    if (!first.empty()) part.first_method = first.front().method;
    if (!second.empty()) part.second_method = second.front().method;
    for (const auto& inst : data.instances) {
        const auto ia = a.find(inst.id);
        const auto ib = b.find(inst.id);
        if (ia == a.end() || ib == b.end()) {
            part.skipped.push_back(inst.id);
            continue;
        }
        const bool ca = is_correct(ia->second, inst);
        const bool cb = is_correct(ib->second, inst);
        if (ca && cb)
            part.both_correct.push_back(inst.id);
        else if (!ca && !cb)
            part.both_wrong.push_back(inst.id);
        else if (ca)
            part.first_only.push_back(inst.id);
        else
            part.second_only.push_back(inst.id);
    }
    return part;
}

inline double subset_accuracy(const Dataset& data,
                              const std::map<std::string, ResultRecord>& results,
                              const std::vector<std::string>& ids) {
    if (ids.empty()) return 0.0;
    size_t correct = 0, seen = 0;
    for (const auto& id : ids) {
        const QaInstance* inst = data.find(id);
        const auto it = results.find(id);
        if (!inst || it == results.end()) continue;
        ++seen;
        if (is_correct(it->second, *inst)) ++correct;
    }
    return seen == 0 ? 0.0 : static_cast<double>(correct) / seen;
}

// ---- run report ---------------------------------------------------------

struct SliceStats {
    size_t total = 0;
    size_t correct = 0;

    double accuracy() const { return total == 0 ? 0.0 : static_cast<double>(correct) / total; }

    bool operator==(const SliceStats&) const = default;
};

struct BucketStats {
    std::string label;
    size_t population = 0;  // dataset instances in this precision range
    SliceStats stats;       // over evaluated instances only

    bool operator==(const BucketStats&) const = default;
};

struct EvalReport {
    std::string method;
    std::string dataset;
    size_t total_instances = 0;
    size_t evaluated = 0;
    size_t answered = 0;  // results with an extracted answer span
    size_t correct = 0;
    long long api_calls_total = 0;
    std::map<std::string, SliceStats> per_dataset;
    std::vector<BucketStats> buckets;
    std::vector<std::string> missing_ids;  // dataset ids without a result
    std::vector<std::string> unknown_ids;  // result ids not in the dataset

    double accuracy() const { return evaluated == 0 ? 0.0 : static_cast<double>(correct) / evaluated; }
    double api_calls_mean() const {
        return evaluated == 0 ? 0.0 : static_cast<double>(api_calls_total) / evaluated;
    }
};

inline EvalReport evaluate_run(const Dataset& data, const std::vector<ResultRecord>& results,
                               const std::vector<double>& edges = default_bucket_edges()) {
    const auto by_id = index_results(results);
    EvalReport report;
    report.dataset = data.name;
    if (!results.empty()) report.method = results.front().method;
    report.total_instances = data.instances.size();

    auto bucket_templates = make_buckets(edges);
    report.buckets.reserve(bucket_templates.size());
    for (const auto& b : bucket_templates) report.buckets.push_back({b.label, 0, {}});

    std::set<std::string> dataset_ids;
    for (const auto& inst : data.instances) {
        dataset_ids.insert(inst.id);
        const size_t bucket = bucket_index(retrieval_precision(inst).value(), edges);
        report.buckets[bucket].population += 1;
        const auto it = by_id.find(inst.id);
        if (it == by_id.end()) {
            report.missing_ids.push_back(inst.id);
            continue;
        }
        const ResultRecord& r = it->second;
        const bool correct = is_correct(r, inst);
        report.evaluated += 1;
        report.answered += r.extracted ? 1 : 0;
        report.correct += correct ? 1 : 0;
        report.api_calls_total += r.api_calls;
        auto& slice = report.per_dataset[inst.dataset];
        slice.total += 1;
        slice.correct += correct ? 1 : 0;
        auto& bslice = report.buckets[bucket].stats;
        bslice.total += 1;
        bslice.correct += correct ? 1 : 0;
    }
    for (const auto& r : results)
        if (!dataset_ids.count(r.id)) report.unknown_ids.push_back(r.id);
    return report;
}

inline nlohmann::json report_to_json(const EvalReport& r) {
    nlohmann::json j;
    j["method"] = r.method;
    j["dataset"] = r.dataset;
    j["total_instances"] = r.total_instances;
    j["evaluated"] = r.evaluated;
    j["answered"] = r.answered;
    j["correct"] = r.correct;
    j["accuracy"] = r.accuracy();
    j["api_calls_total"] = r.api_calls_total;
    j["api_calls_mean"] = r.api_calls_mean();
    j["per_dataset"] = nlohmann::json::object();
    for (const auto& [name, s] : r.per_dataset)
        j["per_dataset"][name] = {
            {"total", s.total}, {"correct", s.correct}, {"accuracy", s.accuracy()}};
    j["buckets"] = nlohmann::json::array();
    for (const auto& b : r.buckets)
        j["buckets"].push_back({{"label", b.label},
                                {"population", b.population},
                                {"evaluated", b.stats.total},
                                {"correct", b.stats.correct},
                                {"accuracy", b.stats.accuracy()}});
    j["missing_ids"] = r.missing_ids;
    j["unknown_ids"] = r.unknown_ids;
    return j;
}

inline EvalReport report_from_json(const nlohmann::json& j) {
    EvalReport r;
    r.method = j.at("method").get<std::string>();
    r.dataset = j.at("dataset").get<std::string>();
    r.total_instances = j.at("total_instances").get<size_t>();
    r.evaluated = j.at("evaluated").get<size_t>();
    r.answered = j.at("answered").get<size_t>();
    r.correct = j.at("correct").get<size_t>();
    r.api_calls_total = j.at("api_calls_total").get<long long>();
    for (const auto& [name, s] : j.at("per_dataset").items())
        r.per_dataset[name] = {s.at("total").get<size_t>(), s.at("correct").get<size_t>()};
    for (const auto& b : j.at("buckets"))
        r.buckets.push_back({b.at("label").get<std::string>(),
                             b.at("population").get<size_t>(),
                             {b.at("evaluated").get<size_t>(), b.at("correct").get<size_t>()}});
    r.missing_ids = j.value("missing_ids", std::vector<std::string>{});
    r.unknown_ids = j.value("unknown_ids", std::vector<std::string>{});
    return r;
}

// ---- CSV emitters -------------------------------------------------------

namespace detail {

inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string quoted = "\"";
    for (char c : s) {
        if (c == '"') quoted += '"';
        quoted += c;
    }
    return quoted + "\"";
}

inline std::string csv_number(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

}  // namespace detail

inline std::string per_dataset_csv(const EvalReport& r) {
    std::string out = "dataset,total,correct,accuracy\n";
    for (const auto& [name, s] : r.per_dataset)
        out += detail::csv_field(name) + "," + std::to_string(s.total) + "," +
               std::to_string(s.correct) + "," + detail::csv_number(s.accuracy()) + "\n";
    return out;
}

inline std::string buckets_csv(const EvalReport& r) {
    std::string out = "bucket,population,evaluated,correct,accuracy\n";
    for (const auto& b : r.buckets)
        out += detail::csv_field(b.label) + "," + std::to_string(b.population) + "," +
               std::to_string(b.stats.total) + "," + std::to_string(b.stats.correct) + "," +
               detail::csv_number(b.stats.accuracy()) + "\n";
    return out;
}

inline std::string precision_histogram_csv(const Dataset& data,
                                           const std::vector<double>& edges = default_bucket_edges()) {
    const auto buckets = bucket_by_precision(data, edges);
    size_t total = 0;
    for (const auto& b : buckets) total += b.count();
    std::string out = "bucket,count,share\n";
    for (const auto& b : buckets) {
        const double share = total == 0 ? 0.0 : static_cast<double>(b.count()) / total;
        out += detail::csv_field(b.label) + "," + std::to_string(b.count()) + "," +
               detail::csv_number(share) + "\n";
    }
    return out;
}

inline std::string side_by_side_csv(const std::vector<EvalReport>& reports) {
    std::string out = "metric";
    for (const auto& r : reports) out += "," + detail::csv_field(r.method);
    out += "\n";
    auto row = [&](const std::string& name, auto getter) {
        out += detail::csv_field(name);
        for (const auto& r : reports) out += "," + getter(r);
        out += "\n";
    };
    row("evaluated", [](const EvalReport& r) { return std::to_string(r.evaluated); });
    row("correct", [](const EvalReport& r) { return std::to_string(r.correct); });
    row("accuracy", [](const EvalReport& r) { return detail::csv_number(r.accuracy()); });
    row("api_calls_mean",
        [](const EvalReport& r) { return detail::csv_number(r.api_calls_mean()); });
    std::set<std::string> names;
    for (const auto& r : reports)
        for (const auto& [name, s] : r.per_dataset) names.insert(name);
    for (const auto& name : names)
        row("accuracy[" + name + "]", [&](const EvalReport& r) {
            const auto it = r.per_dataset.find(name);
            return it == r.per_dataset.end() ? std::string("") :
                                               detail::csv_number(it->second.accuracy());
        });
    for (size_t i = 0; !reports.empty() && i < reports.front().buckets.size(); ++i)
        row("accuracy" + reports.front().buckets[i].label, [&](const EvalReport& r) {
            return i < r.buckets.size() ? detail::csv_number(r.buckets[i].stats.accuracy())
                                        : std::string("");
        });
    return out;
}

}  // namespace astute
