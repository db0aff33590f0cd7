#pragma once

#include <filesystem>
#include <istream>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "astute/text.hpp"

namespace astute {

// Diagnostic tag carried by RGB-style corpora; realistic corpora leave it unset.
enum class Polarity { positive, negative };

struct RetrievedPassage {
    int rank = 0;
    std::string origin;
    std::string text;
    std::optional<Polarity> polarity;

    bool operator==(const RetrievedPassage&) const = default;
};

struct QaInstance {
    std::string id;
    std::string dataset;
    std::string question;
    std::vector<std::string> gold_answers;
    std::vector<RetrievedPassage> passages;  // rank ascending, best first

    bool operator==(const QaInstance&) const = default;
};

struct Dataset {
    std::string name;
    std::vector<QaInstance> instances;

    bool operator==(const Dataset&) const = default;

    const QaInstance* find(const std::string& id) const {
        for (const auto& inst : instances)
            if (inst.id == id) return &inst;
        return nullptr;
    }
};

class DatasetError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Returns every violated invariant; empty means the instance is valid.
inline std::vector<std::string> validate_instance(const QaInstance& inst) {
    std::vector<std::string> violations;
    if (inst.id.empty()) violations.push_back("empty id");
    if (inst.question.empty()) violations.push_back("empty question");
    if (inst.gold_answers.empty()) violations.push_back("no gold answers");
    for (const auto& gold : inst.gold_answers)
        if (trim(gold).empty()) {
            violations.push_back("empty gold answer");
            break;
        }
    int prev_rank = 0;
    bool rank_order_ok = true;
    for (const auto& p : inst.passages) {
        if (p.rank <= prev_rank) rank_order_ok = false;
        prev_rank = p.rank;
    }
    if (!inst.passages.empty() && inst.passages.front().rank != 1)
        violations.push_back("ranks do not start at 1");
    if (!rank_order_ok) violations.push_back("ranks not strictly increasing");
    for (const auto& p : inst.passages)
        if (p.text.empty()) {
            violations.push_back("empty passage text");
            break;
        }
    return violations;
}

namespace detail {

inline QaInstance instance_from_json(const nlohmann::json& j, size_t line_no) {
    auto fail = [&](const std::string& msg) -> DatasetError {
        return DatasetError("line " + std::to_string(line_no) + ": " + msg);
    };
    if (!j.is_object()) throw fail("record is not an object");
    QaInstance inst;
    if (!j.contains("id") || !j["id"].is_string()) throw fail("missing id");
    inst.id = j["id"].get<std::string>();
    if (!j.contains("dataset") || !j["dataset"].is_string()) throw fail("missing dataset");
    inst.dataset = j["dataset"].get<std::string>();
    if (!j.contains("question") || !j["question"].is_string()) throw fail("missing question");
    inst.question = j["question"].get<std::string>();
    if (!j.contains("answers") || !j["answers"].is_array()) throw fail("missing gold answers");
    for (const auto& a : j["answers"]) {
        if (!a.is_string()) throw fail("gold answer is not a string");
        inst.gold_answers.push_back(a.get<std::string>());
    }
    if (j.contains("passages")) {
        if (!j["passages"].is_array()) throw fail("passages is not an array");
        for (const auto& pj : j["passages"]) {
            RetrievedPassage p;
            if (!pj.contains("rank") || !pj["rank"].is_number_integer()) throw fail("passage missing rank");
            p.rank = pj["rank"].get<int>();
            if (!pj.contains("origin") || !pj["origin"].is_string()) throw fail("passage missing origin");
            p.origin = pj["origin"].get<std::string>();
            if (!pj.contains("text") || !pj["text"].is_string()) throw fail("passage missing text");
            p.text = pj["text"].get<std::string>();
            if (pj.contains("polarity")) {
                const auto pol = pj["polarity"].get<std::string>();
                if (pol == "positive")
                    p.polarity = Polarity::positive;
                else if (pol == "negative")
                    p.polarity = Polarity::negative;
                else
                    throw fail("unknown polarity \"" + pol + "\"");
            }
            inst.passages.push_back(std::move(p));
        }
    }
    return inst;
}

inline nlohmann::json instance_to_json(const QaInstance& inst) {
    nlohmann::json j;
    j["id"] = inst.id;
    j["dataset"] = inst.dataset;
    j["question"] = inst.question;
    j["answers"] = inst.gold_answers;
    auto passages = nlohmann::json::array();
    for (const auto& p : inst.passages) {
        nlohmann::json pj;
        pj["rank"] = p.rank;
        pj["origin"] = p.origin;
        pj["text"] = p.text;
        if (p.polarity)
            pj["polarity"] = *p.polarity == Polarity::positive ? "positive" : "negative";
        passages.push_back(std::move(pj));
    }
    j["passages"] = std::move(passages);
    return j;
}

}  // namespace detail

// Parses JSONL (one QA record per line), validating every record.
inline Dataset parse_dataset(std::istream& in, const std::string& name) {
    Dataset ds;
    ds.name = name;
    std::unordered_set<std::string> seen_ids;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw DatasetError("line " + std::to_string(line_no) + ": malformed record (" + e.what() + ")");
        }
        QaInstance inst = detail::instance_from_json(j, line_no);
        auto violations = validate_instance(inst);
        if (!violations.empty())
            throw DatasetError("line " + std::to_string(line_no) + ": " + violations.front());
        if (!seen_ids.insert(inst.id).second)
            throw DatasetError("line " + std::to_string(line_no) + ": duplicate id \"" + inst.id + "\"");
        ds.instances.push_back(std::move(inst));
    }
    return ds;
}

inline Dataset load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DatasetError("cannot open dataset file: " + path);
    return parse_dataset(in, std::filesystem::path(path).stem().string());
}

inline std::string serialize_instance(const QaInstance& inst) {
    return detail::instance_to_json(inst).dump();
}

inline std::string serialize_dataset(const Dataset& ds) {
    std::string out;
    for (const auto& inst : ds.instances) {
        out += serialize_instance(inst);
        out += '\n';
    }
    return out;
}

inline void save_dataset(const Dataset& ds, const std::string& path) {
    write_file(path, serialize_dataset(ds));
}

// Keeps the first k negative-polarity passages in rank order, renumbered 1..k.
inline std::vector<RetrievedPassage> build_worst_case_context(const QaInstance& inst, int k) {
    if (k <= 0) throw std::invalid_argument("k must be positive");
    std::vector<RetrievedPassage> negatives;
    for (const auto& p : inst.passages)
        if (p.polarity && *p.polarity == Polarity::negative) negatives.push_back(p);
    if (static_cast<int>(negatives.size()) < k)
        throw DatasetError("only " + std::to_string(negatives.size()) + " negative passages available");
    negatives.resize(static_cast<size_t>(k));
    int rank = 1;
    for (auto& p : negatives) p.rank = rank++;
    return negatives;
}

}  // namespace astute
