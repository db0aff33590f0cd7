#pragma once

#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "astute/data_model.hpp"
#include "astute/evaluation.hpp"
#include "astute/llm_gateway.hpp"
#include "astute/prompts.hpp"

namespace astute {

enum class BaselineKind { no_rag, vanilla_rag, genread, usc, self_route };

inline std::string to_string(BaselineKind kind) {
    switch (kind) {
        case BaselineKind::no_rag: return "no-rag";
        case BaselineKind::vanilla_rag: return "rag";
        case BaselineKind::genread: return "genread";
        case BaselineKind::usc: return "usc";
        case BaselineKind::self_route: return "self-route";
    }
    throw std::invalid_argument("unknown baseline kind");
}

inline BaselineKind baseline_from_string(const std::string& name) {
    if (name == "no-rag") return BaselineKind::no_rag;
    if (name == "rag") return BaselineKind::vanilla_rag;
    if (name == "genread") return BaselineKind::genread;
    if (name == "usc") return BaselineKind::usc;
    if (name == "self-route") return BaselineKind::self_route;
    throw std::invalid_argument("unknown method \"" + name + "\"");
}

struct BaselineParams {
    int usc_samples = 3;
    double usc_temperature = 0.7;
    std::string deferral_marker = "UNANSWERABLE";
    PassageOrder order = PassageOrder::reversed;
    double temperature = 0.0;
    int max_output_tokens = 1024;
    std::optional<std::uint64_t> seed;
};

// Which knowledge source produced the final answer, where the method chooses.
enum class Route { not_applicable, retrieved, internal };

struct BaselineResult {
    AnswerSpan final_answer;
    int api_calls = 0;
    Route route_taken = Route::not_applicable;
    std::vector<AnswerSpan> samples;  // USC only
    std::vector<TranscriptEntry> transcript;
};

// Majority vote over normalized answers; ties go to the earliest sample.
inline size_t usc_fallback_majority(const std::vector<AnswerSpan>& samples) {
    if (samples.empty()) throw std::invalid_argument("majority vote over zero samples");
    std::map<std::string, size_t> counts;
    std::map<std::string, size_t> first_seen;
    for (size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        const std::string key = normalize_text(s.extracted ? *s.extracted : s.raw_response);
        counts[key] += 1;
        first_seen.emplace(key, i);
    }
    size_t best_index = samples.size(), best_count = 0;
    for (const auto& [key, n] : counts) {
        const size_t first = first_seen[key];
        if (n > best_count || (n == best_count && first < best_index)) {
            best_count = n;
            best_index = first;
        }
    }
    return best_index;
}

namespace detail {

inline std::string external_context(const QaInstance& inst, PassageOrder order) {
    std::vector<ContextDocument> docs;
    docs.reserve(inst.passages.size());
    for (const auto& p : inst.passages) docs.push_back({p.text, SourceTag::external(p.origin)});
    return render_context(docs, order);
}

}  // namespace detail

class BaselineRunner {
public:
    explicit BaselineRunner(LlmGateway& gateway,
                            PromptLibrary prompts = PromptLibrary::builtin())
        : gateway_(gateway), prompts_(std::move(prompts)) {}

    BaselineResult run(BaselineKind kind, const QaInstance& inst,
                       const BaselineParams& params = {}) const {
        switch (kind) {
            case BaselineKind::no_rag: return run_no_rag(inst, params);
            case BaselineKind::vanilla_rag: return run_vanilla_rag(inst, params);
            case BaselineKind::genread: return run_genread(inst, params);
            case BaselineKind::usc: return run_usc(inst, params);
            case BaselineKind::self_route: return run_self_route(inst, params);
        }
        throw std::invalid_argument("unknown baseline kind");
    }

private:
    BaselineResult run_no_rag(const QaInstance& inst, const BaselineParams& params) const {
        BaselineResult r;
        const std::string prompt = render_qa_prompt(inst.question, prompts_);
        r.final_answer = extract_answer(call(r, "qa", prompt, params.temperature, params));
        return r;
    }

    BaselineResult run_vanilla_rag(const QaInstance& inst, const BaselineParams& params) const {
        if (inst.passages.empty())
            throw std::invalid_argument("vanilla RAG requires retrieved passages");
        BaselineResult r;
        const std::string prompt = render_rag_qa_prompt(
            inst.question, detail::external_context(inst, params.order), prompts_);
        r.final_answer = extract_answer(call(r, "rag qa", prompt, params.temperature, params));
        return r;
    }

    BaselineResult run_genread(const QaInstance& inst, const BaselineParams& params) const {
        BaselineResult r;
        const std::string gen_prompt = render_gen_prompt(inst.question, 1, prompts_);
        const std::string gen_completion =
            call(r, "generation", gen_prompt, params.temperature, params);
        const auto internal = parse_generated_passages(gen_completion, 1);

        std::vector<ContextDocument> docs;
        for (const auto& p : inst.passages) docs.push_back({p.text, SourceTag::external(p.origin)});
        docs.insert(docs.end(), internal.begin(), internal.end());

        const std::string prompt =
            docs.empty() ? render_qa_prompt(inst.question, prompts_)
                         : render_rag_qa_prompt(inst.question,
                                                render_context(docs, params.order), prompts_);
        r.final_answer = extract_answer(call(r, "qa", prompt, params.temperature, params));
        return r;
    }

    BaselineResult run_usc(const QaInstance& inst, const BaselineParams& params) const {
        if (params.usc_samples < 1) throw std::invalid_argument("usc_samples must be >= 1");
        BaselineResult r;
        const std::string prompt =
            inst.passages.empty()
                ? render_qa_prompt(inst.question, prompts_)
                : render_rag_qa_prompt(inst.question,
                                       detail::external_context(inst, params.order), prompts_);
        const std::uint64_t base_seed = params.seed.value_or(0);
        std::vector<std::string> raw;
        for (int i = 0; i < params.usc_samples; ++i) {
            const std::string completion =
                call(r, "sample " + std::to_string(i + 1), prompt, params.usc_temperature,
                     params, base_seed + static_cast<std::uint64_t>(i));
            r.samples.push_back(extract_answer(completion));
            raw.push_back(completion);
        }
        const std::string agg_prompt =
            render_usc_aggregate_prompt(inst.question, raw, prompts_);
        try {
            r.final_answer =
                extract_answer(call(r, "aggregation", agg_prompt, params.temperature, params));
        } catch (const GatewayError&) {
            // Aggregation is a convenience; fall back to a plain majority vote.
            r.final_answer = r.samples[usc_fallback_majority(r.samples)];
            r.transcript.push_back({"aggregation fallback", agg_prompt, "[majority vote]"});
        }
        return r;
    }

    BaselineResult run_self_route(const QaInstance& inst, const BaselineParams& params) const {
        if (inst.passages.empty())
            throw std::invalid_argument("self-route requires retrieved passages");
        BaselineResult r;
        const std::string routed_prompt =
            render_self_route_prompt(inst.question, detail::external_context(inst, params.order),
                                     params.deferral_marker, prompts_);
        const std::string routed =
            call(r, "routed qa", routed_prompt, params.temperature, params);
        if (routed.find(params.deferral_marker) != std::string::npos) {
            const std::string prompt = render_qa_prompt(inst.question, prompts_);
            r.final_answer =
                extract_answer(call(r, "fallback qa", prompt, params.temperature, params));
            r.route_taken = Route::internal;
        } else {
            r.final_answer = extract_answer(routed);
            r.route_taken = Route::retrieved;
        }
        return r;
    }

    std::string call(BaselineResult& r, const std::string& step, const std::string& prompt,
                     double temperature, const BaselineParams& params,
                     std::optional<std::uint64_t> seed = std::nullopt) const {
        const std::string completion =
            gateway_.complete({prompt, temperature, params.max_output_tokens,
                               seed ? seed : params.seed})
                .text;
        r.api_calls += 1;
        r.transcript.push_back({step, prompt, completion});
        return completion;
    }

    LlmGateway& gateway_;
    PromptLibrary prompts_;
};

}  // namespace astute
