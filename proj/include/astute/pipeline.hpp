#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "astute/data_model.hpp"
#include "astute/llm_gateway.hpp"
#include "astute/prompts.hpp"

namespace astute {

struct PipelineConfig {
    int iterations = 1;             // t in the call ladder; api calls come out as t + 1
    int max_internal_passages = 1;  // m-hat, the adaptive generation cap
    PassageOrder order = PassageOrder::reversed;
    double temperature = 0.0;
    int max_output_tokens = 1024;
    std::optional<std::uint64_t> seed;
};

struct PipelineResult {
    AnswerSpan final_answer;
    std::vector<ContextDocument> internal_passages;
    std::vector<ContextState> context_states;  // C_0 .. C_{t-1}
    int api_calls = 0;
    std::vector<TranscriptEntry> transcript;
    size_t ledger_begin = 0;
    size_t ledger_end = 0;
};

// Carries the step that failed plus everything completed before it, so a
// runner can log partial progress instead of discarding the instance.
class PipelineError : public std::runtime_error {
public:
    PipelineError(std::string step, PipelineResult partial, const std::string& message)
        : std::runtime_error("pipeline step '" + step + "' failed: " + message),
          step_(std::move(step)),
          partial_(std::move(partial)) {}

    const std::string& step() const { return step_; }
    const PipelineResult& partial() const { return partial_; }

private:
    std::string step_;
    PipelineResult partial_;
};

class AstutePipeline {
public:
    explicit AstutePipeline(LlmGateway& gateway,
                            PromptLibrary prompts = PromptLibrary::builtin())
        : gateway_(gateway), prompts_(std::move(prompts)) {}

    struct GenerationOutcome {
        std::string prompt;
        std::string completion;
        std::vector<ContextDocument> passages;
    };

    GenerationOutcome generate_internal(const std::string& question,
                                        const PipelineConfig& cfg) const {
        GenerationOutcome out;
        out.prompt = render_gen_prompt(question, cfg.max_internal_passages, prompts_);
        out.completion = gateway_.complete(request(out.prompt, cfg)).text;
        out.passages = parse_generated_passages(out.completion, cfg.max_internal_passages);
        return out;
    }

    // D_0 = E concatenated with I, externals keeping retrieval rank order.
    static ContextState build_initial_context(const std::vector<RetrievedPassage>& retrieved,
                                              const std::vector<ContextDocument>& internal,
                                              PassageOrder order) {
        std::vector<ContextDocument> docs;
        docs.reserve(retrieved.size() + internal.size());
        for (const auto& p : retrieved) docs.push_back({p.text, SourceTag::external(p.origin)});
        docs.insert(docs.end(), internal.begin(), internal.end());
        if (docs.empty()) throw std::invalid_argument("no context available");
        return ContextState::from_documents(std::move(docs), order, 0);
    }

    ContextState consolidate_step(const std::string& question, const ContextState& initial,
                                  const ContextState& last, int step_index,
                                  const PipelineConfig& cfg,
                                  std::vector<TranscriptEntry>* transcript = nullptr) const {
        const std::string prompt =
            render_consolidation_prompt(question, initial, last, prompts_);
        const std::string completion = gateway_.complete(request(prompt, cfg)).text;
        if (transcript)
            transcript->push_back(
                {"consolidation " + std::to_string(step_index), prompt, completion});
        return ContextState::from_completion(completion, step_index);
    }

    AnswerSpan finalize(const std::string& question, const ContextState& initial,
                        const std::optional<ContextState>& consolidated,
                        const PipelineConfig& cfg,
                        std::vector<TranscriptEntry>* transcript = nullptr) const {
        const std::string prompt =
            render_answer_prompt(question, initial, consolidated, prompts_);
        const std::string completion = gateway_.complete(request(prompt, cfg)).text;
        if (transcript) transcript->push_back({"finalization", prompt, completion});
        return extract_answer(completion);
    }

    PipelineResult run(const QaInstance& instance, const PipelineConfig& cfg) const {
        if (cfg.iterations < 1) throw std::invalid_argument("iterations must be >= 1");
        if (cfg.max_internal_passages < 1)
            throw std::invalid_argument("max_internal_passages must be >= 1");

        PipelineResult result;
        result.ledger_begin = gateway_.ledger().mark();

        std::string step = "generation";
        try {
            GenerationOutcome gen = generate_internal(instance.question, cfg);
            result.transcript.push_back({step, gen.prompt, gen.completion});
            result.internal_passages = std::move(gen.passages);

            step = "context assembly";
            result.context_states.push_back(
                build_initial_context(instance.passages, result.internal_passages, cfg.order));
            // copy: the vector grows below, which would invalidate a reference
            const ContextState initial = result.context_states.front();

            for (int j = 1; j < cfg.iterations; ++j) {
                step = "consolidation " + std::to_string(j);
                result.context_states.push_back(consolidate_step(
                    instance.question, initial, result.context_states.back(), j, cfg,
                    &result.transcript));
            }

            step = "finalization";
            std::optional<ContextState> consolidated;
            if (cfg.iterations > 1) consolidated = result.context_states.back();
            result.final_answer =
                finalize(instance.question, initial, consolidated, cfg, &result.transcript);
        } catch (const std::exception& e) {
            result.ledger_end = gateway_.ledger().mark();
            result.api_calls = static_cast<int>(result.ledger_end - result.ledger_begin);
            throw PipelineError(step, std::move(result), e.what());
        }

        result.ledger_end = gateway_.ledger().mark();
        result.api_calls = static_cast<int>(result.transcript.size());
        return result;
    }

    const PromptLibrary& prompts() const { return prompts_; }

private:
    CompletionRequest request(std::string prompt, const PipelineConfig& cfg) const {
        return {std::move(prompt), cfg.temperature, cfg.max_output_tokens, cfg.seed};
    }

    LlmGateway& gateway_;
    PromptLibrary prompts_;
};

inline nlohmann::json source_tag_to_json(const SourceTag& tag) {
    nlohmann::json j;
    j["kind"] = tag.kind == SourceKind::internal ? "internal" : "external";
    j["origin"] = tag.origin;
    if (!tag.lineage.empty()) j["lineage"] = tag.lineage;
    return j;
}

inline nlohmann::json context_state_to_json(const ContextState& state) {
    nlohmann::json j;
    j["step_index"] = state.step_index;
    j["rendered"] = state.rendered;
    j["documents"] = nlohmann::json::array();
    for (const auto& d : state.documents)
        j["documents"].push_back({{"text", d.text}, {"source", source_tag_to_json(d.source)}});
    return j;
}

// Full per-instance trace: enough to replay the run or diff two of them.
inline nlohmann::json pipeline_trace_json(const QaInstance& instance, const PipelineConfig& cfg,
                                          const PipelineResult& result) {
    nlohmann::json j;
    j["id"] = instance.id;
    j["question"] = instance.question;
    j["config"] = {
        {"iterations", cfg.iterations},
        {"max_internal_passages", cfg.max_internal_passages},
        {"order", cfg.order == PassageOrder::reversed ? "reversed" : "as-given"},
        {"temperature", cfg.temperature},
        {"max_output_tokens", cfg.max_output_tokens},
    };
    j["api_calls"] = result.api_calls;
    j["ledger"] = {{"begin", result.ledger_begin}, {"end", result.ledger_end}};
    j["transcript"] = nlohmann::json::array();
    for (const auto& t : result.transcript)
        j["transcript"].push_back(
            {{"step", t.step}, {"prompt", t.prompt}, {"completion", t.completion}});
    j["context_states"] = nlohmann::json::array();
    for (const auto& s : result.context_states) j["context_states"].push_back(context_state_to_json(s));
    j["internal_passages"] = nlohmann::json::array();
    for (const auto& p : result.internal_passages) j["internal_passages"].push_back(p.text);
    j["final"] = {{"raw", result.final_answer.raw_response}};
    if (result.final_answer.extracted) j["final"]["extracted"] = *result.final_answer.extracted;
    return j;
}

}  // namespace astute
