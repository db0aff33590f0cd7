#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <regex>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "astute/text.hpp"

namespace astute {

enum class SourceKind { internal, external };
enum class PassageOrder { as_given, reversed };

struct SourceTag {
    SourceKind kind = SourceKind::external;
    std::string origin;        // "memory" for internal knowledge, URL/corpus label otherwise
    std::vector<int> lineage;  // 1-based positions in the initial context this document came from

    static SourceTag internal() { return {SourceKind::internal, "memory", {}}; }
    static SourceTag external(std::string origin) {
        return {SourceKind::external, std::move(origin), {}};
    }

    bool operator==(const SourceTag&) const = default;
};

struct ContextDocument {
    std::string text;
    SourceTag source;

    bool operator==(const ContextDocument&) const = default;
};

// Numbered document blocks inserted into prompts. Numbers always reflect the
// original list positions; reversed order only changes emission order.
inline std::string render_context(const std::vector<ContextDocument>& documents,
                                  PassageOrder order) {
    if (documents.empty()) throw std::invalid_argument("no documents to render");
    std::string out;
    const int n = static_cast<int>(documents.size());
    for (int step = 0; step < n; ++step) {
        const int idx = order == PassageOrder::reversed ? n - 1 - step : step;
        const auto& doc = documents[static_cast<size_t>(idx)];
        if (step > 0) out += '\n';
        out += "Document " + std::to_string(idx + 1) + " (source: ";
        if (doc.source.kind == SourceKind::internal) {
            out += "memory";
        } else {
            out += "external";
            if (!doc.source.origin.empty()) out += ", " + doc.source.origin;
        }
        out += "): " + doc.text;
    }
    return out;
}

namespace detail {

// "memory" | "external, x.com" | "external, documents 1, 4" | free variations.
inline bool parse_source_field(const std::string& field, SourceTag& tag) {
    std::vector<std::string> parts;
    size_t start = 0;
    while (start <= field.size()) {
        size_t comma = field.find(',', start);
        if (comma == std::string::npos) {
            parts.push_back(trim(field.substr(start)));
            break;
        }
        parts.push_back(trim(field.substr(start, comma - start)));
        start = comma + 1;
    }
    if (parts.empty()) return false;
    const std::string kind = to_lower_ascii(parts[0]);
    if (kind.find("memor") != std::string::npos || kind.find("internal") != std::string::npos) {
        tag = SourceTag::internal();
    } else if (kind.find("extern") != std::string::npos ||
               kind.find("retriev") != std::string::npos) {
        tag = SourceTag::external("");
    } else {
        return false;
    }
    bool in_lineage = false;
    for (size_t i = 1; i < parts.size(); ++i) {
        const std::string low = to_lower_ascii(parts[i]);
        if (!in_lineage && low.find("document") != std::string::npos) in_lineage = true;
        if (in_lineage) {
            int value = 0;
            bool in_number = false;
            for (char c : parts[i]) {
                if (c >= '0' && c <= '9') {
                    value = value * 10 + (c - '0');
                    in_number = true;
                } else if (in_number) {
                    tag.lineage.push_back(value);
                    value = 0;
                    in_number = false;
                }
            }
            if (in_number) tag.lineage.push_back(value);
        } else if (tag.kind == SourceKind::external && tag.origin.empty() && !parts[i].empty()) {
            tag.origin = parts[i];
        }
    }
    return true;
}

inline const std::regex& doc_header_re() {
    static const std::regex re(
        R"(^\s*[*#]*\s*Document\s+(\d+)\s*\(\s*[Ss]ource\s*:\s*([^)]*)\)\s*[:.]?\s*(.*)$)");
    return re;
}

}  // namespace detail

// Best-effort inverse of render_context; also reads the document blocks a
// consolidation completion announces. Unrecognized lines are treated as
// continuations of the current document.
inline std::vector<ContextDocument> parse_rendered_context(const std::string& rendered) {
    std::vector<ContextDocument> docs;
    for (const auto& line : split_lines(rendered)) {
        std::smatch m;
        SourceTag tag;
        if (std::regex_match(line, m, detail::doc_header_re()) &&
            detail::parse_source_field(m[2].str(), tag)) {
            docs.push_back({m[3].str(), std::move(tag)});
        } else if (!docs.empty()) {
            docs.back().text += '\n' + line;
        }
    }
    for (auto& d : docs) d.text = trim(d.text);
    return docs;
}

// The evolving <documents, sources> pair of a pipeline run. States built from
// documents render through render_context; consolidated states keep the model
// completion verbatim with best-effort parsed structure for tracing.
struct ContextState {
    std::vector<ContextDocument> documents;
    std::string rendered;
    int step_index = 0;

    static ContextState from_documents(std::vector<ContextDocument> docs, PassageOrder order,
                                       int step_index = 0) {
        ContextState state;
        state.rendered = render_context(docs, order);
        state.documents = std::move(docs);
        state.step_index = step_index;
        return state;
    }

    static ContextState from_completion(std::string completion, int step_index) {
        ContextState state;
        state.documents = parse_rendered_context(completion);
        state.rendered = std::move(completion);
        state.step_index = step_index;
        return state;
    }

    bool operator==(const ContextState&) const = default;
};

struct AnswerSpan {
    std::string raw_response;
    std::optional<std::string> extracted;

    bool operator==(const AnswerSpan&) const = default;
};

inline constexpr std::string_view kAnswerOpenTag = "<ANSWER>";
inline constexpr std::string_view kAnswerCloseTag = "</ANSWER>";

// First well-formed tag pair wins; a nested open tag inside the pair counts as
// malformed and yields no extraction.
inline AnswerSpan extract_answer(const std::string& completion) {
    AnswerSpan span{completion, std::nullopt};
    const auto open = completion.find(kAnswerOpenTag);
    if (open == std::string::npos) return span;
    const auto body_start = open + kAnswerOpenTag.size();
    const auto close = completion.find(kAnswerCloseTag, body_start);
    if (close == std::string::npos) return span;
    const std::string inner = completion.substr(body_start, close - body_start);
    if (inner.find(kAnswerOpenTag) != std::string::npos) return span;
    span.extracted = trim(inner);
    return span;
}

// Adaptive generation may decline with an explicit refusal phrase; only the
// leading window is checked so documents that merely mention the phrase pass.
inline bool is_generation_refusal(const std::string& completion) {
    const std::string window = to_lower_ascii(std::string_view(completion).substr(0, 200));
    return window.find("i don't know") != std::string::npos ||
           window.find("i do not know") != std::string::npos ||
           window.find("i don\xe2\x80\x99t know") != std::string::npos;
}

// Splits a generation completion into internally sourced passages. Numbered
// markers ("1.", "2)", "Document 3:") open a new passage; without markers the
// whole completion is a single passage.
inline std::vector<ContextDocument> parse_generated_passages(const std::string& completion,
                                                             int max_passages) {
    if (max_passages < 1) throw std::invalid_argument("max_passages must be >= 1");
    std::vector<ContextDocument> out;
    if (is_generation_refusal(completion)) return out;
    const std::string body = trim(completion);
    if (body.empty()) return out;
    if (max_passages == 1) {
        out.push_back({body, SourceTag::internal()});
        return out;
    }
    static const std::regex marker(
        R"(^\s*[*#]*\s*(?:[Dd]ocument\s+|[Pp]assage\s+)?(\d{1,3})\s*[.):]\s*(.*)$)");
    std::vector<std::string> blocks;
    bool seen_marker = false;
    for (const auto& line : split_lines(body)) {
        std::smatch m;
        if (std::regex_match(line, m, marker)) {
            blocks.push_back(m[2].str());
            seen_marker = true;
        } else if (seen_marker) {
            blocks.back() += '\n' + line;
        }
    }
    if (!seen_marker) blocks.push_back(body);
    for (auto& block : blocks) {
        const std::string text = trim(block);
        if (text.empty()) continue;
        if (static_cast<int>(out.size()) == max_passages) break;
        out.push_back({text, SourceTag::internal()});
    }
    return out;
}

namespace builtin_templates {

inline constexpr std::string_view gen =
    R"(Generate a document that provides accurate and relevant information to answer the given question. If the information is unclear or uncertain, explicitly state 'I don't know' to avoid any hallucinations.

Question: {question}
Document:
)";

inline constexpr std::string_view gen_multi =
    R"(Generate at most {max_passages} documents that provide accurate and relevant information to answer the given question, each covering distinct information. Number each document ("1.", "2.", ...). If fewer reliable documents exist, generate only those. If the information is unclear or uncertain, explicitly state 'I don't know' to avoid any hallucinations.

Question: {question}
Documents:
)";

inline constexpr std::string_view consolidate =
    R"(Task: Consolidate information from both your own memorized documents and externally retrieved documents in response to the given question.

* For documents that provide consistent information, cluster them together and summarize the key details into a single, concise document.

* For documents with conflicting information, separate them into distinct documents, ensuring each captures the unique perspective or data.

* Exclude any information irrelevant to the query.

For each new document created, clearly indicate:

* Whether the source was from memory or an external retrieval.

* The original document numbers for transparency.

Initial Context: {context_init}

Last Context: {context}

Question: {question}

New Context:
)";

inline constexpr std::string_view answer =
    R"(Task: Answer a given question using the consolidated information from both your own memorized documents and externally retrieved documents.

Step 1: Consolidate information

* For documents that provide consistent information, cluster them together and summarize the key details into a single, concise document.

* For documents with conflicting information, separate them into distinct documents, ensuring each captures the unique perspective or data.

* Exclude any information irrelevant to the query.

For each new document created, clearly indicate:

* Whether the source was from memory or an external retrieval.

* The original document numbers for transparency.

Step 2: Propose Answers and Assign Confidence

For each group of documents, propose a possible answer and assign a confidence score based on the credibility and agreement of the information.

Step 3: Select the Final Answer

After evaluating all groups, select the most accurate and well-supported answer.

Highlight your exact answer within <ANSWER> your answer </ANSWER>.

Initial Context: {context_init}

[Consolidated Context: {context}] # optional

Question: {question}

Answer:
)";

inline constexpr std::string_view qa_no_context =
    R"(Answer the given question.

Highlight your exact answer within <ANSWER> your answer </ANSWER>.

Question: {question}

Answer:
)";

inline constexpr std::string_view qa_with_context =
    R"(Answer the given question using the retrieved documents.

Highlight your exact answer within <ANSWER> your answer </ANSWER>.

Context: {context}

Question: {question}

Answer:
)";

inline constexpr std::string_view self_route =
    R"(Answer the given question using the retrieved documents. If the documents do not provide sufficient information to answer the question, reply with the single word {marker} instead of an answer.

If you answer, highlight your exact answer within <ANSWER> your answer </ANSWER>.

Context: {context}

Question: {question}

Answer:
)";

inline constexpr std::string_view usc_aggregate =
    R"(You are given a question and several candidate responses. Evaluate the responses, determine the answer that is most consistent across them, and state it.

Highlight your exact answer within <ANSWER> your answer </ANSWER>.

Question: {question}

{responses}

Answer:
)";

}  // namespace builtin_templates

// Versioned text assets with named placeholders. Defaults are compiled in;
// a directory of *.txt files can override individual templates.
struct PromptLibrary {
    std::string gen{builtin_templates::gen};
    std::string gen_multi{builtin_templates::gen_multi};
    std::string consolidate{builtin_templates::consolidate};
    std::string answer{builtin_templates::answer};
    std::string qa_no_context{builtin_templates::qa_no_context};
    std::string qa_with_context{builtin_templates::qa_with_context};
    std::string self_route{builtin_templates::self_route};
    std::string usc_aggregate{builtin_templates::usc_aggregate};

    static const PromptLibrary& builtin() {
        static const PromptLibrary lib;
        return lib;
    }

    static PromptLibrary from_dir(const std::string& dir) {
        PromptLibrary lib;
        auto load = [&](const char* file, std::string& slot) {
            const auto path = std::filesystem::path(dir) / file;
            if (std::filesystem::exists(path)) slot = read_file(path.string());
        };
        load("gen.txt", lib.gen);
        load("gen_multi.txt", lib.gen_multi);
        load("consolidate.txt", lib.consolidate);
        load("answer.txt", lib.answer);
        load("qa_no_context.txt", lib.qa_no_context);
        load("qa_with_context.txt", lib.qa_with_context);
        load("self_route.txt", lib.self_route);
        load("usc_aggregate.txt", lib.usc_aggregate);
        return lib;
    }
};

namespace detail {

// Single-pass expansion: placeholders are replaced left to right and the
// substituted text is never rescanned.
inline std::string render_template(std::string_view tpl,
                                   const std::map<std::string, std::string>& vars) {
    std::string out;
    out.reserve(tpl.size());
    size_t pos = 0;
    while (pos < tpl.size()) {
        const size_t open = tpl.find('{', pos);
        if (open == std::string_view::npos) {
            out.append(tpl.substr(pos));
            break;
        }
        const size_t close = tpl.find('}', open + 1);
        if (close == std::string_view::npos) {
            out.append(tpl.substr(pos));
            break;
        }
        const std::string name(tpl.substr(open + 1, close - open - 1));
        const auto it = vars.find(name);
        if (it == vars.end()) {
            out.append(tpl.substr(pos, close + 1 - pos));
            pos = close + 1;
            continue;
        }
        out.append(tpl.substr(pos, open - pos));
        out.append(it->second);
        pos = close + 1;
    }
    return out;
}

inline constexpr std::string_view kOptionalConsolidatedBlock =
    "[Consolidated Context: {context}] # optional\n\n";

}  // namespace detail

inline bool has_unfilled_placeholders(std::string_view rendered) {
    for (std::string_view name : {"{question}", "{context}", "{context_init}", "{max_passages}",
                                  "{responses}", "{marker}"})
        if (rendered.find(name) != std::string_view::npos) return true;
    return false;
}

inline std::string render_gen_prompt(const std::string& question, int max_passages,
                                     const PromptLibrary& lib = PromptLibrary::builtin()) {
    if (trim(question).empty()) throw std::invalid_argument("question must be non-empty");
    if (max_passages < 1) throw std::invalid_argument("max_passages must be >= 1");
    if (max_passages == 1) return detail::render_template(lib.gen, {{"question", question}});
    return detail::render_template(
        lib.gen_multi, {{"question", question}, {"max_passages", std::to_string(max_passages)}});
}

inline std::string render_consolidation_prompt(const std::string& question,
                                               const ContextState& initial,
                                               const ContextState& last,
                                               const PromptLibrary& lib = PromptLibrary::builtin()) {
    return detail::render_template(lib.consolidate, {{"question", question},
                                                     {"context_init", initial.rendered},
                                                     {"context", last.rendered}});
}

inline std::string render_answer_prompt(const std::string& question, const ContextState& initial,
                                        const std::optional<ContextState>& consolidated,
                                        const PromptLibrary& lib = PromptLibrary::builtin()) {
    std::string tpl = lib.answer;
    const auto block = tpl.find(detail::kOptionalConsolidatedBlock);
    if (block != std::string::npos) {
        if (consolidated)
            tpl.replace(block, detail::kOptionalConsolidatedBlock.size(),
                        "Consolidated Context: {context}\n\n");
        else
            tpl.erase(block, detail::kOptionalConsolidatedBlock.size());
    }
    std::map<std::string, std::string> vars{{"question", question},
                                            {"context_init", initial.rendered}};
    if (consolidated) vars.emplace("context", consolidated->rendered);
    return detail::render_template(tpl, vars);
}

inline std::string render_qa_prompt(const std::string& question,
                                    const PromptLibrary& lib = PromptLibrary::builtin()) {
    if (trim(question).empty()) throw std::invalid_argument("question must be non-empty");
    return detail::render_template(lib.qa_no_context, {{"question", question}});
}

inline std::string render_rag_qa_prompt(const std::string& question, const std::string& context,
                                        const PromptLibrary& lib = PromptLibrary::builtin()) {
    if (trim(question).empty()) throw std::invalid_argument("question must be non-empty");
    return detail::render_template(lib.qa_with_context,
                                   {{"question", question}, {"context", context}});
}

inline std::string render_self_route_prompt(const std::string& question, const std::string& context,
                                            const std::string& marker,
                                            const PromptLibrary& lib = PromptLibrary::builtin()) {
    return detail::render_template(
        lib.self_route, {{"question", question}, {"context", context}, {"marker", marker}});
}

inline std::string render_usc_aggregate_prompt(const std::string& question,
                                               const std::vector<std::string>& responses,
                                               const PromptLibrary& lib = PromptLibrary::builtin()) {
    std::string block;
    for (size_t i = 0; i < responses.size(); ++i) {
        if (i > 0) block += "\n\n";
        block += "Response " + std::to_string(i + 1) + ":\n" + responses[i];
    }
    return detail::render_template(lib.usc_aggregate,
                                   {{"question", question}, {"responses", block}});
}

}  // namespace astute
