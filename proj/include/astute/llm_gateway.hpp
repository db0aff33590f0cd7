#pragma once

#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "astute/text.hpp"

namespace astute {

struct CompletionRequest {
    std::string prompt;
    double temperature = 0.0;
    int max_output_tokens = 1024;
    std::optional<std::uint64_t> seed;  // honored by backends that support seeded sampling
};

struct Completion {
    std::string text;
    std::string backend_label;
    std::chrono::microseconds latency{0};
    bool truncated = false;
};

class GatewayError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Transient transport fault; the gateway retries these.
class TransportError : public GatewayError {
public:
    using GatewayError::GatewayError;
};

// Provider declined to complete; a model decision, never retried.
class RefusalError : public GatewayError {
public:
    using GatewayError::GatewayError;
};

// Scripted backend has no entry for the prompt; a test-setup fault.
class ScriptMissError : public GatewayError {
public:
    using GatewayError::GatewayError;
};

// One prompt/completion exchange as recorded by orchestration code.
struct TranscriptEntry {
    std::string step;
    std::string prompt;
    std::string completion;

    bool operator==(const TranscriptEntry&) const = default;
};

struct LedgerEntry {
    std::string request_summary;
    std::string completion_summary;
    std::chrono::system_clock::time_point at;
    bool refused = false;
};

// Append-only record of completed calls. Thread-safe.
class CallLedger {
public:
    size_t count() const {
        std::lock_guard lock(mu_);
        return entries_.size();
    }

    // Marker for counting a later delta; pass to count_since.
    size_t mark() const { return count(); }

    size_t count_since(size_t marker) const {
        const size_t now = count();
        return now >= marker ? now - marker : 0;
    }

    std::vector<LedgerEntry> snapshot() const {
        std::lock_guard lock(mu_);
        return entries_;
    }

    void append(const CompletionRequest& req, const std::string& completion_summary, bool refused) {
        std::lock_guard lock(mu_);
        entries_.push_back({summarize(req.prompt), completion_summary,
                            std::chrono::system_clock::now(), refused});
    }

    static std::string summarize(std::string_view text) {
        std::string s(text.substr(0, 80));
        for (char& c : s)
            if (c == '\n' || c == '\r') c = ' ';
        if (text.size() > 80) s += "...";
        return s;
    }

private:
    mutable std::mutex mu_;
    std::vector<LedgerEntry> entries_;
};

class CompletionBackend {
public:
    virtual ~CompletionBackend() = default;
    virtual Completion complete(const CompletionRequest& req) = 0;
    virtual std::string label() const = 0;
};

enum class ScriptMatch { normalized, exact };  // normalized = trailing whitespace trimmed

// Deterministic playback backend: a pure function of the request.
class ScriptedBackend : public CompletionBackend {
public:
    explicit ScriptedBackend(ScriptMatch mode = ScriptMatch::normalized) : mode_(mode) {}

    void add(const std::string& prompt, const std::string& response) {
        entries_[key(prompt, std::nullopt)] = Entry{response, false};
    }

    void add_sampled(const std::string& prompt, std::uint64_t seed, const std::string& response) {
        entries_[key(prompt, seed)] = Entry{response, false};
    }

    void add_refusal(const std::string& prompt, const std::string& message) {
        entries_[key(prompt, std::nullopt)] = Entry{message, true};
    }

    Completion complete(const CompletionRequest& req) override {
        const Entry* entry = nullptr;
        if (req.seed) {
            auto it = entries_.find(key(req.prompt, req.seed));
            if (it != entries_.end()) entry = &it->second;
        }
        if (!entry) {
            auto it = entries_.find(key(req.prompt, std::nullopt));
            if (it != entries_.end()) entry = &it->second;
        }
        if (!entry)
            throw ScriptMissError("no script entry for prompt: " + CallLedger::summarize(req.prompt));
        if (entry->refusal) throw RefusalError(entry->text);
        return Completion{entry->text, label(), std::chrono::microseconds{0}, false};
    }

    std::string label() const override { return "scripted"; }

    size_t size() const { return entries_.size(); }

    // Script file schema: {"match": "normalized"|"exact", "entries": [
    //   {"prompt": "...", "response": "..."} | {"prompt": "...", "refusal": "..."}
    //   | {"prompt": "...", "seed": N, "response": "..."} ]}
    static std::shared_ptr<ScriptedBackend> from_file(const std::string& path) {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(read_file(path));
        } catch (const nlohmann::json::parse_error& e) {
            throw GatewayError("malformed script file " + path + ": " + e.what());
        }
        const auto mode = j.value("match", std::string("normalized")) == "exact"
                              ? ScriptMatch::exact
                              : ScriptMatch::normalized;
        auto backend = std::make_shared<ScriptedBackend>(mode);
        for (const auto& e : j.value("entries", nlohmann::json::array())) {
            const auto prompt = e.at("prompt").get<std::string>();
            if (e.contains("refusal")) {
                backend->add_refusal(prompt, e["refusal"].get<std::string>());
            } else if (e.contains("seed")) {
                backend->add_sampled(prompt, e["seed"].get<std::uint64_t>(),
                                     e.at("response").get<std::string>());
            } else {
                backend->add(prompt, e.at("response").get<std::string>());
            }
        }
        return backend;
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["match"] = mode_ == ScriptMatch::exact ? "exact" : "normalized";
        auto entries = nlohmann::json::array();
        for (const auto& [k, e] : entries_) {
            nlohmann::json ej;
            ej["prompt"] = k.substr(k.find('\x1f') + 1);
            if (k[0] == 's') ej["seed"] = std::stoull(k.substr(1, k.find('\x1f') - 1));
            if (e.refusal)
                ej["refusal"] = e.text;
            else
                ej["response"] = e.text;
            entries.push_back(std::move(ej));
        }
        j["entries"] = std::move(entries);
        return j;
    }

private:
    struct Entry {
        std::string text;
        bool refusal = false;
    };

    std::string key(const std::string& prompt, std::optional<std::uint64_t> seed) const {
        std::string norm = mode_ == ScriptMatch::normalized ? trim_trailing(prompt) : prompt;
        std::string prefix = seed ? "s" + std::to_string(*seed) : "p";
        return prefix + '\x1f' + norm;
    }

    ScriptMatch mode_;
    std::map<std::string, Entry> entries_;
};

// One keyed section of the provider config file.
struct ProviderConfig {
    std::string name;
    std::string base_url;
    std::string model;
    std::string api_key_env;  // credentials only come from the environment
    int timeout_seconds = 60;
};

inline ProviderConfig load_provider_config(const std::string& path, const std::string& name) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw GatewayError("malformed provider config " + path + ": " + e.what());
    }
    if (!j.contains(name))
        throw GatewayError("provider config has no section \"" + name + "\"");
    const auto& s = j[name];
    ProviderConfig cfg;
    cfg.name = name;
    cfg.base_url = s.at("base_url").get<std::string>();
    cfg.model = s.at("model").get<std::string>();
    cfg.api_key_env = s.value("api_key_env", std::string());
    cfg.timeout_seconds = s.value("timeout_seconds", 60);
    return cfg;
}

// Generic chat-completions client over HTTP. One connection per call, so a
// single instance may serve concurrent workers.
class HttpBackend : public CompletionBackend {
public:
    explicit HttpBackend(ProviderConfig cfg) : cfg_(std::move(cfg)) {
        const auto scheme_end = cfg_.base_url.find("://");
        if (scheme_end == std::string::npos)
            throw GatewayError("base_url must include a scheme: " + cfg_.base_url);
        const auto path_start = cfg_.base_url.find('/', scheme_end + 3);
        if (path_start == std::string::npos) {
            host_ = cfg_.base_url;
        } else {
            host_ = cfg_.base_url.substr(0, path_start);
            path_prefix_ = cfg_.base_url.substr(path_start);
            while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
        }
    }

    Completion complete(const CompletionRequest& req) override {
        nlohmann::json body;
        body["model"] = cfg_.model;
        body["messages"] = nlohmann::json::array({{{"role", "user"}, {"content", req.prompt}}});
        body["temperature"] = req.temperature;
        body["max_tokens"] = req.max_output_tokens;
        if (req.seed) body["seed"] = *req.seed;

        httplib::Client client(host_);
        client.set_connection_timeout(cfg_.timeout_seconds, 0);
        client.set_read_timeout(cfg_.timeout_seconds, 0);
        httplib::Headers headers;
        if (!cfg_.api_key_env.empty()) {
            const char* key = std::getenv(cfg_.api_key_env.c_str());
            if (!key || !*key)
                throw GatewayError("credential environment variable not set: " + cfg_.api_key_env);
            headers.emplace("Authorization", std::string("Bearer ") + key);
        }

        const auto started = std::chrono::steady_clock::now();
        auto res = client.Post(path_prefix_ + "/chat/completions", headers, body.dump(),
                               "application/json");
        const auto latency = std::chrono::duration_cast<std::chrono::microseconds>(
            std::chrono::steady_clock::now() - started);

        if (!res)
            throw TransportError("transport failure: " + httplib::to_string(res.error()));
        if (res->status == 408 || res->status == 429 || res->status >= 500)
            throw TransportError("http status " + std::to_string(res->status));
        if (res->status < 200 || res->status >= 300)
            throw GatewayError("http status " + std::to_string(res->status) + ": " +
                               res->body.substr(0, 200));

        nlohmann::json rj;
        try {
            rj = nlohmann::json::parse(res->body);
        } catch (const nlohmann::json::parse_error& e) {
            throw GatewayError(std::string("unparseable provider response: ") + e.what());
        }
        if (!rj.contains("choices") || !rj["choices"].is_array() || rj["choices"].empty())
            throw GatewayError("provider response has no choices");
        const auto& choice = rj["choices"][0];
        const auto finish = choice.value("finish_reason", std::string());
        if (finish == "content_filter")
            throw RefusalError("provider refused the request (content filter)");
        std::string text;
        if (choice.contains("message") && choice["message"].contains("content") &&
            choice["message"]["content"].is_string())
            text = choice["message"]["content"].get<std::string>();
        const bool truncated = finish == "length";
        if (text.empty() && !truncated)
            throw GatewayError("provider returned an empty completion");
        return Completion{std::move(text), label(), latency, truncated};
    }

    std::string label() const override { return cfg_.name + "/" + cfg_.model; }

private:
    ProviderConfig cfg_;
    std::string host_;
    std::string path_prefix_;
};

struct RetryPolicy {
    int max_attempts = 3;
    std::chrono::milliseconds initial_backoff{100};
    double multiplier = 2.0;
};

// Uniform entry point for model calls: retries transport faults, records one
// ledger entry per successful or refused call.
class LlmGateway {
public:
    explicit LlmGateway(std::shared_ptr<CompletionBackend> backend, RetryPolicy retry = {})
        : backend_(std::move(backend)), retry_(retry) {
        if (!backend_) throw GatewayError("no backend configured");
    }

    Completion complete(const CompletionRequest& req) {
        if (req.temperature < 0.0) throw std::invalid_argument("temperature must be >= 0");
        if (req.max_output_tokens < 1) throw std::invalid_argument("max_output_tokens must be >= 1");
        auto backoff = retry_.initial_backoff;
        for (int attempt = 1;; ++attempt) {
            try {
                Completion c = backend_->complete(req);
                ledger_.append(req, CallLedger::summarize(c.text), false);
                return c;
            } catch (const RefusalError& e) {
                ledger_.append(req, std::string("[refused] ") + e.what(), true);
                throw;
            } catch (const TransportError&) {
                if (attempt >= retry_.max_attempts) throw;
                std::this_thread::sleep_for(backoff);
                backoff = std::chrono::milliseconds(
                    static_cast<long>(static_cast<double>(backoff.count()) * retry_.multiplier));
            }
        }
    }

    CallLedger& ledger() { return ledger_; }
    const CallLedger& ledger() const { return ledger_; }
    const CompletionBackend& backend() const { return *backend_; }

private:
    std::shared_ptr<CompletionBackend> backend_;
    RetryPolicy retry_;
    CallLedger ledger_;
};

}  // namespace astute
