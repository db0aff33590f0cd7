#include <catch2/catch_amalgamated.hpp>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "astute/llm_gateway.hpp"
#include "astute/text.hpp"

using namespace astute;

namespace {

RetryPolicy fast_retry() { return {3, std::chrono::milliseconds(1), 2.0}; }

// Fails with a transport error for the first `failures` calls, then succeeds.
class FlakyBackend : public CompletionBackend {
public:
    explicit FlakyBackend(int failures) : failures_(failures) {}

    Completion complete(const CompletionRequest&) override {
        ++attempts;
        if (attempts <= failures_) throw TransportError("connection reset");
        return Completion{"eventually fine", label(), std::chrono::microseconds{0}, false};
    }

    std::string label() const override { return "flaky"; }

    int attempts = 0;

private:
    int failures_;
};

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("scripted backend replays entries as a pure function") {
    ScriptedBackend backend;
    backend.add("ping", "pong");
    CHECK(backend.complete({"ping"}).text == "pong");
    CHECK(backend.complete({"ping"}).text == "pong");
    CHECK(backend.complete({"ping"}).backend_label == "scripted");
}

TEST_CASE("normalized matching forgives trailing whitespace only") {
    ScriptedBackend backend;
    backend.add("Question: x\nAnswer:\n", "42");
    CHECK(backend.complete({"Question: x\nAnswer:"}).text == "42");
    CHECK(backend.complete({"Question: x\nAnswer:\n\n  "}).text == "42");
    REQUIRE_THROWS_AS(backend.complete({" Question: x\nAnswer:"}), ScriptMissError);

    ScriptedBackend exact(ScriptMatch::exact);
    exact.add("a\n", "1");
    CHECK(exact.complete({"a\n"}).text == "1");
    REQUIRE_THROWS_AS(exact.complete({"a"}), ScriptMissError);
}

TEST_CASE("script misses name the offending prompt") {
    ScriptedBackend backend;
    REQUIRE_THROWS_MATCHES(backend.complete({"mystery"}), ScriptMissError,
                           Catch::Matchers::MessageMatches(Catch::Matchers::StartsWith(
                               "no script entry for prompt: mystery")));
}

TEST_CASE("seeded entries take priority and fall back to the plain entry") {
    ScriptedBackend backend;
    backend.add("p", "default");
    backend.add_sampled("p", 7, "sampled");
    CHECK(backend.complete({"p", 0.7, 1024, 7}).text == "sampled");
    CHECK(backend.complete({"p", 0.7, 1024, 8}).text == "default");
    CHECK(backend.complete({"p"}).text == "default");
}

TEST_CASE("scripted refusals raise refusal errors") {
    ScriptedBackend backend;
    backend.add_refusal("p", "policy block");
    REQUIRE_THROWS_AS(backend.complete({"p"}), RefusalError);
}

TEST_CASE("script files round trip through json") {
    ScriptedBackend backend;
    backend.add("alpha", "one");
    backend.add_sampled("beta", 3, "two");
    backend.add_refusal("gamma", "no");
    const std::string path = temp_path("astute_script_roundtrip.json");
    write_file(path, backend.to_json().dump());

    auto loaded = ScriptedBackend::from_file(path);
    CHECK(loaded->size() == 3);
    CHECK(loaded->complete({"alpha"}).text == "one");
    CHECK(loaded->complete({"beta", 0.7, 1024, 3}).text == "two");
    REQUIRE_THROWS_AS(loaded->complete({"gamma"}), RefusalError);
    std::filesystem::remove(path);
}

TEST_CASE("malformed script files are rejected") {
    const std::string path = temp_path("astute_script_bad.json");
    write_file(path, "{broken");
    REQUIRE_THROWS_MATCHES(ScriptedBackend::from_file(path), GatewayError,
                           Catch::Matchers::MessageMatches(
                               Catch::Matchers::StartsWith("malformed script file")));
    std::filesystem::remove(path);
}

TEST_CASE("ledger summarizes to eighty characters on one line") {
    const std::string long_text(100, 'x');
    CHECK(CallLedger::summarize(long_text) == std::string(80, 'x') + "...");
    CHECK(CallLedger::summarize("ab\ncd\ref") == "ab cd ef");
    CHECK(CallLedger::summarize("short") == "short");
    CHECK(CallLedger::summarize(std::string(80, 'y')) == std::string(80, 'y'));
}

TEST_CASE("gateway validates request parameters") {
    auto backend = std::make_shared<ScriptedBackend>();
    LlmGateway gateway(backend);
    REQUIRE_THROWS_AS(gateway.complete({"p", -0.1}), std::invalid_argument);
    REQUIRE_THROWS_AS(gateway.complete({"p", 0.0, 0}), std::invalid_argument);
}

TEST_CASE("gateway records one ledger entry per successful call") {
    auto backend = std::make_shared<ScriptedBackend>();
    backend->add("p", "r");
    LlmGateway gateway(backend);
    CHECK(gateway.ledger().count() == 0);
    gateway.complete({"p"});
    gateway.complete({"p"});
    REQUIRE(gateway.ledger().count() == 2);
    const auto entries = gateway.ledger().snapshot();
    CHECK(entries[0].request_summary == "p");
    CHECK(entries[0].completion_summary == "r");
    CHECK_FALSE(entries[0].refused);
}

TEST_CASE("transport errors are retried and collapse into one entry") {
    auto backend = std::make_shared<FlakyBackend>(2);
    LlmGateway gateway(backend, fast_retry());
    CHECK(gateway.complete({"p"}).text == "eventually fine");
    CHECK(backend->attempts == 3);
    CHECK(gateway.ledger().count() == 1);
}

TEST_CASE("exhausted retries rethrow and leave no ledger entry") {
    auto backend = std::make_shared<FlakyBackend>(99);
    LlmGateway gateway(backend, fast_retry());
    REQUIRE_THROWS_AS(gateway.complete({"p"}), TransportError);
    CHECK(backend->attempts == 3);
    CHECK(gateway.ledger().count() == 0);
}

TEST_CASE("refusals are never retried and are recorded as refused") {
    auto backend = std::make_shared<ScriptedBackend>();
    backend->add_refusal("p", "nope");
    LlmGateway gateway(backend, fast_retry());
    REQUIRE_THROWS_AS(gateway.complete({"p"}), RefusalError);
    REQUIRE(gateway.ledger().count() == 1);
    const auto entries = gateway.ledger().snapshot();
    CHECK(entries[0].refused);
    CHECK(entries[0].completion_summary == "[refused] nope");
}

TEST_CASE("script misses are not retried") {
    auto backend = std::make_shared<ScriptedBackend>();
    LlmGateway gateway(backend, fast_retry());
    REQUIRE_THROWS_AS(gateway.complete({"p"}), ScriptMissError);
    CHECK(gateway.ledger().count() == 0);
}

TEST_CASE("concurrent calls all land in the ledger") {
    auto backend = std::make_shared<ScriptedBackend>();
    backend->add("p", "r");
    LlmGateway gateway(backend);
    constexpr int kThreads = 8, kCalls = 25;
    std::vector<std::thread> threads;
    for (int t = 0; t < kThreads; ++t)
        threads.emplace_back([&] {
            for (int i = 0; i < kCalls; ++i) gateway.complete({"p"});
        });
    for (auto& t : threads) t.join();
    CHECK(gateway.ledger().count() == kThreads * kCalls);
    CHECK(gateway.ledger().count_since(0) == kThreads * kCalls);
}

TEST_CASE("provider config loads named sections") {
    const std::string path = temp_path("astute_providers.json");
    write_file(path, R"({
        "local": {"base_url": "http://127.0.0.1:9/v1", "model": "m1",
                  "api_key_env": "ASTUTE_TEST_KEY", "timeout_seconds": 5},
        "other": {"base_url": "https://api.example.com", "model": "m2"}
    })");
    const auto cfg = load_provider_config(path, "local");
    CHECK(cfg.name == "local");
    CHECK(cfg.base_url == "http://127.0.0.1:9/v1");
    CHECK(cfg.model == "m1");
    CHECK(cfg.api_key_env == "ASTUTE_TEST_KEY");
    CHECK(cfg.timeout_seconds == 5);
    CHECK(load_provider_config(path, "other").api_key_env.empty());
    REQUIRE_THROWS_MATCHES(load_provider_config(path, "missing"), GatewayError,
                           Catch::Matchers::MessageMatches(Catch::Matchers::StartsWith(
                               "provider config has no section")));
    std::filesystem::remove(path);
}

namespace {

// Local stand-in for a chat-completions provider.
class FakeProvider {
public:
    FakeProvider() {
        server_.Post("/v1/chat/completions",
                     [this](const httplib::Request& req, httplib::Response& res) {
                         handle(req, res);
                     });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }

    ~FakeProvider() {
        server_.stop();
        thread_.join();
    }

    ProviderConfig config() const {
        ProviderConfig cfg;
        cfg.name = "fake";
        cfg.base_url = "http://127.0.0.1:" + std::to_string(port_) + "/v1";
        cfg.model = "test-model";
        cfg.api_key_env = "ASTUTE_TEST_KEY";
        cfg.timeout_seconds = 5;
        return cfg;
    }

    // next response behavior
    std::atomic<int> rate_limit_first{0};
    std::string finish_reason = "stop";
    std::string content = "hello";
    nlohmann::json last_body;
    std::string last_auth;

private:
    void handle(const httplib::Request& req, httplib::Response& res) {
        last_body = nlohmann::json::parse(req.body);
        last_auth = req.get_header_value("Authorization");
        if (rate_limit_first.fetch_sub(1) > 0) {
            res.status = 429;
            res.set_content("slow down", "text/plain");
            return;
        }
        nlohmann::json out;
        out["choices"] = nlohmann::json::array(
            {{{"finish_reason", finish_reason},
              {"message", {{"role", "assistant"}, {"content", content}}}}});
        res.set_content(out.dump(), "application/json");
    }

    httplib::Server server_;
    std::thread thread_;
    int port_ = 0;
};

struct EnvKeyGuard {
    EnvKeyGuard() { setenv("ASTUTE_TEST_KEY", "sk-test-123", 1); }
    ~EnvKeyGuard() { unsetenv("ASTUTE_TEST_KEY"); }
};

}  // namespace

TEST_CASE("http backend posts a chat completion and parses the reply") {
    EnvKeyGuard key;
    FakeProvider provider;
    HttpBackend backend(provider.config());

    const Completion c = backend.complete({"what is up?", 0.25, 512, 99});
    CHECK(c.text == "hello");
    CHECK(c.backend_label == "fake/test-model");
    CHECK_FALSE(c.truncated);

    CHECK(provider.last_body["model"] == "test-model");
    CHECK(provider.last_body["temperature"] == 0.25);
    CHECK(provider.last_body["max_tokens"] == 512);
    CHECK(provider.last_body["seed"] == 99);
    REQUIRE(provider.last_body["messages"].size() == 1);
    CHECK(provider.last_body["messages"][0]["role"] == "user");
    CHECK(provider.last_body["messages"][0]["content"] == "what is up?");
    CHECK(provider.last_auth == "Bearer sk-test-123");

    const Completion no_seed = backend.complete({"again", 0.0, 64});
    CHECK_FALSE(provider.last_body.contains("seed"));
    CHECK(no_seed.text == "hello");
}

TEST_CASE("http backend surfaces rate limits as retryable transport errors") {
    EnvKeyGuard key;
    FakeProvider provider;
    provider.rate_limit_first = 2;
    auto backend = std::make_shared<HttpBackend>(provider.config());
    LlmGateway gateway(backend, fast_retry());
    CHECK(gateway.complete({"p"}).text == "hello");
    CHECK(gateway.ledger().count() == 1);
}

TEST_CASE("http backend maps content filters to refusals") {
    EnvKeyGuard key;
    FakeProvider provider;
    provider.finish_reason = "content_filter";
    HttpBackend backend(provider.config());
    REQUIRE_THROWS_AS(backend.complete({"p"}), RefusalError);
}

TEST_CASE("http backend flags truncated completions") {
    EnvKeyGuard key;
    FakeProvider provider;
    provider.finish_reason = "length";
    provider.content = "cut off mid";
    HttpBackend backend(provider.config());
    const Completion c = backend.complete({"p"});
    CHECK(c.truncated);
    CHECK(c.text == "cut off mid");
}

TEST_CASE("http backend requires the credential variable when configured") {
    FakeProvider provider;
    HttpBackend backend(provider.config());
    unsetenv("ASTUTE_TEST_KEY");
    REQUIRE_THROWS_MATCHES(backend.complete({"p"}), GatewayError,
                           Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring(
                               "ASTUTE_TEST_KEY")));
}

TEST_CASE("unreachable hosts become transport errors") {
    ProviderConfig cfg;
    cfg.name = "dead";
    cfg.base_url = "http://127.0.0.1:1/v1";
    cfg.model = "m";
    cfg.timeout_seconds = 1;
    HttpBackend backend(cfg);
    REQUIRE_THROWS_AS(backend.complete({"p"}), TransportError);
}
