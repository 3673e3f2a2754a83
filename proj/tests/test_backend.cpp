#include <doctest.h>

#include <chrono>
#include <cstdlib>
#include <thread>

#include <httplib.h>

#include "crisisgen/backend.hpp"
#include "support/test_support.hpp"

using namespace crisisgen;
using namespace crisisgen::testing;
using nlohmann::json;

namespace {

ChatRequest user_request(const std::string& content, double temperature = 1.0) {
    ChatRequest r;
    r.model = "gen";
    r.temperature = temperature;
    r.messages.push_back({Role::user, content});
    return r;
}

} // namespace

TEST_CASE("canonical chat key is content-sensitive and rounds temperature to 4 decimals") {
    const auto a = user_request("hello", 1.0);
    auto b = a;
    b.max_tokens = 999;  // not part of the key
    CHECK(chat_request_key(a) == chat_request_key(b));

    CHECK(chat_request_key(user_request("hello", 1.00001)) == chat_request_key(a));
    CHECK(chat_request_key(user_request("hello", 1.0001)) != chat_request_key(a));
    CHECK(chat_request_key(user_request("hello!", 1.0)) != chat_request_key(a));

    CHECK(canonical_chat_json(a) ==
          R"({"messages":[{"content":"hello","role":"user"}],"model":"gen","temperature":1.0})");
    CHECK(chat_request_key(a).size() == 16);
}

TEST_CASE("stable_hash64 is FNV-1a") {
    CHECK(stable_hash64("") == 0xcbf29ce484222325ULL);
    CHECK(stable_hash64("a") == 0xaf63dc4c8601ec8cULL);
    CHECK(to_hex64(0xaf63dc4c8601ec8cULL) == "af63dc4c8601ec8c");
}

TEST_CASE("keyed replay answers the request whose canonical hash matches") {
    const auto req = user_request("make a tweet");
    ReplayFixture fixture;
    fixture.mode = ReplayMode::keyed;
    fixture.entries.push_back({chat_request_key(req), 0, R"({"synthetic_tweet_text": "..."})"});
    ReplayBackend backend(fixture);

    CHECK(chat_complete(req, backend).content == R"({"synthetic_tweet_text": "..."})");
    CHECK_THROWS_AS(chat_complete(user_request("other"), backend), FixtureError);
}

TEST_CASE("empty fixture misses every request") {
    ReplayBackend backend(ReplayFixture{});
    CHECK_THROWS_AS(chat_complete(user_request("x"), backend), FixtureError);
}

TEST_CASE("strict sequence fixture is exhausted after its entries") {
    ReplayBackend backend(sequence_fixture({"one", "two"}));
    CHECK(chat_complete(user_request("a"), backend).content == "one");
    CHECK(chat_complete(user_request("b"), backend).content == "two");
    try {
        chat_complete(user_request("c"), backend);
        FAIL("expected exhaustion");
    } catch (const FixtureError& e) {
        CHECK(std::string(e.what()).find("exhausted") != std::string::npos);
    }
    CHECK(backend.chat_calls() == 3);
}

TEST_CASE("replay is deterministic across backends built from the same fixture") {
    auto fixture = sequence_fixture({"r1", "r2", "r3"});
    ReplayBackend a(fixture), b(fixture);
    for (int i = 0; i < 3; ++i) {
        const auto req = user_request("q" + std::to_string(i));
        CHECK(chat_complete(req, a).content == chat_complete(req, b).content);
    }
}

TEST_CASE("chat requests are validated") {
    ReplayBackend backend(sequence_fixture({"x"}));
    ChatRequest empty;
    CHECK_THROWS_AS(chat_complete(empty, backend), PreconditionError);
    auto hot = user_request("x", std::numeric_limits<double>::infinity());
    CHECK_THROWS_AS(chat_complete(hot, backend), PreconditionError);
}

TEST_CASE("embed_batch through a replay fixture") {
    ReplayBackend backend(ReplayFixture{}, embedding_fixture({{"hello", {1.0f, 0.0f}}, {"zero", {0.0f, 0.0f}}}));

    const std::vector<std::string> hello = {"hello"};
    const auto out = embed_batch(hello, backend);
    REQUIRE(out.size() == 1);
    CHECK(std::vector<float>(out[0].values().begin(), out[0].values().end()) == std::vector<float>{1.0f, 0.0f});

    CHECK_THROWS_AS(embed_batch(std::vector<std::string>{}, backend), PreconditionError);
    CHECK_THROWS_AS(embed_batch(std::vector<std::string>{"zero"}, backend), PreconditionError);
}

TEST_CASE("embed_batch rejects mixed dimensions") {
    ScriptedBackend backend;
    backend.on_embed = [](std::span<const std::string>, int) {
        return std::vector<std::vector<float>>{{1, 0}, {1, 0, 0}};
    };
    CHECK_THROWS_AS(embed_batch(std::vector<std::string>{"a", "b"}, backend), ProtocolError);
}

TEST_CASE("EmbeddingVector construction invariants") {
    CHECK_THROWS_AS(EmbeddingVector({}), PreconditionError);
    CHECK_THROWS_AS(EmbeddingVector({0.0f, 0.0f}), PreconditionError);
    CHECK_THROWS_AS(EmbeddingVector({1.0f, std::nanf("")}), PreconditionError);
    CHECK(EmbeddingVector({0.0f, 2.0f}).dimension() == 2);
}

TEST_CASE("fixture files: both line forms, errors carry line numbers") {
    const auto keyed = ReplayFixture::parse("{\"key\": \"00ff\", \"response\": \"a\"}\n\n{\"key\": \"0100\", \"response\": \"b\"}\n");
    CHECK(keyed.mode == ReplayMode::keyed);
    CHECK(keyed.entries.size() == 2);

    const auto seq = ReplayFixture::parse("{\"seq\": 1, \"response\": \"second\"}\n{\"seq\": 0, \"response\": \"first\"}\n");
    ReplayBackend backend(seq);
    CHECK(chat_complete(user_request("x"), backend).content == "first");

    try {
        ReplayFixture::parse("{\"seq\": 0, \"response\": \"a\"}\n{\"key\": \"k\", \"response\": \"b\"}\n");
        FAIL("mixed modes accepted");
    } catch (const FormatError& e) {
        CHECK(e.line() == 2);
    }
    try {
        ReplayFixture::parse("{\"seq\": 0, \"response\": \"a\"}\nnot json\n");
        FAIL("garbage accepted");
    } catch (const FormatError& e) {
        CHECK(e.line() == 2);
    }
    CHECK_THROWS_AS(ReplayFixture::parse("{\"key\": \"k\", \"response\": \"a\"}\n{\"key\": \"k\", \"response\": \"b\"}\n"),
                    FixtureError);
}

TEST_CASE("fixture save/load keeps entries") {
    TempDir dir;
    auto f = sequence_fixture({"a", "b\nc"});
    f.save(dir / "f.jsonl");
    const auto back = ReplayFixture::load(dir / "f.jsonl");
    CHECK(back.mode == ReplayMode::strict_sequence);
    REQUIRE(back.entries.size() == 2);
    CHECK(back.entries[1].response == "b\nc");
}

TEST_CASE("retry decorator: transport errors retried with exponential backoff") {
    auto inner = std::make_shared<ScriptedBackend>();
    inner->on_chat = [](const ChatRequest&, int call) -> ChatResponse {
        if (call < 2) throw TransportError("boom");
        return {"ok", FinishReason::stop, std::nullopt};
    };
    std::vector<long> sleeps;
    RetryPolicy policy;
    policy.sleep = [&](std::chrono::milliseconds d) { sleeps.push_back(d.count()); };
    RetryingBackend backend(inner, policy);

    CHECK(backend.chat(user_request("x")).content == "ok");
    CHECK(inner->chat_count == 3);
    CHECK(sleeps == std::vector<long>{500, 1000});
}

TEST_CASE("retry decorator: budget of 3 retries then the error surfaces") {
    auto inner = std::make_shared<ScriptedBackend>();
    inner->on_chat = [](const ChatRequest&, int) -> ChatResponse { throw TransportError("down"); };
    RetryPolicy policy;
    policy.sleep = [](std::chrono::milliseconds) {};
    RetryingBackend backend(inner, policy);
    CHECK_THROWS_AS(backend.chat(user_request("x")), TransportError);
    CHECK(inner->chat_count == 4);
}

TEST_CASE("retry decorator: non-retryable errors are never re-sent") {
    auto inner = std::make_shared<ScriptedBackend>();
    inner->on_chat = [](const ChatRequest&, int) -> ChatResponse { throw ProtocolError("bad request"); };
    inner->on_embed = [](std::span<const std::string>, int) -> std::vector<std::vector<float>> {
        throw FixtureError("miss");
    };
    RetryPolicy policy;
    policy.sleep = [](std::chrono::milliseconds) { FAIL("slept"); };
    RetryingBackend backend(inner, policy);
    CHECK_THROWS_AS(backend.chat(user_request("x")), ProtocolError);
    CHECK(inner->chat_count == 1);
    const std::vector<std::string> t{"x"};
    CHECK_THROWS_AS(backend.embed(t), FixtureError);
    CHECK(inner->embed_count == 1);
}

// ---------------------------------------------------------------------------
// Wire format against a local server

namespace {

struct LocalServer {
    httplib::Server server;
    int port = 0;
    std::thread thread;
    json last_body;
    std::string last_auth;

    LocalServer() {
        port = server.bind_to_any_port("127.0.0.1");
        thread = std::thread([this] { server.listen_after_bind(); });
        server.wait_until_ready();
    }
    ~LocalServer() {
        server.stop();
        thread.join();
    }
    std::string url() const { return "http://127.0.0.1:" + std::to_string(port) + "/v1"; }
};

} // namespace

TEST_CASE("HTTP backend speaks the chat-completions and embeddings JSON protocol") {
    LocalServer srv;
    srv.server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
        srv.last_body = json::parse(req.body);
        srv.last_auth = req.get_header_value("Authorization");
        res.set_content(R"({"choices":[{"message":{"role":"assistant","content":"  raw text "},"finish_reason":"length"}],
                            "usage":{"prompt_tokens":7,"completion_tokens":3}})",
                        "application/json");
    });
    srv.server.Post("/v1/embeddings", [&](const httplib::Request& req, httplib::Response& res) {
        srv.last_body = json::parse(req.body);
        // deliberately out of order
        res.set_content(R"({"data":[{"index":1,"embedding":[0,1]},{"index":0,"embedding":[1,0]}]})",
                        "application/json");
    });

    ::setenv("CRISISGEN_TEST_KEY", "sekret", 1);
    HttpBackendConfig cfg;
    cfg.base_url = srv.url();
    cfg.api_key_env = "CRISISGEN_TEST_KEY";
    cfg.chat_model = "gen-model";
    cfg.embedding_model = "emb-model";
    HttpBackend backend(cfg);

    auto req = user_request("prompt body", 1.4);
    req.model = "gen-model";
    const auto res = chat_complete(req, backend);
    CHECK(res.content == "  raw text ");  // verbatim
    CHECK(res.finish_reason == FinishReason::length);
    REQUIRE(res.usage);
    CHECK(res.usage->prompt_tokens == 7);
    CHECK(srv.last_body["model"] == "gen-model");
    CHECK(srv.last_body["temperature"] == 1.4);
    CHECK(srv.last_body["max_tokens"] == 256);
    CHECK(srv.last_body["messages"] == json::parse(R"([{"role":"user","content":"prompt body"}])"));
    CHECK(srv.last_auth == "Bearer sekret");

    const std::vector<std::string> texts{"a", "b"};
    const auto vecs = embed_batch(texts, backend);
    CHECK(srv.last_body["model"] == "emb-model");
    CHECK(srv.last_body["input"] == json::array({"a", "b"}));
    CHECK(vecs[0].values()[0] == 1.0f);
    CHECK(vecs[1].values()[1] == 1.0f);
}

TEST_CASE("HTTP status classes map to retryable and non-retryable errors") {
    LocalServer srv;
    srv.server.Post("/v1/chat/completions", [](const httplib::Request& req, httplib::Response& res) {
        res.status = json::parse(req.body)["messages"][0]["content"] == "500" ? 503 : 400;
        res.set_content("{}", "application/json");
    });
    HttpBackendConfig cfg;
    cfg.base_url = srv.url();
    HttpBackend backend(cfg);
    CHECK_THROWS_AS(backend.chat(user_request("500")), TransportError);
    CHECK_THROWS_AS(backend.chat(user_request("400")), ProtocolError);
}

TEST_CASE("unreachable server is a transport error") {
    HttpBackendConfig cfg;
    cfg.base_url = "http://127.0.0.1:1/v1";
    cfg.timeout = std::chrono::milliseconds(500);
    HttpBackend backend(cfg);
    CHECK_THROWS_AS(backend.chat(user_request("x")), TransportError);
}

TEST_CASE("missing API key variable is a configuration error") {
    HttpBackendConfig cfg;
    cfg.api_key_env = "CRISISGEN_DEFINITELY_UNSET_VAR";
    CHECK_THROWS_AS(HttpBackend{cfg}, PreconditionError);
}
