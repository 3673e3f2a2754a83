#include "crisisgen/backend.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>

namespace crisisgen {

using nlohmann::json;

std::string_view to_string(Role role) noexcept {
    return role == Role::system ? "system" : "user";
}

std::string_view to_string(FinishReason reason) noexcept {
    switch (reason) {
    case FinishReason::stop: return "stop";
    case FinishReason::length: return "length";
    case FinishReason::error: return "error";
    }
    return "error";
}

void ChatRequest::validate() const {
    if (messages.empty()) throw PreconditionError("chat request has no messages");
    if (!std::isfinite(temperature) || temperature < 0.0)
        throw PreconditionError("chat request temperature must be finite and >= 0");
    if (max_tokens <= 0) throw PreconditionError("chat request max_tokens must be positive");
}

EmbeddingVector::EmbeddingVector(std::vector<float> values) : values_(std::move(values)) {
    if (values_.empty()) throw PreconditionError("embedding vector is empty");
    bool any_nonzero = false;
    for (float v : values_) {
        if (!std::isfinite(v)) throw PreconditionError("embedding vector has a non-finite component");
        any_nonzero = any_nonzero || v != 0.0f;
    }
    if (!any_nonzero) throw PreconditionError("embedding vector is all zeros");
}

std::vector<EmbeddingVector> embed_batch(std::span<const std::string> texts, Backend& backend) {
    if (texts.empty()) throw PreconditionError("embed_batch called with no texts");
    auto raw = backend.embed(texts);
    if (raw.size() != texts.size())
        throw ProtocolError("embedding backend returned " + std::to_string(raw.size()) +
                            " vectors for " + std::to_string(texts.size()) + " texts");
    std::vector<EmbeddingVector> out;
    out.reserve(raw.size());
    for (auto& values : raw) {
        if (!out.empty() && values.size() != out.front().dimension())
            throw ProtocolError("embedding dimension mismatch within batch: " +
                                std::to_string(out.front().dimension()) + " vs " +
                                std::to_string(values.size()));
        out.emplace_back(std::move(values));
    }
    return out;
}

ChatResponse chat_complete(const ChatRequest& request, Backend& backend) {
    request.validate();
    return backend.chat(request);
}

// ---------------------------------------------------------------------------

std::uint64_t stable_hash64(std::string_view bytes) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string to_hex64(std::uint64_t value) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[value & 0xf];
        value >>= 4;
    }
    return out;
}

std::string canonical_chat_json(const ChatRequest& request) {
    json messages = json::array();
    for (const auto& m : request.messages)
        messages.push_back({{"content", m.content}, {"role", to_string(m.role)}});
    const double rounded = std::round(request.temperature * 1e4) / 1e4;
    // nlohmann::json objects are key-sorted, which gives the canonical order.
    json j = {{"messages", messages}, {"model", request.model}, {"temperature", rounded}};
    return j.dump();
}

std::string chat_request_key(const ChatRequest& request) {
    return to_hex64(stable_hash64(canonical_chat_json(request)));
}

std::string canonical_embedding_json(std::string_view model, std::string_view text) {
    json j = {{"input", std::string(text)}, {"model", std::string(model)}};
    return j.dump();
}

std::string embedding_request_key(std::string_view model, std::string_view text) {
    return to_hex64(stable_hash64(canonical_embedding_json(model, text)));
}

// ---------------------------------------------------------------------------
// HttpBackend

HttpBackend::HttpBackend(HttpBackendConfig config) : config_(std::move(config)) {
    const auto scheme_end = config_.base_url.find("://");
    if (scheme_end == std::string::npos)
        throw PreconditionError("backend base_url must include a scheme: " + config_.base_url);
    const auto path_start = config_.base_url.find('/', scheme_end + 3);
    origin_ = config_.base_url.substr(0, path_start);
    path_prefix_ = path_start == std::string::npos ? "" : config_.base_url.substr(path_start);
    while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();

    if (!config_.api_key_env.empty()) {
        const char* key = std::getenv(config_.api_key_env.c_str());
        if (!key) throw PreconditionError("environment variable " + config_.api_key_env + " is not set");
        api_key_ = key;
    }
}

std::string HttpBackend::post_json(const std::string& endpoint, const std::string& body) {
    httplib::Client client(origin_);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(config_.timeout);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(config_.timeout - secs);
    client.set_connection_timeout(secs.count(), usecs.count());
    client.set_read_timeout(secs.count(), usecs.count());
    client.set_write_timeout(secs.count(), usecs.count());

    httplib::Headers headers;
    if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

    const auto path = path_prefix_ + endpoint;
    auto res = client.Post(path, headers, body, "application/json");
    if (!res)
        throw TransportError("POST " + origin_ + path + " failed: " + httplib::to_string(res.error()));
    if (res->status == 429 || res->status >= 500)
        throw TransportError("POST " + path + " returned HTTP " + std::to_string(res->status));
    if (res->status < 200 || res->status >= 300)
        throw ProtocolError("POST " + path + " returned HTTP " + std::to_string(res->status) + ": " +
                            res->body.substr(0, 200));
    return res->body;
}

ChatResponse HttpBackend::chat(const ChatRequest& request) {
    json messages = json::array();
    for (const auto& m : request.messages)
        messages.push_back({{"role", to_string(m.role)}, {"content", m.content}});
    json body = {{"model", request.model.empty() ? config_.chat_model : request.model},
                 {"messages", messages},
                 {"temperature", request.temperature},
                 {"max_tokens", request.max_tokens},
                 {"stream", false}};

    const auto text = post_json("/chat/completions", body.dump());
    ChatResponse out;
    try {
        const auto j = json::parse(text);
        const auto& choice = j.at("choices").at(0);
        const auto& content = choice.at("message").at("content");
        out.content = content.is_null() ? std::string{} : content.get<std::string>();
        const auto reason = choice.value("finish_reason", std::string("stop"));
        out.finish_reason = reason == "length" ? FinishReason::length : FinishReason::stop;
        if (j.contains("usage") && j["usage"].is_object()) {
            TokenUsage usage;
            usage.prompt_tokens = j["usage"].value("prompt_tokens", std::int64_t{0});
            usage.completion_tokens = j["usage"].value("completion_tokens", std::int64_t{0});
            out.usage = usage;
        }
    } catch (const json::exception& e) {
        throw ProtocolError(std::string("malformed chat completion response: ") + e.what());
    }
    return out;
}

std::vector<std::vector<float>> HttpBackend::embed(std::span<const std::string> texts) {
    json body = {{"model", config_.embedding_model},
                 {"input", std::vector<std::string>(texts.begin(), texts.end())}};
    const auto text = post_json("/embeddings", body.dump());
    std::vector<std::vector<float>> out(texts.size());
    try {
        const auto j = json::parse(text);
        const auto& data = j.at("data");
        if (data.size() != texts.size())
            throw ProtocolError("embeddings response has " + std::to_string(data.size()) + " items for " +
                                std::to_string(texts.size()) + " inputs");
        for (std::size_t i = 0; i < data.size(); ++i) {
            // Servers may reorder; honour the index field when present.
            const auto idx = data[i].value("index", i);
            if (idx >= out.size()) throw ProtocolError("embedding index out of range");
            out[idx] = data[i].at("embedding").get<std::vector<float>>();
        }
    } catch (const json::exception& e) {
        throw ProtocolError(std::string("malformed embeddings response: ") + e.what());
    }
    return out;
}

// ---------------------------------------------------------------------------
// RetryingBackend

RetryingBackend::RetryingBackend(std::shared_ptr<Backend> inner, RetryPolicy policy)
    : inner_(std::move(inner)), policy_(std::move(policy)) {
    if (!policy_.sleep) policy_.sleep = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

template <class F>
auto RetryingBackend::with_retries(F&& call) -> decltype(call()) {
    auto backoff = policy_.initial_backoff;
    for (int attempt = 0;; ++attempt) {
        try {
            return call();
        } catch (const TransportError&) {
            if (attempt >= policy_.max_retries) throw;
        }
        policy_.sleep(backoff);
        backoff *= 2;
    }
}

ChatResponse RetryingBackend::chat(const ChatRequest& request) {
    return with_retries([&] { return inner_->chat(request); });
}

std::vector<std::vector<float>> RetryingBackend::embed(std::span<const std::string> texts) {
    return with_retries([&] { return inner_->embed(texts); });
}

// ---------------------------------------------------------------------------
// Replay fixtures

ReplayFixture ReplayFixture::parse(std::string_view jsonl) {
    ReplayFixture fixture;
    std::optional<ReplayMode> mode;
    std::size_t line_no = 0;
    std::istringstream in{std::string(jsonl)};
    std::string line;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw FormatError(std::string("replay fixture: invalid JSON: ") + e.what(), line_no);
        }
        if (!j.is_object() || !j.contains("response") || !j["response"].is_string())
            throw FormatError("replay fixture: entry needs a string \"response\"", line_no);
        ReplayEntry entry;
        entry.response = j["response"].get<std::string>();
        ReplayMode entry_mode;
        if (j.contains("key") && j["key"].is_string()) {
            entry_mode = ReplayMode::keyed;
            entry.key = j["key"].get<std::string>();
        } else if (j.contains("seq") && j["seq"].is_number_integer()) {
            entry_mode = ReplayMode::strict_sequence;
            entry.seq = j["seq"].get<std::int64_t>();
        } else {
            throw FormatError("replay fixture: entry needs \"key\" or integer \"seq\"", line_no);
        }
        if (mode && *mode != entry_mode)
            throw FormatError("replay fixture mixes keyed and sequence entries", line_no);
        mode = entry_mode;
        fixture.entries.push_back(std::move(entry));
    }
    fixture.mode = mode.value_or(ReplayMode::keyed);
    fixture.validate();
    return fixture;
}

ReplayFixture ReplayFixture::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw PreconditionError("cannot open replay fixture " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

void ReplayFixture::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw PreconditionError("cannot write replay fixture " + path.string());
    for (const auto& e : entries) {
        json j = mode == ReplayMode::keyed ? json{{"key", e.key}, {"response", e.response}}
                                           : json{{"seq", e.seq}, {"response", e.response}};
        out << j.dump() << '\n';
    }
}

void ReplayFixture::validate() const {
    if (mode == ReplayMode::keyed) {
        std::set<std::string> seen;
        for (const auto& e : entries)
            if (!seen.insert(e.key).second) throw FixtureError("replay fixture: duplicate key " + e.key);
    } else {
        std::set<std::int64_t> seen;
        for (const auto& e : entries)
            if (!seen.insert(e.seq).second)
                throw FixtureError("replay fixture: duplicate seq " + std::to_string(e.seq));
    }
}

std::vector<float> parse_embedding_text(std::string_view text) {
    try {
        const auto j = json::parse(text);
        if (!j.is_array()) throw ProtocolError("replayed embedding is not a JSON array");
        std::vector<float> out;
        out.reserve(j.size());
        for (const auto& v : j) {
            if (!v.is_number()) throw ProtocolError("replayed embedding has a non-numeric component");
            out.push_back(v.get<float>());
        }
        return out;
    } catch (const json::exception& e) {
        throw ProtocolError(std::string("replayed embedding is not valid JSON: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// ReplayBackend

ReplayBackend::Table ReplayBackend::make_table(ReplayFixture fixture) {
    fixture.validate();
    Table t{fixture.mode, {}, {}, 0};
    if (fixture.mode == ReplayMode::keyed) {
        for (auto& e : fixture.entries) t.by_key.emplace(e.key, std::move(e.response));
    } else {
        t.sequence = std::move(fixture.entries);
        std::sort(t.sequence.begin(), t.sequence.end(),
                  [](const ReplayEntry& a, const ReplayEntry& b) { return a.seq < b.seq; });
    }
    return t;
}

ReplayBackend::ReplayBackend(ReplayFixture chat_fixture, std::optional<ReplayFixture> embedding_fixture,
                             std::string embedding_model)
    : chat_(make_table(std::move(chat_fixture))), embedding_model_(std::move(embedding_model)) {
    if (embedding_fixture) embeddings_ = make_table(std::move(*embedding_fixture));
}

std::string ReplayBackend::lookup(Table& table, const std::string& key, std::string_view what) {
    if (table.mode == ReplayMode::keyed) {
        auto it = table.by_key.find(key);
        if (it == table.by_key.end())
            throw FixtureError("replay miss for " + std::string(what) + " request with key " + key);
        return it->second;
    }
    if (table.cursor >= table.sequence.size())
        throw FixtureError("replay fixture exhausted after " + std::to_string(table.sequence.size()) +
                           " entries; " + std::string(what) + " request key " + key);
    return table.sequence[table.cursor++].response;
}

ChatResponse ReplayBackend::chat(const ChatRequest& request) {
    const auto key = chat_request_key(request);
    std::lock_guard lock(mutex_);
    ReplayLogEntry entry{ReplayLogEntry::Kind::chat, key, request.model, request.temperature,
                         request.messages.empty() ? std::string{} : request.messages.back().content};
    log_.push_back(std::move(entry));
    ChatResponse out;
    out.content = lookup(chat_, key, "chat");
    out.finish_reason = FinishReason::stop;
    return out;
}

std::vector<std::vector<float>> ReplayBackend::embed(std::span<const std::string> texts) {
    std::lock_guard lock(mutex_);
    Table& table = embeddings_ ? *embeddings_ : chat_;
    std::vector<std::vector<float>> out;
    out.reserve(texts.size());
    for (const auto& text : texts) {
        const auto key = embedding_request_key(embedding_model_, text);
        log_.push_back({ReplayLogEntry::Kind::embedding, key, embedding_model_, std::nullopt, text});
        out.push_back(parse_embedding_text(lookup(table, key, "embedding")));
    }
    return out;
}

std::vector<ReplayLogEntry> ReplayBackend::log() const {
    std::lock_guard lock(mutex_);
    return log_;
}

std::size_t ReplayBackend::chat_calls() const {
    std::lock_guard lock(mutex_);
    return static_cast<std::size_t>(std::count_if(log_.begin(), log_.end(), [](const auto& e) {
        return e.kind == ReplayLogEntry::Kind::chat;
    }));
}

std::size_t ReplayBackend::embedding_calls() const {
    std::lock_guard lock(mutex_);
    return static_cast<std::size_t>(std::count_if(log_.begin(), log_.end(), [](const auto& e) {
        return e.kind == ReplayLogEntry::Kind::embedding;
    }));
}

void ReplayBackend::write_log(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw PreconditionError("cannot write replay log " + path.string());
    for (const auto& e : log()) {
        json j = {{"kind", e.kind == ReplayLogEntry::Kind::chat ? "chat" : "embedding"},
                  {"key", e.key},
                  {"model", e.model}};
        if (e.temperature) j["temperature"] = *e.temperature;
        out << j.dump() << '\n';
    }
}

} // namespace crisisgen
