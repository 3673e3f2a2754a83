#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "crisisgen/errors.hpp"

namespace crisisgen {

enum class Role { system, user };

struct ChatMessage {
    Role role = Role::user;
    std::string content;
};

struct ChatRequest {
    std::string model;
    std::vector<ChatMessage> messages;
    double temperature = 1.0;
    int max_tokens = 256;

    /// Throws PreconditionError when messages are empty, temperature is
    /// negative or non-finite, or max_tokens is not positive.
    void validate() const;
};

enum class FinishReason { stop, length, error };

struct TokenUsage {
    std::int64_t prompt_tokens = 0;
    std::int64_t completion_tokens = 0;
};

struct ChatResponse {
    std::string content;
    FinishReason finish_reason = FinishReason::stop;
    std::optional<TokenUsage> usage;
};

/// Dense embedding. Construction rejects empty, non-finite and all-zero input.
class EmbeddingVector {
public:
    explicit EmbeddingVector(std::vector<float> values);

    std::span<const float> values() const noexcept { return values_; }
    std::size_t dimension() const noexcept { return values_.size(); }

    bool operator==(const EmbeddingVector&) const = default;

private:
    std::vector<float> values_;
};

/// Uniform chat + embedding access. Implementations must be safe to call
/// from several threads.
class Backend {
public:
    virtual ~Backend() = default;

    virtual ChatResponse chat(const ChatRequest& request) = 0;

    /// Raw per-text embeddings in input order. Use embed_batch() for the
    /// validated entry point.
    virtual std::vector<std::vector<float>> embed(std::span<const std::string> texts) = 0;

    /// Model used for embeddings; recorded in reference stores.
    virtual std::string embedding_model() const = 0;
};

/// Validated embedding call: non-empty input, one vector per text, a single
/// shared dimension.
std::vector<EmbeddingVector> embed_batch(std::span<const std::string> texts, Backend& backend);

/// Convenience wrapper that validates the request first.
ChatResponse chat_complete(const ChatRequest& request, Backend& backend);

// ---------------------------------------------------------------------------
// Canonical request keys

/// 64-bit FNV-1a.
std::uint64_t stable_hash64(std::string_view bytes) noexcept;

std::string to_hex64(std::uint64_t value);

/// Canonical JSON of (model, messages, temperature rounded to 4 decimals).
std::string canonical_chat_json(const ChatRequest& request);
std::string chat_request_key(const ChatRequest& request);

std::string canonical_embedding_json(std::string_view model, std::string_view text);
std::string embedding_request_key(std::string_view model, std::string_view text);

// ---------------------------------------------------------------------------
// HTTP backend

struct HttpBackendConfig {
    std::string base_url = "http://localhost:8000/v1";
    std::string api_key_env;  ///< name of the env var holding the key; empty = no auth
    std::string chat_model;
    std::string embedding_model;
    std::chrono::milliseconds timeout{120'000};
};

/// Talks to `/chat/completions` and `/embeddings` under base_url.
class HttpBackend final : public Backend {
public:
    explicit HttpBackend(HttpBackendConfig config);

    ChatResponse chat(const ChatRequest& request) override;
    std::vector<std::vector<float>> embed(std::span<const std::string> texts) override;
    std::string embedding_model() const override { return config_.embedding_model; }

    const HttpBackendConfig& config() const noexcept { return config_; }

private:
    std::string post_json(const std::string& endpoint, const std::string& body);

    HttpBackendConfig config_;
    std::string origin_;
    std::string path_prefix_;
    std::string api_key_;
};

// ---------------------------------------------------------------------------
// Retry decorator

struct RetryPolicy {
    int max_retries = 3;
    std::chrono::milliseconds initial_backoff{500};
    /// Injected so tests can run without sleeping.
    std::function<void(std::chrono::milliseconds)> sleep;
};

/// Retries TransportError with exponential backoff. Every other error is
/// rethrown immediately.
class RetryingBackend final : public Backend {
public:
    RetryingBackend(std::shared_ptr<Backend> inner, RetryPolicy policy = {});

    ChatResponse chat(const ChatRequest& request) override;
    std::vector<std::vector<float>> embed(std::span<const std::string> texts) override;
    std::string embedding_model() const override { return inner_->embedding_model(); }

private:
    template <class F>
    auto with_retries(F&& call) -> decltype(call());

    std::shared_ptr<Backend> inner_;
    RetryPolicy policy_;
};

// ---------------------------------------------------------------------------
// Replay backend

enum class ReplayMode { strict_sequence, keyed };

struct ReplayEntry {
    std::string key;   ///< hex64 request key (keyed mode)
    std::int64_t seq = 0;  ///< position (strict_sequence mode)
    std::string response;
};

struct ReplayFixture {
    ReplayMode mode = ReplayMode::keyed;
    std::vector<ReplayEntry> entries;

    /// JSONL, one `{"key": ..., "response": ...}` or `{"seq": ..., "response": ...}`
    /// per line. Mixing both forms in one file is an error.
    static ReplayFixture load(const std::filesystem::path& path);
    static ReplayFixture parse(std::string_view jsonl);
    void save(const std::filesystem::path& path) const;

    /// Throws FixtureError on duplicate keys / sequence numbers.
    void validate() const;
};

/// One request seen by a replay backend, for test inspection.
struct ReplayLogEntry {
    enum class Kind { chat, embedding } kind = Kind::chat;
    std::string key;
    std::string model;
    std::optional<double> temperature;
    std::string prompt;  ///< last user message, or the embedded text
};

/// Deterministic stand-in for a model server. Chat and embedding requests are
/// answered from separate fixtures; an embedding fixture's responses are JSON
/// arrays of numbers.
class ReplayBackend final : public Backend {
public:
    ReplayBackend(ReplayFixture chat_fixture,
                  std::optional<ReplayFixture> embedding_fixture = std::nullopt,
                  std::string embedding_model = "replay-embed");

    ChatResponse chat(const ChatRequest& request) override;
    std::vector<std::vector<float>> embed(std::span<const std::string> texts) override;
    std::string embedding_model() const override { return embedding_model_; }

    std::vector<ReplayLogEntry> log() const;
    std::size_t chat_calls() const;
    std::size_t embedding_calls() const;

    /// Writes the request log as JSONL.
    void write_log(const std::filesystem::path& path) const;

private:
    struct Table {
        ReplayMode mode;
        std::vector<ReplayEntry> sequence;
        std::map<std::string, std::string> by_key;
        std::size_t cursor = 0;
    };

    static Table make_table(ReplayFixture fixture);
    std::string lookup(Table& table, const std::string& key, std::string_view what);

    mutable std::mutex mutex_;
    Table chat_;
    std::optional<Table> embeddings_;
    std::string embedding_model_;
    std::vector<ReplayLogEntry> log_;
};

/// Parses a replayed embedding response (`[0.1, 0.2, ...]`).
std::vector<float> parse_embedding_text(std::string_view text);

std::string_view to_string(Role role) noexcept;
std::string_view to_string(FinishReason reason) noexcept;

} // namespace crisisgen
