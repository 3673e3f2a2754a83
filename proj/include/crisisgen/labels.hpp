#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "crisisgen/backend.hpp"

namespace crisisgen {

/// Collects warnings from lenient parsing paths. Thread-safe.
class Diagnostics {
public:
    void warn(std::string message);
    std::size_t count() const;
    std::vector<std::string> messages() const;

private:
    mutable std::mutex mutex_;
    std::vector<std::string> messages_;
};

struct RawTweet {
    std::string id;
    std::string text;
    std::map<std::string, std::string> source_meta;

    bool operator==(const RawTweet&) const = default;
};

/// Damage scale used throughout: 0 none, 1 slight, 2 moderate, 3 severe.
inline constexpr int kMinDamageLevel = 0;
inline constexpr int kMaxDamageLevel = 3;

constexpr bool valid_damage_level(int level) noexcept {
    return level >= kMinDamageLevel && level <= kMaxDamageLevel;
}

struct TargetLabelVector {
    std::string location;
    int damage_level = 0;
    std::optional<std::string> provenance;

    /// Throws PreconditionError when the location is blank or the level is out of range.
    void validate() const;

    bool operator==(const TargetLabelVector&) const = default;
};

struct ReferenceEntry {
    EmbeddingVector vector;
    int damage_level = 0;
    std::string text_hash;

    bool operator==(const ReferenceEntry&) const = default;
};

struct ReferenceStore {
    std::string model_id;
    std::size_t dimension = 0;
    std::vector<ReferenceEntry> entries;

    /// Throws PreconditionError if any entry disagrees with `dimension`.
    void validate() const;

    /// `{"model_id", "dimension", "entries": [{"label", "vector", "text_hash"}]}`.
    /// Components are written as the shortest decimal that round-trips the
    /// stored float (at most 9 significant digits).
    void save(const std::filesystem::path& path) const;
    static ReferenceStore load(const std::filesystem::path& path);
    std::string to_json() const;
    static ReferenceStore from_json(std::string_view document);

    bool operator==(const ReferenceStore&) const = default;
};

enum class CorpusFormat { jsonl, csv };

/// Picks the format from the file extension (`.csv` → csv, else jsonl).
CorpusFormat corpus_format_for(const std::filesystem::path& path);

struct IngestResult {
    std::vector<RawTweet> tweets;
    std::size_t skipped_rows = 0;
    std::size_t duplicates = 0;
    std::size_t retweets = 0;
};

/// A trimmed text starting with "RT @".
bool is_retweet(std::string_view text) noexcept;

/// Reads a corpus, dropping exact duplicate texts (after trimming) and
/// retweets. Rows without a usable text are skipped and counted. Throws
/// PreconditionError when no valid rows remain.
IngestResult ingest_corpus(const std::filesystem::path& path, CorpusFormat format);
IngestResult ingest_rows(std::vector<RawTweet> rows, std::size_t skipped = 0);

/// JSONL with `id`, `text` and every source_meta key as a top-level field.
void write_corpus_jsonl(std::span<const RawTweet> tweets, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Annotation

struct AnnotationConfig {
    std::string model;
    double temperature = 0.0;
    int max_tokens = 128;
};

std::string location_annotation_prompt(std::string_view tweet_text);
std::string damage_annotation_prompt(std::string_view tweet_text);

/// All non-blank strings of the JSON array in `reply`; nullopt (with a
/// warning) when the reply holds no well-formed array of strings.
std::optional<std::vector<std::string>> parse_locations_reply(std::string_view reply, Diagnostics* diag = nullptr);

/// First string of the JSON array in `reply`, or nullopt. Malformed replies
/// warn through `diag`.
std::optional<std::string> parse_location_reply(std::string_view reply, Diagnostics* diag = nullptr);

/// Integer in 0..3 from `reply`, or nullopt (with a warning).
std::optional<int> parse_damage_reply(std::string_view reply, Diagnostics* diag = nullptr);

std::optional<std::string> extract_location(const RawTweet& tweet, Backend& backend,
                                            const AnnotationConfig& cfg, Diagnostics* diag = nullptr);
std::optional<int> annotate_damage(const RawTweet& tweet, Backend& backend, const AnnotationConfig& cfg,
                                   Diagnostics* diag = nullptr);

struct LabelPrepOptions {
    /// Use the tweet's `location` / `damage` fields instead of calling the backend.
    bool pre_labeled = false;
    std::size_t workers = 1;
    AnnotationConfig annotation;
};

/// One vector per tweet that yields both labels, in input order. `backend`
/// may be null in pre-labeled mode. Throws PreconditionError if none survive.
std::vector<TargetLabelVector> prepare_label_vectors(std::span<const RawTweet> tweets, Backend* backend,
                                                     const LabelPrepOptions& options,
                                                     Diagnostics* diag = nullptr);

/// JSONL: `{"location": ..., "damage": ..., "source_id": ...}`.
void save_label_vectors(std::span<const TargetLabelVector> labels, const std::filesystem::path& path);
std::vector<TargetLabelVector> load_label_vectors(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Reference store

struct LabeledText {
    std::string text;
    int damage_level = 0;
};

/// Embeds every text (in batches) and records (vector, label, text hash).
ReferenceStore build_reference_store(std::span<const LabeledText> labeled, Backend& backend,
                                     std::size_t batch_size = 64);

/// Pulls (text, damage) pairs out of a pre-labeled corpus.
std::vector<LabeledText> labeled_texts(std::span<const RawTweet> tweets, Diagnostics* diag = nullptr);

} // namespace crisisgen
