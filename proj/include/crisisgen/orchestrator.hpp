#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <random>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "crisisgen/backend.hpp"
#include "crisisgen/evaluator.hpp"
#include "crisisgen/feedback.hpp"
#include "crisisgen/labels.hpp"

namespace crisisgen {

struct RunConfig {
    /// Feedback rounds; each item gets at most rounds + 1 attempts.
    int rounds = 3;
    double temperature = 1.0;
    EvaluatorConfig evaluator;
    GeneratorConfig generator;
    /// Seeds the per-attempt diversity sampling RNG.
    std::uint64_t seed = 0;
    /// 1 = sequential and deterministic; more = parallel, schedule-dependent.
    std::size_t workers = 1;
    std::string event_name = "event";
    /// Pins created_at (RFC 3339). Unset = wall clock.
    std::optional<std::string> fixed_timestamp;

    void validate() const;
};

struct DatasetRecord {
    std::string id;
    std::string event;
    std::string tweet_text;
    std::string target_location;
    int target_damage_level = 0;
    int accepted_round = 0;
    double temperature = 1.0;
    std::string generator_model;
    std::string created_at;

    bool operator==(const DatasetRecord&) const = default;
};

enum class AttemptOutcome { accepted, rejected, generation_failed, evaluation_failed };

std::string_view to_string(AttemptOutcome outcome) noexcept;
AttemptOutcome attempt_outcome_from(std::string_view name);

struct AuditRecord {
    std::string item_id;
    int attempt_index = 0;
    std::optional<std::string> tweet_text;
    std::optional<ComplianceDetails> details;
    AttemptOutcome outcome = AttemptOutcome::rejected;
    std::optional<std::string> error;

    bool operator==(const AuditRecord&) const = default;
};

/// Texts accepted so far for one event. One writer at a time; readers take
/// copies.
class AcceptedCorpus {
public:
    AcceptedCorpus() = default;
    explicit AcceptedCorpus(std::vector<std::string> texts) : texts_(std::move(texts)) {}

    std::vector<std::string> snapshot() const;
    void add(std::string text);
    std::size_t size() const;

private:
    mutable std::shared_mutex mutex_;
    std::vector<std::string> texts_;
};

struct ItemResult {
    std::optional<DatasetRecord> record;
    std::vector<AuditRecord> audit;
};

/// Stable item id for the label at `index` in the input sequence.
std::string item_id_for(std::size_t index);

/// Seed for the diversity RNG of one attempt.
std::uint64_t attempt_seed(std::uint64_t run_seed, std::string_view item_id, int attempt_index);

/// RFC 3339 UTC timestamp for "now".
std::string utc_timestamp_now();

/// Generate, evaluate, feed back; stop at the first accepted attempt or after
/// attempt `rounds`. Transport and fixture errors propagate.
ItemResult run_item(const std::string& item_id, const TargetLabelVector& target, const RunConfig& cfg,
                    const ReferenceStore& store, AcceptedCorpus& corpus, Backend& backend);

struct RunPaths {
    std::filesystem::path dataset;
    std::filesystem::path audit;
};

struct RunResult {
    std::vector<DatasetRecord> records;
    std::vector<AuditRecord> audit;
    std::size_t items = 0;
    std::size_t resumed_items = 0;
};

/// Runs every label vector. With `paths`, each finished item is appended to
/// the dataset and audit files (the audit file is the checkpoint). `resume`
/// keeps items already complete in the checkpoint and skips them.
RunResult run_dataset(std::span<const TargetLabelVector> targets, const RunConfig& cfg,
                      const ReferenceStore& store, Backend& backend,
                      const std::optional<RunPaths>& paths = std::nullopt, bool resume = false);

// ---------------------------------------------------------------------------
// Persistence (JSONL)

std::string to_json_line(const DatasetRecord& record);
std::string to_json_line(const AuditRecord& record);

void persist_dataset(std::span<const DatasetRecord> records, const std::filesystem::path& path);
/// Throws FormatError naming the 1-based line of the first malformed line.
std::vector<DatasetRecord> load_dataset(const std::filesystem::path& path);

void persist_audit(std::span<const AuditRecord> records, const std::filesystem::path& path);
std::vector<AuditRecord> load_audit(const std::filesystem::path& path);

} // namespace crisisgen
