#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "crisisgen/backend.hpp"
#include "crisisgen/labels.hpp"
#include "crisisgen/orchestrator.hpp"

namespace crisisgen {

/// Per-round pass rates over the attempts evaluated in that round.
struct RoundStats {
    int round = 0;
    std::size_t evaluated = 0;
    double pct_pass_loc = 0.0;
    double pct_pass_dmg = 0.0;
    double pct_pass_div = 0.0;
    /// Share of all items accepted at or before this round.
    double pct_accepted_cumulative = 0.0;

    bool operator==(const RoundStats&) const = default;
};

/// Rows only for rounds with at least one evaluated attempt. Throws
/// PreconditionError when nothing was evaluated.
std::vector<RoundStats> round_pass_rates(std::span<const AuditRecord> audit);

struct ChecksHistogram {
    int round = 0;
    /// counts[i] = evaluated attempts passing exactly i checks.
    std::array<std::size_t, 4> counts{};

    bool operator==(const ChecksHistogram&) const = default;
};

std::vector<ChecksHistogram> checks_passed_distribution(std::span<const AuditRecord> audit);

struct CharacteristicsReport {
    std::size_t size = 0;
    std::size_t unique_locations = 0;
    double unique_locations_pct = 0.0;
    std::array<std::size_t, 4> damage_counts{};
    std::array<double, 4> damage_pct{};
};

/// Locations are counted case-insensitively.
CharacteristicsReport dataset_characteristics(std::span<const DatasetRecord> records);

/// Half-up rounding to an integer percentage.
long round_percent(double pct);

/// `size 6,819; unique 789 (12); damage 3,841 (56) / 2,386 (35) / 592 (9) / 0 (0)`
std::string characteristics_summary(const CharacteristicsReport& report);

struct StructuralStats {
    std::map<std::size_t, std::size_t> length_histogram;  ///< length in code points → count
    std::map<std::string, double> hashtag_frequency;      ///< lowercased tag → share
    std::size_t hashtag_total = 0;
};

/// Hashtags are `#` plus a maximal run of [A-Za-z0-9_], lowercased.
std::vector<std::string> extract_hashtags(std::string_view text);
StructuralStats structural_stats(std::span<const std::string> texts);

enum class EvalTask { geolocalization, damage_prediction };

std::string_view to_string(EvalTask task) noexcept;

struct EvalReport {
    EvalTask task = EvalTask::geolocalization;
    std::size_t total = 0;
    std::size_t valid = 0;
    std::size_t correct = 0;
    double pct_valid = 0.0;
    /// correct / valid; 0 and accuracy_defined = false when nothing is valid.
    double accuracy_relative = 0.0;
    bool accuracy_defined = false;

    bool operator==(const EvalReport&) const = default;
};

/// Case-insensitive equality, or either string containing the other.
bool location_matches(std::string_view extracted, std::string_view target);

EvalReport eval_geolocalization(std::span<const DatasetRecord> records, Backend& backend,
                                const AnnotationConfig& cfg, Diagnostics* diag = nullptr);
EvalReport eval_damage_prediction(std::span<const DatasetRecord> records, Backend& backend,
                                  const AnnotationConfig& cfg, Diagnostics* diag = nullptr);

// ---------------------------------------------------------------------------
// Report files. CSV rounds to one decimal; JSON keeps full precision.

enum class ReportFormat { csv, json };

std::string round_stats_csv(std::span<const RoundStats> stats);
std::string round_stats_json(std::span<const RoundStats> stats);
std::vector<RoundStats> round_stats_from_json(std::string_view document);

std::string histogram_csv(std::span<const ChecksHistogram> rows);
std::string histogram_json(std::span<const ChecksHistogram> rows);

std::string characteristics_json(const CharacteristicsReport& report);
std::string structural_json(const StructuralStats& stats);

std::string eval_report_json(std::span<const EvalReport> reports);
std::vector<EvalReport> eval_reports_from_json(std::string_view document);

void emit_report(std::span<const RoundStats> stats, const std::filesystem::path& path, ReportFormat format);
void emit_report(std::span<const ChecksHistogram> rows, const std::filesystem::path& path, ReportFormat format);

/// Writes `content` to `path`, replacing any existing file.
void write_text_file(const std::filesystem::path& path, std::string_view content);
std::string read_text_file(const std::filesystem::path& path);

} // namespace crisisgen
