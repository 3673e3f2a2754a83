#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "crisisgen/backend.hpp"
#include "crisisgen/generator.hpp"
#include "crisisgen/labels.hpp"

namespace crisisgen {

struct ComplianceVector {
    bool location = false;
    bool damage = false;
    bool diversity = false;

    bool accepted() const noexcept { return location && damage && diversity; }
    int passed_count() const noexcept { return int(location) + int(damage) + int(diversity); }

    bool operator==(const ComplianceVector&) const = default;
};

struct ComplianceDetails {
    ComplianceVector vector;
    std::optional<int> predicted_damage;  ///< kNN verdict
    std::optional<double> self_bleu;      ///< 0..100
    double threshold = 40.0;
    std::size_t reference_sample_size = 0;

    bool operator==(const ComplianceDetails&) const = default;
};

struct EvaluatorConfig {
    int k = 5;
    double bleu_threshold = 40.0;
    std::size_t bleu_sample_size = 100;

    void validate() const;
};

/// Case-insensitive substring test of the target location.
bool check_location(std::string_view tweet_text, std::string_view location);

double cosine_similarity(std::span<const float> a, std::span<const float> b) noexcept;

/// Majority vote over the k most cosine-similar entries (all entries when the
/// store is smaller). Equal similarities rank by store order. A vote tie goes
/// to whichever tied label owns the most similar entry.
int knn_damage(const EmbeddingVector& query, const ReferenceStore& store, int k);

struct DamageVerdict {
    bool passed = false;
    int predicted = 0;
};

DamageVerdict check_damage(std::string_view tweet_text, int target_damage, const ReferenceStore& store,
                           Backend& backend, const EvaluatorConfig& cfg);

/// Lowercase, then split on whitespace runs.
std::vector<std::string> bleu_tokens(std::string_view s);

/// BLEU of `candidate` against `references` on a 0..100 scale: clipped
/// n-gram precisions up to min(4, |candidate|), geometric mean, closest-length
/// brevity penalty (ties prefer the shorter reference), no smoothing.
double self_bleu(std::string_view candidate, std::span<const std::string> references);

struct DiversityVerdict {
    bool passed = true;
    double score = 0.0;
    std::size_t sample_size = 0;
};

/// Scores `tweet_text` against a uniform sample (without replacement) of at
/// most cfg.bleu_sample_size accepted texts. Passes when score < threshold.
DiversityVerdict check_diversity(std::string_view tweet_text, std::span<const std::string> accepted_snapshot,
                                 const EvaluatorConfig& cfg, std::mt19937_64& rng);

/// Runs all three checks (never short-circuits).
ComplianceDetails evaluate(const SyntheticTweet& tweet, const TargetLabelVector& target,
                           const ReferenceStore& store, std::span<const std::string> accepted_snapshot,
                           const EvaluatorConfig& cfg, Backend& backend, std::mt19937_64& rng);

} // namespace crisisgen
