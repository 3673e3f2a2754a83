#include "crisisgen/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <unordered_map>

#include "crisisgen/text.hpp"

namespace crisisgen {

void EvaluatorConfig::validate() const {
    if (k < 1) throw PreconditionError("kNN k must be >= 1");
    if (!(bleu_threshold >= 0.0 && bleu_threshold <= 100.0))
        throw PreconditionError("self-BLEU threshold must lie in [0, 100]");
    if (bleu_sample_size < 1) throw PreconditionError("self-BLEU sample size must be >= 1");
}

bool check_location(std::string_view tweet_text, std::string_view location) {
    if (text::trim(location).empty()) throw PreconditionError("target location is empty");
    return text::to_lower(tweet_text).find(text::to_lower(location)) != std::string::npos;
}

double cosine_similarity(std::span<const float> a, std::span<const float> b) noexcept {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += double(a[i]) * double(b[i]);
        na += double(a[i]) * double(a[i]);
        nb += double(b[i]) * double(b[i]);
    }
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

int knn_damage(const EmbeddingVector& query, const ReferenceStore& store, int k) {
    if (store.entries.empty()) throw PreconditionError("reference store is empty");
    if (k < 1) throw PreconditionError("kNN k must be >= 1");
    if (query.dimension() != store.dimension)
        throw PreconditionError("query dimension " + std::to_string(query.dimension()) +
                                " does not match store dimension " + std::to_string(store.dimension));

    const auto n = store.entries.size();
    std::vector<double> sim(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& v = store.entries[i].vector;
        if (v.dimension() != query.dimension()) throw PreconditionError("reference entry dimension mismatch");
        sim[i] = cosine_similarity(query.values(), v.values());
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    const auto top = std::min<std::size_t>(static_cast<std::size_t>(k), n);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(top), order.end(),
                      [&](std::size_t a, std::size_t b) { return sim[a] > sim[b] || (sim[a] == sim[b] && a < b); });

    std::map<int, int> votes;
    int best = 0;
    for (std::size_t i = 0; i < top; ++i) best = std::max(best, ++votes[store.entries[order[i]].damage_level]);
    // Neighbours are in similarity order, so the first tied label seen owns
    // the most similar entry.
    for (std::size_t i = 0; i < top; ++i) {
        const int label = store.entries[order[i]].damage_level;
        if (votes[label] == best) return label;
    }
    return store.entries[order.front()].damage_level;
}

DamageVerdict check_damage(std::string_view tweet_text, int target_damage, const ReferenceStore& store,
                           Backend& backend, const EvaluatorConfig& cfg) {
    if (!valid_damage_level(target_damage))
        throw PreconditionError("target damage level out of range: " + std::to_string(target_damage));
    if (store.entries.empty()) throw PreconditionError("reference store is empty");
    const std::string texts[] = {std::string(tweet_text)};
    const auto embedded = embed_batch(texts, backend);
    const int predicted = knn_damage(embedded.front(), store, cfg.k);
    return {predicted == target_damage, predicted};
}

std::vector<std::string> bleu_tokens(std::string_view s) {
    std::vector<std::string> out;
    const auto lowered = text::to_lower(s);
    std::size_t i = 0;
    const auto is_ws = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; };
    while (i < lowered.size()) {
        while (i < lowered.size() && is_ws(lowered[i])) ++i;
        const auto start = i;
        while (i < lowered.size() && !is_ws(lowered[i])) ++i;
        if (i > start) out.emplace_back(lowered, start, i - start);
    }
    return out;
}

namespace {

using NgramCounts = std::unordered_map<std::string, int>;

NgramCounts count_ngrams(const std::vector<std::string>& tokens, std::size_t n) {
    NgramCounts counts;
    if (tokens.size() < n) return counts;
    for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
        std::string key;
        for (std::size_t j = 0; j < n; ++j) {
            if (j) key.push_back('\x1f');
            key += tokens[i + j];
        }
        ++counts[key];
    }
    return counts;
}

} // namespace

double self_bleu(std::string_view candidate, std::span<const std::string> references) {
    if (references.empty()) throw PreconditionError("self-BLEU needs at least one reference");
    const auto cand = bleu_tokens(candidate);
    if (cand.empty()) throw PreconditionError("self-BLEU candidate is empty");

    std::vector<std::vector<std::string>> refs;
    refs.reserve(references.size());
    for (const auto& r : references) refs.push_back(bleu_tokens(r));

    const std::size_t max_order = std::min<std::size_t>(4, cand.size());
    double log_sum = 0.0;
    for (std::size_t n = 1; n <= max_order; ++n) {
        const auto cand_counts = count_ngrams(cand, n);
        NgramCounts clip;
        for (const auto& ref : refs) {
            for (const auto& [gram, c] : count_ngrams(ref, n)) {
                if (!cand_counts.count(gram)) continue;
                auto& slot = clip[gram];
                slot = std::max(slot, c);
            }
        }
        int matched = 0;
        for (const auto& [gram, c] : cand_counts) {
            auto it = clip.find(gram);
            if (it != clip.end()) matched += std::min(c, it->second);
        }
        if (matched == 0) return 0.0;
        const double total = static_cast<double>(cand.size() - n + 1);
        log_sum += std::log(static_cast<double>(matched) / total);
    }

    const auto cand_len = cand.size();
    std::size_t closest = refs.front().size();
    for (const auto& ref : refs) {
        const auto diff = [&](std::size_t len) { return len > cand_len ? len - cand_len : cand_len - len; };
        if (diff(ref.size()) < diff(closest) || (diff(ref.size()) == diff(closest) && ref.size() < closest))
            closest = ref.size();
    }
    const double bp = cand_len >= closest
                          ? 1.0
                          : std::exp(1.0 - static_cast<double>(closest) / static_cast<double>(cand_len));
    const double score = 100.0 * bp * std::exp(log_sum / static_cast<double>(max_order));
    return std::clamp(score, 0.0, 100.0);
}

DiversityVerdict check_diversity(std::string_view tweet_text, std::span<const std::string> accepted_snapshot,
                                 const EvaluatorConfig& cfg, std::mt19937_64& rng) {
    if (accepted_snapshot.empty()) return {true, 0.0, 0};
    const auto sample_size = std::min(cfg.bleu_sample_size, accepted_snapshot.size());
    std::vector<std::string> references;
    references.reserve(sample_size);
    std::sample(accepted_snapshot.begin(), accepted_snapshot.end(), std::back_inserter(references), sample_size,
                rng);
    const double score = self_bleu(tweet_text, references);
    return {score < cfg.bleu_threshold, score, references.size()};
}

ComplianceDetails evaluate(const SyntheticTweet& tweet, const TargetLabelVector& target,
                           const ReferenceStore& store, std::span<const std::string> accepted_snapshot,
                           const EvaluatorConfig& cfg, Backend& backend, std::mt19937_64& rng) {
    ComplianceDetails details;
    details.threshold = cfg.bleu_threshold;

    details.vector.location = check_location(tweet.text, target.location);

    const auto damage = check_damage(tweet.text, target.damage_level, store, backend, cfg);
    details.vector.damage = damage.passed;
    details.predicted_damage = damage.predicted;

    const auto diversity = check_diversity(tweet.text, accepted_snapshot, cfg, rng);
    details.vector.diversity = diversity.passed;
    details.self_bleu = diversity.score;
    details.reference_sample_size = diversity.sample_size;
    return details;
}

} // namespace crisisgen
