#include "crisisgen/feedback.hpp"

#include <cstdio>

namespace crisisgen {

namespace {
std::string one_decimal(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.1f", v);
    return buf;
}
} // namespace

std::string location_message(std::string_view location) {
    return "Location \"" + std::string(location) + "\" not found in tweet";
}

std::string damage_message(int expected, int predicted) {
    return "Damage mismatch: expected \"" + std::to_string(expected) + "\", predicted \"" +
           std::to_string(predicted) + "\"";
}

std::string diversity_message(double score, double threshold) {
    return "Too similar to accepted corpus (Self-BLEU=" + one_decimal(score) + " > " + one_decimal(threshold) + ")";
}

FeedbackText render_feedback(const SyntheticTweet& tweet, const ComplianceDetails& details,
                             const TargetLabelVector& target) {
    const auto& c = details.vector;
    if (c.accepted()) throw PreconditionError("render_feedback called on an accepted tweet");

    FeedbackText f{tweet.text, {}};
    if (!c.location) f.messages.push_back(location_message(target.location));
    if (!c.damage) {
        if (!details.predicted_damage) throw PreconditionError("damage check failed without a prediction");
        f.messages.push_back(damage_message(target.damage_level, *details.predicted_damage));
    }
    if (!c.diversity) f.messages.push_back(diversity_message(details.self_bleu.value_or(0.0), details.threshold));
    return f;
}

Prompt append_feedback(Prompt prompt, FeedbackText feedback) {
    prompt.feedback_block.push_back(std::move(feedback));
    return prompt;
}

Prompt append_feedback(Prompt prompt, std::span<const FeedbackText> feedback) {
    prompt.feedback_block.insert(prompt.feedback_block.end(), feedback.begin(), feedback.end());
    return prompt;
}

} // namespace crisisgen
