#pragma once

#include <span>
#include <string>

#include "crisisgen/evaluator.hpp"
#include "crisisgen/prompt.hpp"

namespace crisisgen {

std::string location_message(std::string_view location);
std::string damage_message(int expected, int predicted);
/// Score and threshold are printed with one decimal digit.
std::string diversity_message(double score, double threshold);

/// Feedback for a rejected tweet. Throws PreconditionError when the
/// compliance vector is all-true.
FeedbackText render_feedback(const SyntheticTweet& tweet, const ComplianceDetails& details,
                             const TargetLabelVector& target);

Prompt append_feedback(Prompt prompt, FeedbackText feedback);
Prompt append_feedback(Prompt prompt, std::span<const FeedbackText> feedback);

} // namespace crisisgen
