#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "crisisgen/labels.hpp"

namespace crisisgen {

/// Critique of one rejected tweet: the tweet itself plus one message per
/// failed check, ordered location, damage, diversity.
struct FeedbackText {
    std::string tweet_text;
    std::vector<std::string> messages;

    /// `Generated tweet: {tweet}; {msg1}; {msg2}...`
    std::string line() const;

    bool operator==(const FeedbackText&) const = default;
};

/// Generation prompt: the rendered template plus the feedback accumulated
/// from earlier rejected attempts, oldest first.
struct Prompt {
    std::string base;
    std::vector<FeedbackText> feedback_block;

    bool operator==(const Prompt&) const = default;
};

inline constexpr std::string_view kFeedbackHeader =
    "The previous attempt was incorrect with the following feedback:";
inline constexpr std::string_view kRegenerateInstruction = "Regenerate the tweet correcting these issues.";

/// The four damage-scale lines, each starting "<level> - ".
const std::vector<std::string>& damage_scale_lines();

Prompt build_prompt(const TargetLabelVector& target);

/// Base text, then (when feedback exists) the feedback header, one line per
/// feedback entry, a blank line and the regenerate instruction.
std::string render_full_prompt(const Prompt& prompt);

} // namespace crisisgen
