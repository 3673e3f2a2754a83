#include "crisisgen/prompt.hpp"

namespace crisisgen {

const std::vector<std::string>& damage_scale_lines() {
    static const std::vector<std::string> lines = {
        "0 - No damage or injury. This damage level corresponds to levels I-III in the Modified Mercalli "
        "Intensity (MMI) scale which has any of the following characteristics: no noticeable damage; felt by "
        "only a few people at rest; no damage to buildings; felt indoors, especially on upper floors; no "
        "significant structural damage.",
        "1 - Slight damage. This damage level corresponds to levels IV-V in the Modified Mercalli Intensity "
        "(MMI) scale which has any of the following characteristics: felt by most people; some damage to "
        "buildings, such as minor cracks; felt by everyone; damage to buildings, minor cracks, but no "
        "collapse.",
        "2 - Moderate damage with the possibility of injuries. This damage level corresponds to levels VI-VII "
        "in the Modified Mercalli Intensity (MMI) scale which has any of the following characteristics: damage "
        "to buildings, visible structural deformation; significant damage, some collapses or structural "
        "failures.",
        "3 - Severe damage with the possibility of fatalities. This damage level corresponds to levels VIII-X "
        "in the Modified Mercalli Intensity (MMI) scale which has any of the following characteristics: many "
        "buildings collapse or are severely damaged; total destruction in some areas, severe damage; complete "
        "destruction of all structures in the affected area.",
    };
    return lines;
}

std::string FeedbackText::line() const {
    std::string out = "Generated tweet: " + tweet_text;
    for (const auto& m : messages) {
        out += "; ";
        out += m;
    }
    return out;
}

Prompt build_prompt(const TargetLabelVector& target) {
    const auto level = std::to_string(target.damage_level);
    std::string p;
    p += "Task:\n";
    p += "You are a synthetic tweet generator. Your task is to generate a tweet as if it was posted by a real "
         "Twitter user after an earthquake event. Consider varying the persona that generated the tweet (eg, a "
         "concerned citizen expressing his/her sentiment, a government/news agency providing information, a user "
         "reporting his/her firsthand observations about the situation, etc.)\n";
    p += "\n";
    p += "Instructions:\n";
    p += "You must generate one synthetic tweet such that a large language model (LLM) can satisfy the "
         "following conditions:\n";
    p += "1. Identify \"" + target.location + "\" from the synthetic tweet\n";
    p += "2. Identify that the tweet is related to damage from the earthquake event\n";
    p += "3. Identify that the tweet has a damage level of \"" + level +
         "\" based on the following damage scale:\n";
    for (const auto& line : damage_scale_lines()) p += "    " + line + "\n";
    p += "\n";
    p += "Input:\n";
    p += "Location: " + target.location + "\n";
    p += "Damage level: " + level + "\n";
    p += "\n";
    p += "Output:\n";
    p += "Do not provide additional output except for the following, in strict JSON format:\n";
    p += "{\n";
    p += "    \"synthetic_tweet_text\": \"< synthetic tweet >\"\n";
    p += "}";
    return Prompt{std::move(p), {}};
}

std::string render_full_prompt(const Prompt& prompt) {
    if (prompt.feedback_block.empty()) return prompt.base;
    std::string out = prompt.base;
    out += "\n\n";
    out += kFeedbackHeader;
    out += '\n';
    for (const auto& f : prompt.feedback_block) {
        out += f.line();
        out += '\n';
    }
    out += '\n';
    out += kRegenerateInstruction;
    return out;
}

} // namespace crisisgen
