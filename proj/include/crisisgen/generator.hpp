#pragma once

#include <string>
#include <string_view>

#include "crisisgen/backend.hpp"
#include "crisisgen/prompt.hpp"

namespace crisisgen {

struct SyntheticTweet {
    std::string text;
    TargetLabelVector target;
    int attempt_index = 0;
    double temperature = 1.0;
};

struct GeneratorConfig {
    std::string model;
    int max_tokens = 256;
    /// Extra requests allowed when the reply cannot be parsed.
    int parse_retries = 2;
};

/// Raised when every request in the parse-retry budget produced unusable output.
class GenerationFailed : public Error {
public:
    GenerationFailed(const std::string& what, std::string last_raw, int calls)
        : Error(what), last_raw_(std::move(last_raw)), calls_(calls) {}

    const std::string& last_raw() const noexcept { return last_raw_; }
    int calls() const noexcept { return calls_; }

private:
    std::string last_raw_;
    int calls_;
};

/// Pulls `synthetic_tweet_text` out of the first JSON object in `raw`
/// (after removing a ``` / ```json fence). Throws ParseError.
std::string parse_generation(std::string_view raw);

/// Sends render_full_prompt(prompt) as a single user message and parses the
/// reply, re-asking up to cfg.parse_retries times on parse failure.
SyntheticTweet generate(const Prompt& prompt, const TargetLabelVector& target, double temperature,
                        Backend& backend, const GeneratorConfig& cfg, int attempt_index = 0);

} // namespace crisisgen
