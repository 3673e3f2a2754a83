#include "crisisgen/generator.hpp"

#include <cmath>

#include <json.hpp>

#include "crisisgen/text.hpp"

namespace crisisgen {

using nlohmann::json;

std::string parse_generation(std::string_view raw) {
    const auto body = text::strip_code_fence(raw);
    const auto block = text::find_json_block(body, '{');
    if (!block) throw ParseError("no JSON object in generator output", std::string(raw));
    json j;
    try {
        j = json::parse(*block);
    } catch (const json::exception& e) {
        throw ParseError(std::string("invalid JSON in generator output: ") + e.what(), std::string(raw));
    }
    if (!j.contains("synthetic_tweet_text"))
        throw ParseError("generator output lacks \"synthetic_tweet_text\"", std::string(raw));
    const auto& value = j["synthetic_tweet_text"];
    if (!value.is_string()) throw ParseError("\"synthetic_tweet_text\" is not a string", std::string(raw));
    const auto tweet = text::trim(value.get_ref<const std::string&>());
    if (tweet.empty()) throw ParseError("\"synthetic_tweet_text\" is empty", std::string(raw));
    return std::string(tweet);
}

SyntheticTweet generate(const Prompt& prompt, const TargetLabelVector& target, double temperature,
                        Backend& backend, const GeneratorConfig& cfg, int attempt_index) {
    if (!std::isfinite(temperature) || temperature <= 0.0)
        throw PreconditionError("generation temperature must be finite and > 0");

    ChatRequest request;
    request.model = cfg.model;
    request.temperature = temperature;
    request.max_tokens = cfg.max_tokens;
    request.messages.push_back({Role::user, render_full_prompt(prompt)});

    std::string last_raw;
    std::string last_error;
    const int budget = 1 + std::max(0, cfg.parse_retries);
    for (int call = 0; call < budget; ++call) {
        auto response = chat_complete(request, backend);
        try {
            return SyntheticTweet{parse_generation(response.content), target, attempt_index, temperature};
        } catch (const ParseError& e) {
            last_raw = std::move(response.content);
            last_error = e.what();
        }
    }
    throw GenerationFailed("generation failed after " + std::to_string(budget) + " calls: " + last_error,
                           std::move(last_raw), budget);
}

} // namespace crisisgen
