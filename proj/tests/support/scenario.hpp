#pragma once

// On-disk replay scenarios for driving the command-line tool.

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "support/test_support.hpp"

namespace crisisgen::testing {

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::filesystem::path& p, const std::string& body) {
    std::ofstream(p, std::ios::binary) << body;
}

struct CliResult {
    int code = 0;
    std::string out;
    std::string err;
};

/// One label vector ("San Francisco", 0); the first reply misses the location
/// (hashtag without the space), the second names it. Both embed next to the
/// damage-0 cluster of the reference store.
struct CorrectionScenario {
    std::filesystem::path dir;
    std::filesystem::path labels, refstore, chat, embed;

    static constexpr const char* kMiss =
        "Just saw a tremor downtown. Looks like someone dropped something HUGE. #SanFrancisco";
    static constexpr const char* kHit = "Felt a light tremor in San Francisco, nothing fell off the shelves";

    explicit CorrectionScenario(const std::filesystem::path& root) : dir(root) {
        labels = dir / "labels.jsonl";
        refstore = dir / "refstore.json";
        chat = dir / "chat.jsonl";
        embed = dir / "embed.jsonl";
        write_file(labels, "{\"location\":\"San Francisco\",\"damage\":0,\"source_id\":\"s1\"}\n");
        make_store({{{1, 0}, 0}, {{0.95f, 0.31f}, 0}, {{0.9f, 0.44f}, 0}, {{0, 1}, 1}, {{0.1f, 0.99f}, 1}})
            .save(refstore);
        sequence_fixture({tweet_json(kMiss), tweet_json(kHit)}).save(chat);
        embedding_fixture({{kMiss, {1, 0}}, {kHit, {1, 0}}}).save(embed);
    }

    std::vector<std::string> generate_args(const std::filesystem::path& out) const {
        return {"crisisgen",          "generate",        "--labels",      labels.string(),
                "--refstore",         refstore.string(), "--replay-chat", chat.string(),
                "--replay-embed",     embed.string(),    "--embedding-model", "replay-embed",
                "--out",              out.string()};
    }
};

} // namespace crisisgen::testing
