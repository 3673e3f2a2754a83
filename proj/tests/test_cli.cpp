#include <doctest.h>

#include <sstream>

#include <json.hpp>

#include "cli.hpp"
#include "crisisgen/metrics.hpp"
#include "crisisgen/orchestrator.hpp"
#include "support/scenario.hpp"

using namespace crisisgen;
using namespace crisisgen::testing;
using nlohmann::json;

namespace {

CliResult invoke(std::vector<std::string> args) {
    std::ostringstream out, err;
    CliResult r;
    r.code = cli::run(args, out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

std::vector<json> jsonl(const std::filesystem::path& p) {
    std::vector<json> out;
    std::istringstream in(slurp(p));
    for (std::string line; std::getline(in, line);)
        if (!line.empty()) out.push_back(json::parse(line));
    return out;
}

} // namespace

TEST_CASE("usage errors exit 2") {
    CHECK(invoke({"crisisgen", "--help"}).code == cli::kExitOk);
    CHECK(invoke({"crisisgen"}).code == cli::kExitUsage);
    const auto r = invoke({"crisisgen", "frobnicate"});
    CHECK(r.code == cli::kExitUsage);
    CHECK(r.err.find("Usage") != std::string::npos);
    CHECK(invoke({"crisisgen", "generate", "--rounds", "many"}).code == cli::kExitUsage);

    const auto missing = invoke({"crisisgen", "prepare-labels", "--input", "/no/such/corpus.jsonl", "--out", "x"});
    CHECK(missing.code == cli::kExitUsage);
    CHECK(missing.err.find("/no/such/corpus.jsonl") != std::string::npos);
}

TEST_CASE("a live backend and replay fixtures cannot both be configured") {
    TempDir dir;
    CorrectionScenario s(dir.path());
    auto args = s.generate_args(dir / "run");
    args.insert(args.end(), {"--base-url", "http://127.0.0.1:9/v1"});
    CHECK(invoke(args).code == cli::kExitUsage);
}

TEST_CASE("prepare-labels --pre-labeled needs no backend") {
    TempDir dir;
    write_file(dir / "corpus.csv",
               "id,text,location,damage\n1,Walls cracked in Napa,Napa,2\n2,Walls cracked in Napa,Napa,2\n"
               "3,RT @x: Walls cracked,Napa,2\n4,Quiet in Lima,Lima,0\n");
    const auto r = invoke({"crisisgen", "prepare-labels", "--input", (dir / "corpus.csv").string(), "--out",
                        (dir / "labels.jsonl").string(), "--pre-labeled"});
    REQUIRE(r.code == cli::kExitOk);
    CHECK(r.out == "tweets=2 duplicates=1 retweets=1 skipped=0 warnings=0 labels=2\n");
    CHECK(slurp(dir / "labels.jsonl") ==
          "{\"damage\":2,\"location\":\"Napa\",\"source_id\":\"1\"}\n"
          "{\"damage\":0,\"location\":\"Lima\",\"source_id\":\"4\"}\n");
}

TEST_CASE("prepare-labels annotates through replay fixtures") {
    TempDir dir;
    write_file(dir / "corpus.jsonl", "{\"id\":\"a\",\"text\":\"Napa shaking\"}\n{\"id\":\"b\",\"text\":\"no idea\"}\n");
    chat_fixture({{location_annotation_prompt("Napa shaking"), "[\"Napa\"]"},
                  {damage_annotation_prompt("Napa shaking"), "1"},
                  {location_annotation_prompt("no idea"), "[]"},
                  {damage_annotation_prompt("no idea"), "0"}},
                 "annotator")
        .save(dir / "chat.jsonl");
    const auto r = invoke({"crisisgen", "prepare-labels", "--input", (dir / "corpus.jsonl").string(), "--out",
                        (dir / "labels.jsonl").string(), "--replay-chat", (dir / "chat.jsonl").string(),
                        "--annotation-model", "annotator", "--request-log", (dir / "log.jsonl").string()});
    REQUIRE(r.code == cli::kExitOk);
    CHECK(load_label_vectors(dir / "labels.jsonl") == std::vector<TargetLabelVector>{{"Napa", 1, "a"}});
    CHECK(jsonl(dir / "log.jsonl").size() == 4);

    // Nothing survives -> empty result.
    write_file(dir / "none.jsonl", "{\"id\":\"b\",\"text\":\"no idea\"}\n");
    CHECK(invoke({"crisisgen", "prepare-labels", "--input", (dir / "none.jsonl").string(), "--out",
               (dir / "l2.jsonl").string(), "--replay-chat", (dir / "chat.jsonl").string(), "--annotation-model",
               "annotator"})
              .code == cli::kExitRuntime);
}

TEST_CASE("build-refstore embeds labeled texts") {
    TempDir dir;
    write_file(dir / "real.jsonl",
               "{\"text\":\"calm\",\"damage\":0}\n{\"text\":\"ruins\",\"damage\":3}\n{\"text\":\"?\"}\n");
    embedding_fixture({{"calm", {1, 0}}, {"ruins", {0, 1}}}, "emb").save(dir / "embed.jsonl");
    const auto r = invoke({"crisisgen", "build-refstore", "--input", (dir / "real.jsonl").string(), "--out",
                        (dir / "store.json").string(), "--replay-embed", (dir / "embed.jsonl").string(),
                        "--embedding-model", "emb"});
    REQUIRE(r.code == cli::kExitOk);
    CHECK(r.out == "entries=2 dimension=2 model=emb warnings=1\n");
    const auto store = ReferenceStore::load(dir / "store.json");
    CHECK(store.entries.size() == 2);
    CHECK(store.model_id == "emb");
}

TEST_CASE("generate echoes its defaults and writes the run directory") {
    TempDir dir;
    CorrectionScenario s(dir.path());
    const auto r = invoke(s.generate_args(dir / "run"));
    REQUIRE(r.code == cli::kExitOk);
    CHECK(r.out.find("rounds=3 temperature=1.0 bleu_threshold=40.0 knn_k=5 bleu_sample=100") != std::string::npos);
    CHECK(r.out.find("items=1 accepted=1 acceptance=100.0%") != std::string::npos);
    for (const char* f : {"config.json", "dataset.jsonl", "audit.jsonl", "run_meta.json", "replay_requests.jsonl"})
        CHECK(std::filesystem::exists(dir / "run" / f));
    const auto cfg = json::parse(slurp(dir / "run" / "config.json"));
    CHECK(cfg["run"]["rounds"] == 3);
    const auto meta = json::parse(slurp(dir / "run" / "run_meta.json"));
    CHECK(meta["replay_fixtures"].size() == 2);
}

TEST_CASE("generate carries the temperature into every request") {
    TempDir dir;
    CorrectionScenario s(dir.path());
    auto args = s.generate_args(dir / "run");
    args.insert(args.end(), {"--temperature", "1.4"});
    REQUIRE(invoke(args).code == cli::kExitOk);
    int chats = 0;
    for (const auto& e : jsonl(dir / "run" / "replay_requests.jsonl")) {
        if (e["kind"] != "chat") continue;
        ++chats;
        CHECK(e["temperature"] == 1.4);
    }
    CHECK(chats == 2);
    CHECK(load_dataset(dir / "run" / "dataset.jsonl").at(0).temperature == 1.4);
}

TEST_CASE("config file values sit under explicit flags") {
    TempDir dir;
    CorrectionScenario s(dir.path());
    write_file(dir / "cfg.json", R"({"run": {"rounds": 0, "event": "napa-2014", "seed": 11}})");
    auto args = s.generate_args(dir / "run");
    args.insert(args.end(), {"--config", (dir / "cfg.json").string(), "--rounds", "2"});
    const auto r = invoke(args);
    REQUIRE(r.code == cli::kExitOk);
    const auto cfg = json::parse(slurp(dir / "run" / "config.json"));
    CHECK(cfg["run"]["rounds"] == 2);
    CHECK(cfg["run"]["event"] == "napa-2014");
    CHECK(cfg["run"]["seed"] == 11);
    CHECK(load_dataset(dir / "run" / "dataset.jsonl").at(0).event == "napa-2014");

    write_file(dir / "broken.json", "{not json");
    args = s.generate_args(dir / "run2");
    args.insert(args.end(), {"--config", (dir / "broken.json").string()});
    CHECK(invoke(args).code == cli::kExitUsage);
}

TEST_CASE("a halted run exits 1, keeps its checkpoint and resumes") {
    TempDir dir;
    CorrectionScenario s(dir.path());
    write_file(s.labels, slurp(s.labels) + "{\"location\":\"Oakland\",\"damage\":0}\n");
    // Enough replies for the first item only.
    const auto first = invoke(s.generate_args(dir / "run"));
    CHECK(first.code == cli::kExitRuntime);
    CHECK(first.err.find("--resume") != std::string::npos);
    CHECK(load_dataset(dir / "run" / "dataset.jsonl").size() == 1);

    sequence_fixture({tweet_json("Oakland felt it, nothing broke")}).save(dir / "more.jsonl");
    embedding_fixture({{"Oakland felt it, nothing broke", {1, 0}}}).save(dir / "more_embed.jsonl");
    auto args = s.generate_args(dir / "run");
    args[7] = (dir / "more.jsonl").string();
    args[9] = (dir / "more_embed.jsonl").string();
    args.push_back("--resume");
    const auto second = invoke(args);
    REQUIRE(second.code == cli::kExitOk);
    CHECK(second.out.find("items=2 accepted=2") != std::string::npos);
    CHECK(load_dataset(dir / "run" / "dataset.jsonl").size() == 2);
}

TEST_CASE("metrics writes the report set and matches the golden CSV") {
    TempDir dir;
    ComplianceDetails d;
    d.predicted_damage = 0;
    d.self_bleu = 10.0;
    auto rec = [&](const char* id, int attempt, ComplianceVector v) {
        d.vector = v;
        return AuditRecord{id, attempt, "t", d, v.accepted() ? AttemptOutcome::accepted : AttemptOutcome::rejected,
                           std::nullopt};
    };
    const std::vector<AuditRecord> audit = {
        rec("item-000000", 0, {false, true, true}), rec("item-000001", 0, {true, true, true}),
        rec("item-000002", 0, {true, false, true}), rec("item-000000", 1, {true, true, true}),
        rec("item-000002", 1, {true, true, false}),
    };
    persist_audit(audit, dir / "audit.jsonl");
    const std::vector<DatasetRecord> ds = {
        {"item-000000", "ev", "#Napa ok", "Napa", 0, 1, 1.0, "g", "1970-01-01T00:00:00Z"},
        {"item-000001", "ev", "Lima fine #lima #quake", "Lima", 1, 0, 1.0, "g", "1970-01-01T00:00:00Z"},
    };
    persist_dataset(ds, dir / "dataset.jsonl");

    const auto r = invoke({"crisisgen", "metrics", "--audit", (dir / "audit.jsonl").string(), "--dataset",
                        (dir / "dataset.jsonl").string(), "--out", (dir / "reports").string()});
    REQUIRE(r.code == cli::kExitOk);
    CHECK(slurp(dir / "reports" / "round_stats.csv") ==
          "round,pct_pass_loc,pct_pass_dmg,pct_pass_div,pct_accepted_cumulative\n"
          "0,66.7,66.7,100.0,33.3\n"
          "1,100.0,100.0,50.0,66.7\n");
    CHECK(slurp(dir / "reports" / "checks_passed.csv") ==
          "round,checks_0,checks_1,checks_2,checks_3\n0,0,0,2,1\n1,0,0,1,1\n");
    for (const char* f : {"round_stats.json", "checks_passed.json", "characteristics.json", "structural.json"})
        CHECK(std::filesystem::exists(dir / "reports" / f));
    CHECK(r.out.find("size 2; unique 2 (100); damage 1 (50) / 1 (50) / 0 (0) / 0 (0)") != std::string::npos);

    write_file(dir / "empty.jsonl", "");
    CHECK(invoke({"crisisgen", "metrics", "--audit", (dir / "empty.jsonl").string(), "--dataset",
               (dir / "dataset.jsonl").string(), "--out", (dir / "r2").string()})
              .code == cli::kExitRuntime);
}

TEST_CASE("evaluate-downstream writes the eval report") {
    TempDir dir;
    const std::vector<DatasetRecord> ds = {
        {"a", "ev", "quake in Napa", "Napa", 1, 0, 1.0, "g", "x"},
        {"b", "ev", "quake", "Chile", 0, 0, 1.0, "g", "x"},
    };
    persist_dataset(ds, dir / "dataset.jsonl");
    chat_fixture({{location_annotation_prompt("quake in Napa"), "[\"Napa Valley\"]"},
                  {location_annotation_prompt("quake"), "[]"},
                  {damage_annotation_prompt("quake in Napa"), "1"},
                  {damage_annotation_prompt("quake"), "3"}},
                 "default")
        .save(dir / "chat.jsonl");
    const auto r = invoke({"crisisgen", "evaluate-downstream", "--dataset", (dir / "dataset.jsonl").string(), "--out",
                        (dir / "eval").string(), "--replay-chat", (dir / "chat.jsonl").string()});
    REQUIRE(r.code == cli::kExitOk);
    const auto reports = eval_reports_from_json(slurp(dir / "eval" / "eval_report.json"));
    REQUIRE(reports.size() == 2);
    CHECK(reports[0].pct_valid == 50.0);
    CHECK(reports[0].accuracy_relative == 100.0);
    CHECK(reports[1].pct_valid == 100.0);
    CHECK(reports[1].accuracy_relative == 50.0);
}
