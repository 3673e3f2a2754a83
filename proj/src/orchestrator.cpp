#include "crisisgen/orchestrator.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "crisisgen/generator.hpp"
#include "crisisgen/text.hpp"

namespace crisisgen {

using nlohmann::json;

void RunConfig::validate() const {
    if (rounds < 0) throw PreconditionError("rounds must be >= 0");
    if (!std::isfinite(temperature) || temperature <= 0.0) throw PreconditionError("temperature must be > 0");
    if (generator.parse_retries < 0) throw PreconditionError("parse_retries must be >= 0");
    if (workers == 0) throw PreconditionError("workers must be >= 1");
    evaluator.validate();
}

std::string_view to_string(AttemptOutcome outcome) noexcept {
    switch (outcome) {
    case AttemptOutcome::accepted: return "accepted";
    case AttemptOutcome::rejected: return "rejected";
    case AttemptOutcome::generation_failed: return "generation_failed";
    case AttemptOutcome::evaluation_failed: return "evaluation_failed";
    }
    return "rejected";
}

AttemptOutcome attempt_outcome_from(std::string_view name) {
    if (name == "accepted") return AttemptOutcome::accepted;
    if (name == "rejected") return AttemptOutcome::rejected;
    if (name == "generation_failed") return AttemptOutcome::generation_failed;
    if (name == "evaluation_failed") return AttemptOutcome::evaluation_failed;
    throw FormatError("unknown attempt outcome \"" + std::string(name) + "\"");
}

std::vector<std::string> AcceptedCorpus::snapshot() const {
    std::shared_lock lock(mutex_);
    return texts_;
}

void AcceptedCorpus::add(std::string text) {
    std::unique_lock lock(mutex_);
    texts_.push_back(std::move(text));
}

std::size_t AcceptedCorpus::size() const {
    std::shared_lock lock(mutex_);
    return texts_.size();
}

std::string item_id_for(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "item-%06zu", index);
    return buf;
}

std::uint64_t attempt_seed(std::uint64_t run_seed, std::string_view item_id, int attempt_index) {
    std::string key = std::to_string(run_seed);
    key += '/';
    key += item_id;
    key += '/';
    key += std::to_string(attempt_index);
    return stable_hash64(key);
}

std::string utc_timestamp_now() {
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

ItemResult run_item(const std::string& item_id, const TargetLabelVector& target, const RunConfig& cfg,
                    const ReferenceStore& store, AcceptedCorpus& corpus, Backend& backend) {
    target.validate();
    ItemResult result;
    Prompt prompt = build_prompt(target);

    for (int attempt = 0; attempt <= cfg.rounds; ++attempt) {
        AuditRecord audit;
        audit.item_id = item_id;
        audit.attempt_index = attempt;

        std::optional<SyntheticTweet> tweet;
        try {
            tweet = generate(prompt, target, cfg.temperature, backend, cfg.generator, attempt);
        } catch (const GenerationFailed& e) {
            audit.outcome = AttemptOutcome::generation_failed;
            audit.error = e.what();
            result.audit.push_back(std::move(audit));
            continue;
        }
        audit.tweet_text = tweet->text;

        ComplianceDetails details;
        try {
            std::mt19937_64 rng(attempt_seed(cfg.seed, item_id, attempt));
            const auto snapshot = corpus.snapshot();
            details = evaluate(*tweet, target, store, snapshot, cfg.evaluator, backend, rng);
        } catch (const ProtocolError& e) {
            audit.outcome = AttemptOutcome::evaluation_failed;
            audit.error = e.what();
            result.audit.push_back(std::move(audit));
            continue;
        } catch (const PreconditionError& e) {
            audit.outcome = AttemptOutcome::evaluation_failed;
            audit.error = e.what();
            result.audit.push_back(std::move(audit));
            continue;
        }
        audit.details = details;

        if (details.vector.accepted()) {
            audit.outcome = AttemptOutcome::accepted;
            result.audit.push_back(std::move(audit));
            corpus.add(tweet->text);
            result.record = DatasetRecord{item_id,
                                          cfg.event_name,
                                          tweet->text,
                                          target.location,
                                          target.damage_level,
                                          attempt,
                                          cfg.temperature,
                                          cfg.generator.model,
                                          cfg.fixed_timestamp.value_or(utc_timestamp_now())};
            break;
        }

        audit.outcome = AttemptOutcome::rejected;
        result.audit.push_back(std::move(audit));
        prompt = append_feedback(std::move(prompt), render_feedback(*tweet, details, target));
    }
    return result;
}

// ---------------------------------------------------------------------------
// JSONL serialisation

namespace {

json details_to_json(const ComplianceDetails& d) {
    json j = {{"c_loc", d.vector.location},
              {"c_dmg", d.vector.damage},
              {"c_div", d.vector.diversity},
              {"threshold", d.threshold},
              {"reference_sample_size", d.reference_sample_size}};
    j["predicted_damage"] = d.predicted_damage ? json(*d.predicted_damage) : json(nullptr);
    j["self_bleu"] = d.self_bleu ? json(*d.self_bleu) : json(nullptr);
    return j;
}

ComplianceDetails details_from_json(const json& j) {
    ComplianceDetails d;
    d.vector.location = j.at("c_loc").get<bool>();
    d.vector.damage = j.at("c_dmg").get<bool>();
    d.vector.diversity = j.at("c_div").get<bool>();
    d.threshold = j.at("threshold").get<double>();
    d.reference_sample_size = j.at("reference_sample_size").get<std::size_t>();
    if (j.contains("predicted_damage") && !j["predicted_damage"].is_null())
        d.predicted_damage = j["predicted_damage"].get<int>();
    if (j.contains("self_bleu") && !j["self_bleu"].is_null()) d.self_bleu = j["self_bleu"].get<double>();
    return d;
}

DatasetRecord dataset_from_json(const json& j) {
    DatasetRecord r;
    r.id = j.at("id").get<std::string>();
    r.event = j.at("event").get<std::string>();
    r.tweet_text = j.at("tweet_text").get<std::string>();
    r.target_location = j.at("target_location").get<std::string>();
    r.target_damage_level = j.at("target_damage_level").get<int>();
    r.accepted_round = j.at("accepted_round").get<int>();
    r.temperature = j.at("temperature").get<double>();
    r.generator_model = j.at("generator_model").get<std::string>();
    r.created_at = j.at("created_at").get<std::string>();
    return r;
}

AuditRecord audit_from_json(const json& j) {
    AuditRecord r;
    r.item_id = j.at("item_id").get<std::string>();
    r.attempt_index = j.at("attempt_index").get<int>();
    r.outcome = attempt_outcome_from(j.at("outcome").get<std::string>());
    if (j.contains("tweet_text") && !j["tweet_text"].is_null()) r.tweet_text = j["tweet_text"].get<std::string>();
    if (j.contains("details") && !j["details"].is_null()) r.details = details_from_json(j["details"]);
    if (j.contains("error") && !j["error"].is_null()) r.error = j["error"].get<std::string>();
    return r;
}

template <class Record, class Parse>
std::vector<Record> load_jsonl(const std::filesystem::path& path, Parse parse, bool tolerate_torn_tail,
                               bool* torn = nullptr) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw PreconditionError("cannot open " + path.string());
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);) lines.push_back(std::move(line));

    std::vector<Record> out;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (text::trim(lines[i]).empty()) continue;
        try {
            out.push_back(parse(json::parse(lines[i])));
        } catch (const std::exception& e) {
            const bool last = i + 1 == lines.size();
            if (tolerate_torn_tail && last) {
                if (torn) *torn = true;
                break;
            }
            throw FormatError(path.string() + ": " + e.what(), i + 1);
        }
    }
    return out;
}

template <class Record>
void persist_jsonl(std::span<const Record> records, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw PreconditionError("cannot write " + path.string());
    for (const auto& r : records) out << to_json_line(r) << '\n';
    if (!out) throw PreconditionError("write failed for " + path.string());
}

} // namespace

std::string to_json_line(const DatasetRecord& r) {
    // Field order is part of the file format.
    std::string out = "{";
    auto field = [&](const char* name, const json& value, bool first = false) {
        if (!first) out += ',';
        out += json(name).dump();
        out += ':';
        out += value.dump();
    };
    field("id", r.id, true);
    field("event", r.event);
    field("tweet_text", r.tweet_text);
    field("target_location", r.target_location);
    field("target_damage_level", r.target_damage_level);
    field("accepted_round", r.accepted_round);
    field("temperature", r.temperature);
    field("generator_model", r.generator_model);
    field("created_at", r.created_at);
    out += '}';
    return out;
}

std::string to_json_line(const AuditRecord& r) {
    json j = {{"item_id", r.item_id}, {"attempt_index", r.attempt_index}, {"outcome", to_string(r.outcome)}};
    j["tweet_text"] = r.tweet_text ? json(*r.tweet_text) : json(nullptr);
    j["details"] = r.details ? details_to_json(*r.details) : json(nullptr);
    if (r.error) j["error"] = *r.error;
    return j.dump();
}

void persist_dataset(std::span<const DatasetRecord> records, const std::filesystem::path& path) {
    persist_jsonl(records, path);
}

std::vector<DatasetRecord> load_dataset(const std::filesystem::path& path) {
    return load_jsonl<DatasetRecord>(path, dataset_from_json, false);
}

void persist_audit(std::span<const AuditRecord> records, const std::filesystem::path& path) {
    persist_jsonl(records, path);
}

std::vector<AuditRecord> load_audit(const std::filesystem::path& path) {
    return load_jsonl<AuditRecord>(path, audit_from_json, false);
}

// ---------------------------------------------------------------------------
// run_dataset

namespace {

class CheckpointWriter {
public:
    CheckpointWriter(const RunPaths& paths, bool append)
        : dataset_(paths.dataset, std::ios::binary | (append ? std::ios::app : std::ios::trunc)),
          audit_(paths.audit, std::ios::binary | (append ? std::ios::app : std::ios::trunc)) {
        if (!dataset_) throw PreconditionError("cannot write " + paths.dataset.string());
        if (!audit_) throw PreconditionError("cannot write " + paths.audit.string());
    }

    // Dataset first: an item only counts as done once its audit block lands,
    // and resume drops dataset rows for items that are not done.
    void write(const ItemResult& item) {
        std::lock_guard lock(mutex_);
        if (item.record) dataset_ << to_json_line(*item.record) << '\n' << std::flush;
        std::string block;
        for (const auto& a : item.audit) block += to_json_line(a) + '\n';
        audit_ << block << std::flush;
        if (!dataset_ || !audit_) throw PreconditionError("checkpoint write failed");
    }

private:
    std::mutex mutex_;
    std::ofstream dataset_;
    std::ofstream audit_;
};

struct Checkpoint {
    std::set<std::string> complete;
    std::vector<DatasetRecord> records;
    std::vector<AuditRecord> audit;
};

Checkpoint restore_checkpoint(const RunPaths& paths, int rounds) {
    Checkpoint cp;
    if (!std::filesystem::exists(paths.audit)) return cp;

    bool torn = false;
    auto audit = load_jsonl<AuditRecord>(paths.audit, audit_from_json, true, &torn);
    if (torn) std::cerr << "warning: dropped a partial trailing line from " << paths.audit << '\n';

    std::map<std::string, int> attempts;
    std::set<std::string> accepted;
    for (const auto& a : audit) {
        ++attempts[a.item_id];
        if (a.outcome == AttemptOutcome::accepted) accepted.insert(a.item_id);
    }
    for (const auto& [id, n] : attempts)
        if (accepted.count(id) || n >= rounds + 1) cp.complete.insert(id);
    for (auto& a : audit)
        if (cp.complete.count(a.item_id)) cp.audit.push_back(std::move(a));

    if (std::filesystem::exists(paths.dataset)) {
        for (auto& r : load_jsonl<DatasetRecord>(paths.dataset, dataset_from_json, true))
            if (cp.complete.count(r.id)) cp.records.push_back(std::move(r));
    }
    return cp;
}

} // namespace

RunResult run_dataset(std::span<const TargetLabelVector> targets, const RunConfig& cfg,
                      const ReferenceStore& store, Backend& backend, const std::optional<RunPaths>& paths,
                      bool resume) {
    if (targets.empty()) throw PreconditionError("run_dataset needs at least one label vector");
    cfg.validate();
    store.validate();
    if (store.entries.empty()) throw PreconditionError("reference store is empty");
    for (const auto& y : targets) y.validate();

    RunResult result;
    result.items = targets.size();

    Checkpoint cp;
    if (paths && resume) {
        cp = restore_checkpoint(*paths, cfg.rounds);
        // Rewrite the files so they hold exactly the completed items.
        persist_dataset(cp.records, paths->dataset);
        persist_audit(cp.audit, paths->audit);
    }
    std::vector<std::string> accepted_texts;
    for (const auto& r : cp.records) accepted_texts.push_back(r.tweet_text);
    AcceptedCorpus corpus(std::move(accepted_texts));
    result.records = cp.records;
    result.audit = cp.audit;
    result.resumed_items = cp.complete.size();

    std::optional<CheckpointWriter> writer;
    if (paths) writer.emplace(*paths, resume);

    std::vector<std::size_t> pending;
    for (std::size_t i = 0; i < targets.size(); ++i)
        if (!cp.complete.count(item_id_for(i))) pending.push_back(i);

    auto collect = [&](ItemResult&& item) {
        if (item.record) result.records.push_back(std::move(*item.record));
        for (auto& a : item.audit) result.audit.push_back(std::move(a));
    };

    if (cfg.workers <= 1) {
        for (auto i : pending) {
            auto item = run_item(item_id_for(i), targets[i], cfg, store, corpus, backend);
            if (writer) writer->write(item);
            collect(std::move(item));
        }
        return result;
    }

    std::mutex result_mutex;
    std::atomic<std::size_t> next{0};
    std::atomic<bool> stop{false};
    std::exception_ptr failure;
    std::vector<std::thread> pool;
    const auto workers = std::min(cfg.workers, std::max<std::size_t>(1, pending.size()));
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            while (!stop) {
                const auto slot = next++;
                if (slot >= pending.size()) return;
                const auto i = pending[slot];
                try {
                    auto item = run_item(item_id_for(i), targets[i], cfg, store, corpus, backend);
                    if (writer) writer->write(item);
                    std::lock_guard lock(result_mutex);
                    collect(std::move(item));
                } catch (...) {
                    std::lock_guard lock(result_mutex);
                    if (!failure) failure = std::current_exception();
                    stop = true;
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
    return result;
}

} // namespace crisisgen
