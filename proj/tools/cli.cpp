#include "cli.hpp"

#include <ctime>
#include <filesystem>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "crisisgen/backend.hpp"
#include "crisisgen/labels.hpp"
#include "crisisgen/metrics.hpp"
#include "crisisgen/orchestrator.hpp"

namespace crisisgen::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

/// Bad flags, bad config, missing inputs: exit code 2.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Timestamp pinned into replay runs so their outputs are byte-reproducible.
constexpr const char* kReplayTimestamp = "1970-01-01T00:00:00Z";

json default_config() {
    return json{
        {"backend",
         {{"base_url", ""},
          {"api_key_env", ""},
          {"chat_model", "default"},
          {"embedding_model", "default"},
          {"annotation_model", ""},
          {"timeout_ms", 120000},
          {"max_retries", 3},
          {"replay_chat", ""},
          {"replay_embeddings", ""},
          {"request_log", ""}}},
        {"run",
         {{"rounds", 3},
          {"temperature", 1.0},
          {"bleu_threshold", 40.0},
          {"bleu_sample", 100},
          {"knn_k", 5},
          {"parse_retries", 2},
          {"max_tokens", 256},
          {"seed", 0},
          {"workers", 1},
          {"event", "event"},
          {"created_at", ""}}},
        {"paths",
         {{"input", ""},
          {"labels", ""},
          {"refstore", ""},
          {"dataset", ""},
          {"audit", ""},
          {"run", ""},
          {"out", ""}}},
        {"options", {{"pre_labeled", false}, {"resume", false}, {"format", ""}}},
    };
}

/// A flag and the config-file key it overrides.
struct Binding {
    CLI::Option* option;
    json::json_pointer pointer;
    std::function<json()> value;
};

class Command {
public:
    Command(CLI::App& app, const std::string& name, const std::string& description)
        : sub_(app.add_subcommand(name, description)) {
        sub_->add_option("--config", config_path_, "JSON config file; flags override its values");
    }

    CLI::App* app() const { return sub_; }

    template <class T>
    void option(const std::string& flag, const std::string& pointer, const std::string& description) {
        auto storage = std::make_shared<T>();
        auto* opt = sub_->add_option(flag, *storage, description);
        bindings_.push_back({opt, json::json_pointer(pointer), [storage] { return json(*storage); }});
    }

    void flag(const std::string& flag, const std::string& pointer, const std::string& description) {
        auto storage = std::make_shared<bool>(false);
        auto* opt = sub_->add_flag(flag, *storage, description);
        bindings_.push_back({opt, json::json_pointer(pointer), [storage] { return json(*storage); }});
    }

    void backend_options() {
        option<std::string>("--base-url", "/backend/base_url", "model server base URL, e.g. http://localhost:8000/v1");
        option<std::string>("--api-key-env", "/backend/api_key_env", "environment variable holding the API key");
        option<std::string>("--model", "/backend/chat_model", "generation model id");
        option<std::string>("--embedding-model", "/backend/embedding_model", "embedding model id");
        option<std::string>("--annotation-model", "/backend/annotation_model",
                            "model for location/damage annotation (default: --model)");
        option<int>("--timeout-ms", "/backend/timeout_ms", "per-request timeout");
        option<int>("--max-retries", "/backend/max_retries", "transport retry budget");
        option<std::string>("--replay-chat", "/backend/replay_chat", "replay fixture for chat requests (JSONL)");
        option<std::string>("--replay-embed", "/backend/replay_embeddings",
                            "replay fixture for embedding requests (JSONL)");
        option<std::string>("--request-log", "/backend/request_log", "write replayed requests here (JSONL)");
    }

    /// Defaults, then the config file, then explicit flags.
    json effective_config() const {
        json cfg = default_config();
        if (!config_path_.empty()) {
            if (!fs::exists(config_path_)) throw ConfigError("config file not found: " + config_path_);
            try {
                cfg.merge_patch(json::parse(read_text_file(config_path_)));
            } catch (const json::exception& e) {
                throw ConfigError("config file " + config_path_ + " is not valid JSON: " + e.what());
            }
        }
        for (const auto& b : bindings_)
            if (b.option->count() > 0) cfg[b.pointer] = b.value();
        return cfg;
    }

private:
    CLI::App* sub_;
    std::string config_path_;
    std::vector<Binding> bindings_;
};

template <class T>
T get(const json& cfg, const char* pointer) {
    try {
        return cfg.at(json::json_pointer(pointer)).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config value ") + pointer + ": " + e.what());
    }
}

fs::path require_input(const json& cfg, const char* pointer, const char* flag) {
    const auto path = get<std::string>(cfg, pointer);
    if (path.empty()) throw ConfigError(std::string("missing required input ") + flag);
    if (!fs::exists(path)) throw ConfigError(std::string("input path does not exist: ") + path);
    return path;
}

struct BackendHandle {
    std::shared_ptr<Backend> backend;
    std::shared_ptr<ReplayBackend> replay;  ///< set in replay mode
    std::vector<std::pair<std::string, std::string>> fixture_hashes;
};

BackendHandle make_backend(const json& cfg) {
    const auto base_url = get<std::string>(cfg, "/backend/base_url");
    const auto replay_chat = get<std::string>(cfg, "/backend/replay_chat");
    const auto replay_embed = get<std::string>(cfg, "/backend/replay_embeddings");
    const auto embedding_model = get<std::string>(cfg, "/backend/embedding_model");
    const bool replay = !replay_chat.empty() || !replay_embed.empty();

    if (replay && !base_url.empty())
        throw ConfigError("configure either a live backend (--base-url) or replay fixtures, not both");
    if (!replay && base_url.empty())
        throw ConfigError("no backend configured: pass --base-url or --replay-chat/--replay-embed");

    BackendHandle handle;
    if (replay) {
        auto load = [&](const std::string& path) {
            if (!fs::exists(path)) throw ConfigError("replay fixture does not exist: " + path);
            handle.fixture_hashes.emplace_back(path, to_hex64(stable_hash64(read_text_file(path))));
            return ReplayFixture::load(path);
        };
        ReplayFixture chat = replay_chat.empty() ? ReplayFixture{} : load(replay_chat);
        std::optional<ReplayFixture> embed;
        if (!replay_embed.empty()) embed = load(replay_embed);
        handle.replay = std::make_shared<ReplayBackend>(std::move(chat), std::move(embed), embedding_model);
        handle.backend = handle.replay;
        return handle;
    }

    HttpBackendConfig http;
    http.base_url = base_url;
    http.api_key_env = get<std::string>(cfg, "/backend/api_key_env");
    http.chat_model = get<std::string>(cfg, "/backend/chat_model");
    http.embedding_model = embedding_model;
    http.timeout = std::chrono::milliseconds(get<int>(cfg, "/backend/timeout_ms"));
    RetryPolicy policy;
    policy.max_retries = get<int>(cfg, "/backend/max_retries");
    try {
        handle.backend = std::make_shared<RetryingBackend>(std::make_shared<HttpBackend>(http), policy);
    } catch (const PreconditionError& e) {
        throw ConfigError(e.what());
    }
    return handle;
}

void write_request_log(const BackendHandle& handle, const fs::path& path) {
    if (handle.replay && !path.empty()) handle.replay->write_log(path);
}

AnnotationConfig annotation_config(const json& cfg) {
    AnnotationConfig a;
    a.model = get<std::string>(cfg, "/backend/annotation_model");
    if (a.model.empty()) a.model = get<std::string>(cfg, "/backend/chat_model");
    return a;
}

CorpusFormat corpus_format(const json& cfg, const fs::path& input) {
    const auto fmt = get<std::string>(cfg, "/options/format");
    if (fmt.empty()) return corpus_format_for(input);
    if (fmt == "jsonl") return CorpusFormat::jsonl;
    if (fmt == "csv") return CorpusFormat::csv;
    throw ConfigError("unknown corpus format \"" + fmt + "\" (expected jsonl or csv)");
}

fs::path require_output(const json& cfg, const char* pointer, const char* flag) {
    const auto path = get<std::string>(cfg, pointer);
    if (path.empty()) throw ConfigError(std::string("missing required output ") + flag);
    const fs::path p(path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    return p;
}

std::string compact_timestamp() {
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%SZ", &tm);
    return buf;
}

// ---------------------------------------------------------------------------

int cmd_prepare_labels(const json& cfg, std::ostream& out) {
    const auto input = require_input(cfg, "/paths/input", "--input");
    const auto output = require_output(cfg, "/paths/labels", "--out");
    const bool pre_labeled = get<bool>(cfg, "/options/pre_labeled");
    const auto ingest = ingest_corpus(input, corpus_format(cfg, input));

    LabelPrepOptions options;
    options.pre_labeled = pre_labeled;
    options.workers = get<std::size_t>(cfg, "/run/workers");
    options.annotation = annotation_config(cfg);

    Diagnostics diag;
    std::vector<TargetLabelVector> labels;
    if (pre_labeled) {
        labels = prepare_label_vectors(ingest.tweets, nullptr, options, &diag);
    } else {
        auto handle = make_backend(cfg);
        try {
            labels = prepare_label_vectors(ingest.tweets, handle.backend.get(), options, &diag);
        } catch (...) {
            write_request_log(handle, get<std::string>(cfg, "/backend/request_log"));
            throw;
        }
        write_request_log(handle, get<std::string>(cfg, "/backend/request_log"));
    }
    save_label_vectors(labels, output);
    out << "tweets=" << ingest.tweets.size() << " duplicates=" << ingest.duplicates
        << " retweets=" << ingest.retweets << " skipped=" << ingest.skipped_rows << " warnings=" << diag.count()
        << " labels=" << labels.size() << '\n';
    return kExitOk;
}

int cmd_build_refstore(const json& cfg, std::ostream& out) {
    const auto input = require_input(cfg, "/paths/input", "--input");
    const auto output = require_output(cfg, "/paths/refstore", "--out");
    const auto ingest = ingest_corpus(input, corpus_format(cfg, input));
    Diagnostics diag;
    const auto labeled = labeled_texts(ingest.tweets, &diag);
    auto handle = make_backend(cfg);
    const auto store = build_reference_store(labeled, *handle.backend);
    store.save(output);
    write_request_log(handle, get<std::string>(cfg, "/backend/request_log"));
    out << "entries=" << store.entries.size() << " dimension=" << store.dimension << " model=" << store.model_id
        << " warnings=" << diag.count() << '\n';
    return kExitOk;
}

int cmd_generate(const json& cfg, std::ostream& out, std::ostream& err) {
    const auto labels_path = require_input(cfg, "/paths/labels", "--labels");
    const auto store_path = require_input(cfg, "/paths/refstore", "--refstore");
    auto handle = make_backend(cfg);

    fs::path run_dir = get<std::string>(cfg, "/paths/out");
    if (run_dir.empty()) run_dir = fs::path("runs") / compact_timestamp();
    fs::create_directories(run_dir);

    RunConfig run;
    run.rounds = get<int>(cfg, "/run/rounds");
    run.temperature = get<double>(cfg, "/run/temperature");
    run.evaluator.k = get<int>(cfg, "/run/knn_k");
    run.evaluator.bleu_threshold = get<double>(cfg, "/run/bleu_threshold");
    run.evaluator.bleu_sample_size = get<std::size_t>(cfg, "/run/bleu_sample");
    run.generator.model = get<std::string>(cfg, "/backend/chat_model");
    run.generator.parse_retries = get<int>(cfg, "/run/parse_retries");
    run.generator.max_tokens = get<int>(cfg, "/run/max_tokens");
    run.seed = get<std::uint64_t>(cfg, "/run/seed");
    run.workers = get<std::size_t>(cfg, "/run/workers");
    run.event_name = get<std::string>(cfg, "/run/event");
    const auto created_at = get<std::string>(cfg, "/run/created_at");
    if (!created_at.empty()) run.fixed_timestamp = created_at;
    else if (handle.replay) run.fixed_timestamp = kReplayTimestamp;
    try {
        run.validate();
    } catch (const PreconditionError& e) {
        throw ConfigError(e.what());
    }

    const auto labels = load_label_vectors(labels_path);
    const auto store = ReferenceStore::load(store_path);

    write_text_file(run_dir / "config.json", cfg.dump(2) + '\n');

    out << "run: event=" << run.event_name << " rounds=" << run.rounds << " temperature=" << json(run.temperature).dump()
        << " bleu_threshold=" << json(run.evaluator.bleu_threshold).dump() << " knn_k=" << run.evaluator.k
        << " bleu_sample=" << run.evaluator.bleu_sample_size << " seed=" << run.seed << " workers=" << run.workers
        << " out=" << run_dir.string() << '\n';

    const RunPaths paths{run_dir / "dataset.jsonl", run_dir / "audit.jsonl"};
    fs::path request_log = get<std::string>(cfg, "/backend/request_log");
    if (request_log.empty()) request_log = run_dir / "replay_requests.jsonl";

    RunResult result;
    try {
        result = run_dataset(labels, run, store, *handle.backend, paths, get<bool>(cfg, "/options/resume"));
    } catch (const Error& e) {
        write_request_log(handle, request_log);
        err << "run halted: " << e.what() << "\ncheckpoint kept in " << paths.audit.string()
            << " (rerun with --resume)\n";
        return kExitRuntime;
    }
    write_request_log(handle, request_log);

    json meta = {{"seed", run.seed},
                 {"items", result.items},
                 {"resumed_items", result.resumed_items},
                 {"accepted", result.records.size()},
                 {"labels", labels_path.string()},
                 {"labels_hash", to_hex64(stable_hash64(read_text_file(labels_path)))},
                 {"refstore_hash", to_hex64(stable_hash64(read_text_file(store_path)))}};
    json fixtures = json::array();
    for (const auto& [path, hash] : handle.fixture_hashes) fixtures.push_back({{"path", path}, {"hash", hash}});
    meta["replay_fixtures"] = fixtures;
    write_text_file(run_dir / "run_meta.json", meta.dump(2) + '\n');

    const double pct = result.items ? 100.0 * double(result.records.size()) / double(result.items) : 0.0;
    char pct_buf[32];
    std::snprintf(pct_buf, sizeof pct_buf, "%.1f", pct);
    out << "items=" << result.items << " accepted=" << result.records.size() << " acceptance=" << pct_buf << "%\n";
    return kExitOk;
}

int cmd_metrics(const json& cfg, std::ostream& out) {
    const auto run_dir = get<std::string>(cfg, "/paths/run");
    auto audit_path = get<std::string>(cfg, "/paths/audit");
    auto dataset_path = get<std::string>(cfg, "/paths/dataset");
    if (!run_dir.empty()) {
        if (audit_path.empty()) audit_path = (fs::path(run_dir) / "audit.jsonl").string();
        if (dataset_path.empty()) dataset_path = (fs::path(run_dir) / "dataset.jsonl").string();
    }
    json resolved = cfg;
    resolved["paths"]["audit"] = audit_path;
    resolved["paths"]["dataset"] = dataset_path;
    const auto audit_file = require_input(resolved, "/paths/audit", "--audit");
    const auto dataset_file = require_input(resolved, "/paths/dataset", "--dataset");

    fs::path out_dir = get<std::string>(cfg, "/paths/out");
    if (out_dir.empty()) out_dir = run_dir.empty() ? fs::path("reports") : fs::path(run_dir) / "reports";
    fs::create_directories(out_dir);

    const auto audit = load_audit(audit_file);
    if (audit.empty()) throw PreconditionError("audit file " + audit_file.string() + " is empty");
    const auto records = load_dataset(dataset_file);

    const auto rounds = round_pass_rates(audit);
    const auto histogram = checks_passed_distribution(audit);
    emit_report(rounds, out_dir / "round_stats.csv", ReportFormat::csv);
    emit_report(rounds, out_dir / "round_stats.json", ReportFormat::json);
    emit_report(histogram, out_dir / "checks_passed.csv", ReportFormat::csv);
    emit_report(histogram, out_dir / "checks_passed.json", ReportFormat::json);

    out << round_stats_csv(rounds);
    if (!records.empty()) {
        const auto characteristics = dataset_characteristics(records);
        write_text_file(out_dir / "characteristics.json", characteristics_json(characteristics));
        std::vector<std::string> texts;
        for (const auto& r : records) texts.push_back(r.tweet_text);
        write_text_file(out_dir / "structural.json", structural_json(structural_stats(texts)));
        out << characteristics_summary(characteristics) << '\n';
    } else {
        out << "dataset is empty; characteristics skipped\n";
    }
    out << "reports written to " << out_dir.string() << '\n';
    return kExitOk;
}

int cmd_evaluate(const json& cfg, std::ostream& out) {
    const auto dataset_file = require_input(cfg, "/paths/dataset", "--dataset");
    fs::path out_dir = get<std::string>(cfg, "/paths/out");
    if (out_dir.empty()) out_dir = "reports";
    const auto records = load_dataset(dataset_file);
    if (records.empty()) throw PreconditionError("dataset " + dataset_file.string() + " is empty");

    auto handle = make_backend(cfg);
    const auto annotation = annotation_config(cfg);
    Diagnostics diag;
    std::vector<EvalReport> reports;
    try {
        reports.push_back(eval_geolocalization(records, *handle.backend, annotation, &diag));
        reports.push_back(eval_damage_prediction(records, *handle.backend, annotation, &diag));
    } catch (...) {
        write_request_log(handle, get<std::string>(cfg, "/backend/request_log"));
        throw;
    }
    write_request_log(handle, get<std::string>(cfg, "/backend/request_log"));

    fs::create_directories(out_dir);
    write_text_file(out_dir / "eval_report.json", eval_report_json(reports));
    for (const auto& r : reports) {
        char line[160];
        std::snprintf(line, sizeof line, "%s: valid=%zu/%zu (%.1f%%) accuracy=%.1f%%%s\n",
                      std::string(to_string(r.task)).c_str(), r.valid, r.total, r.pct_valid, r.accuracy_relative,
                      r.accuracy_defined ? "" : " (undefined: no valid outputs)");
        out << line;
    }
    return kExitOk;
}

} // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Synthetic crisis tweet generation with compliance feedback", "crisisgen"};
    app.require_subcommand(1);

    Command prepare(app, "prepare-labels", "Turn a raw tweet corpus into target label vectors");
    prepare.option<std::string>("--input", "/paths/input", "corpus file (.jsonl or .csv)");
    prepare.option<std::string>("--format", "/options/format", "jsonl or csv (default: from extension)");
    prepare.option<std::string>("--out", "/paths/labels", "label vector JSONL to write");
    prepare.flag("--pre-labeled", "/options/pre_labeled", "copy location/damage columns, no annotation");
    prepare.option<std::size_t>("--workers", "/run/workers", "concurrent annotation workers");
    prepare.backend_options();

    Command refstore(app, "build-refstore", "Embed labeled real tweets into a reference store");
    refstore.option<std::string>("--input", "/paths/input", "labeled corpus with text and damage columns");
    refstore.option<std::string>("--format", "/options/format", "jsonl or csv (default: from extension)");
    refstore.option<std::string>("--out", "/paths/refstore", "reference store JSON to write");
    refstore.backend_options();

    Command generate(app, "generate", "Run the generate / evaluate / feedback loop");
    generate.option<std::string>("--labels", "/paths/labels", "label vector JSONL");
    generate.option<std::string>("--refstore", "/paths/refstore", "reference store JSON");
    generate.option<std::string>("--out", "/paths/out", "run directory (default: runs/<timestamp>)");
    generate.option<int>("--rounds", "/run/rounds", "feedback rounds (default 3)");
    generate.option<double>("--temperature", "/run/temperature", "sampling temperature (default 1.0)");
    generate.option<double>("--bleu-threshold", "/run/bleu_threshold", "self-BLEU threshold (default 40.0)");
    generate.option<std::size_t>("--bleu-sample", "/run/bleu_sample", "self-BLEU reference sample size (default 100)");
    generate.option<int>("--knn-k", "/run/knn_k", "kNN neighbours (default 5)");
    generate.option<int>("--parse-retries", "/run/parse_retries", "re-asks on unparseable output (default 2)");
    generate.option<int>("--max-tokens", "/run/max_tokens", "generation max_tokens (default 256)");
    generate.option<std::uint64_t>("--seed", "/run/seed", "seed for diversity sampling");
    generate.option<std::size_t>("--workers", "/run/workers", "1 = sequential (deterministic)");
    generate.option<std::string>("--event", "/run/event", "event name stored in records");
    generate.option<std::string>("--created-at", "/run/created_at", "pin created_at (RFC 3339)");
    generate.flag("--resume", "/options/resume", "continue from the run directory's checkpoint");
    generate.backend_options();

    Command metrics(app, "metrics", "Pass rates, check histograms and dataset statistics");
    metrics.option<std::string>("--run", "/paths/run", "run directory holding audit.jsonl and dataset.jsonl");
    metrics.option<std::string>("--audit", "/paths/audit", "audit JSONL");
    metrics.option<std::string>("--dataset", "/paths/dataset", "dataset JSONL");
    metrics.option<std::string>("--out", "/paths/out", "report directory (default: <run>/reports)");

    Command evaluate(app, "evaluate-downstream", "Geolocalization and damage prediction on a dataset");
    evaluate.option<std::string>("--dataset", "/paths/dataset", "dataset JSONL");
    evaluate.option<std::string>("--out", "/paths/out", "report directory (default: reports)");
    evaluate.backend_options();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    if (!reversed.empty()) reversed.pop_back();
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return kExitUsage;
    }

    try {
        if (prepare.app()->parsed()) return cmd_prepare_labels(prepare.effective_config(), out);
        if (refstore.app()->parsed()) return cmd_build_refstore(refstore.effective_config(), out);
        if (generate.app()->parsed()) return cmd_generate(generate.effective_config(), out, err);
        if (metrics.app()->parsed()) return cmd_metrics(metrics.effective_config(), out);
        if (evaluate.app()->parsed()) return cmd_evaluate(evaluate.effective_config(), out);
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const FormatError& e) {
        err << "error: " << e.what() << '\n';
        return kExitRuntime;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return kExitRuntime;
    } catch (const fs::filesystem_error& e) {
        err << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
    err << app.help();
    return kExitUsage;
}

} // namespace crisisgen::cli
