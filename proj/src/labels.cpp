#include "crisisgen/labels.hpp"

#include <charconv>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>
#include <unordered_set>

#include <json.hpp>

#include "crisisgen/text.hpp"

namespace crisisgen {

using nlohmann::json;

void Diagnostics::warn(std::string message) {
    std::lock_guard lock(mutex_);
    messages_.push_back(std::move(message));
}

std::size_t Diagnostics::count() const {
    std::lock_guard lock(mutex_);
    return messages_.size();
}

std::vector<std::string> Diagnostics::messages() const {
    std::lock_guard lock(mutex_);
    return messages_;
}

namespace {

void warn(Diagnostics* diag, std::string message) {
    if (diag) diag->warn(std::move(message));
    else std::cerr << "warning: " << message << '\n';
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw PreconditionError("cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string scalar_to_string(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    return v.dump();
}

// RFC 4180 records: quoted fields, doubled quotes, embedded newlines.
std::vector<std::vector<std::string>> parse_csv(std::string_view data) {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> row;
    std::string field;
    bool quoted = false;
    bool field_started = false;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const char c = data[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < data.size() && data[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field.push_back(c);
            }
            continue;
        }
        switch (c) {
        case '"':
            quoted = true;
            field_started = true;
            break;
        case ',':
            row.push_back(std::move(field));
            field.clear();
            field_started = true;
            break;
        case '\r':
            break;
        case '\n':
            if (field_started || !field.empty() || !row.empty()) {
                row.push_back(std::move(field));
                rows.push_back(std::move(row));
            }
            row.clear();
            field.clear();
            field_started = false;
            break;
        default:
            field.push_back(c);
            field_started = true;
        }
    }
    if (field_started || !field.empty() || !row.empty()) {
        row.push_back(std::move(field));
        rows.push_back(std::move(row));
    }
    return rows;
}

std::optional<int> parse_int(std::string_view s) {
    s = text::trim(s);
    int value = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
    return value;
}

void write_float(std::string& out, float v) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    out.append(buf, ptr);
}

} // namespace

void TargetLabelVector::validate() const {
    if (text::trim(location).empty()) throw PreconditionError("target location is empty");
    if (!valid_damage_level(damage_level))
        throw PreconditionError("target damage level out of range: " + std::to_string(damage_level));
}

// ---------------------------------------------------------------------------
// Ingestion

CorpusFormat corpus_format_for(const std::filesystem::path& path) {
    return text::to_lower(path.extension().string()) == ".csv" ? CorpusFormat::csv : CorpusFormat::jsonl;
}

bool is_retweet(std::string_view s) noexcept { return text::trim(s).starts_with("RT @"); }

IngestResult ingest_rows(std::vector<RawTweet> rows, std::size_t skipped) {
    IngestResult result;
    result.skipped_rows = skipped;
    std::unordered_set<std::string> seen;
    for (auto& row : rows) {
        row.text = std::string(text::trim(row.text));
        if (row.text.empty()) {
            ++result.skipped_rows;
            continue;
        }
        if (is_retweet(row.text)) {
            ++result.retweets;
            continue;
        }
        if (!seen.insert(row.text).second) {
            ++result.duplicates;
            continue;
        }
        result.tweets.push_back(std::move(row));
    }
    if (result.tweets.empty()) throw PreconditionError("corpus has no valid rows");
    return result;
}

IngestResult ingest_corpus(const std::filesystem::path& path, CorpusFormat format) {
    const auto data = read_file(path);
    std::vector<RawTweet> rows;
    std::size_t skipped = 0;

    if (format == CorpusFormat::jsonl) {
        std::istringstream in(data);
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (text::trim(line).empty()) continue;
            json j;
            try {
                j = json::parse(line);
            } catch (const json::exception&) {
                ++skipped;
                continue;
            }
            if (!j.is_object() || !j.contains("text") || !j["text"].is_string()) {
                ++skipped;
                continue;
            }
            RawTweet t;
            t.id = j.contains("id") && !j["id"].is_null() ? scalar_to_string(j["id"]) : std::to_string(line_no);
            t.text = j["text"].get<std::string>();
            for (const auto& [key, value] : j.items()) {
                if (key == "id" || key == "text" || value.is_null() || value.is_structured()) continue;
                t.source_meta[key] = scalar_to_string(value);
            }
            rows.push_back(std::move(t));
        }
    } else {
        auto records = parse_csv(data);
        if (records.empty()) throw PreconditionError("corpus has no valid rows");
        const auto& header = records.front();
        std::optional<std::size_t> text_col, id_col;
        for (std::size_t i = 0; i < header.size(); ++i) {
            const auto name = text::trim(header[i]);
            if (name == "text") text_col = i;
            if (name == "id") id_col = i;
        }
        if (!text_col) throw PreconditionError("CSV corpus " + path.string() + " has no \"text\" column");
        for (std::size_t r = 1; r < records.size(); ++r) {
            const auto& rec = records[r];
            if (rec.size() != header.size()) {
                ++skipped;
                continue;
            }
            RawTweet t;
            t.id = id_col ? rec[*id_col] : std::to_string(r);
            t.text = rec[*text_col];
            for (std::size_t i = 0; i < header.size(); ++i) {
                if (i == *text_col || (id_col && i == *id_col) || rec[i].empty()) continue;
                t.source_meta[std::string(text::trim(header[i]))] = rec[i];
            }
            rows.push_back(std::move(t));
        }
    }
    return ingest_rows(std::move(rows), skipped);
}

void write_corpus_jsonl(std::span<const RawTweet> tweets, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw PreconditionError("cannot write " + path.string());
    for (const auto& t : tweets) {
        json j = json::object();
        for (const auto& [k, v] : t.source_meta) j[k] = v;
        j["id"] = t.id;
        j["text"] = t.text;
        out << j.dump() << '\n';
    }
}

// ---------------------------------------------------------------------------
// Annotation

std::string location_annotation_prompt(std::string_view tweet_text) {
    std::string p =
        "You are a named entity recognizer for social media posts.\n"
        "List every location mentioned in the tweet below (cities, regions, countries, "
        "neighbourhoods, landmarks or other named places), in the order they appear.\n"
        "Reply only with a JSON array of strings, for example [\"Napa\", \"California\"]. "
        "Reply with [] if the tweet mentions no location.\n\n"
        "Tweet: ";
    p.append(tweet_text);
    return p;
}

std::string damage_annotation_prompt(std::string_view tweet_text) {
    std::string p =
        "Classify the damage level described in the tweet below, which was posted after an "
        "earthquake event, using the following damage scale:\n"
        "0 - No damage or injury. This damage level corresponds to levels I-III in the Modified "
        "Mercalli Intensity (MMI) scale which has any of the following characteristics: no "
        "noticeable damage; felt by only a few people at rest; no damage to buildings; felt "
        "indoors, especially on upper floors; no significant structural damage.\n"
        "1 - Slight damage. This damage level corresponds to levels IV-V in the Modified Mercalli "
        "Intensity (MMI) scale which has any of the following characteristics: felt by most "
        "people; some damage to buildings, such as minor cracks; felt by everyone; damage to "
        "buildings, minor cracks, but no collapse.\n"
        "2 - Moderate damage with the possibility of injuries. This damage level corresponds to "
        "levels VI-VII in the Modified Mercalli Intensity (MMI) scale which has any of the "
        "following characteristics: damage to buildings, visible structural deformation; "
        "significant damage, some collapses or structural failures.\n"
        "3 - Severe damage with the possibility of fatalities. This damage level corresponds to "
        "levels VIII-X in the Modified Mercalli Intensity (MMI) scale which has any of the "
        "following characteristics: many buildings collapse or are severely damaged; total "
        "destruction in some areas, severe damage; complete destruction of all structures in "
        "the affected area.\n\n"
        "Reply only with the damage level as a single integer (0, 1, 2 or 3).\n\n"
        "Tweet: ";
    p.append(tweet_text);
    return p;
}

std::optional<std::vector<std::string>> parse_locations_reply(std::string_view reply, Diagnostics* diag) {
    const auto body = text::strip_code_fence(reply);
    const auto block = text::find_json_block(body, '[');
    if (!block) {
        warn(diag, "location reply is not a JSON array: " + std::string(reply.substr(0, 120)));
        return std::nullopt;
    }
    json j;
    try {
        j = json::parse(*block);
    } catch (const json::exception&) {
        warn(diag, "location reply is not valid JSON: " + std::string(reply.substr(0, 120)));
        return std::nullopt;
    }
    std::vector<std::string> out;
    for (const auto& item : j) {
        if (!item.is_string()) {
            warn(diag, "location reply contains a non-string entry");
            return std::nullopt;
        }
        const auto loc = text::trim(item.get_ref<const std::string&>());
        if (!loc.empty()) out.emplace_back(loc);
    }
    return out;
}

std::optional<std::string> parse_location_reply(std::string_view reply, Diagnostics* diag) {
    auto all = parse_locations_reply(reply, diag);
    if (!all || all->empty()) return std::nullopt;
    return std::move(all->front());
}

std::optional<int> parse_damage_reply(std::string_view reply, Diagnostics* diag) {
    auto body = text::trim(text::strip_code_fence(reply));
    if (body.size() >= 2 && body.front() == '"' && body.back() == '"') body = body.substr(1, body.size() - 2);
    if (body.ends_with('.')) body.remove_suffix(1);
    const auto level = parse_int(body);
    if (!level) {
        warn(diag, "damage reply is not an integer: " + std::string(reply.substr(0, 120)));
        return std::nullopt;
    }
    if (!valid_damage_level(*level)) {
        warn(diag, "damage reply out of range: " + std::to_string(*level));
        return std::nullopt;
    }
    return level;
}

namespace {
ChatRequest annotation_request(const AnnotationConfig& cfg, std::string prompt) {
    ChatRequest req;
    req.model = cfg.model;
    req.temperature = cfg.temperature;
    req.max_tokens = cfg.max_tokens;
    req.messages.push_back({Role::user, std::move(prompt)});
    return req;
}
} // namespace

std::optional<std::string> extract_location(const RawTweet& tweet, Backend& backend,
                                            const AnnotationConfig& cfg, Diagnostics* diag) {
    const auto res = chat_complete(annotation_request(cfg, location_annotation_prompt(tweet.text)), backend);
    return parse_location_reply(res.content, diag);
}

std::optional<int> annotate_damage(const RawTweet& tweet, Backend& backend, const AnnotationConfig& cfg,
                                   Diagnostics* diag) {
    const auto res = chat_complete(annotation_request(cfg, damage_annotation_prompt(tweet.text)), backend);
    return parse_damage_reply(res.content, diag);
}

std::vector<TargetLabelVector> prepare_label_vectors(std::span<const RawTweet> tweets, Backend* backend,
                                                     const LabelPrepOptions& options, Diagnostics* diag) {
    std::vector<std::optional<TargetLabelVector>> slots(tweets.size());

    if (options.pre_labeled) {
        for (std::size_t i = 0; i < tweets.size(); ++i) {
            const auto& t = tweets[i];
            auto loc = t.source_meta.find("location");
            auto dmg = t.source_meta.find("damage");
            if (loc == t.source_meta.end() || dmg == t.source_meta.end()) {
                warn(diag, "tweet " + t.id + " lacks location/damage labels");
                continue;
            }
            const auto level = parse_int(dmg->second);
            const auto location = text::trim(loc->second);
            if (!level || !valid_damage_level(*level) || location.empty()) {
                warn(diag, "tweet " + t.id + " has invalid labels");
                continue;
            }
            slots[i] = TargetLabelVector{std::string(location), *level, t.id};
        }
    } else {
        if (!backend) throw PreconditionError("label annotation needs a backend");
        auto annotate = [&](std::size_t i) {
            const auto& t = tweets[i];
            auto loc = extract_location(t, *backend, options.annotation, diag);
            auto level = annotate_damage(t, *backend, options.annotation, diag);
            if (loc && level) slots[i] = TargetLabelVector{*loc, *level, t.id};
        };
        const auto workers = std::max<std::size_t>(1, std::min(options.workers, tweets.size()));
        if (workers == 1) {
            for (std::size_t i = 0; i < tweets.size(); ++i) annotate(i);
        } else {
            std::vector<std::exception_ptr> errors(workers);
            std::vector<std::thread> pool;
            for (std::size_t w = 0; w < workers; ++w) {
                pool.emplace_back([&, w] {
                    try {
                        for (std::size_t i = w; i < tweets.size(); i += workers) annotate(i);
                    } catch (...) {
                        errors[w] = std::current_exception();
                    }
                });
            }
            for (auto& th : pool) th.join();
            for (auto& e : errors)
                if (e) std::rethrow_exception(e);
        }
    }

    std::vector<TargetLabelVector> out;
    for (auto& s : slots)
        if (s) out.push_back(std::move(*s));
    if (out.empty()) throw PreconditionError("no tweet yielded both a location and a damage level");
    return out;
}

void save_label_vectors(std::span<const TargetLabelVector> labels, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw PreconditionError("cannot write " + path.string());
    for (const auto& y : labels) {
        json j = {{"location", y.location}, {"damage", y.damage_level}};
        if (y.provenance) j["source_id"] = *y.provenance;
        out << j.dump() << '\n';
    }
}

std::vector<TargetLabelVector> load_label_vectors(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw PreconditionError("cannot open " + path.string());
    std::vector<TargetLabelVector> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (text::trim(line).empty()) continue;
        try {
            const auto j = json::parse(line);
            TargetLabelVector y;
            y.location = j.at("location").get<std::string>();
            y.damage_level = j.at("damage").get<int>();
            if (j.contains("source_id")) y.provenance = j["source_id"].get<std::string>();
            y.validate();
            out.push_back(std::move(y));
        } catch (const json::exception& e) {
            throw FormatError(path.string() + ": " + e.what(), line_no);
        } catch (const PreconditionError& e) {
            throw FormatError(path.string() + ": " + e.what(), line_no);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reference store

void ReferenceStore::validate() const {
    if (dimension == 0) throw PreconditionError("reference store dimension is zero");
    for (const auto& e : entries) {
        if (e.vector.dimension() != dimension)
            throw PreconditionError("reference entry dimension " + std::to_string(e.vector.dimension()) +
                                    " differs from store dimension " + std::to_string(dimension));
        if (!valid_damage_level(e.damage_level))
            throw PreconditionError("reference entry label out of range: " + std::to_string(e.damage_level));
    }
}

std::string ReferenceStore::to_json() const {
    // Written by hand so vector components keep float precision.
    std::string out = "{\"model_id\":" + json(model_id).dump() + ",\"dimension\":" + std::to_string(dimension) +
                      ",\"entries\":[";
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const auto& e = entries[i];
        if (i) out += ',';
        out += "\n{\"label\":" + std::to_string(e.damage_level) + ",\"vector\":[";
        const auto values = e.vector.values();
        for (std::size_t k = 0; k < values.size(); ++k) {
            if (k) out += ',';
            write_float(out, values[k]);
        }
        out += "],\"text_hash\":" + json(e.text_hash).dump() + "}";
    }
    out += "]}\n";
    return out;
}

ReferenceStore ReferenceStore::from_json(std::string_view document) {
    ReferenceStore store;
    try {
        const auto j = json::parse(document);
        store.model_id = j.at("model_id").get<std::string>();
        store.dimension = j.at("dimension").get<std::size_t>();
        for (const auto& e : j.at("entries")) {
            store.entries.push_back(ReferenceEntry{EmbeddingVector(e.at("vector").get<std::vector<float>>()),
                                                   e.at("label").get<int>(), e.value("text_hash", std::string{})});
        }
    } catch (const json::exception& e) {
        throw FormatError(std::string("reference store: ") + e.what());
    }
    store.validate();
    return store;
}

void ReferenceStore::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw PreconditionError("cannot write " + path.string());
    out << to_json();
}

ReferenceStore ReferenceStore::load(const std::filesystem::path& path) { return from_json(read_file(path)); }

ReferenceStore build_reference_store(std::span<const LabeledText> labeled, Backend& backend,
                                     std::size_t batch_size) {
    if (labeled.empty()) throw PreconditionError("reference store needs at least one labeled text");
    if (batch_size == 0) batch_size = 1;
    ReferenceStore store;
    store.model_id = backend.embedding_model();
    for (std::size_t start = 0; start < labeled.size(); start += batch_size) {
        const auto end = std::min(labeled.size(), start + batch_size);
        std::vector<std::string> texts;
        for (std::size_t i = start; i < end; ++i) {
            if (!valid_damage_level(labeled[i].damage_level))
                throw PreconditionError("damage label out of range: " + std::to_string(labeled[i].damage_level));
            texts.push_back(labeled[i].text);
        }
        auto vectors = embed_batch(texts, backend);
        for (std::size_t i = 0; i < vectors.size(); ++i) {
            if (store.dimension == 0) store.dimension = vectors[i].dimension();
            if (vectors[i].dimension() != store.dimension)
                throw ProtocolError("embedding dimension drift: " + std::to_string(store.dimension) + " then " +
                                    std::to_string(vectors[i].dimension()));
            store.entries.push_back(ReferenceEntry{std::move(vectors[i]), labeled[start + i].damage_level,
                                                   to_hex64(stable_hash64(texts[i]))});
        }
    }
    return store;
}

std::vector<LabeledText> labeled_texts(std::span<const RawTweet> tweets, Diagnostics* diag) {
    std::vector<LabeledText> out;
    for (const auto& t : tweets) {
        auto it = t.source_meta.find("damage");
        const auto level = it == t.source_meta.end() ? std::nullopt : parse_int(it->second);
        if (!level || !valid_damage_level(*level)) {
            warn(diag, "tweet " + t.id + " has no usable damage label");
            continue;
        }
        out.push_back({t.text, *level});
    }
    return out;
}

} // namespace crisisgen
