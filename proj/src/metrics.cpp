#include "crisisgen/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "crisisgen/text.hpp"

namespace crisisgen {

using nlohmann::json;

namespace {

double percent(std::size_t num, std::size_t den) {
    return den == 0 ? 0.0 : 100.0 * static_cast<double>(num) / static_cast<double>(den);
}

std::string fixed1(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.1f", v);
    return buf;
}

std::string with_thousands(std::size_t n) {
    auto digits = std::to_string(n);
    std::string out;
    const auto len = digits.size();
    for (std::size_t i = 0; i < len; ++i) {
        if (i && (len - i) % 3 == 0) out += ',';
        out += digits[i];
    }
    return out;
}

} // namespace

std::vector<RoundStats> round_pass_rates(std::span<const AuditRecord> audit) {
    if (audit.empty()) throw PreconditionError("audit log is empty");

    std::set<std::string> items;
    std::map<int, std::vector<const AuditRecord*>> by_round;
    std::map<int, std::size_t> accepted_at;
    for (const auto& a : audit) {
        items.insert(a.item_id);
        if (a.details) by_round[a.attempt_index].push_back(&a);
        if (a.outcome == AttemptOutcome::accepted) ++accepted_at[a.attempt_index];
    }
    if (by_round.empty()) throw PreconditionError("audit log has no evaluated attempts");

    std::vector<RoundStats> out;
    for (const auto& [round, attempts] : by_round) {
        std::size_t loc = 0, dmg = 0, div = 0;
        for (const auto* a : attempts) {
            loc += a->details->vector.location;
            dmg += a->details->vector.damage;
            div += a->details->vector.diversity;
        }
        std::size_t accepted = 0;
        for (const auto& [r, n] : accepted_at)
            if (r <= round) accepted += n;
        out.push_back(RoundStats{round, attempts.size(), percent(loc, attempts.size()), percent(dmg, attempts.size()),
                                 percent(div, attempts.size()), percent(accepted, items.size())});
    }
    return out;
}

std::vector<ChecksHistogram> checks_passed_distribution(std::span<const AuditRecord> audit) {
    std::map<int, ChecksHistogram> rows;
    for (const auto& a : audit) {
        if (!a.details) continue;
        auto& row = rows[a.attempt_index];
        row.round = a.attempt_index;
        ++row.counts[static_cast<std::size_t>(a.details->vector.passed_count())];
    }
    if (rows.empty()) throw PreconditionError("audit log has no evaluated attempts");
    std::vector<ChecksHistogram> out;
    for (auto& [r, row] : rows) out.push_back(row);
    return out;
}

CharacteristicsReport dataset_characteristics(std::span<const DatasetRecord> records) {
    if (records.empty()) throw PreconditionError("dataset is empty");
    CharacteristicsReport rep;
    rep.size = records.size();
    std::set<std::string> locations;
    for (const auto& r : records) {
        locations.insert(text::to_lower(r.target_location));
        if (!valid_damage_level(r.target_damage_level))
            throw PreconditionError("record " + r.id + " has an out-of-range damage level");
        ++rep.damage_counts[static_cast<std::size_t>(r.target_damage_level)];
    }
    rep.unique_locations = locations.size();
    rep.unique_locations_pct = percent(rep.unique_locations, rep.size);
    for (std::size_t i = 0; i < 4; ++i) rep.damage_pct[i] = percent(rep.damage_counts[i], rep.size);
    return rep;
}

long round_percent(double pct) { return static_cast<long>(std::floor(pct + 0.5)); }

std::string characteristics_summary(const CharacteristicsReport& r) {
    std::string out = "size " + with_thousands(r.size) + "; unique " + with_thousands(r.unique_locations) + " (" +
                      std::to_string(round_percent(r.unique_locations_pct)) + "); damage ";
    for (std::size_t i = 0; i < 4; ++i) {
        if (i) out += " / ";
        out += with_thousands(r.damage_counts[i]) + " (" + std::to_string(round_percent(r.damage_pct[i])) + ")";
    }
    return out;
}

std::vector<std::string> extract_hashtags(std::string_view s) {
    const auto is_tag_char = [](char c) {
        return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_';
    };
    std::vector<std::string> out;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] != '#') continue;
        std::size_t j = i + 1;
        while (j < s.size() && is_tag_char(s[j])) ++j;
        if (j > i + 1) out.push_back(text::to_lower(s.substr(i, j - i)));
        i = j - 1;
    }
    return out;
}

StructuralStats structural_stats(std::span<const std::string> texts) {
    if (texts.empty()) throw PreconditionError("structural_stats needs at least one text");
    StructuralStats st;
    std::map<std::string, std::size_t> counts;
    for (const auto& t : texts) {
        ++st.length_histogram[text::utf8_length(t)];
        for (auto& tag : extract_hashtags(t)) {
            ++counts[tag];
            ++st.hashtag_total;
        }
    }
    for (const auto& [tag, n] : counts)
        st.hashtag_frequency[tag] = static_cast<double>(n) / static_cast<double>(st.hashtag_total);
    return st;
}

std::string_view to_string(EvalTask task) noexcept {
    return task == EvalTask::geolocalization ? "geolocalization" : "damage_prediction";
}

bool location_matches(std::string_view extracted, std::string_view target) {
    const auto a = text::to_lower(text::trim(extracted));
    const auto b = text::to_lower(text::trim(target));
    if (a.empty() || b.empty()) return false;
    return a == b || a.find(b) != std::string::npos || b.find(a) != std::string::npos;
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

void finish(EvalReport& rep) {
    rep.pct_valid = percent(rep.valid, rep.total);
    rep.accuracy_defined = rep.valid > 0;
    rep.accuracy_relative = percent(rep.correct, rep.valid);
}

} // namespace

EvalReport eval_geolocalization(std::span<const DatasetRecord> records, Backend& backend,
                                const AnnotationConfig& cfg, Diagnostics* diag) {
    EvalReport rep;
    rep.task = EvalTask::geolocalization;
    rep.total = records.size();
    for (const auto& r : records) {
        const auto reply = chat_complete(annotation_request(cfg, location_annotation_prompt(r.tweet_text)), backend);
        const auto locations = parse_locations_reply(reply.content, diag);
        if (!locations || locations->empty()) continue;
        ++rep.valid;
        for (const auto& loc : *locations) {
            if (location_matches(loc, r.target_location)) {
                ++rep.correct;
                break;
            }
        }
    }
    finish(rep);
    return rep;
}

EvalReport eval_damage_prediction(std::span<const DatasetRecord> records, Backend& backend,
                                  const AnnotationConfig& cfg, Diagnostics* diag) {
    EvalReport rep;
    rep.task = EvalTask::damage_prediction;
    rep.total = records.size();
    for (const auto& r : records) {
        const auto reply = chat_complete(annotation_request(cfg, damage_annotation_prompt(r.tweet_text)), backend);
        const auto level = parse_damage_reply(reply.content, diag);
        if (!level) continue;
        ++rep.valid;
        if (*level == r.target_damage_level) ++rep.correct;
    }
    finish(rep);
    return rep;
}

// ---------------------------------------------------------------------------
// Report files

std::string round_stats_csv(std::span<const RoundStats> stats) {
    std::string out = "round,pct_pass_loc,pct_pass_dmg,pct_pass_div,pct_accepted_cumulative\n";
    for (const auto& s : stats) {
        out += std::to_string(s.round) + ',' + fixed1(s.pct_pass_loc) + ',' + fixed1(s.pct_pass_dmg) + ',' +
               fixed1(s.pct_pass_div) + ',' + fixed1(s.pct_accepted_cumulative) + '\n';
    }
    return out;
}

std::string round_stats_json(std::span<const RoundStats> stats) {
    json rows = json::array();
    for (const auto& s : stats) {
        rows.push_back({{"round", s.round},
                        {"evaluated", s.evaluated},
                        {"pct_pass_loc", s.pct_pass_loc},
                        {"pct_pass_dmg", s.pct_pass_dmg},
                        {"pct_pass_div", s.pct_pass_div},
                        {"pct_accepted_cumulative", s.pct_accepted_cumulative}});
    }
    return rows.dump(2) + '\n';
}

std::vector<RoundStats> round_stats_from_json(std::string_view document) {
    std::vector<RoundStats> out;
    try {
        for (const auto& r : json::parse(document)) {
            out.push_back(RoundStats{r.at("round").get<int>(), r.at("evaluated").get<std::size_t>(),
                                     r.at("pct_pass_loc").get<double>(), r.at("pct_pass_dmg").get<double>(),
                                     r.at("pct_pass_div").get<double>(),
                                     r.at("pct_accepted_cumulative").get<double>()});
        }
    } catch (const json::exception& e) {
        throw FormatError(std::string("round stats: ") + e.what());
    }
    return out;
}

std::string histogram_csv(std::span<const ChecksHistogram> rows) {
    std::string out = "round,checks_0,checks_1,checks_2,checks_3\n";
    for (const auto& r : rows) {
        out += std::to_string(r.round);
        for (auto c : r.counts) out += ',' + std::to_string(c);
        out += '\n';
    }
    return out;
}

std::string histogram_json(std::span<const ChecksHistogram> rows) {
    json out = json::array();
    for (const auto& r : rows) out.push_back({{"round", r.round}, {"counts", r.counts}});
    return out.dump(2) + '\n';
}

std::string characteristics_json(const CharacteristicsReport& r) {
    json damage = json::object();
    for (std::size_t i = 0; i < 4; ++i)
        damage[std::to_string(i)] = {{"count", r.damage_counts[i]}, {"pct", r.damage_pct[i]}};
    json j = {{"size", r.size},
              {"unique_locations", r.unique_locations},
              {"unique_locations_pct", r.unique_locations_pct},
              {"damage_frequency", damage},
              {"summary", characteristics_summary(r)}};
    return j.dump(2) + '\n';
}

std::string structural_json(const StructuralStats& st) {
    json lengths = json::object();
    for (const auto& [len, n] : st.length_histogram) lengths[std::to_string(len)] = n;
    json j = {{"length_histogram", lengths},
              {"hashtag_frequency", st.hashtag_frequency},
              {"hashtag_total", st.hashtag_total}};
    return j.dump(2) + '\n';
}

std::string eval_report_json(std::span<const EvalReport> reports) {
    json out = json::array();
    for (const auto& r : reports) {
        out.push_back({{"task", to_string(r.task)},
                       {"total", r.total},
                       {"valid", r.valid},
                       {"correct", r.correct},
                       {"pct_valid", r.pct_valid},
                       {"accuracy_relative", r.accuracy_relative},
                       {"accuracy_defined", r.accuracy_defined}});
    }
    return out.dump(2) + '\n';
}

std::vector<EvalReport> eval_reports_from_json(std::string_view document) {
    std::vector<EvalReport> out;
    try {
        for (const auto& r : json::parse(document)) {
            EvalReport rep;
            const auto task = r.at("task").get<std::string>();
            if (task == "geolocalization") rep.task = EvalTask::geolocalization;
            else if (task == "damage_prediction") rep.task = EvalTask::damage_prediction;
            else throw FormatError("unknown eval task " + task);
            rep.total = r.at("total").get<std::size_t>();
            rep.valid = r.at("valid").get<std::size_t>();
            rep.correct = r.at("correct").get<std::size_t>();
            rep.pct_valid = r.at("pct_valid").get<double>();
            rep.accuracy_relative = r.at("accuracy_relative").get<double>();
            rep.accuracy_defined = r.at("accuracy_defined").get<bool>();
            out.push_back(rep);
        }
    } catch (const json::exception& e) {
        throw FormatError(std::string("eval report: ") + e.what());
    }
    return out;
}

void write_text_file(const std::filesystem::path& path, std::string_view content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw PreconditionError("cannot write " + path.string());
    out << content;
    if (!out) throw PreconditionError("write failed for " + path.string());
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw PreconditionError("cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void emit_report(std::span<const RoundStats> stats, const std::filesystem::path& path, ReportFormat format) {
    write_text_file(path, format == ReportFormat::csv ? round_stats_csv(stats) : round_stats_json(stats));
}

void emit_report(std::span<const ChecksHistogram> rows, const std::filesystem::path& path, ReportFormat format) {
    write_text_file(path, format == ReportFormat::csv ? histogram_csv(rows) : histogram_json(rows));
}

} // namespace crisisgen
