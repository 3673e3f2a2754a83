#include "crisisgen/text.hpp"

#include <algorithm>

namespace crisisgen::text {

namespace {
bool is_space(char c) noexcept {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}
} // namespace

std::string_view trim(std::string_view s) noexcept {
    while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
    while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
    return s;
}

std::string to_lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](char c) { return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c; });
    return out;
}

std::string to_upper(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](char c) { return (c >= 'a' && c <= 'z') ? static_cast<char>(c - 'a' + 'A') : c; });
    return out;
}

std::string_view strip_code_fence(std::string_view s) noexcept {
    auto body = trim(s);
    if (!body.starts_with("```") || body.size() < 6 || !body.ends_with("```")) return s;
    body.remove_prefix(3);
    body.remove_suffix(3);
    const auto newline = body.find('\n');
    const auto tag = trim(body.substr(0, newline));
    if (!tag.empty() && tag != "json") return s;
    if (!tag.empty()) body.remove_prefix(newline == std::string_view::npos ? body.size() : newline);
    return trim(body);
}

std::optional<std::string_view> find_json_block(std::string_view s, char open) noexcept {
    const char close = open == '{' ? '}' : ']';
    for (auto start = s.find(open); start != std::string_view::npos; start = s.find(open, start + 1)) {
        int depth = 0;
        bool in_string = false;
        bool escaped = false;
        for (std::size_t i = start; i < s.size(); ++i) {
            const char c = s[i];
            if (in_string) {
                if (escaped) escaped = false;
                else if (c == '\\') escaped = true;
                else if (c == '"') in_string = false;
                continue;
            }
            if (c == '"') in_string = true;
            else if (c == '{' || c == '[') ++depth;
            else if (c == '}' || c == ']') {
                if (--depth == 0) {
                    if (c == close) return s.substr(start, i - start + 1);
                    break;
                }
            }
        }
    }
    return std::nullopt;
}

std::size_t utf8_length(std::string_view s) noexcept {
    std::size_t n = 0;
    for (unsigned char c : s)
        if ((c & 0xC0) != 0x80) ++n;
    return n;
}

} // namespace crisisgen::text
