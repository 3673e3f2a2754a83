#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

// Small string helpers shared by the parsing code.
namespace crisisgen::text {

std::string_view trim(std::string_view s) noexcept;

/// ASCII case folding; bytes >= 0x80 pass through unchanged.
std::string to_lower(std::string_view s);
std::string to_upper(std::string_view s);

/// Removes one surrounding ``` or ```json fence. Other fence tags are left
/// alone, so the caller sees the raw text.
std::string_view strip_code_fence(std::string_view s) noexcept;

/// Locates the first balanced JSON object (open = '{') or array (open = '[')
/// in s, honouring string literals and escapes. Returns the substring.
std::optional<std::string_view> find_json_block(std::string_view s, char open) noexcept;

/// Number of UTF-8 code points (invalid lead bytes count as one each).
std::size_t utf8_length(std::string_view s) noexcept;

} // namespace crisisgen::text
