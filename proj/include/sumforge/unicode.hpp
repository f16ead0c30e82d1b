#pragma once

#include <string>
#include <string_view>

// Thin UTF-8 / code point helpers. Character classes follow the Unicode
// general categories as reported by ICU.
namespace sumforge::unicode {

bool is_valid_utf8(std::string_view text) noexcept;

/// Decodes UTF-8 into code points; throws Error(InvalidUtf8) on malformed input.
std::u32string decode(std::string_view text);

void append_utf8(std::string& out, char32_t cp);
std::string encode(std::u32string_view cps);

/// NFC normalization of valid UTF-8.
std::string nfc(std::string_view text);

bool is_whitespace(char32_t cp) noexcept;
/// General category P*.
bool is_punctuation(char32_t cp) noexcept;
/// General categories L* and Nd/Nl/No.
bool is_letter_or_digit(char32_t cp) noexcept;
/// Nonspacing and spacing combining marks (Mn, Mc).
bool is_combining_mark(char32_t cp) noexcept;

std::string_view trim(std::string_view text) noexcept;

}  // namespace sumforge::unicode
