#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace triggerbench::text {

std::string trim(std::string_view s);
std::string to_lower(std::string_view s);
bool iequals(std::string_view a, std::string_view b);
bool istarts_with(std::string_view s, std::string_view prefix);

// Whitespace tokenization; the single notion of "word" used across the library.
std::vector<std::string> split_ws(std::string_view s);
std::string join(const std::vector<std::string>& tokens, std::string_view sep = " ");
std::size_t word_count(std::string_view s);

// Splits on runs of [.?!] followed by whitespace or end of text; keeps the
// punctuation with its sentence, trims surrounding whitespace.
std::vector<std::string> split_sentences(std::string_view s);

std::string replace_all(std::string s, std::string_view from, std::string_view to);

inline constexpr std::uint64_t kFnvBasis = 1469598103934665603ULL;
std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = kFnvBasis);
// Maps a 64-bit hash onto [0, 1).
double unit_interval(std::uint64_t h);

std::string read_file(const std::filesystem::path& path);
// Write-temp-then-rename; readers never observe a half-written file.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

}  // namespace triggerbench::text
