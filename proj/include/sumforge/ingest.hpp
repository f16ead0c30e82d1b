#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

// Corpus ingestion: legacy code page transcoding, story-file format and
// rule-based sentence splitting.
namespace sumforge::ingest {

struct RawDocument {
  std::string source_path;
  std::string category;
  std::string body;
  std::string summary_text;
};

struct StoryDoc {
  std::string id;
  std::vector<std::string> article_sentences;
  std::vector<std::string> summary_sentences;

  friend bool operator==(const StoryDoc&, const StoryDoc&) = default;
};

/// Supported names: "windows-1256", "latin-1", "utf-8" (case-insensitive,
/// a few common aliases such as "cp1256" and "iso-8859-1" accepted).
std::string transcode(std::span<const std::uint8_t> bytes, std::string_view encoding_name);
std::string transcode(std::string_view bytes, std::string_view encoding_name);

/// Code point a single byte maps to under a single-byte encoding.
char32_t windows1256_code_point(std::uint8_t byte) noexcept;

std::vector<std::string> split_sentences(std::string_view text);

/// Body text and highlight blocks of a story file, before sentence splitting.
struct StoryParts {
  std::string body;
  std::vector<std::string> highlights;
};

inline constexpr std::string_view kHighlightMarker = "@highlight";

/// Throws MissingSummary when `require_summary` and there is no marker.
StoryParts parse_story_parts(std::string_view text, bool require_summary = true);

StoryDoc parse_story(std::string_view text, std::string id = {});
std::string write_story(const StoryDoc& doc);

/// Throws Error(InvalidArgument) when the document violates StoryDoc invariants.
void validate(const StoryDoc& doc);

/// Quotes a single CSV field per RFC 4180.
std::string csv_field(std::string_view value);

/// Converts `<id>.txt` / `<id>.sum.txt` pairs under `input_dir` (optionally in
/// one level of category subdirectories) into `<id>.story` files plus
/// `manifest.csv` in `out_dir`. Returns the number of stories written.
std::size_t ingest_corpus(const std::filesystem::path& input_dir, std::string_view encoding_name,
                          const std::filesystem::path& out_dir);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

}  // namespace sumforge::ingest
