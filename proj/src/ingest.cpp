#include "sumforge/ingest.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <map>
#include <sstream>

#include "sumforge/error.hpp"
#include "sumforge/unicode.hpp"

namespace sumforge::ingest {
namespace {

// Windows-1256 upper half, 0x80..0xFF. The lower half is ASCII.
constexpr std::array<char16_t, 128> kWindows1256High = {
    0x20AC, 0x067E, 0x201A, 0x0192, 0x201E, 0x2026, 0x2020, 0x2021,  // 80
    0x02C6, 0x2030, 0x0679, 0x2039, 0x0152, 0x0686, 0x0698, 0x0688,  // 88
    0x06AF, 0x2018, 0x2019, 0x201C, 0x201D, 0x2022, 0x2013, 0x2014,  // 90
    0x06A9, 0x2122, 0x0691, 0x203A, 0x0153, 0x200C, 0x200D, 0x06BA,  // 98
    0x00A0, 0x060C, 0x00A2, 0x00A3, 0x00A4, 0x00A5, 0x00A6, 0x00A7,  // A0
    0x00A8, 0x00A9, 0x06BE, 0x00AB, 0x00AC, 0x00AD, 0x00AE, 0x00AF,  // A8
    0x00B0, 0x00B1, 0x00B2, 0x00B3, 0x00B4, 0x00B5, 0x00B6, 0x00B7,  // B0
    0x00B8, 0x00B9, 0x061B, 0x00BB, 0x00BC, 0x00BD, 0x00BE, 0x061F,  // B8
    0x06C1, 0x0621, 0x0622, 0x0623, 0x0624, 0x0625, 0x0626, 0x0627,  // C0
    0x0628, 0x0629, 0x062A, 0x062B, 0x062C, 0x062D, 0x062E, 0x062F,  // C8
    0x0630, 0x0631, 0x0632, 0x0633, 0x0634, 0x0635, 0x0636, 0x00D7,  // D0
    0x0637, 0x0638, 0x0639, 0x063A, 0x0640, 0x0641, 0x0642, 0x0643,  // D8
    0x00E0, 0x0644, 0x00E2, 0x0645, 0x0646, 0x0647, 0x0648, 0x00E7,  // E0
    0x00E8, 0x00E9, 0x00EA, 0x00EB, 0x0649, 0x064A, 0x00EE, 0x00EF,  // E8
    0x064B, 0x064C, 0x064D, 0x064E, 0x00F4, 0x064F, 0x0650, 0x00F7,  // F0
    0x0651, 0x00F9, 0x0652, 0x00FB, 0x00FC, 0x200E, 0x200F, 0x06D2,  // F8
};

enum class Encoding { Windows1256, Latin1, Utf8 };

Encoding resolve_encoding(std::string_view name) {
  std::string key;
  for (char c : name) {
    if (c == '-' || c == '_' || c == ' ') continue;
    key.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  if (key == "windows1256" || key == "cp1256") return Encoding::Windows1256;
  if (key == "latin1" || key == "iso88591" || key == "l1") return Encoding::Latin1;
  if (key == "utf8") return Encoding::Utf8;
  throw Error(Errc::UnsupportedEncoding, std::string(name));
}

bool is_terminator(char32_t cp) {
  return cp == U'.' || cp == U'!' || cp == U'?' || cp == U'؟' || cp == U'؛' ||
         cp == U'۔';
}

// Collapses whitespace runs to one ASCII space and trims.
std::string normalize_whitespace(std::string_view text) {
  const std::u32string cps = unicode::decode(text);
  std::u32string out;
  out.reserve(cps.size());
  bool pending_space = false;
  for (char32_t cp : cps) {
    if (unicode::is_whitespace(cp)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(U' ');
    pending_space = false;
    out.push_back(cp);
  }
  return unicode::encode(out);
}

std::vector<std::string> split_lines(std::string_view text) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t nl = text.find('\n', start);
    std::string_view line =
        nl == std::string_view::npos ? text.substr(start) : text.substr(start, nl - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.emplace_back(line);
    if (nl == std::string_view::npos) break;
    start = nl + 1;
  }
  return lines;
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

}  // namespace

char32_t windows1256_code_point(std::uint8_t byte) noexcept {
  if (byte < 0x80) return byte;
  return kWindows1256High[byte - 0x80];
}

std::string transcode(std::span<const std::uint8_t> bytes, std::string_view encoding_name) {
  const Encoding encoding = resolve_encoding(encoding_name);
  std::string out;
  switch (encoding) {
    case Encoding::Utf8: {
      std::string_view view(reinterpret_cast<const char*>(bytes.data()), bytes.size());
      if (!unicode::is_valid_utf8(view)) throw Error(Errc::InvalidUtf8, "input is not UTF-8");
      return std::string(view);
    }
    case Encoding::Windows1256:
      out.reserve(bytes.size() * 2);
      for (std::uint8_t b : bytes) unicode::append_utf8(out, windows1256_code_point(b));
      return out;
    case Encoding::Latin1:
      out.reserve(bytes.size() * 2);
      for (std::uint8_t b : bytes) unicode::append_utf8(out, b);
      return out;
  }
  return out;
}

std::string transcode(std::string_view bytes, std::string_view encoding_name) {
  return transcode(std::span(reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()),
                   encoding_name);
}

std::vector<std::string> split_sentences(std::string_view text) {
  const std::u32string cps = unicode::decode(text);
  std::vector<std::string> sentences;
  auto flush = [&](std::size_t begin, std::size_t end) {
    const std::string segment = normalize_whitespace(unicode::encode(
        std::u32string_view(cps).substr(begin, end - begin)));
    if (!segment.empty()) sentences.push_back(segment);
  };
  std::size_t start = 0;
  for (std::size_t i = 0; i < cps.size(); ++i) {
    if (!is_terminator(cps[i])) continue;
    const bool at_boundary = i + 1 == cps.size() || unicode::is_whitespace(cps[i + 1]);
    if (!at_boundary) continue;
    flush(start, i + 1);
    start = i + 1;
  }
  if (start < cps.size()) flush(start, cps.size());
  return sentences;
}

StoryParts parse_story_parts(std::string_view text, bool require_summary) {
  StoryParts parts;
  std::vector<std::string> body_lines;
  bool in_highlights = false;
  std::vector<std::string> block;
  auto close_block = [&] {
    const std::string sentence = normalize_whitespace(join(block, " "));
    if (!sentence.empty()) parts.highlights.push_back(sentence);
    block.clear();
  };
  bool saw_marker = false;
  for (const std::string& line : split_lines(text)) {
    if (unicode::trim(line) == kHighlightMarker) {
      if (in_highlights) close_block();
      in_highlights = true;
      saw_marker = true;
      continue;
    }
    (in_highlights ? block : body_lines).push_back(line);
  }
  if (in_highlights) close_block();
  parts.body = std::string(unicode::trim(join(body_lines, "\n")));
  if (require_summary && (!saw_marker || parts.highlights.empty()))
    throw Error(Errc::MissingSummary, "no non-empty @highlight block");
  return parts;
}

StoryDoc parse_story(std::string_view text, std::string id) {
  StoryParts parts = parse_story_parts(text, true);
  StoryDoc doc;
  doc.id = std::move(id);
  doc.article_sentences = split_sentences(parts.body);
  if (doc.article_sentences.empty()) throw Error(Errc::EmptyArticle, "no text before first marker");
  doc.summary_sentences = std::move(parts.highlights);
  return doc;
}

void validate(const StoryDoc& doc) {
  if (doc.article_sentences.empty()) throw Error(Errc::InvalidArgument, "story has no article sentences");
  if (doc.summary_sentences.empty()) throw Error(Errc::InvalidArgument, "story has no summary sentences");
  for (const auto* list : {&doc.article_sentences, &doc.summary_sentences}) {
    for (const std::string& s : *list) {
      if (unicode::trim(s).empty()) throw Error(Errc::InvalidArgument, "empty sentence in story");
    }
  }
}

std::string write_story(const StoryDoc& doc) {
  validate(doc);
  std::string out = join(doc.article_sentences, " ");
  for (const std::string& s : doc.summary_sentences) {
    out += "\n\n";
    out += kHighlightMarker;
    out += "\n\n";
    out += s;
  }
  return out;
}

std::string csv_field(std::string_view value) {
  if (value.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(value);
  std::string out = "\"";
  for (char c : value) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  if (in.bad()) throw Error(Errc::IoError, "cannot read " + path.string());
  return std::move(buffer).str();
}

void write_file(const std::filesystem::path& path, std::string_view contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::IoError, "cannot create " + path.string());
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
}

namespace {

constexpr std::string_view kSummarySuffix = ".sum.txt";
constexpr std::string_view kArticleSuffix = ".txt";

struct PairEntry {
  std::string category;
  std::filesystem::path article;
  std::filesystem::path summary;
};

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

void collect_pairs(const std::filesystem::path& dir, const std::string& category,
                   std::map<std::string, PairEntry>& pairs) {
  std::vector<std::filesystem::directory_entry> entries;
  std::error_code ec;
  for (const auto& entry : std::filesystem::directory_iterator(dir, ec)) entries.push_back(entry);
  if (ec) throw Error(Errc::IoError, "cannot list " + dir.string() + ": " + ec.message());
  for (const auto& entry : entries) {
    const std::string name = entry.path().filename().string();
    if (entry.is_directory()) {
      if (category.empty()) collect_pairs(entry.path(), name, pairs);
      continue;
    }
    if (!entry.is_regular_file()) continue;
    std::string stem;
    bool is_summary = false;
    if (ends_with(name, kSummarySuffix)) {
      stem = name.substr(0, name.size() - kSummarySuffix.size());
      is_summary = true;
    } else if (ends_with(name, kArticleSuffix)) {
      stem = name.substr(0, name.size() - kArticleSuffix.size());
    } else {
      continue;
    }
    const std::string id = category.empty() ? stem : category + "_" + stem;
    PairEntry& pair = pairs[id];
    if (!pair.category.empty() && pair.category != category)
      throw Error(Errc::InvalidArgument, "duplicate document id " + id);
    pair.category = category;
    (is_summary ? pair.summary : pair.article) = entry.path();
  }
}

std::string relative_to(const std::filesystem::path& path, const std::filesystem::path& base) {
  return path.lexically_relative(base).generic_string();
}

}  // namespace

std::size_t ingest_corpus(const std::filesystem::path& input_dir, std::string_view encoding_name,
                          const std::filesystem::path& out_dir) {
  resolve_encoding(encoding_name);
  if (!std::filesystem::is_directory(input_dir))
    throw Error(Errc::IoError, "not a directory: " + input_dir.string());

  std::map<std::string, PairEntry> pairs;
  collect_pairs(input_dir, "", pairs);
  for (const auto& [id, pair] : pairs) {
    if (pair.article.empty() || pair.summary.empty())
      throw Error(Errc::UnpairedFile, id);
  }

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw Error(Errc::IoError, "cannot create " + out_dir.string() + ": " + ec.message());

  std::string manifest = "id,category,article_path,summary_path\r\n";
  for (const auto& [id, pair] : pairs) {
    RawDocument raw;
    raw.source_path = relative_to(pair.article, input_dir);
    raw.category = pair.category;
    raw.body = transcode(read_file(pair.article), encoding_name);
    raw.summary_text = transcode(read_file(pair.summary), encoding_name);
    StoryDoc doc;
    doc.id = id;
    doc.article_sentences = split_sentences(raw.body);
    if (doc.article_sentences.empty()) throw Error(Errc::EmptyArticle, id);
    doc.summary_sentences = split_sentences(raw.summary_text);
    if (doc.summary_sentences.empty()) throw Error(Errc::MissingSummary, id);
    write_file(out_dir / (id + ".story"), write_story(doc));
    manifest += csv_field(id) + "," + csv_field(raw.category) + "," + csv_field(raw.source_path) +
                "," + csv_field(relative_to(pair.summary, input_dir)) + "\r\n";
  }
  write_file(out_dir / "manifest.csv", manifest);
  return pairs.size();
}

}  // namespace sumforge::ingest
