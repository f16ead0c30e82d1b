#include "sumforge/tokenize.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <set>

#include <json.hpp>

#include "sumforge/error.hpp"
#include "sumforge/rouge.hpp"
#include "sumforge/unicode.hpp"

namespace sumforge::tokenize {

// ---------------------------------------------------------------------------
// Vocab

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  index_.reserve(tokens_.size());
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    tokens_[i] = unicode::nfc(tokens_[i]);
    auto [it, inserted] = index_.emplace(tokens_[i], static_cast<TokenId>(i));
    if (!inserted)
      throw Error(Errc::DuplicateToken, "'" + tokens_[i] + "' on lines " +
                                            std::to_string(it->second + 1) + " and " +
                                            std::to_string(i + 1));
  }
  auto required = [&](std::string_view name) {
    auto id = find(name);
    if (!id) throw Error(Errc::MissingSpecial, std::string(name));
    return *id;
  };
  specials_.pad = required(kPad);
  specials_.unk = required(kUnk);
  specials_.cls = required(kCls);
  specials_.sep = required(kSep);
  specials_.mask = required(kMask);
  specials_.bos = find(kBos);
  specials_.eos = find(kEos);
}

std::optional<TokenId> Vocab::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

TokenId Vocab::id(std::string_view token) const {
  auto found = find(token);
  if (!found) throw Error(Errc::IdOutOfRange, "token not in vocabulary: " + std::string(token));
  return *found;
}

const std::string& Vocab::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
    throw Error(Errc::IdOutOfRange, std::to_string(id));
  return tokens_[static_cast<std::size_t>(id)];
}

bool Vocab::is_special(TokenId id) const noexcept {
  const SpecialIds& s = specials_;
  return id == s.pad || id == s.unk || id == s.cls || id == s.sep || id == s.mask ||
         (s.bos && id == *s.bos) || (s.eos && id == *s.eos);
}

TokenId Vocab::bos() const {
  if (!specials_.bos) throw Error(Errc::MissingSpecial, std::string(kBos));
  return *specials_.bos;
}

TokenId Vocab::eos() const {
  if (!specials_.eos) throw Error(Errc::MissingSpecial, std::string(kEos));
  return *specials_.eos;
}

Vocab load_vocab(const std::filesystem::path& path) {
  const std::string text = ingest::read_file(path);
  if (!unicode::is_valid_utf8(text)) throw Error(Errc::InvalidUtf8, path.string());
  std::vector<std::string> tokens;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t nl = text.find('\n', start);
    if (nl == std::string::npos) nl = text.size();
    std::string line = text.substr(start, nl - start);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(std::move(line));
    start = nl + 1;
  }
  return Vocab(std::move(tokens));
}

// ---------------------------------------------------------------------------
// Tokenization

std::vector<std::string> basic_tokenize(std::string_view text) {
  std::vector<std::string> words;
  std::u32string current;
  auto flush = [&] {
    if (!current.empty()) words.push_back(unicode::encode(current));
    current.clear();
  };
  for (char32_t cp : unicode::decode(text)) {
    if (unicode::is_whitespace(cp)) {
      flush();
    } else if (unicode::is_punctuation(cp)) {
      flush();
      current.push_back(cp);
      flush();
    } else {
      current.push_back(cp);
    }
  }
  flush();
  return words;
}

std::vector<std::string> wordpiece(std::string_view word, const Vocab& vocab,
                                   std::size_t max_word_chars) {
  const std::u32string cps = unicode::decode(word);
  const std::vector<std::string> unknown{std::string(kUnk)};
  if (cps.empty() || cps.size() > max_word_chars) return unknown;
  std::vector<std::string> pieces;
  std::size_t start = 0;
  while (start < cps.size()) {
    std::size_t end = cps.size();
    std::string match;
    for (; end > start; --end) {
      std::string candidate = unicode::encode(std::u32string_view(cps).substr(start, end - start));
      if (start > 0) candidate.insert(0, "##");
      if (vocab.contains(candidate)) {
        match = std::move(candidate);
        break;
      }
    }
    if (match.empty()) return unknown;
    pieces.push_back(std::move(match));
    start = end;
  }
  return pieces;
}

std::vector<TokenId> tokenize_ids(std::string_view text, const Vocab& vocab) {
  std::vector<TokenId> ids;
  for (const std::string& word : basic_tokenize(unicode::nfc(text))) {
    for (const std::string& piece : wordpiece(word, vocab)) ids.push_back(vocab.id(piece));
  }
  return ids;
}

EncodedSource encode_source(std::span<const std::string> sentences, const Vocab& vocab,
                            std::size_t max_positions) {
  EncodedSource out;
  const SpecialIds& sp = vocab.specials();
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    const std::vector<TokenId> ids = tokenize_ids(sentences[i], vocab);
    if (out.src_ids.size() + ids.size() + 2 > max_positions) {
      if (i == 0)
        throw Error(Errc::TooLong, "first sentence needs " + std::to_string(ids.size() + 2) +
                                       " positions, limit is " + std::to_string(max_positions));
      break;
    }
    const auto segment = static_cast<TokenId>(i % 2);
    out.cls_positions.push_back(static_cast<std::int32_t>(out.src_ids.size()));
    out.src_ids.push_back(sp.cls);
    out.src_ids.insert(out.src_ids.end(), ids.begin(), ids.end());
    out.src_ids.push_back(sp.sep);
    out.segment_ids.resize(out.src_ids.size(), segment);
    ++out.retained_sentences;
  }
  return out;
}

TokenizedExample encode_example(const ingest::StoryDoc& doc, const Vocab& vocab,
                                std::size_t max_positions, std::size_t max_tgt_len,
                                std::size_t max_select) {
  ingest::validate(doc);
  if (max_tgt_len < 2) throw Error(Errc::InvalidArgument, "max_tgt_len must be >= 2");
  const TokenId bos = vocab.bos();
  const TokenId eos = vocab.eos();

  EncodedSource source = encode_source(doc.article_sentences, vocab, max_positions);
  std::vector<std::uint8_t> labels =
      oracle_labels(doc.article_sentences, doc.summary_sentences, max_select);
  labels.resize(source.retained_sentences);

  TokenizedExample ex;
  ex.src_ids = std::move(source.src_ids);
  ex.segment_ids = std::move(source.segment_ids);
  ex.cls_positions = std::move(source.cls_positions);
  ex.ext_labels = std::move(labels);
  ex.src_txt.assign(doc.article_sentences.begin(),
                    doc.article_sentences.begin() +
                        static_cast<std::ptrdiff_t>(source.retained_sentences));
  ex.tgt_txt = doc.summary_sentences;

  ex.tgt_ids.push_back(bos);
  for (const std::string& s : doc.summary_sentences) {
    const auto ids = tokenize_ids(s, vocab);
    ex.tgt_ids.insert(ex.tgt_ids.end(), ids.begin(), ids.end());
  }
  if (ex.tgt_ids.size() + 1 > max_tgt_len) ex.tgt_ids.resize(max_tgt_len - 1);
  ex.tgt_ids.push_back(eos);
  return ex;
}

// ---------------------------------------------------------------------------
// Oracle labels

namespace {

using Ngram = std::vector<std::string>;
using Counts = std::map<Ngram, std::size_t>;

Counts ngram_counts(const std::vector<std::string>& tokens, std::size_t n) {
  Counts counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i)
    ++counts[Ngram(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                   tokens.begin() + static_cast<std::ptrdiff_t>(i + n))];
  return counts;
}

std::size_t total(const Counts& c) {
  std::size_t t = 0;
  for (const auto& [g, n] : c) t += n;
  return t;
}

double clipped_f1(const Counts& candidate, const Counts& reference) {
  std::size_t overlap = 0;
  for (const auto& [gram, count] : candidate) {
    if (auto it = reference.find(gram); it != reference.end()) overlap += std::min(count, it->second);
  }
  const std::size_t cand_total = total(candidate);
  const std::size_t ref_total = total(reference);
  if (cand_total == 0 || ref_total == 0) return 0.0;
  return rouge::make_score(static_cast<double>(overlap) / static_cast<double>(cand_total),
                           static_cast<double>(overlap) / static_cast<double>(ref_total))
      .f1;
}

}  // namespace

OracleSelection oracle_select(std::span<const std::string> article_sentences,
                              std::span<const std::string> summary_sentences,
                              std::size_t max_select) {
  if (max_select < 1) throw Error(Errc::InvalidArgument, "max_select must be >= 1");
  std::vector<std::string> reference;
  for (const std::string& s : summary_sentences) {
    auto tokens = rouge::rouge_tokenize(s);
    reference.insert(reference.end(), tokens.begin(), tokens.end());
  }
  const Counts ref1 = ngram_counts(reference, 1);
  const Counts ref2 = ngram_counts(reference, 2);

  std::vector<Counts> sent1;
  std::vector<Counts> sent2;
  for (const std::string& s : article_sentences) {
    const auto tokens = rouge::rouge_tokenize(s);
    sent1.push_back(ngram_counts(tokens, 1));
    sent2.push_back(ngram_counts(tokens, 2));
  }

  OracleSelection result;
  std::vector<bool> chosen(article_sentences.size(), false);
  Counts sel1;
  Counts sel2;
  double best_score = 0.0;
  while (result.selected.size() < max_select) {
    std::optional<std::size_t> best;
    double best_candidate = best_score;
    for (std::size_t i = 0; i < article_sentences.size(); ++i) {
      if (chosen[i]) continue;
      Counts c1 = sel1;
      Counts c2 = sel2;
      for (const auto& [g, n] : sent1[i]) c1[g] += n;
      for (const auto& [g, n] : sent2[i]) c2[g] += n;
      const double score = clipped_f1(c1, ref1) + clipped_f1(c2, ref2);
      if (score > best_candidate) {
        best_candidate = score;
        best = i;
      }
    }
    if (!best) break;
    chosen[*best] = true;
    for (const auto& [g, n] : sent1[*best]) sel1[g] += n;
    for (const auto& [g, n] : sent2[*best]) sel2[g] += n;
    best_score = best_candidate;
    result.selected.push_back(*best);
    result.scores.push_back(best_score);
  }
  return result;
}

std::vector<std::uint8_t> oracle_labels(std::span<const std::string> article_sentences,
                                        std::span<const std::string> summary_sentences,
                                        std::size_t max_select) {
  std::vector<std::uint8_t> labels(article_sentences.size(), 0);
  for (std::size_t i : oracle_select(article_sentences, summary_sentences, max_select).selected)
    labels[i] = 1;
  return labels;
}

// ---------------------------------------------------------------------------
// Shards

using nlohmann::json;

std::string example_to_json_line(const TokenizedExample& ex) {
  json j;
  j["src"] = ex.src_ids;
  j["segs"] = ex.segment_ids;
  j["clss"] = ex.cls_positions;
  j["labels"] = ex.ext_labels;
  j["tgt"] = ex.tgt_ids;
  j["src_txt"] = ex.src_txt;
  j["tgt_txt"] = ex.tgt_txt;
  return j.dump();
}

namespace {

template <typename T>
std::vector<T> int_array(const json& j, const char* key, const std::string& context) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_array())
    throw Error(Errc::CorruptShard, context + ": missing array '" + key + "'");
  std::vector<T> out;
  out.reserve(it->size());
  for (const json& v : *it) {
    if (!v.is_number_integer()) throw Error(Errc::CorruptShard, context + ": non-integer in '" + key + "'");
    out.push_back(v.get<T>());
  }
  return out;
}

std::vector<std::string> string_array(const json& j, const char* key, const std::string& context) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_array())
    throw Error(Errc::CorruptShard, context + ": missing array '" + key + "'");
  std::vector<std::string> out;
  for (const json& v : *it) {
    if (!v.is_string()) throw Error(Errc::CorruptShard, context + ": non-string in '" + key + "'");
    out.push_back(v.get<std::string>());
  }
  return out;
}

std::optional<std::size_t> shard_index(const std::string& name) {
  constexpr std::string_view prefix = "shard_";
  constexpr std::string_view suffix = ".jsonl";
  if (name.size() <= prefix.size() + suffix.size() || !name.starts_with(prefix) ||
      !name.ends_with(suffix))
    return std::nullopt;
  const std::string_view digits(name.data() + prefix.size(),
                                name.size() - prefix.size() - suffix.size());
  std::size_t value = 0;
  auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), value);
  if (ec != std::errc() || ptr != digits.data() + digits.size()) return std::nullopt;
  return value;
}

}  // namespace

TokenizedExample example_from_json_line(std::string_view line, const std::string& context) {
  json j = json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw Error(Errc::CorruptShard, context + ": malformed JSON");
  TokenizedExample ex;
  ex.src_ids = int_array<TokenId>(j, "src", context);
  ex.segment_ids = int_array<TokenId>(j, "segs", context);
  ex.cls_positions = int_array<std::int32_t>(j, "clss", context);
  ex.ext_labels = int_array<std::uint8_t>(j, "labels", context);
  ex.tgt_ids = int_array<TokenId>(j, "tgt", context);
  ex.src_txt = string_array(j, "src_txt", context);
  ex.tgt_txt = string_array(j, "tgt_txt", context);
  if (ex.src_ids.size() != ex.segment_ids.size() || ex.cls_positions.size() != ex.ext_labels.size())
    throw Error(Errc::CorruptShard, context + ": inconsistent field lengths");
  return ex;
}

std::size_t write_shards(std::span<const TokenizedExample> examples,
                         const std::filesystem::path& out_dir, std::size_t shard_size) {
  if (shard_size < 1) throw Error(Errc::InvalidArgument, "shard_size must be >= 1");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw Error(Errc::IoError, "cannot create " + out_dir.string());
  std::size_t shards = 0;
  for (std::size_t begin = 0; begin < examples.size(); begin += shard_size, ++shards) {
    const std::size_t end = std::min(examples.size(), begin + shard_size);
    std::string contents;
    for (std::size_t i = begin; i < end; ++i) {
      contents += example_to_json_line(examples[i]);
      contents += '\n';
    }
    ingest::write_file(out_dir / ("shard_" + std::to_string(shards) + ".jsonl"), contents);
  }
  return shards;
}

std::vector<TokenizedExample> read_shards(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw Error(Errc::IoError, "not a directory: " + dir.string());
  std::vector<std::pair<std::size_t, std::filesystem::path>> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    if (auto k = shard_index(entry.path().filename().string())) files.emplace_back(*k, entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<TokenizedExample> examples;
  for (const auto& [k, path] : files) {
    const std::string text = ingest::read_file(path);
    std::size_t start = 0;
    std::size_t line_no = 0;
    while (start < text.size()) {
      std::size_t nl = text.find('\n', start);
      if (nl == std::string::npos) nl = text.size();
      ++line_no;
      const std::string_view line(text.data() + start, nl - start);
      if (!unicode::trim(line).empty())
        examples.push_back(example_from_json_line(
            line, path.filename().string() + " line " + std::to_string(line_no)));
      start = nl + 1;
    }
  }
  return examples;
}

std::string decode_ids(std::span<const TokenId> ids, const Vocab& vocab) {
  std::string out;
  for (TokenId id : ids) {
    const std::string& tok = vocab.token(id);
    if (vocab.is_special(id)) continue;
    if (tok.starts_with("##") && tok.size() > 2) {
      out += tok.substr(2);
    } else {
      if (!out.empty()) out += ' ';
      out += tok;
    }
  }
  return out;
}

}  // namespace sumforge::tokenize
