#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "sumforge/ingest.hpp"

namespace sumforge::tokenize {

using TokenId = std::int32_t;

inline constexpr std::string_view kPad = "[PAD]";
inline constexpr std::string_view kUnk = "[UNK]";
inline constexpr std::string_view kCls = "[CLS]";
inline constexpr std::string_view kSep = "[SEP]";
inline constexpr std::string_view kMask = "[MASK]";
inline constexpr std::string_view kBos = "[unused0]";
inline constexpr std::string_view kEos = "[unused1]";

/// Ids of the reserved tokens; bos/eos are absent in vocabularies without
/// "[unused0]"/"[unused1]".
struct SpecialIds {
  TokenId pad = 0;
  TokenId unk = 0;
  TokenId cls = 0;
  TokenId sep = 0;
  TokenId mask = 0;
  std::optional<TokenId> bos;
  std::optional<TokenId> eos;
};

/// Token list in id order. Entries are NFC-normalized when built.
class Vocab {
 public:
  /// Throws DuplicateToken / MissingSpecial.
  explicit Vocab(std::vector<std::string> tokens);

  std::size_t size() const noexcept { return tokens_.size(); }
  std::optional<TokenId> find(std::string_view token) const;
  TokenId id(std::string_view token) const;  // throws IdOutOfRange when absent
  const std::string& token(TokenId id) const;
  bool contains(std::string_view token) const { return find(token).has_value(); }
  const SpecialIds& specials() const noexcept { return specials_; }
  bool is_special(TokenId id) const noexcept;
  TokenId bos() const;  // throws MissingSpecial
  TokenId eos() const;
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
  SpecialIds specials_;
};

Vocab load_vocab(const std::filesystem::path& path);

struct TokenizedExample {
  std::vector<TokenId> src_ids;
  std::vector<TokenId> segment_ids;
  std::vector<std::int32_t> cls_positions;
  std::vector<std::uint8_t> ext_labels;
  std::vector<TokenId> tgt_ids;
  std::vector<std::string> src_txt;  // retained source sentences, parallel to cls_positions
  std::vector<std::string> tgt_txt;

  friend bool operator==(const TokenizedExample&, const TokenizedExample&) = default;
};

std::vector<std::string> basic_tokenize(std::string_view text);

inline constexpr std::size_t kDefaultMaxWordChars = 200;
std::vector<std::string> wordpiece(std::string_view word, const Vocab& vocab,
                                   std::size_t max_word_chars = kDefaultMaxWordChars);

/// NFC + basic_tokenize + wordpiece, mapped to ids.
std::vector<TokenId> tokenize_ids(std::string_view text, const Vocab& vocab);

/// Source half of an encoded example (no labels, no target).
struct EncodedSource {
  std::vector<TokenId> src_ids;
  std::vector<TokenId> segment_ids;
  std::vector<std::int32_t> cls_positions;
  std::size_t retained_sentences = 0;
};

EncodedSource encode_source(std::span<const std::string> sentences, const Vocab& vocab,
                            std::size_t max_positions);

inline constexpr std::size_t kDefaultMaxSelect = 3;

TokenizedExample encode_example(const ingest::StoryDoc& doc, const Vocab& vocab,
                                std::size_t max_positions, std::size_t max_tgt_len,
                                std::size_t max_select = kDefaultMaxSelect);

/// Greedy oracle trace: chosen sentence indices and the objective after each pick.
struct OracleSelection {
  std::vector<std::size_t> selected;
  std::vector<double> scores;
};

OracleSelection oracle_select(std::span<const std::string> article_sentences,
                              std::span<const std::string> summary_sentences,
                              std::size_t max_select = kDefaultMaxSelect);
std::vector<std::uint8_t> oracle_labels(std::span<const std::string> article_sentences,
                                        std::span<const std::string> summary_sentences,
                                        std::size_t max_select = kDefaultMaxSelect);

inline constexpr std::size_t kDefaultShardSize = 2000;

std::size_t write_shards(std::span<const TokenizedExample> examples,
                         const std::filesystem::path& out_dir,
                         std::size_t shard_size = kDefaultShardSize);
std::vector<TokenizedExample> read_shards(const std::filesystem::path& dir);

std::string example_to_json_line(const TokenizedExample& example);
/// Throws CorruptShard naming `context` on malformed input.
TokenizedExample example_from_json_line(std::string_view line, const std::string& context);

std::string decode_ids(std::span<const TokenId> ids, const Vocab& vocab);

}  // namespace sumforge::tokenize
