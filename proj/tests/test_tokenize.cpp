#include <doctest.h>

#include <filesystem>
#include <set>

#include "support.hpp"
#include "sumforge/rouge.hpp"
#include "sumforge/tokenize.hpp"

using namespace sumforge;
using namespace sumforge::tokenize;
using sumforge::testing::error_of;
namespace fs = std::filesystem;

namespace {

Vocab toy_vocab(std::vector<std::string> extra) {
  std::vector<std::string> tokens = testing::special_tokens();
  tokens.insert(tokens.end(), extra.begin(), extra.end());
  return Vocab(tokens);
}

std::vector<std::string> pieces(std::span<const TokenId> ids, const Vocab& v) {
  std::vector<std::string> out;
  for (TokenId id : ids) out.push_back(v.token(id));
  return out;
}

TokenizedExample random_example(CounterRng& rng) {
  TokenizedExample ex;
  const std::size_t sentences = 1 + rng.below(4);
  for (std::size_t s = 0; s < sentences; ++s) {
    ex.cls_positions.push_back(static_cast<std::int32_t>(ex.src_ids.size()));
    ex.ext_labels.push_back(static_cast<std::uint8_t>(rng.below(2)));
    const std::size_t len = 1 + rng.below(5);
    ex.src_ids.push_back(2);
    ex.segment_ids.push_back(static_cast<TokenId>(s % 2));
    for (std::size_t i = 0; i < len + 1; ++i) {
      ex.src_ids.push_back(static_cast<TokenId>(rng.below(1000)));
      ex.segment_ids.push_back(static_cast<TokenId>(s % 2));
    }
    ex.src_txt.push_back(rng.below(2) ? "نص \"مقتبس\"\n" : "plain, text\\ " + std::to_string(s));
  }
  for (std::size_t i = 0, n = 2 + rng.below(6); i < n; ++i) ex.tgt_ids.push_back(static_cast<TokenId>(rng.below(1000)));
  ex.tgt_txt = {"ملخص", "\té"};
  return ex;
}

}  // namespace

TEST_SUITE("tokenize") {

TEST_CASE("load_vocab line index and errors") {
  const fs::path dir = testing::scratch_dir("vocab");
  ingest::write_file(dir / "ok.txt", "[PAD]\n[UNK]\n[CLS]\n[SEP]\n[MASK]\na");
  const Vocab v = load_vocab(dir / "ok.txt");
  CHECK(v.id("a") == 5);
  CHECK(v.size() == 6);
  CHECK(v.specials().cls == 2);
  CHECK_FALSE(v.specials().bos.has_value());
  CHECK(error_of([&] { v.bos(); }) == Errc::MissingSpecial);

  ingest::write_file(dir / "dup.txt", "[PAD]\n[UNK]\n[CLS]\n[SEP]\n[MASK]\na\na");
  CHECK(error_of([&] { load_vocab(dir / "dup.txt"); }) == Errc::DuplicateToken);
  ingest::write_file(dir / "nocls.txt", "[PAD]\n[UNK]\n[SEP]\n[MASK]\na");
  CHECK(error_of([&] { load_vocab(dir / "nocls.txt"); }) == Errc::MissingSpecial);
  CHECK(error_of([&] { load_vocab(dir / "absent.txt"); }) == Errc::IoError);
}

TEST_CASE("load_vocab accepts CRLF and normalizes to NFC") {
  const fs::path dir = testing::scratch_dir("vocab-nfc");
  // "é" written decomposed.
  ingest::write_file(dir / "v.txt", "[PAD]\r\n[UNK]\r\n[CLS]\r\n[SEP]\r\n[MASK]\r\ne\xcc\x81\r\n");
  const Vocab v = load_vocab(dir / "v.txt");
  CHECK(v.id("\xc3\xa9") == 5);
}

TEST_CASE("basic_tokenize examples") {
  CHECK(basic_tokenize("ذهب الولد.") == std::vector<std::string>{"ذهب", "الولد", "."});
  CHECK(basic_tokenize("a,b") == std::vector<std::string>{"a", ",", "b"});
  CHECK(basic_tokenize("").empty());
  CHECK(basic_tokenize("هل؟ نعم") == std::vector<std::string>{"هل", "؟", "نعم"});
  CHECK(basic_tokenize("Don't") == std::vector<std::string>{"Don", "'", "t"});
}

TEST_CASE("wordpiece examples") {
  const Vocab v = toy_vocab({"a", "##b"});
  CHECK(wordpiece("abb", v) == std::vector<std::string>{"a", "##b", "##b"});
  CHECK(wordpiece("a", v) == std::vector<std::string>{"a"});
  CHECK(wordpiece("zq", v) == std::vector<std::string>{"[UNK]"});
  CHECK(wordpiece("abz", v) == std::vector<std::string>{"[UNK]"});
  CHECK(wordpiece(std::string(201, 'a'), v) == std::vector<std::string>{"[UNK]"});
  CHECK(wordpiece("aaa", v, 2) == std::vector<std::string>{"[UNK]"});

  const Vocab longest = toy_vocab({"un", "unaff", "##able", "##a", "##ffable"});
  CHECK(wordpiece("unaffable", longest) == std::vector<std::string>{"unaff", "##able"});
}

TEST_CASE("encode_example hand-built layout") {
  const Vocab v = toy_vocab({"x", "y"});
  const ingest::StoryDoc doc{"d", {"x", "y"}, {"y"}};
  const TokenizedExample ex = encode_example(doc, v, 512, 16);
  CHECK(pieces(ex.src_ids, v) == std::vector<std::string>{"[CLS]", "x", "[SEP]", "[CLS]", "y", "[SEP]"});
  CHECK(ex.segment_ids == std::vector<TokenId>{0, 0, 0, 1, 1, 1});
  CHECK(ex.cls_positions == std::vector<std::int32_t>{0, 3});
  CHECK(ex.ext_labels == std::vector<std::uint8_t>{0, 1});
  CHECK(pieces(ex.tgt_ids, v) == std::vector<std::string>{"[unused0]", "y", "[unused1]"});
  CHECK(ex.src_txt == doc.article_sentences);
  CHECK(ex.tgt_txt == doc.summary_sentences);

  const ingest::StoryDoc one{"d", {"x y x"}, {"x"}};
  const TokenizedExample single = encode_example(one, v, 512, 16);
  CHECK(single.segment_ids == std::vector<TokenId>(5, 0));
}

TEST_CASE("encode_example truncation") {
  const Vocab v = toy_vocab({"x", "y"});
  CHECK(error_of([&] { encode_example({"d", {"x x x"}, {"x"}}, v, 3, 16); }) == Errc::TooLong);

  // Second sentence does not fit in 7 slots and is dropped along with the third.
  const TokenizedExample ex = encode_example({"d", {"x x", "y y", "x"}, {"y y"}}, v, 7, 16);
  CHECK(ex.cls_positions.size() == 1);
  CHECK(ex.ext_labels.size() == 1);
  CHECK(ex.src_txt == std::vector<std::string>{"x x"});
  CHECK(ex.src_ids.size() == 4);

  const TokenizedExample tgt = encode_example({"d", {"x"}, {"x y x y x y"}}, v, 16, 4);
  CHECK(tgt.tgt_ids.size() == 4);
  CHECK(tgt.tgt_ids.back() == v.eos());
  CHECK(tgt.tgt_ids.front() == v.bos());
}

TEST_CASE("encoded examples satisfy structural invariants (fuzz)") {
  const Vocab v = testing::synthetic_vocab();
  CounterRng rng(23);
  for (int trial = 0; trial < 300; ++trial) {
    testing::CorpusSpec spec;
    spec.docs = 1;
    spec.min_sentences = 1;
    spec.max_sentences = 9;
    const auto doc = testing::synthetic_corpus(spec, rng.next_u64()).front();
    const std::size_t max_positions = 8 + rng.below(60);
    TokenizedExample ex;
    try {
      ex = encode_example(doc, v, max_positions, 4 + rng.below(30));
    } catch (const Error& e) {
      CHECK(e.code() == Errc::TooLong);
      continue;
    }
    const TokenId cls = v.specials().cls;
    CHECK(ex.src_ids.size() == ex.segment_ids.size());
    CHECK(ex.src_ids.size() <= max_positions);
    CHECK(ex.cls_positions.size() == ex.ext_labels.size());
    std::size_t cls_count = 0;
    for (std::size_t p = 0; p < ex.src_ids.size(); ++p) {
      CHECK(ex.src_ids[p] >= 0);
      CHECK(static_cast<std::size_t>(ex.src_ids[p]) < v.size());
      if (ex.src_ids[p] == cls) ++cls_count;
    }
    CHECK(cls_count == ex.cls_positions.size());
    for (std::size_t s = 0; s < ex.cls_positions.size(); ++s) {
      const std::size_t begin = static_cast<std::size_t>(ex.cls_positions[s]);
      const std::size_t end = s + 1 < ex.cls_positions.size() ? static_cast<std::size_t>(ex.cls_positions[s + 1])
                                                              : ex.src_ids.size();
      CHECK(ex.src_ids[begin] == cls);
      CHECK(ex.src_ids[end - 1] == v.specials().sep);
      for (std::size_t p = begin; p < end; ++p) CHECK(ex.segment_ids[p] == static_cast<TokenId>(s % 2));
    }
  }
}

TEST_CASE("decode_ids examples and errors") {
  const Vocab v = toy_vocab({"a", "##b"});
  CHECK(decode_ids(std::vector<TokenId>{v.id("a"), v.id("##b"), v.id("##b")}, v) == "abb");
  CHECK(decode_ids(std::vector<TokenId>{v.bos(), v.id("a"), v.eos()}, v) == "a");
  CHECK(error_of([&] { decode_ids(std::vector<TokenId>{static_cast<TokenId>(v.size())}, v); }) == Errc::IdOutOfRange);
}

TEST_CASE("decode inverts tokenization on in-vocabulary text (fuzz)") {
  const Vocab v = toy_vocab({"ذهب", "الولد", "cat", "un", "##able", ".", ",", "؟"});
  const std::vector<std::string> words = {"ذهب", "الولد", "cat", "unable", ".", ",", "؟", "cat."};
  CounterRng rng(3);
  for (int trial = 0; trial < 500; ++trial) {
    std::string text;
    for (std::size_t i = 0, n = 1 + rng.below(8); i < n; ++i)
      text += (i ? std::string(1 + rng.below(2), ' ') : "") + words[rng.below(words.size())];
    std::string expected;
    for (const auto& w : basic_tokenize(text)) expected += (expected.empty() ? "" : " ") + w;
    CHECK(decode_ids(tokenize_ids(text, v), v) == expected);
  }
}

TEST_CASE("oracle label examples") {
  const std::vector<std::string> art = {"the sun rose early", "a cat sat on the mat", "rain fell all day"};
  CHECK(oracle_labels(art, std::vector<std::string>{"a cat sat on the mat"}) == std::vector<std::uint8_t>{0, 1, 0});

  const std::vector<std::string> disjoint = {"red green blue", "one two three", "cat dog bird"};
  CHECK(oracle_labels(disjoint, std::vector<std::string>{"red green blue cat dog bird"}) ==
        std::vector<std::uint8_t>{1, 0, 1});
  CHECK(oracle_labels(disjoint, std::vector<std::string>{"zebra"}) == std::vector<std::uint8_t>{0, 0, 0});
}

TEST_CASE("oracle agrees with exhaustive search on the disjoint case") {
  const std::vector<std::string> art = {"red green blue", "one two three", "cat dog bird"};
  const std::string summary = "red green blue cat dog bird";
  const auto ref = rouge::rouge_tokenize(summary);
  double best = -1.0;
  unsigned best_mask = 0;
  for (unsigned mask = 1; mask < 8; ++mask) {
    std::vector<std::string> cand;
    for (unsigned i = 0; i < 3; ++i)
      if (mask & (1u << i))
        for (const auto& t : rouge::rouge_tokenize(art[i])) cand.push_back(t);
    const double score = rouge::rouge_n(cand, ref, 1).f1 + rouge::rouge_n(cand, ref, 2).f1;
    if (score > best) {
      best = score;
      best_mask = mask;
    }
  }
  CHECK(best_mask == 0b101u);
  const auto sel = oracle_select(art, std::vector<std::string>{summary});
  CHECK(sel.selected == std::vector<std::size_t>{0, 2});
}

TEST_CASE("oracle selection is bounded and strictly increasing (fuzz)") {
  CounterRng rng(29);
  for (int trial = 0; trial < 300; ++trial) {
    auto sentence = [&] {
      std::string s;
      for (std::size_t i = 0, n = 1 + rng.below(6); i < n; ++i) s += (i ? " " : "") + testing::word(rng.below(8));
      return s;
    };
    std::vector<std::string> art(1 + rng.below(8));
    for (auto& s : art) s = sentence();
    const std::vector<std::string> summary = {sentence(), sentence()};
    const std::size_t max_select = 1 + rng.below(4);
    const auto sel = oracle_select(art, summary, max_select);
    CHECK(sel.selected.size() <= max_select);
    CHECK(sel.selected.size() == sel.scores.size());
    for (std::size_t i = 1; i < sel.scores.size(); ++i) CHECK(sel.scores[i] > sel.scores[i - 1]);
    CHECK(std::set<std::size_t>(sel.selected.begin(), sel.selected.end()).size() == sel.selected.size());
    const auto labels = oracle_labels(art, summary, max_select);
    std::size_t ones = 0;
    for (auto b : labels) ones += b;
    CHECK(ones == sel.selected.size());
  }
}

TEST_CASE("shard counts") {
  const fs::path dir = testing::scratch_dir("shards-count");
  CounterRng rng(1);
  std::vector<TokenizedExample> many(16000);
  for (auto& ex : many) {
    ex.src_ids = {2, 7, 3};
    ex.segment_ids = {0, 0, 0};
    ex.cls_positions = {0};
    ex.ext_labels = {1};
    ex.tgt_ids = {5, 7, 6};
  }
  CHECK(write_shards(many, dir / "big", 2000) == 8);
  CHECK(write_shards(std::span(many).first(1), dir / "one", 2000) == 1);
  CHECK(ingest::read_file(dir / "one" / "shard_0.jsonl").find('\n') ==
        ingest::read_file(dir / "one" / "shard_0.jsonl").size() - 1);
  CHECK(write_shards(std::span(many).first(0), dir / "none", 2000) == 0);
  CHECK(read_shards(dir / "none").empty());
  CHECK(read_shards(dir / "big").size() == 16000);
}

TEST_CASE("shard round trip is exact (fuzz)") {
  const fs::path dir = testing::scratch_dir("shards-rt");
  CounterRng rng(41);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<TokenizedExample> xs(rng.below(12));
    for (auto& ex : xs) ex = random_example(rng);
    const fs::path out = dir / std::to_string(trial);
    write_shards(xs, out, 1 + rng.below(4));
    CHECK(read_shards(out) == xs);
  }
}

TEST_CASE("corrupt shards are reported with their line") {
  const fs::path dir = testing::scratch_dir("shards-bad");
  CounterRng rng(2);
  const std::vector<TokenizedExample> xs = {random_example(rng), random_example(rng)};
  write_shards(xs, dir, 10);
  std::string text = ingest::read_file(dir / "shard_0.jsonl");
  text.resize(text.size() - 10);
  ingest::write_file(dir / "shard_0.jsonl", text);
  try {
    read_shards(dir);
    FAIL("expected CorruptShard");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::CorruptShard);
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
  CHECK(error_of([&] { read_shards(dir / "missing"); }) == Errc::IoError);
}

}  // TEST_SUITE
