#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "support.hpp"
#include "sumforge/infer.hpp"
#include "sumforge/train.hpp"

using namespace sumforge;
using namespace sumforge::infer;
using namespace sumforge::model;
using sumforge::testing::error_of;

namespace {

const tokenize::Vocab& vocab() {
  static const auto v = testing::synthetic_vocab();
  return v;
}

std::vector<std::string> random_sentences(CounterRng& rng, std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::string s;
    const std::size_t len = 1 + rng.below(6);
    for (std::size_t w = 0; w < len; ++w) s += (w ? " " : "") + std::string(1, static_cast<char>('a' + rng.below(4)));
    out.push_back(s);
  }
  return out;
}

/// Random tiny abstractive model with weights spread wide enough that
/// next-token distributions are far from uniform.
SummarizationModel<double> random_abs_model(std::uint64_t seed) {
  auto c = testing::tiny_config(vocab().size());
  c.d_model = 8;
  c.d_ff = 16;
  c.max_positions = 32;
  auto m = SummarizationModel<double>::build(TaskKind::Abstractive, c, seed);
  CounterRng rng = CounterRng(seed).split("spread");
  for (const auto& [name, t] : m.parameters()) {
    auto data = Tensor<double>(t).mutable_data();
    for (double& v : data) v += 0.5 * rng.normal();
  }
  return m;
}

tokenize::TokenizedExample random_source(CounterRng& rng) {
  std::vector<std::string> sentences;
  for (std::size_t s = 0, n = 1 + rng.below(3); s < n; ++s) {
    std::string text;
    for (std::size_t w = 0, len = 2 + rng.below(4); w < len; ++w) text += (w ? " " : "") + testing::word(rng.below(40));
    sentences.push_back(text);
  }
  return source_example(sentences, vocab(), 32);
}

}  // namespace

TEST_SUITE("infer") {

TEST_CASE("top-k selection examples") {
  const std::vector<std::string> s = {"one", "two", "three"};
  const std::vector<double> scores = {0.9, 0.1, 0.8};
  CHECK(select_sentences(scores, s, {.k = 2, .use_trigram_blocking = false}) == std::vector<std::size_t>{0, 2});
  CHECK(select_sentences(scores, s, {.k = 10, .use_trigram_blocking = false}) == std::vector<std::size_t>{0, 1, 2});
  const std::vector<double> ties = {0.5, 0.5, 0.5};
  CHECK(select_sentences(ties, s, {.k = 2}) == std::vector<std::size_t>{0, 1});
  CHECK(error_of([&] { select_sentences(scores, s, {.k = 0}); }) == Errc::ConfigError);
  const std::vector<double> two = {0.5, 0.5};
  CHECK(error_of([&] { select_sentences(two, s, {}); }) == Errc::LengthMismatch);
}

TEST_CASE("trigram blocking skips the overlapping candidate") {
  const std::vector<std::string> s = {"a b c d", "x a b c", "e f g h"};
  const std::vector<double> scores = {0.9, 0.8, 0.7};
  CHECK(select_sentences(scores, s, {.k = 2}) == std::vector<std::size_t>{0, 2});
  CHECK(select_sentences(scores, s, {.k = 2, .use_trigram_blocking = false}) == std::vector<std::size_t>{0, 1});
  CHECK(word_trigrams("a b c d") == std::vector<std::string>{"a b c", "b c d"});
  CHECK(word_trigrams("a b").empty());
}

TEST_CASE("selection is a blocked subsequence of at most k sentences (fuzz)") {
  CounterRng rng(5);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto s = random_sentences(rng, 1 + rng.below(8));
    std::vector<double> scores(s.size());
    for (double& v : scores) v = static_cast<double>(rng.below(5)) / 4.0;
    ExtConfig cfg{.k = 1 + rng.below(4), .use_trigram_blocking = rng.below(2) == 0};
    const auto picked = select_sentences(scores, s, cfg);
    CHECK(picked.size() <= cfg.k);
    CHECK(std::is_sorted(picked.begin(), picked.end()));
    CHECK(std::adjacent_find(picked.begin(), picked.end()) == picked.end());
    if (!cfg.use_trigram_blocking) CHECK(picked.size() == std::min(cfg.k, s.size()));
    if (cfg.use_trigram_blocking)
      for (std::size_t a = 0; a < picked.size(); ++a)
        for (std::size_t b = a + 1; b < picked.size(); ++b) {
          const auto ga = word_trigrams(s[picked[a]]);
          const auto gb = word_trigrams(s[picked[b]]);
          const std::set<std::string> sa(ga.begin(), ga.end());
          CHECK(std::none_of(gb.begin(), gb.end(), [&](const std::string& g) { return sa.count(g) > 0; }));
        }
  }
}

TEST_CASE("summarize_ext returns document-ordered sentence texts") {
  auto c = testing::tiny_config(vocab().size());
  const auto m = SummarizationModel<float>::build(TaskKind::Extractive, c, 2);
  const std::vector<std::string> sentences = {"w1 w2 w3 .", "w4 w5 w6 .", "w7 w8 w9 .", "w10 w11 w12 ."};
  const auto ex = source_example(sentences, vocab(), 128);
  const auto scores = sentence_scores(m, ex);
  CHECK(scores.size() == 4);
  const auto out = summarize_ext(m, ex, {.k = 2});
  CHECK(out.size() == 2);
  auto it = sentences.begin();
  for (const auto& s : out) {
    it = std::find(it, sentences.end(), s);
    CHECK(it != sentences.end());
  }
  CHECK(error_of([&] { source_example({}, vocab(), 128); }) == Errc::EmptyDocument);
  tokenize::TokenizedExample empty;
  CHECK(error_of([&] { summarize_ext(m, empty, {}); }) == Errc::EmptyDocument);
}

TEST_CASE("length penalty") {
  CHECK(length_penalty(1, 0.6) == 1.0);
  CHECK(length_penalty(7, 0.0) == 1.0);
  CHECK(length_penalty(7, 1.0) == doctest::Approx(2.0));
  CHECK(length_penalty(13, 0.5) == doctest::Approx(std::sqrt(3.0)));
}

TEST_CASE("beam config validation") {
  BeamConfig c;
  c.beam_size = 0;
  CHECK(error_of([&] { c.validate(); }) == Errc::ConfigError);
  c = {};
  c.min_len = 5;
  c.max_len = 4;
  CHECK(error_of([&] { c.validate(); }) == Errc::ConfigError);
  const auto from = BeamConfig::for_vocab(vocab());
  CHECK(from.bos_id == vocab().bos());
  CHECK(from.eos_id == vocab().eos());
}

TEST_CASE("beam size 1 equals greedy decoding (fuzz)") {
  CounterRng rng(9);
  for (int trial = 0; trial < 30; ++trial) {
    const auto m = random_abs_model(100 + static_cast<std::uint64_t>(trial));
    const auto ex = random_source(rng);
    BeamConfig cfg = BeamConfig::for_vocab(vocab());
    cfg.beam_size = 1;
    cfg.max_len = 2 + rng.below(8);
    cfg.min_len = 1 + rng.below(cfg.max_len);
    cfg.block_repeat_trigrams = rng.below(2) == 0;
    const auto beam = beam_search(m, ex, cfg);
    const auto greedy = greedy_decode(m, ex, cfg);
    CHECK(beam.tokens == greedy.tokens);
    CHECK(beam.finished == greedy.finished);
    CHECK(beam.log_prob == doctest::Approx(greedy.log_prob).epsilon(1e-12));
  }
}

TEST_CASE("alpha 0 scores are raw log-probability sums") {
  CounterRng rng(4);
  const auto m = random_abs_model(7);
  BeamConfig cfg = BeamConfig::for_vocab(vocab());
  cfg.length_penalty_alpha = 0.0;
  cfg.max_len = 6;
  for (std::size_t beam : {1, 2, 4}) {
    cfg.beam_size = beam;
    const auto h = beam_search(m, random_source(rng), cfg);
    CHECK(h.score == h.log_prob);
  }
}

TEST_CASE("decoded sequences honour length limits and forbidden tokens (fuzz)") {
  CounterRng rng(12);
  for (int trial = 0; trial < 30; ++trial) {
    const auto m = random_abs_model(300 + static_cast<std::uint64_t>(trial));
    BeamConfig cfg = BeamConfig::for_vocab(vocab());
    cfg.beam_size = 1 + rng.below(4);
    cfg.max_len = 1 + rng.below(8);
    cfg.min_len = 1 + rng.below(cfg.max_len);
    const auto h = beam_search(m, random_source(rng), cfg);
    CHECK(h.tokens.size() >= cfg.min_len);
    CHECK(h.tokens.size() <= cfg.max_len);
    for (auto id : h.tokens) {
      CHECK(id != cfg.pad_id);
      CHECK(id != cfg.bos_id);
      CHECK(id != cfg.eos_id);
    }
    const double expected = h.log_prob / length_penalty(h.tokens.size() + (h.finished ? 1 : 0), cfg.length_penalty_alpha);
    CHECK(h.score == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("min_len = max_len = 3 yields exactly three tokens") {
  CounterRng rng(2);
  const auto m = random_abs_model(3);
  BeamConfig cfg = BeamConfig::for_vocab(vocab());
  cfg.min_len = 3;
  cfg.max_len = 3;
  const auto h = beam_search(m, random_source(rng), cfg);
  CHECK(h.tokens.size() == 3);
  const auto text = summarize_abs(m, random_source(rng), cfg, vocab());
  CHECK(tokenize::tokenize_ids(text, vocab()).size() <= 3);
}

TEST_CASE("beam search is deterministic and rejects extractive models") {
  CounterRng rng(8);
  const auto m = random_abs_model(5);
  const auto ex = random_source(rng);
  BeamConfig cfg = BeamConfig::for_vocab(vocab());
  cfg.max_len = 8;
  CHECK(summarize_abs(m, ex, cfg, vocab()) == summarize_abs(m, ex, cfg, vocab()));
  const auto ext = SummarizationModel<double>::build(TaskKind::Extractive, testing::tiny_config(vocab().size()), 1);
  CHECK(error_of([&] { beam_search(ext, ex, cfg); }) == Errc::ModelKindMismatch);
  CHECK(error_of([&] { greedy_decode(ext, ex, cfg); }) == Errc::ModelKindMismatch);
}

TEST_CASE("wider beams never lower the returned score (fuzz)") {
  CounterRng rng(31);
  for (int trial = 0; trial < 40; ++trial) {
    const auto m = random_abs_model(500 + static_cast<std::uint64_t>(trial));
    const auto ex = random_source(rng);
    BeamConfig cfg = BeamConfig::for_vocab(vocab());
    cfg.max_len = 2 + rng.below(6);
    cfg.min_len = 1;
    double previous = -std::numeric_limits<double>::infinity();
    for (std::size_t beam : {1, 2, 4}) {
      cfg.beam_size = beam;
      const double score = beam_search(m, ex, cfg).score;
      CAPTURE(trial);
      CAPTURE(beam);
      CHECK(score >= previous - 1e-12);
      previous = score;
    }
  }
}

TEST_CASE("a memorized copy task is reproduced exactly") {
  const auto pairs = testing::copy_pairs(vocab(), 8, 6, 5);
  auto m = SummarizationModel<float>::build(TaskKind::Abstractive, testing::tiny_config(vocab().size()), 5);
  auto cfg = train::default_train_config(3000);
  cfg.base_lr_encoder = 0.05;
  cfg.base_lr_decoder = 0.05;
  cfg.warmup_encoder = 100;
  cfg.warmup_decoder = 100;
  cfg.label_smoothing = 0.0;
  cfg.seed = 5;
  train::train_abs<float>(pairs, m, cfg);
  BeamConfig beam = BeamConfig::for_vocab(vocab());
  beam.beam_size = 3;
  beam.max_len = 12;
  for (const auto& p : pairs) {
    const auto h = beam_search(m, p, beam);
    const std::vector<std::int32_t> expected(p.tgt_ids.begin() + 1, p.tgt_ids.end() - 1);
    CHECK(h.tokens == expected);
    CHECK(h.finished);
  }
}

}  // TEST_SUITE
