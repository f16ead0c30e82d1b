#pragma once

// Shared fixtures: a synthetic vocabulary, synthetic extractive corpora and
// copy-task pairs, plus tiny model configurations.

#include <algorithm>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sumforge/error.hpp"
#include "sumforge/ingest.hpp"
#include "sumforge/model.hpp"
#include "sumforge/rng.hpp"
#include "sumforge/tokenize.hpp"

namespace sumforge::testing {

inline std::vector<std::string> special_tokens() {
  return {std::string(tokenize::kPad), std::string(tokenize::kUnk), std::string(tokenize::kCls),
          std::string(tokenize::kSep), std::string(tokenize::kMask), std::string(tokenize::kBos),
          std::string(tokenize::kEos)};
}

inline std::string word(std::size_t i) { return "w" + std::to_string(i); }
inline std::string marker(std::size_t i) { return "key" + std::to_string(i); }

/// Specials, `words` filler words w0.., `markers` marker words key0.., then
/// a few pieces so WordPiece paths get exercised.
inline tokenize::Vocab synthetic_vocab(std::size_t words = 40, std::size_t markers = 4) {
  std::vector<std::string> tokens = special_tokens();
  for (std::size_t i = 0; i < words; ++i) tokens.push_back(word(i));
  for (std::size_t i = 0; i < markers; ++i) tokens.push_back(marker(i));
  for (const char* extra : {".", ",", "un", "##able", "##s"}) tokens.emplace_back(extra);
  return tokenize::Vocab(tokens);
}

inline std::string vocab_file_text(const tokenize::Vocab& vocab) {
  std::string out;
  for (const auto& t : vocab.tokens()) out += t + "\n";
  return out;
}

struct CorpusSpec {
  std::size_t docs = 16;
  std::size_t min_sentences = 5;
  std::size_t max_sentences = 7;
  std::size_t min_words = 4;
  std::size_t max_words = 6;
  std::size_t words = 40;
  std::size_t markers = 4;
  std::size_t summary_sentences = 3;
  std::size_t topic_size = 5;
};

/// Documents whose summaries are verbatim subsets of their sentences. Each
/// summary sentence carries one marker word; other sentences never do.
inline std::vector<ingest::StoryDoc> synthetic_corpus(const CorpusSpec& spec, std::uint64_t seed) {
  CounterRng rng = CounterRng(seed).split("synthetic-corpus");
  std::vector<ingest::StoryDoc> docs;
  for (std::size_t d = 0; d < spec.docs; ++d) {
    ingest::StoryDoc doc;
    doc.id = "doc" + std::to_string(d);
    const std::size_t n = spec.min_sentences + rng.below(spec.max_sentences - spec.min_sentences + 1);
    std::vector<bool> chosen(n, false);
    std::size_t picked = 0;
    while (picked < std::min(spec.summary_sentences, n)) {
      const std::size_t i = rng.below(n);
      if (!chosen[i]) {
        chosen[i] = true;
        ++picked;
      }
    }
    for (std::size_t s = 0; s < n; ++s) {
      const std::size_t len = spec.min_words + rng.below(spec.max_words - spec.min_words + 1);
      std::vector<std::string> ws;
      // Words of one sentence share a topic block of `topic_size` words, so a
      // masked word is predictable from the rest of its sentence.
      const std::size_t topics = spec.words / spec.topic_size;
      const std::size_t topic = rng.below(topics);
      for (std::size_t i = 0; i < len; ++i) ws.push_back(word(topic * spec.topic_size + rng.below(spec.topic_size)));
      if (chosen[s]) ws[rng.below(len)] = marker(rng.below(spec.markers));
      std::string sentence;
      for (const auto& w : ws) sentence += (sentence.empty() ? "" : " ") + w;
      sentence += " .";
      doc.article_sentences.push_back(sentence);
      if (chosen[s]) doc.summary_sentences.push_back(sentence);
    }
    docs.push_back(std::move(doc));
  }
  return docs;
}

inline std::vector<tokenize::TokenizedExample> encode_corpus(const std::vector<ingest::StoryDoc>& docs,
                                                             const tokenize::Vocab& vocab,
                                                             std::size_t max_positions = 128,
                                                             std::size_t max_tgt_len = 64) {
  std::vector<tokenize::TokenizedExample> out;
  for (const auto& d : docs) out.push_back(tokenize::encode_example(d, vocab, max_positions, max_tgt_len));
  return out;
}

/// Target equals the single source sentence.
inline std::vector<tokenize::TokenizedExample> copy_pairs(const tokenize::Vocab& vocab, std::size_t pairs,
                                                          std::size_t length, std::uint64_t seed,
                                                          std::size_t words = 40) {
  CounterRng rng = CounterRng(seed).split("copy-pairs");
  std::vector<ingest::StoryDoc> docs;
  for (std::size_t p = 0; p < pairs; ++p) {
    std::string sentence;
    for (std::size_t i = 0; i < length; ++i) sentence += (i ? " " : "") + word(rng.below(words));
    docs.push_back({"pair" + std::to_string(p), {sentence}, {sentence}});
  }
  return encode_corpus(docs, vocab, 64, length + 2);
}

inline model::ModelConfig tiny_config(std::size_t vocab_size, std::size_t layers = 1) {
  model::ModelConfig c;
  c.vocab_size = vocab_size;
  c.d_model = 16;
  c.n_heads = 2;
  c.d_ff = 32;
  c.n_enc_layers = layers;
  c.n_dec_layers = layers;
  c.max_positions = 128;
  c.dropout = 0.0;
  return c;
}

/// Longest common subsequence by enumerating every subsequence of `a`.
inline std::size_t brute_force_lcs(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::size_t best = 0;
  for (std::uint32_t bits = 0; bits < (1u << a.size()); ++bits) {
    std::size_t len = 0, j = 0;
    bool ok = true;
    for (std::size_t i = 0; i < a.size() && ok; ++i) {
      if (!(bits & (1u << i))) continue;
      while (j < b.size() && b[j] != a[i]) ++j;
      if (j == b.size()) ok = false;
      else {
        ++j;
        ++len;
      }
    }
    if (ok) best = std::max(best, len);
  }
  return best;
}

/// Random token sequence of length <= max_len over the first `alphabet` letters.
inline std::vector<std::string> random_tokens(CounterRng& rng, std::size_t max_len, std::size_t alphabet) {
  std::vector<std::string> out(rng.below(max_len + 1));
  for (auto& t : out) t = std::string(1, static_cast<char>('a' + rng.below(alphabet)));
  return out;
}

/// Paired `<id>.txt` / `<id>.sum.txt` files as the ingest step expects them.
inline void write_raw_corpus(const std::filesystem::path& dir, const std::vector<ingest::StoryDoc>& docs) {
  std::filesystem::create_directories(dir);
  auto join = [](const std::vector<std::string>& sentences) {
    std::string out;
    for (const auto& s : sentences) out += (out.empty() ? "" : " ") + s;
    return out + "\n";
  };
  for (const auto& d : docs) {
    ingest::write_file(dir / (d.id + ".txt"), join(d.article_sentences));
    ingest::write_file(dir / (d.id + ".sum.txt"), join(d.summary_sentences));
  }
}

/// Settings file text for a tiny model trained for `steps` steps.
inline std::string tiny_settings(std::size_t steps, std::uint64_t seed) {
  return "# tiny model\n"
         "d_model=16\nn_heads=2\nd_ff=32\nn_enc_layers=1\nn_dec_layers=1\nmax_positions=128\n"
         "dropout=0.1\nbatch_size=4\nbase_lr_encoder=0.05\nbase_lr_decoder=0.05\n"
         "max_steps=" + std::to_string(steps) + "\nseed=" + std::to_string(seed) + "\n";
}

/// Worst relative error of the full-model gradient against central
/// differences, for the vocab-50, d_model-8, one-layer configuration in
/// 64-bit mode. Parameters are perturbed away from their initial values so
/// norm gains and biases are exercised too.
inline double full_model_gradient_error(model::TaskKind kind, std::uint64_t seed = 21) {
  const auto vocab = synthetic_vocab(34, 4);
  model::ModelConfig c;
  c.vocab_size = vocab.size();
  c.d_model = 8;
  c.n_heads = 2;
  c.d_ff = 16;
  c.n_enc_layers = 1;
  c.n_dec_layers = 1;
  c.max_positions = 16;
  c.dropout = 0.0;
  auto m = model::SummarizationModel<double>::build(kind, c, seed);
  CounterRng rng = CounterRng(seed).split("perturb");
  std::vector<Tensor<double>> params;
  for (const auto& [name, t] : m.parameters()) {
    Tensor<double> p = t;
    for (double& v : p.mutable_data()) v += 0.1 * rng.normal();
    params.push_back(p);
  }
  CorpusSpec spec;
  spec.docs = 2;
  spec.min_sentences = 3;
  spec.max_sentences = 3;
  spec.min_words = 2;
  spec.max_words = 2;
  spec.words = 30;
  const auto examples = encode_corpus(synthetic_corpus(spec, seed), vocab, 16, 6);
  const auto batch = model::make_batch(examples, vocab.specials().pad);
  const auto loss = [&] {
    model::ForwardContext ctx;
    if (kind == model::TaskKind::Extractive)
      return model::ext_loss(model::ext_forward(m, batch, ctx), batch.labels, batch.sentence_pad_mask);
    return model::abs_loss(model::abs_forward(m, batch, ctx), batch.tgt_ids, batch.tgt_pad_mask, 0.1);
  };
  return finite_diff_check<double>(loss, params, 1e-6);
}

/// Code of the Error thrown by `fn`, or nothing when it returns normally.
template <typename Fn>
std::optional<Errc> error_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return std::nullopt;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("sumforge-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace sumforge::testing
