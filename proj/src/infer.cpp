#include "sumforge/infer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "sumforge/error.hpp"
#include "sumforge/rouge.hpp"

namespace sumforge::infer {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

}  // namespace

// ---------------------------------------------------------------------------
// Extractive

void ExtConfig::validate() const {
  if (k < 1) throw Error(Errc::ConfigError, "k must be >= 1");
}

std::vector<std::string> word_trigrams(std::string_view sentence) {
  const auto words = rouge::rouge_tokenize(sentence);
  std::vector<std::string> out;
  for (std::size_t i = 0; i + 2 < words.size(); ++i) out.push_back(words[i] + ' ' + words[i + 1] + ' ' + words[i + 2]);
  return out;
}

std::vector<std::size_t> select_sentences(std::span<const double> scores, std::span<const std::string> sentences,
                                          const ExtConfig& config) {
  config.validate();
  if (scores.size() != sentences.size())
    throw Error(Errc::LengthMismatch, std::to_string(scores.size()) + " scores vs " +
                                          std::to_string(sentences.size()) + " sentences");
  std::vector<std::size_t> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  std::set<std::string> seen;
  std::vector<std::size_t> picked;
  for (std::size_t idx : order) {
    if (picked.size() == config.k) break;
    const auto grams = word_trigrams(sentences[idx]);
    if (config.use_trigram_blocking &&
        std::any_of(grams.begin(), grams.end(), [&](const std::string& g) { return seen.count(g) > 0; }))
      continue;
    seen.insert(grams.begin(), grams.end());
    picked.push_back(idx);
  }
  std::sort(picked.begin(), picked.end());
  return picked;
}

tokenize::TokenizedExample source_example(std::span<const std::string> sentences, const tokenize::Vocab& vocab,
                                          std::size_t max_positions) {
  if (sentences.empty()) throw Error(Errc::EmptyDocument, "document has no sentences");
  tokenize::EncodedSource source = tokenize::encode_source(sentences, vocab, max_positions);
  tokenize::TokenizedExample ex;
  ex.src_ids = std::move(source.src_ids);
  ex.segment_ids = std::move(source.segment_ids);
  ex.cls_positions = std::move(source.cls_positions);
  ex.ext_labels.assign(ex.cls_positions.size(), 0);
  ex.src_txt.assign(sentences.begin(), sentences.begin() + static_cast<std::ptrdiff_t>(source.retained_sentences));
  return ex;
}

template <typename Scalar>
std::vector<double> sentence_scores(const model::SummarizationModel<Scalar>& m,
                                    const tokenize::TokenizedExample& example, std::int32_t pad_id) {
  if (example.cls_positions.empty()) throw Error(Errc::EmptyDocument, "example has no sentences");
  NoGradGuard guard;
  const model::Batch batch = model::make_batch(std::span(&example, 1), pad_id);
  model::ForwardContext ctx;
  const Tensor<Scalar> scores = model::ext_forward(m, batch, ctx);
  return {scores.data().begin(), scores.data().end()};
}

template <typename Scalar>
std::vector<std::string> summarize_ext(const model::SummarizationModel<Scalar>& m,
                                       const tokenize::TokenizedExample& example, const ExtConfig& config,
                                       std::int32_t pad_id) {
  config.validate();
  const std::vector<double> scores = sentence_scores(m, example, pad_id);
  if (example.src_txt.size() != scores.size())
    throw Error(Errc::ShapeMismatch, "sentence text does not match [CLS] positions");
  std::vector<std::string> out;
  for (std::size_t i : select_sentences(scores, example.src_txt, config)) out.push_back(example.src_txt[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Abstractive

void BeamConfig::validate() const {
  if (beam_size < 1) throw Error(Errc::ConfigError, "beam_size must be >= 1");
  if (min_len > max_len) throw Error(Errc::ConfigError, "min_len exceeds max_len");
  if (!(length_penalty_alpha >= 0.0)) throw Error(Errc::ConfigError, "length_penalty_alpha must be >= 0");
}

BeamConfig BeamConfig::for_vocab(const tokenize::Vocab& vocab) {
  BeamConfig c;
  c.bos_id = vocab.bos();
  c.eos_id = vocab.eos();
  c.pad_id = vocab.specials().pad;
  return c;
}

double length_penalty(std::size_t length, double alpha) {
  return std::pow((5.0 + static_cast<double>(length)) / 6.0, alpha);
}

namespace {

bool repeats_trigram(const std::vector<std::int32_t>& tokens, std::int32_t next) {
  const std::size_t n = tokens.size();
  if (n < 2) return false;
  const std::int32_t a = tokens[n - 2];
  const std::int32_t b = tokens[n - 1];
  for (std::size_t i = 0; i + 2 < n; ++i)
    if (tokens[i] == a && tokens[i + 1] == b && tokens[i + 2] == next) return true;
  return false;
}

double normalized(const Hypothesis& h, double alpha) {
  return h.log_prob / length_penalty(h.tokens.size() + (h.finished ? 1 : 0), alpha);
}

/// Encoder output for one example plus what the decoder needs each step.
template <typename Scalar>
class DecodeSession {
 public:
  DecodeSession(const model::SummarizationModel<Scalar>& m, const tokenize::TokenizedExample& example,
                const BeamConfig& config)
      : model_(m), config_(config) {
    if (m.kind() != model::TaskKind::Abstractive)
      throw Error(Errc::ModelKindMismatch, "decoding needs an abstractive model");
    if (example.src_ids.empty()) throw Error(Errc::EmptyDocument, "example has no source tokens");
    config.validate();
    const model::Batch batch = model::make_batch(std::span(&example, 1), config.pad_id);
    model::ForwardContext ctx;
    hidden_ = model::encode(m.encoder(), batch.source, ctx);
    pad_mask_ = batch.source.pad_mask;
    max_len_ = std::min(config.max_len, m.config().max_positions - 1);
    min_len_ = std::min(config.min_len, max_len_);
  }

  std::size_t max_len() const noexcept { return max_len_; }

  /// Log-probabilities of the next token for each prefix, with forbidden
  /// tokens set to -inf.
  std::vector<std::vector<double>> step(const std::vector<const std::vector<std::int32_t>*>& prefixes) const {
    const std::size_t n = prefixes.size();
    const std::size_t t = prefixes.front()->size() + 1;
    std::vector<std::int32_t> ids;
    ids.reserve(n * t);
    std::vector<Tensor<Scalar>> tiles(n, hidden_);
    std::vector<std::uint8_t> pads;
    for (const auto* p : prefixes) {
      ids.push_back(config_.bos_id);
      ids.insert(ids.end(), p->begin(), p->end());
      pads.insert(pads.end(), pad_mask_.begin(), pad_mask_.end());
    }
    const Tensor<Scalar> memory = n == 1 ? hidden_ : concat(tiles, 0);
    model::ForwardContext ctx;
    const Tensor<Scalar> logits = model::decode_teacher_forced(model_.decoder(), memory, ids, t, pads, ctx);
    const std::size_t v = logits.dim(-1);
    const auto data = logits.data();
    std::vector<std::vector<double>> out(n, std::vector<double>(v));
    for (std::size_t i = 0; i < n; ++i) {
      const Scalar* row = data.data() + ((i + 1) * t - 1) * v;
      double mx = kNegInf;
      for (std::size_t j = 0; j < v; ++j) mx = std::max(mx, static_cast<double>(row[j]));
      double z = 0.0;
      for (std::size_t j = 0; j < v; ++j) z += std::exp(static_cast<double>(row[j]) - mx);
      const double log_z = mx + std::log(z);
      const std::vector<std::int32_t>& prefix = *prefixes[i];
      for (std::size_t j = 0; j < v; ++j) {
        const auto tok = static_cast<std::int32_t>(j);
        const bool forbidden = tok == config_.pad_id || tok == config_.bos_id ||
                               (tok == config_.eos_id && prefix.size() < min_len_) ||
                               (tok != config_.eos_id && config_.block_repeat_trigrams && repeats_trigram(prefix, tok));
        out[i][j] = forbidden ? kNegInf : static_cast<double>(row[j]) - log_z;
      }
    }
    return out;
  }

 private:
  const model::SummarizationModel<Scalar>& model_;
  BeamConfig config_;
  Tensor<Scalar> hidden_;
  std::vector<std::uint8_t> pad_mask_;
  std::size_t max_len_ = 0;
  std::size_t min_len_ = 0;
};

Hypothesis finalize(Hypothesis h, double alpha) {
  h.score = normalized(h, alpha);
  return h;
}

/// One beam search at a fixed width.
template <typename Scalar>
Hypothesis search_width(const DecodeSession<Scalar>& session, const BeamConfig& config, std::size_t width) {
  const double alpha = config.length_penalty_alpha;

  std::vector<Hypothesis> alive(1);
  std::vector<Hypothesis> finished;
  std::vector<Hypothesis> stalled;  // unfinished hypotheses with no legal extension
  for (std::size_t len = 0; len < session.max_len() && !alive.empty(); ++len) {
    std::vector<const std::vector<std::int32_t>*> prefixes;
    for (const auto& h : alive) prefixes.push_back(&h.tokens);
    const auto log_probs = session.step(prefixes);

    struct Candidate {
      double score;
      std::size_t parent;
      std::int32_t token;
    };
    std::vector<Candidate> candidates;
    for (std::size_t i = 0; i < alive.size(); ++i) {
      bool any = false;
      for (std::size_t j = 0; j < log_probs[i].size(); ++j) {
        if (log_probs[i][j] == kNegInf) continue;
        any = true;
        const double lp = alive[i].log_prob + log_probs[i][j];
        // Every candidate of this step has length len + 1, EOS included.
        candidates.push_back({lp / length_penalty(len + 1, alpha), i, static_cast<std::int32_t>(j)});
      }
      if (!any) stalled.push_back(finalize(alive[i], alpha));
    }
    const std::size_t keep = std::min(width, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep), candidates.end(),
                      [](const Candidate& a, const Candidate& b) {
                        if (a.score != b.score) return a.score > b.score;
                        if (a.parent != b.parent) return a.parent < b.parent;
                        return a.token < b.token;
                      });
    std::vector<Hypothesis> next;
    for (std::size_t c = 0; c < keep; ++c) {
      const Candidate& cand = candidates[c];
      Hypothesis h = alive[cand.parent];
      h.log_prob += log_probs[cand.parent][static_cast<std::size_t>(cand.token)];
      if (cand.token == config.eos_id) {
        h.finished = true;
        finished.push_back(finalize(std::move(h), alpha));
      } else {
        h.tokens.push_back(cand.token);
        next.push_back(std::move(h));
      }
    }
    alive = std::move(next);
  }

  auto best_of = [](const std::vector<Hypothesis>& pool) {
    return *std::max_element(pool.begin(), pool.end(),
                             [](const Hypothesis& a, const Hypothesis& b) { return a.score < b.score; });
  };
  if (!finished.empty()) return best_of(finished);
  for (auto& h : alive) stalled.push_back(finalize(std::move(h), alpha));
  if (stalled.empty()) return finalize(Hypothesis{}, alpha);
  return best_of(stalled);
}

}  // namespace

template <typename Scalar>
Hypothesis beam_search(const model::SummarizationModel<Scalar>& m, const tokenize::TokenizedExample& example,
                       const BeamConfig& config) {
  NoGradGuard guard;
  const DecodeSession<Scalar> session(m, example, config);
  // A wider beam can lose the path a narrower one found, so every width up
  // to beam_size is searched and the best score kept (ties to the narrower).
  Hypothesis best = search_width(session, config, 1);
  for (std::size_t width = 2; width <= config.beam_size; ++width) {
    Hypothesis h = search_width(session, config, width);
    if (h.score > best.score) best = std::move(h);
  }
  return best;
}

template <typename Scalar>
Hypothesis greedy_decode(const model::SummarizationModel<Scalar>& m, const tokenize::TokenizedExample& example,
                         const BeamConfig& config) {
  NoGradGuard guard;
  const DecodeSession<Scalar> session(m, example, config);
  Hypothesis h;
  while (h.tokens.size() < session.max_len()) {
    const auto log_probs = session.step({&h.tokens}).front();
    const auto best = std::max_element(log_probs.begin(), log_probs.end());
    if (*best == kNegInf) break;
    h.log_prob += *best;
    const auto token = static_cast<std::int32_t>(best - log_probs.begin());
    if (token == config.eos_id) {
      h.finished = true;
      break;
    }
    h.tokens.push_back(token);
  }
  return finalize(std::move(h), config.length_penalty_alpha);
}

template <typename Scalar>
std::string summarize_abs(const model::SummarizationModel<Scalar>& m, const tokenize::TokenizedExample& example,
                          const BeamConfig& config, const tokenize::Vocab& vocab) {
  const Hypothesis h = beam_search(m, example, config);
  return tokenize::decode_ids(h.tokens, vocab);
}

#define SUMFORGE_INSTANTIATE_INFER(S)                                                                       \
  template std::vector<double> sentence_scores<S>(const model::SummarizationModel<S>&,                     \
                                                  const tokenize::TokenizedExample&, std::int32_t);         \
  template std::vector<std::string> summarize_ext<S>(const model::SummarizationModel<S>&,                  \
                                                     const tokenize::TokenizedExample&, const ExtConfig&,   \
                                                     std::int32_t);                                         \
  template Hypothesis beam_search<S>(const model::SummarizationModel<S>&, const tokenize::TokenizedExample&, \
                                     const BeamConfig&);                                                    \
  template Hypothesis greedy_decode<S>(const model::SummarizationModel<S>&,                                \
                                       const tokenize::TokenizedExample&, const BeamConfig&);               \
  template std::string summarize_abs<S>(const model::SummarizationModel<S>&,                               \
                                        const tokenize::TokenizedExample&, const BeamConfig&,               \
                                        const tokenize::Vocab&);

SUMFORGE_INSTANTIATE_INFER(float)
SUMFORGE_INSTANTIATE_INFER(double)

#undef SUMFORGE_INSTANTIATE_INFER

}  // namespace sumforge::infer
