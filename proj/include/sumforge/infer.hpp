#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sumforge/model.hpp"
#include "sumforge/tokenize.hpp"

namespace sumforge::infer {

struct ExtConfig {
  std::size_t k = 3;
  bool use_trigram_blocking = true;

  /// Throws ConfigError.
  void validate() const;
};

/// Word trigrams of a sentence after ROUGE tokenization.
std::vector<std::string> word_trigrams(std::string_view sentence);

/// Indices chosen from `scores` in descending order (ties to the lower
/// index), skipping candidates that share a word trigram with an earlier
/// pick. Returned in document order.
std::vector<std::size_t> select_sentences(std::span<const double> scores, std::span<const std::string> sentences,
                                          const ExtConfig& config);

/// Unlabelled example for inference over already split sentences.
tokenize::TokenizedExample source_example(std::span<const std::string> sentences, const tokenize::Vocab& vocab,
                                          std::size_t max_positions);

/// Sigmoid score per retained sentence.
template <typename Scalar>
std::vector<double> sentence_scores(const model::SummarizationModel<Scalar>& model,
                                    const tokenize::TokenizedExample& example, std::int32_t pad_id = 0);

/// Throws EmptyDocument when the example has no sentences.
template <typename Scalar>
std::vector<std::string> summarize_ext(const model::SummarizationModel<Scalar>& model,
                                       const tokenize::TokenizedExample& example, const ExtConfig& config,
                                       std::int32_t pad_id = 0);

struct BeamConfig {
  std::size_t beam_size = 5;
  std::size_t max_len = 60;
  std::size_t min_len = 1;
  double length_penalty_alpha = 0.6;
  bool block_repeat_trigrams = true;
  std::int32_t bos_id = 1;
  std::int32_t eos_id = 2;
  std::int32_t pad_id = 0;

  /// Throws ConfigError.
  void validate() const;

  /// Ids from the vocab's specials; throws MissingSpecial without BOS/EOS.
  static BeamConfig for_vocab(const tokenize::Vocab& vocab);
};

/// ((5 + length) / 6) ^ alpha.
double length_penalty(std::size_t length, double alpha);

struct Hypothesis {
  std::vector<std::int32_t> tokens;  // generated ids, no BOS, no EOS
  double log_prob = 0.0;
  bool finished = false;             // EOS was emitted
  double score = 0.0;                // log_prob / length_penalty(tokens + finished)
};

/// Length-normalized beam search from BOS. Each width from 1 to beam_size is
/// searched and the best-scoring result returned, so a wider beam never
/// scores lower. Within one width, finished hypotheses are preferred over
/// ones cut off at max_len. Lengths count generated tokens excluding EOS;
/// max_len is clamped to the decoder's position budget. Throws
/// ModelKindMismatch for extractive models.
template <typename Scalar>
Hypothesis beam_search(const model::SummarizationModel<Scalar>& model, const tokenize::TokenizedExample& example,
                       const BeamConfig& config);

/// Argmax decoding under the same constraints as beam_search.
template <typename Scalar>
Hypothesis greedy_decode(const model::SummarizationModel<Scalar>& model, const tokenize::TokenizedExample& example,
                         const BeamConfig& config);

template <typename Scalar>
std::string summarize_abs(const model::SummarizationModel<Scalar>& model, const tokenize::TokenizedExample& example,
                          const BeamConfig& config, const tokenize::Vocab& vocab);

}  // namespace sumforge::infer
