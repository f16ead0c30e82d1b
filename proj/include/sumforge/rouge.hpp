#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace sumforge::rouge {

struct RougeScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Builds a score from precision and recall; f1 is 0 when both are 0.
RougeScore make_score(double precision, double recall) noexcept;

/// Maximal runs of letters/digits (combining marks stay attached to the run
/// they follow). ASCII letters are lowercased; nothing else is folded.
std::vector<std::string> rouge_tokenize(std::string_view text);

/// Clipped n-gram overlap. Requires n >= 1.
RougeScore rouge_n(std::span<const std::string> candidate, std::span<const std::string> reference,
                   int n);

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b);
RougeScore rouge_l(std::span<const std::string> candidate, std::span<const std::string> reference);

struct CorpusScores {
  RougeScore rouge1;
  RougeScore rouge2;
  RougeScore rougeL;
};

/// Mean of per-document P/R/F1 after rouge_tokenize.
CorpusScores evaluate_corpus(std::span<const std::string> predictions,
                             std::span<const std::string> references);

/// Multi-reference variant: each document scores against the reference with
/// the best F1, independently per metric.
CorpusScores evaluate_corpus_multi(std::span<const std::string> predictions,
                                   std::span<const std::vector<std::string>> references);

/// Fixed-format percent table, rows R1/R2/RL, columns P/R/F1.
std::string format_table(const CorpusScores& scores);

}  // namespace sumforge::rouge
