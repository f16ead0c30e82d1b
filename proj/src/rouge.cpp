#include "sumforge/rouge.hpp"

#include <algorithm>
#include <cstdio>
#include <map>

#include "sumforge/error.hpp"
#include "sumforge/unicode.hpp"

namespace sumforge::rouge {
namespace {

using NgramCounts = std::map<std::vector<std::string>, std::size_t>;

NgramCounts count_ngrams(std::span<const std::string> tokens, std::size_t n) {
  NgramCounts counts;
  if (tokens.size() < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i)
    ++counts[std::vector<std::string>(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                      tokens.begin() + static_cast<std::ptrdiff_t>(i + n))];
  return counts;
}

double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

RougeScore make_score(double precision, double recall) noexcept {
  RougeScore s;
  s.precision = precision;
  s.recall = recall;
  s.f1 = precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
  return s;
}

std::vector<std::string> rouge_tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::u32string current;
  auto flush = [&] {
    if (!current.empty()) tokens.push_back(unicode::encode(current));
    current.clear();
  };
  for (char32_t cp : unicode::decode(text)) {
    if (unicode::is_letter_or_digit(cp)) {
      if (cp >= U'A' && cp <= U'Z') cp = cp - U'A' + U'a';
      current.push_back(cp);
    } else if (!current.empty() && unicode::is_combining_mark(cp)) {
      current.push_back(cp);
    } else {
      flush();
    }
  }
  flush();
  return tokens;
}

RougeScore rouge_n(std::span<const std::string> candidate, std::span<const std::string> reference,
                   int n) {
  if (n < 1) throw Error(Errc::InvalidArgument, "rouge_n requires n >= 1");
  const auto order = static_cast<std::size_t>(n);
  const NgramCounts cand = count_ngrams(candidate, order);
  const NgramCounts ref = count_ngrams(reference, order);
  std::size_t overlap = 0;
  for (const auto& [gram, count] : cand) {
    if (auto it = ref.find(gram); it != ref.end()) overlap += std::min(count, it->second);
  }
  const std::size_t cand_total = candidate.size() >= order ? candidate.size() - order + 1 : 0;
  const std::size_t ref_total = reference.size() >= order ? reference.size() - order + 1 : 0;
  return make_score(ratio(overlap, cand_total), ratio(overlap, ref_total));
}

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b) {
  std::vector<std::size_t> prev(b.size() + 1, 0);
  std::vector<std::size_t> row(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      row[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], row[j - 1]);
    }
    std::swap(prev, row);
  }
  return prev[b.size()];
}

RougeScore rouge_l(std::span<const std::string> candidate, std::span<const std::string> reference) {
  if (candidate.empty() || reference.empty()) return {};
  const std::size_t lcs = lcs_length(candidate, reference);
  return make_score(ratio(lcs, candidate.size()), ratio(lcs, reference.size()));
}

namespace {

void accumulate(RougeScore& total, const RougeScore& s) {
  total.precision += s.precision;
  total.recall += s.recall;
  total.f1 += s.f1;
}

void divide(RougeScore& s, double n) {
  s.precision /= n;
  s.recall /= n;
  s.f1 /= n;
}

CorpusScores score_pair(const std::vector<std::string>& cand, const std::vector<std::string>& ref) {
  return {rouge_n(cand, ref, 1), rouge_n(cand, ref, 2), rouge_l(cand, ref)};
}

}  // namespace

CorpusScores evaluate_corpus(std::span<const std::string> predictions,
                             std::span<const std::string> references) {
  if (predictions.size() != references.size())
    throw Error(Errc::LengthMismatch, std::to_string(predictions.size()) + " predictions vs " +
                                          std::to_string(references.size()) + " references");
  if (predictions.empty()) throw Error(Errc::EmptyCorpus, "no documents to evaluate");
  CorpusScores total;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const CorpusScores s = score_pair(rouge_tokenize(predictions[i]), rouge_tokenize(references[i]));
    accumulate(total.rouge1, s.rouge1);
    accumulate(total.rouge2, s.rouge2);
    accumulate(total.rougeL, s.rougeL);
  }
  const auto n = static_cast<double>(predictions.size());
  divide(total.rouge1, n);
  divide(total.rouge2, n);
  divide(total.rougeL, n);
  return total;
}

CorpusScores evaluate_corpus_multi(std::span<const std::string> predictions,
                                   std::span<const std::vector<std::string>> references) {
  if (predictions.size() != references.size())
    throw Error(Errc::LengthMismatch, "prediction and reference counts differ");
  if (predictions.empty()) throw Error(Errc::EmptyCorpus, "no documents to evaluate");
  CorpusScores total;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (references[i].empty()) throw Error(Errc::EmptyCorpus, "document without references");
    const auto cand = rouge_tokenize(predictions[i]);
    CorpusScores best;
    bool first = true;
    for (const std::string& ref_text : references[i]) {
      const CorpusScores s = score_pair(cand, rouge_tokenize(ref_text));
      if (first || s.rouge1.f1 > best.rouge1.f1) best.rouge1 = s.rouge1;
      if (first || s.rouge2.f1 > best.rouge2.f1) best.rouge2 = s.rouge2;
      if (first || s.rougeL.f1 > best.rougeL.f1) best.rougeL = s.rougeL;
      first = false;
    }
    accumulate(total.rouge1, best.rouge1);
    accumulate(total.rouge2, best.rouge2);
    accumulate(total.rougeL, best.rougeL);
  }
  const auto n = static_cast<double>(predictions.size());
  divide(total.rouge1, n);
  divide(total.rouge2, n);
  divide(total.rougeL, n);
  return total;
}

std::string format_table(const CorpusScores& scores) {
  std::string out = "ROUGE       P       R      F1\n";
  auto row = [&](const char* name, const RougeScore& s) {
    char line[64];
    std::snprintf(line, sizeof line, "%-5s %7.2f %7.2f %7.2f\n", name, 100.0 * s.precision,
                  100.0 * s.recall, 100.0 * s.f1);
    out += line;
  };
  row("R1", scores.rouge1);
  row("R2", scores.rouge2);
  row("RL", scores.rougeL);
  return out;
}

}  // namespace sumforge::rouge
