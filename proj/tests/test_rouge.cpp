#include <doctest.h>

#include "support.hpp"
#include "sumforge/rouge.hpp"

using namespace sumforge;
using namespace sumforge::rouge;
using sumforge::testing::error_of;
using sumforge::testing::random_tokens;

namespace {

std::vector<std::string> toks(std::string_view text) { return rouge_tokenize(text); }

void check_score(const RougeScore& s, double p, double r, double f) {
  CHECK(s.precision == doctest::Approx(p).epsilon(1e-9));
  CHECK(s.recall == doctest::Approx(r).epsilon(1e-9));
  CHECK(s.f1 == doctest::Approx(f).epsilon(1e-9));
}

}  // namespace

TEST_SUITE("rouge") {

TEST_CASE("tokenization examples") {
  CHECK(toks("ذهب الولد.") == std::vector<std::string>{"ذهب", "الولد"});
  CHECK(toks("The cat") == std::vector<std::string>{"the", "cat"});
  CHECK(toks("").empty());
  CHECK(toks("a1-b2, c") == std::vector<std::string>{"a1", "b2", "c"});
  CHECK(toks("ÉCOLE") == std::vector<std::string>{"École"});
  CHECK(toks("مَدرسة") == std::vector<std::string>{"مَدرسة"});
}

TEST_CASE("rouge_n and rouge_l fixtures") {
  check_score(rouge_n(toks("the cat sat"), toks("the cat ran"), 1), 2.0 / 3, 2.0 / 3, 2.0 / 3);
  check_score(rouge_n(toks("a b c"), toks("a b d"), 2), 0.5, 0.5, 0.5);
  check_score(rouge_l(toks("a b c d"), toks("a c b d")), 0.75, 0.75, 0.75);
  check_score(rouge_n(toks("x y z"), toks("x y z"), 1), 1, 1, 1);
  check_score(rouge_l(toks("x y z"), toks("x y z")), 1, 1, 1);
  check_score(rouge_l(toks("a b"), toks("c d")), 0, 0, 0);
  check_score(rouge_l({}, toks("c d")), 0, 0, 0);
  check_score(rouge_n(toks("a"), toks("a b"), 2), 0, 0, 0);
  // Clipping: repeated candidate unigrams count at most as often as in the reference.
  check_score(rouge_n(toks("a a a"), toks("a b"), 1), 1.0 / 3, 0.5, 0.4);
  CHECK(error_of([] { rouge_n({}, {}, 0); }) == Errc::InvalidArgument);
}

TEST_CASE("f1 is the harmonic mean") {
  const auto s = make_score(0.5, 0.25);
  CHECK(s.f1 == doctest::Approx(2 * 0.5 * 0.25 / 0.75));
  CHECK(make_score(0, 0).f1 == 0.0);
}

TEST_CASE("DP LCS equals exhaustive enumeration (fuzz)") {
  CounterRng rng(6);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto a = random_tokens(rng, 8, 5);
    const auto b = random_tokens(rng, 8, 5);
    CHECK(lcs_length(a, b) == testing::brute_force_lcs(a, b));
  }
}

TEST_CASE("symmetry, bounds and self-similarity (fuzz)") {
  CounterRng rng(7);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto a = random_tokens(rng, 10, 4);
    const auto b = random_tokens(rng, 10, 4);
    for (int n : {1, 2}) {
      const auto ab = rouge_n(a, b, n);
      const auto ba = rouge_n(b, a, n);
      CHECK(ab.f1 == doctest::Approx(ba.f1).epsilon(1e-12));
      CHECK(ab.precision == doctest::Approx(ba.recall).epsilon(1e-12));
      for (double v : {ab.precision, ab.recall, ab.f1}) CHECK((v >= 0.0 && v <= 1.0));
      if (a.size() >= static_cast<std::size_t>(n)) CHECK(rouge_n(a, a, n).f1 == doctest::Approx(1.0));
    }
    const auto l = rouge_l(a, b);
    CHECK(l.f1 == doctest::Approx(rouge_l(b, a).f1).epsilon(1e-12));
    for (double v : {l.precision, l.recall, l.f1}) CHECK((v >= 0.0 && v <= 1.0));
    if (!a.empty()) CHECK(rouge_l(a, a).f1 == doctest::Approx(1.0));
  }
}

TEST_CASE("adding a reference token never lowers ROUGE-1 recall (fuzz)") {
  CounterRng rng(8);
  for (int trial = 0; trial < 1000; ++trial) {
    auto cand = random_tokens(rng, 8, 5);
    auto ref = random_tokens(rng, 8, 5);
    if (ref.empty()) ref.push_back("a");
    const double before = rouge_n(cand, ref, 1).recall;
    cand.insert(cand.begin() + static_cast<std::ptrdiff_t>(rng.below(cand.size() + 1)), ref[rng.below(ref.size())]);
    CHECK(rouge_n(cand, ref, 1).recall >= before);
  }
}

TEST_CASE("corpus averaging") {
  const std::vector<std::string> one_pred = {"the cat sat"};
  const std::vector<std::string> one_ref = {"the cat ran"};
  const auto single = evaluate_corpus(one_pred, one_ref);
  check_score(single.rouge1, 2.0 / 3, 2.0 / 3, 2.0 / 3);
  check_score(single.rougeL, 2.0 / 3, 2.0 / 3, 2.0 / 3);
  const std::vector<std::string> preds = {"a b", "c d"};
  const std::vector<std::string> refs = {"x y", "c d"};
  CHECK(evaluate_corpus(preds, refs).rouge1.f1 == doctest::Approx(0.5));
  CHECK(error_of([&] { evaluate_corpus(one_pred, refs); }) == Errc::LengthMismatch);
  CHECK(error_of([] { evaluate_corpus({}, {}); }) == Errc::EmptyCorpus);
  const std::vector<std::vector<std::string>> multi = {{"x y", "a b"}, {"c d"}};
  CHECK(evaluate_corpus_multi(preds, multi).rouge1.f1 == doctest::Approx(1.0));
}

TEST_CASE("table format") {
  const std::vector<std::string> same = {"a b c"};
  const auto table = format_table(evaluate_corpus(same, same));
  CHECK(table ==
        "ROUGE       P       R      F1\n"
        "R1     100.00  100.00  100.00\n"
        "R2     100.00  100.00  100.00\n"
        "RL     100.00  100.00  100.00\n");
}

}  // TEST_SUITE
