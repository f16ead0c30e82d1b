#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <set>

#include "support.hpp"
#include "sumforge/model.hpp"

using namespace sumforge;
using namespace sumforge::model;
using sumforge::testing::error_of;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.vocab_size = 50;
  c.d_model = 8;
  c.n_heads = 2;
  c.d_ff = 16;
  c.n_enc_layers = 1;
  c.n_dec_layers = 1;
  c.max_positions = 32;
  c.dropout = 0.0;
  return c;
}

EncoderInput random_input(CounterRng& rng, std::size_t batch, std::size_t length, std::size_t vocab,
                          std::size_t pad_tail = 0) {
  EncoderInput in;
  in.batch = batch;
  in.length = length;
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < length; ++i) {
      const bool pad = i >= length - pad_tail;
      in.src_ids.push_back(pad ? 0 : static_cast<std::int32_t>(1 + rng.below(vocab - 1)));
      in.segment_ids.push_back(static_cast<std::int32_t>((i / 3) % 2));
      in.pad_mask.push_back(pad ? 1 : 0);
    }
  return in;
}

std::set<std::string> names_of(const SummarizationModel<double>& m) {
  std::set<std::string> out;
  for (const auto& [name, _] : m.parameters()) out.insert(name);
  return out;
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("encoder shapes and closed-form parameter count") {
  const auto c = small_config();
  const auto m = SummarizationModel<double>::build(TaskKind::Extractive, c, 1);
  CHECK(m.encoder().token_embedding.shape() == Shape{50, 8});
  CHECK(m.encoder().segment_embedding.shape() == Shape{2, 8});
  CHECK(m.encoder().position_embedding.shape() == Shape{32, 8});
  const std::size_t d = 8, ff = 16, v = 50, p = 32;
  const std::size_t block = 2 * 2 * d + 4 * (d * d + d) + (d * ff + ff) + (ff * d + d);
  const std::size_t encoder = v * d + p * d + 2 * d + block + 2 * d;
  CHECK(m.parameter_count() == encoder + d + 1);
  const auto a = SummarizationModel<double>::build(TaskKind::Abstractive, c, 1);
  const std::size_t dec_block = 3 * 2 * d + 8 * (d * d + d) + (d * ff + ff) + (ff * d + d);
  CHECK(a.parameter_count() == encoder + v * d + p * d + dec_block + 2 * d);
}

TEST_CASE("build is deterministic per seed") {
  const auto c = small_config();
  const auto a = SummarizationModel<float>::build(TaskKind::Abstractive, c, 9);
  const auto b = SummarizationModel<float>::build(TaskKind::Abstractive, c, 9);
  const auto other = SummarizationModel<float>::build(TaskKind::Abstractive, c, 10);
  bool any_diff = false;
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    const auto x = a.parameters()[i].second.data();
    const auto y = b.parameters()[i].second.data();
    CHECK(std::memcmp(x.data(), y.data(), x.size_bytes()) == 0);
    const auto z = other.parameters()[i].second.data();
    any_diff = any_diff || std::memcmp(x.data(), z.data(), x.size_bytes()) != 0;
  }
  CHECK(any_diff);
}

TEST_CASE("initialization: truncated normal weights, zero biases, unit gains") {
  const auto m = SummarizationModel<double>::build(TaskKind::Abstractive, small_config(), 3);
  for (const auto& [name, t] : m.parameters()) {
    for (double v : t.data()) {
      if (name.ends_with(".bias") || name.ends_with(".beta")) CHECK(v == 0.0);
      else if (name.ends_with(".gamma")) CHECK(v == 1.0);
      else CHECK(std::abs(v) <= 0.04 + 1e-12);
    }
  }
}

TEST_CASE("config validation") {
  auto c = small_config();
  c.d_model = 7;
  CHECK(error_of([&] { SummarizationModel<double>::build(TaskKind::Extractive, c, 0); }) == Errc::InvalidConfig);
  c = small_config();
  c.dropout = 1.0;
  CHECK(error_of([&] { c.validate(); }) == Errc::InvalidConfig);
  c = small_config();
  c.n_enc_layers = 0;
  CHECK(error_of([&] { c.validate(); }) == Errc::InvalidConfig);
  CHECK(error_of([] { parse_task("both"); }) == Errc::ConfigError);
}

TEST_CASE("encode output shape and position overflow") {
  const auto c = small_config();
  const auto m = SummarizationModel<double>::build(TaskKind::Extractive, c, 1);
  CounterRng rng(4);
  ForwardContext ctx;
  CHECK(encode(m.encoder(), random_input(rng, 2, 6, 50), ctx).shape() == Shape{2, 6, 8});
  CHECK(error_of([&] { encode(m.encoder(), random_input(rng, 1, 33, 50), ctx); }) == Errc::PositionOverflow);
  auto bad = random_input(rng, 1, 4, 50);
  bad.src_ids[0] = 50;
  CHECK(error_of([&] { encode(m.encoder(), bad, ctx); }) == Errc::IdOutOfRange);
}

TEST_CASE("pad invariance (fuzz)") {
  const auto m = SummarizationModel<double>::build(TaskKind::Extractive, small_config(), 2);
  CounterRng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t len = 3 + rng.below(10);
    const std::size_t pads = 1 + rng.below(len - 1);
    const auto in = random_input(rng, 2, len, 50, pads);
    auto edited = in;
    for (std::size_t i = 0; i < edited.src_ids.size(); ++i)
      if (edited.pad_mask[i]) edited.src_ids[i] = static_cast<std::int32_t>(1 + rng.below(49));
    ForwardContext ctx;
    const auto h1 = encode(m.encoder(), in, ctx);
    const auto h2 = encode(m.encoder(), edited, ctx);
    double worst = 0.0;
    for (std::size_t pos = 0; pos < 2 * len; ++pos)
      if (!in.pad_mask[pos])
        for (std::size_t k = 0; k < 8; ++k) worst = std::max(worst, std::abs(h1.data()[pos * 8 + k] - h2.data()[pos * 8 + k]));
    CHECK(worst < 1e-6);
  }
}

TEST_CASE("ext scores: zero head, shapes, bounds, index errors") {
  const auto m = SummarizationModel<double>::build(TaskKind::Extractive, small_config(), 1);
  CounterRng rng(6);
  ForwardContext ctx;
  const auto hidden = encode(m.encoder(), random_input(rng, 1, 9, 50), ctx);
  ExtHead<double> zero{{Tensor<double>::zeros({8, 1}), Tensor<double>::zeros({1})}};
  const std::vector<std::int32_t> cls = {0, 3, 6};
  const auto s = ext_scores(zero, hidden, cls, 3);
  CHECK(s.shape() == Shape{1, 3});
  for (double v : s.data()) CHECK(v == 0.5);
  const std::vector<std::int32_t> bad = {0, 9};
  CHECK(error_of([&] { ext_scores(m.ext_head(), hidden, bad, 2); }) == Errc::IndexOutOfRange);

  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> hv(9 * 8);
    for (double& v : hv) v = (rng.uniform() - 0.5) * 20.0;
    const Tensor<double> h({1, 9, 8}, hv);
    for (double v : ext_scores(m.ext_head(), h, cls, 3).data()) CHECK((v > 0.0 && v < 1.0));
  }
}

TEST_CASE("decoder logits shape, causal invariance and position overflow") {
  const auto c = small_config();
  const auto m = SummarizationModel<double>::build(TaskKind::Abstractive, c, 1);
  CounterRng rng(8);
  ForwardContext ctx;
  const auto in = random_input(rng, 2, 7, 50, 2);
  const auto hidden = encode(m.encoder(), in, ctx);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t t = 2 + rng.below(8);
    std::vector<std::int32_t> tgt(2 * t);
    for (auto& id : tgt) id = static_cast<std::int32_t>(rng.below(50));
    const auto logits = decode_teacher_forced(m.decoder(), hidden, tgt, t, in.pad_mask, ctx);
    CHECK(logits.shape() == Shape{2, t, 50});
    const std::size_t pos = rng.below(t - 1);
    auto edited = tgt;
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t j = pos + 1; j < t; ++j) edited[b * t + j] = static_cast<std::int32_t>(rng.below(50));
    const auto changed = decode_teacher_forced(m.decoder(), hidden, edited, t, in.pad_mask, ctx);
    double worst = 0.0;
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t j = 0; j <= pos; ++j)
        for (std::size_t v = 0; v < 50; ++v) {
          const std::size_t at = (b * t + j) * 50 + v;
          worst = std::max(worst, std::abs(logits.data()[at] - changed.data()[at]));
        }
    CHECK(worst < 1e-6);
  }
  const std::vector<std::int32_t> long_tgt(33, 3);
  const auto one = encode(m.encoder(), random_input(rng, 1, 4, 50), ctx);
  const std::vector<std::uint8_t> mask(4, 0);
  CHECK(error_of([&] { decode_teacher_forced(m.decoder(), one, long_tgt, 33, mask, ctx); }) ==
        Errc::PositionOverflow);
}

TEST_CASE("ext_loss closed forms") {
  const std::vector<std::uint8_t> labels = {1, 0, 1, 0};
  const std::vector<std::uint8_t> none = {0, 0, 0, 0};
  const auto half = ext_loss(Tensor<double>::full({1, 4}, 0.5), labels, none);
  CHECK(half.item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  const auto perfect = ext_loss(Tensor<double>({1, 4}, {1 - 1e-9, 1e-9, 1 - 1e-9, 1e-9}), labels, none);
  CHECK(perfect.item() < 1e-6);
  CHECK(perfect.item() >= 0.0);
  const std::vector<std::uint8_t> all = {1, 1, 1, 1};
  CHECK(error_of([&] { ext_loss(Tensor<double>::full({1, 4}, 0.5), labels, all); }) == Errc::AllMasked);
  const std::vector<std::uint8_t> three = {1, 0, 1};
  CHECK(error_of([&] { ext_loss(Tensor<double>::full({1, 4}, 0.5), three, none); }) == Errc::ShapeMismatch);
}

TEST_CASE("abs_loss closed forms") {
  const std::size_t v = 7;
  const std::vector<std::int32_t> tgt = {1, 4, 5, 2};
  const std::vector<std::uint8_t> pad = {0, 0, 0, 0};
  const auto uniform = abs_loss(Tensor<double>::zeros({1, 4, v}), tgt, pad, 0.0);
  CHECK(uniform.item() == doctest::Approx(std::log(static_cast<double>(v))).epsilon(1e-12));
  std::vector<double> sharp(4 * v, 0.0);
  for (std::size_t t = 0; t + 1 < 4; ++t) sharp[t * v + static_cast<std::size_t>(tgt[t + 1])] = 50.0;
  CHECK(abs_loss(Tensor<double>({1, 4, v}, sharp), tgt, pad, 0.0).item() < 1e-12);
  CHECK(error_of([&] { abs_loss(Tensor<double>::zeros({1, 4, v}), tgt, pad, 1.0); }) == Errc::InvalidArgument);
  // Pad targets are excluded: the masked position may hold any logits.
  const std::vector<std::uint8_t> tail = {0, 0, 0, 1};
  sharp[2 * v + 2] = -1000.0;
  CHECK(abs_loss(Tensor<double>({1, 4, v}, sharp), tgt, tail, 0.0).item() < 1e-12);
}

TEST_CASE("variants share parameter names") {
  auto c = small_config();
  const auto bert_ext = SummarizationModel<double>::build(TaskKind::Extractive, c, 1);
  const auto bert_abs = SummarizationModel<double>::build(TaskKind::Abstractive, c, 1);
  c.pretrained_encoder = true;
  const auto pre_ext = SummarizationModel<double>::build(TaskKind::Extractive, c, 1);
  const auto pre_abs = SummarizationModel<double>::build(TaskKind::Abstractive, c, 1);
  CHECK(names_of(bert_ext) == names_of(pre_ext));
  CHECK(names_of(bert_abs) == names_of(pre_abs));
  CHECK(pre_ext.variant() == "BertSumExt");
  CHECK(bert_ext.variant() == "TransformerExt");
  CHECK(pre_abs.variant() == "BertSumAbs");
  CHECK(bert_abs.variant() == "TransformerAbs");
  CHECK(error_of([&] { bert_ext.decoder(); }) == Errc::ModelKindMismatch);
  CHECK(error_of([&] { bert_abs.ext_head(); }) == Errc::ModelKindMismatch);
}

TEST_CASE("attention rows over unmasked keys sum to one (fuzz)") {
  const auto m = SummarizationModel<double>::build(TaskKind::Extractive, small_config(), 4);
  CounterRng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t lq = 1 + rng.below(6), lk = 1 + rng.below(6);
    std::vector<double> qv(lq * 8), kv(lk * 8);
    for (double& v : qv) v = rng.normal();
    for (double& v : kv) v = rng.normal();
    std::vector<std::uint8_t> mask(lq * lk);
    for (std::size_t i = 0; i < lq; ++i) {
      for (std::size_t j = 0; j < lk; ++j) mask[i * lk + j] = static_cast<std::uint8_t>(rng.below(3) == 0);
      mask[i * lk + rng.below(lk)] = 0;
    }
    ForwardContext ctx;
    Tensor<double> probs;
    attention(m.encoder().layers[0].self_attn, Tensor<double>({1, lq, 8}, qv), Tensor<double>({1, lk, 8}, kv), mask,
              0.0, ctx, &probs);
    CHECK(probs.shape() == Shape{1, 2, lq, lk});
    for (std::size_t h = 0; h < 2; ++h)
      for (std::size_t i = 0; i < lq; ++i) {
        double total = 0.0;
        for (std::size_t j = 0; j < lk; ++j) {
          const double p = probs.data()[(h * lq + i) * lk + j];
          if (mask[i * lk + j]) CHECK(p == 0.0);
          total += p;
        }
        CHECK(std::abs(total - 1.0) < 1e-6);
      }
  }
}

TEST_CASE("full-model gradient check") {
  for (TaskKind kind : {TaskKind::Extractive, TaskKind::Abstractive}) {
    CAPTURE(task_name(kind));
    CHECK(testing::full_model_gradient_error(kind) < 1e-3);
  }
}

TEST_CASE("make_batch pads to the longest example") {
  const auto vocab = testing::synthetic_vocab();
  const auto examples = testing::encode_corpus(testing::synthetic_corpus({}, 3), vocab);
  const auto batch = make_batch(std::span(examples).subspan(0, 4), 0);
  std::size_t longest = 0, sentences = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    longest = std::max(longest, examples[i].src_ids.size());
    sentences = std::max(sentences, examples[i].cls_positions.size());
  }
  CHECK(batch.source.length == longest);
  CHECK(batch.sentences == sentences);
  CHECK(batch.source.src_ids.size() == 4 * longest);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < longest; ++j)
      CHECK(batch.source.pad_mask[i * longest + j] == (j >= examples[i].src_ids.size() ? 1 : 0));
  CHECK(error_of([] { make_batch({}, 0); }) == Errc::EmptyCorpus);
}

}  // TEST_SUITE
