#include "sumforge/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "sumforge/error.hpp"

namespace sumforge::model {

void ModelConfig::validate() const {
  auto fail = [](const std::string& why) { throw Error(Errc::InvalidConfig, why); };
  if (vocab_size < 1) fail("vocab_size must be >= 1");
  if (d_model < 1 || n_heads < 1 || d_ff < 1) fail("dimensions must be >= 1");
  if (n_enc_layers < 1 || n_dec_layers < 1) fail("layer counts must be >= 1");
  if (max_positions < 1) fail("max_positions must be >= 1");
  if (d_model % n_heads != 0)
    fail("d_model " + std::to_string(d_model) + " not divisible by n_heads " + std::to_string(n_heads));
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must be in [0, 1)");
}

const char* task_name(TaskKind kind) noexcept {
  return kind == TaskKind::Extractive ? "ext" : "abs";
}

TaskKind parse_task(std::string_view name) {
  if (name == "ext") return TaskKind::Extractive;
  if (name == "abs") return TaskKind::Abstractive;
  throw Error(Errc::ConfigError, "unknown task '" + std::string(name) + "' (expected ext or abs)");
}

std::string variant_name(TaskKind kind, bool pretrained_encoder) {
  std::string name = pretrained_encoder ? "BertSum" : "Transformer";
  return name + (kind == TaskKind::Extractive ? "Ext" : "Abs");
}

bool is_encoder_parameter(std::string_view name) noexcept { return name.starts_with("encoder."); }

// ---------------------------------------------------------------------------
// Layout

namespace {

using Layout = std::vector<std::pair<std::string, Shape>>;

void add_linear(Layout& out, const std::string& prefix, std::size_t in, std::size_t outd) {
  out.emplace_back(prefix + ".weight", Shape{in, outd});
  out.emplace_back(prefix + ".bias", Shape{outd});
}

void add_norm(Layout& out, const std::string& prefix, std::size_t d) {
  out.emplace_back(prefix + ".gamma", Shape{d});
  out.emplace_back(prefix + ".beta", Shape{d});
}

void add_attention(Layout& out, const std::string& prefix, std::size_t d) {
  for (const char* part : {"query", "key", "value", "output"}) add_linear(out, prefix + "." + part, d, d);
}

void add_ffn(Layout& out, const std::string& prefix, std::size_t d, std::size_t ff) {
  add_linear(out, prefix + ".inner", d, ff);
  add_linear(out, prefix + ".outer", ff, d);
}

void sort_layout(Layout& layout) {
  std::sort(layout.begin(), layout.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
}

}  // namespace

Layout encoder_layout(const ModelConfig& c) {
  Layout out;
  out.emplace_back("encoder.token_embedding", Shape{c.vocab_size, c.d_model});
  out.emplace_back("encoder.position_embedding", Shape{c.max_positions, c.d_model});
  out.emplace_back("encoder.segment_embedding", Shape{2, c.d_model});
  for (std::size_t i = 0; i < c.n_enc_layers; ++i) {
    const std::string p = "encoder.layers." + std::to_string(i);
    add_norm(out, p + ".attn_norm", c.d_model);
    add_attention(out, p + ".self_attn", c.d_model);
    add_norm(out, p + ".ffn_norm", c.d_model);
    add_ffn(out, p + ".ffn", c.d_model, c.d_ff);
  }
  add_norm(out, "encoder.final_norm", c.d_model);
  sort_layout(out);
  return out;
}

Layout parameter_layout(TaskKind kind, const ModelConfig& c) {
  Layout out = encoder_layout(c);
  if (kind == TaskKind::Extractive) {
    add_linear(out, "ext_head.classifier", c.d_model, 1);
  } else {
    out.emplace_back("decoder.token_embedding", Shape{c.vocab_size, c.d_model});
    out.emplace_back("decoder.position_embedding", Shape{c.max_positions, c.d_model});
    for (std::size_t i = 0; i < c.n_dec_layers; ++i) {
      const std::string p = "decoder.layers." + std::to_string(i);
      add_norm(out, p + ".self_attn_norm", c.d_model);
      add_attention(out, p + ".self_attn", c.d_model);
      add_norm(out, p + ".cross_attn_norm", c.d_model);
      add_attention(out, p + ".cross_attn", c.d_model);
      add_norm(out, p + ".ffn_norm", c.d_model);
      add_ffn(out, p + ".ffn", c.d_model, c.d_ff);
    }
    add_norm(out, "decoder.final_norm", c.d_model);
  }
  sort_layout(out);
  return out;
}

// ---------------------------------------------------------------------------
// SummarizationModel

template <typename Scalar>
SummarizationModel<Scalar> SummarizationModel<Scalar>::build(TaskKind kind, const ModelConfig& config,
                                                         std::uint64_t seed) {
  config.validate();
  SummarizationModel model;
  model.kind_ = kind;
  model.config_ = config;
  const CounterRng root(seed);
  for (const auto& [name, shape] : parameter_layout(kind, config)) {
    std::vector<Scalar> data(numel(shape));
    if (name.ends_with(".gamma")) {
      std::fill(data.begin(), data.end(), Scalar(1));
    } else if (!name.ends_with(".beta") && !name.ends_with(".bias")) {
      CounterRng rng = root.split(name);
      for (Scalar& v : data) v = static_cast<Scalar>(rng.truncated_normal(0.02));
    }
    model.params_.emplace_back(name, Tensor<Scalar>(shape, std::move(data), true));
  }
  model.wire();
  if (kind == TaskKind::Abstractive) {
    // Decoder embeddings start as a copy of the encoder's.
    auto src = model.encoder_.token_embedding.data();
    auto dst = model.decoder_.token_embedding.mutable_data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
  return model;
}

template <typename Scalar>
Tensor<Scalar> SummarizationModel<Scalar>::parameter(std::string_view name) const {
  auto it = std::lower_bound(params_.begin(), params_.end(), name,
                             [](const auto& p, std::string_view n) { return p.first < n; });
  if (it == params_.end() || it->first != name)
    throw Error(Errc::InvalidArgument, "no parameter named " + std::string(name));
  return it->second;
}

template <typename Scalar>
std::size_t SummarizationModel<Scalar>::parameter_count() const noexcept {
  std::size_t total = 0;
  for (const auto& [name, t] : params_) total += t.numel();
  return total;
}

template <typename Scalar>
void SummarizationModel<Scalar>::set_pretrained_encoder(bool value) noexcept {
  config_.pretrained_encoder = value;
  encoder_.config.pretrained_encoder = value;
  decoder_.config.pretrained_encoder = value;
}

template <typename Scalar>
const ExtHead<Scalar>& SummarizationModel<Scalar>::ext_head() const {
  if (kind_ != TaskKind::Extractive) throw Error(Errc::ModelKindMismatch, "abstractive model has no sentence head");
  return ext_head_;
}

template <typename Scalar>
const Decoder<Scalar>& SummarizationModel<Scalar>::decoder() const {
  if (kind_ != TaskKind::Abstractive) throw Error(Errc::ModelKindMismatch, "extractive model has no decoder");
  return decoder_;
}

template <typename Scalar>
void SummarizationModel<Scalar>::wire() {
  auto p = [this](const std::string& name) { return parameter(name); };
  auto linear = [&](const std::string& prefix) {
    return Linear<Scalar>{p(prefix + ".weight"), p(prefix + ".bias")};
  };
  auto norm = [&](const std::string& prefix) { return Norm<Scalar>{p(prefix + ".gamma"), p(prefix + ".beta")}; };
  auto attn = [&](const std::string& prefix) {
    return Attention<Scalar>{linear(prefix + ".query"), linear(prefix + ".key"), linear(prefix + ".value"),
                             linear(prefix + ".output"), config_.n_heads};
  };
  auto ffn = [&](const std::string& prefix) {
    return FeedForward<Scalar>{linear(prefix + ".inner"), linear(prefix + ".outer")};
  };

  encoder_ = {};
  encoder_.config = config_;
  encoder_.token_embedding = p("encoder.token_embedding");
  encoder_.position_embedding = p("encoder.position_embedding");
  encoder_.segment_embedding = p("encoder.segment_embedding");
  for (std::size_t i = 0; i < config_.n_enc_layers; ++i) {
    const std::string prefix = "encoder.layers." + std::to_string(i);
    encoder_.layers.push_back({norm(prefix + ".attn_norm"), attn(prefix + ".self_attn"),
                               norm(prefix + ".ffn_norm"), ffn(prefix + ".ffn")});
  }
  encoder_.final_norm = norm("encoder.final_norm");

  if (kind_ == TaskKind::Extractive) {
    ext_head_.classifier = linear("ext_head.classifier");
    return;
  }
  decoder_ = {};
  decoder_.config = config_;
  decoder_.token_embedding = p("decoder.token_embedding");
  decoder_.position_embedding = p("decoder.position_embedding");
  for (std::size_t i = 0; i < config_.n_dec_layers; ++i) {
    const std::string prefix = "decoder.layers." + std::to_string(i);
    decoder_.layers.push_back({norm(prefix + ".self_attn_norm"), attn(prefix + ".self_attn"),
                               norm(prefix + ".cross_attn_norm"), attn(prefix + ".cross_attn"),
                               norm(prefix + ".ffn_norm"), ffn(prefix + ".ffn")});
  }
  decoder_.final_norm = norm("decoder.final_norm");
}

template <typename Scalar>
SummarizationModel<Scalar> SummarizationModel<Scalar>::clone() const {
  SummarizationModel copy;
  copy.kind_ = kind_;
  copy.config_ = config_;
  for (const auto& [name, t] : params_) {
    std::vector<Scalar> data(t.data().begin(), t.data().end());
    copy.params_.emplace_back(name, Tensor<Scalar>(t.shape(), std::move(data), t.requires_grad()));
  }
  copy.wire();
  return copy;
}

template <typename Scalar>
template <typename Other>
SummarizationModel<Other> SummarizationModel<Scalar>::cast() const {
  SummarizationModel<Other> out = SummarizationModel<Other>::build(kind_, config_, 0);
  for (const auto& [name, t] : params_) {
    auto dst = out.parameter(name).mutable_data();
    const auto src = t.data();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<Other>(src[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Batching

Batch make_batch(std::span<const tokenize::TokenizedExample> examples, std::int32_t pad_id) {
  if (examples.empty()) throw Error(Errc::EmptyCorpus, "empty batch");
  Batch batch;
  const std::size_t b = examples.size();
  std::size_t length = 0;
  std::size_t sentences = 0;
  std::size_t tgt_length = 0;
  for (const auto& ex : examples) {
    length = std::max(length, ex.src_ids.size());
    sentences = std::max(sentences, ex.cls_positions.size());
    tgt_length = std::max(tgt_length, ex.tgt_ids.size());
  }
  EncoderInput& src = batch.source;
  src.batch = b;
  src.length = length;
  src.src_ids.assign(b * length, pad_id);
  src.segment_ids.assign(b * length, 0);
  src.pad_mask.assign(b * length, 1);
  batch.sentences = sentences;
  batch.cls_positions.assign(b * sentences, 0);
  batch.sentence_pad_mask.assign(b * sentences, 1);
  batch.labels.assign(b * sentences, 0);
  batch.tgt_length = tgt_length;
  batch.tgt_ids.assign(b * tgt_length, pad_id);
  batch.tgt_pad_mask.assign(b * tgt_length, 1);
  for (std::size_t i = 0; i < b; ++i) {
    const auto& ex = examples[i];
    if (ex.segment_ids.size() != ex.src_ids.size() || ex.ext_labels.size() != ex.cls_positions.size())
      throw Error(Errc::ShapeMismatch, "inconsistent example in batch");
    for (std::size_t j = 0; j < ex.src_ids.size(); ++j) {
      src.src_ids[i * length + j] = ex.src_ids[j];
      src.segment_ids[i * length + j] = ex.segment_ids[j];
      src.pad_mask[i * length + j] = 0;
    }
    for (std::size_t s = 0; s < ex.cls_positions.size(); ++s) {
      batch.cls_positions[i * sentences + s] = ex.cls_positions[s];
      batch.sentence_pad_mask[i * sentences + s] = 0;
      batch.labels[i * sentences + s] = ex.ext_labels[s];
    }
    for (std::size_t t = 0; t < ex.tgt_ids.size(); ++t) {
      batch.tgt_ids[i * tgt_length + t] = ex.tgt_ids[t];
      batch.tgt_pad_mask[i * tgt_length + t] = 0;
    }
  }
  return batch;
}

// ---------------------------------------------------------------------------
// Forward

namespace {

template <typename Scalar>
Tensor<Scalar> feed_forward(const FeedForward<Scalar>& ffn, const Tensor<Scalar>& x) {
  return ffn.outer(gelu(ffn.inner(x)));
}

template <typename Scalar>
Tensor<Scalar> positions(const Tensor<Scalar>& table, std::size_t length) {
  std::vector<std::int32_t> ids(length);
  std::iota(ids.begin(), ids.end(), 0);
  return embedding_lookup(table, ids, Shape{length});
}

template <typename Scalar>
Tensor<Scalar> residual_dropout(const Tensor<Scalar>& x, const Tensor<Scalar>& update, double p,
                                ForwardContext& ctx) {
  return add(x, dropout(update, p, ctx.train, ctx.next_seed()));
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> attention(const Attention<Scalar>& attn, const Tensor<Scalar>& query_input,
                         const Tensor<Scalar>& memory, std::span<const std::uint8_t> mask,
                         double dropout_p, ForwardContext& ctx, Tensor<Scalar>* probs_out) {
  const std::size_t b = query_input.dim(0);
  const std::size_t lq = query_input.dim(1);
  const std::size_t d = query_input.dim(2);
  const std::size_t lk = memory.dim(1);
  const std::size_t h = attn.heads;
  const std::size_t dk = d / h;
  if (memory.dim(0) != b || memory.dim(2) != d) throw Error(Errc::ShapeMismatch, "attention memory shape");
  if (mask.size() != b * lq * lk) throw Error(Errc::ShapeMismatch, "attention mask size");

  const auto q = permute(reshape(attn.query(query_input), {b, lq, h, dk}), {0, 2, 1, 3});
  const auto k = permute(reshape(attn.key(memory), {b, lk, h, dk}), {0, 2, 3, 1});
  const auto v = permute(reshape(attn.value(memory), {b, lk, h, dk}), {0, 2, 1, 3});
  auto scores = scale(matmul(q, k), static_cast<Scalar>(1.0 / std::sqrt(static_cast<double>(dk))));

  std::vector<std::uint8_t> full(b * h * lq * lk);
  for (std::size_t bi = 0; bi < b; ++bi)
    for (std::size_t hi = 0; hi < h; ++hi)
      std::copy_n(mask.begin() + static_cast<std::ptrdiff_t>(bi * lq * lk), lq * lk,
                  full.begin() + static_cast<std::ptrdiff_t>((bi * h + hi) * lq * lk));
  scores = masked_fill(scores, full, -std::numeric_limits<Scalar>::infinity());
  auto probs = softmax(scores, -1);
  if (probs_out) *probs_out = probs;
  probs = dropout(probs, dropout_p, ctx.train, ctx.next_seed());
  const auto context = reshape(permute(matmul(probs, v), {0, 2, 1, 3}), {b, lq, d});
  return attn.output(context);
}

template <typename Scalar>
Tensor<Scalar> encode(const Encoder<Scalar>& encoder, const EncoderInput& input, ForwardContext& ctx) {
  const ModelConfig& c = encoder.config;
  const std::size_t b = input.batch;
  const std::size_t l = input.length;
  if (l > c.max_positions)
    throw Error(Errc::PositionOverflow, "length " + std::to_string(l) + " exceeds " + std::to_string(c.max_positions));
  if (input.src_ids.size() != b * l || input.segment_ids.size() != b * l || input.pad_mask.size() != b * l)
    throw Error(Errc::ShapeMismatch, "encoder input arrays do not match batch x length");

  auto x = embedding_lookup(encoder.token_embedding, input.src_ids, {b, l});
  x = add(x, positions(encoder.position_embedding, l));
  x = add(x, embedding_lookup(encoder.segment_embedding, input.segment_ids, {b, l}));
  x = dropout(x, c.dropout, ctx.train, ctx.next_seed());

  std::vector<std::uint8_t> mask(b * l * l);
  for (std::size_t bi = 0; bi < b; ++bi)
    for (std::size_t i = 0; i < l; ++i)
      std::copy_n(input.pad_mask.begin() + static_cast<std::ptrdiff_t>(bi * l), l,
                  mask.begin() + static_cast<std::ptrdiff_t>((bi * l + i) * l));

  for (const auto& layer : encoder.layers) {
    const auto h = layer.attn_norm(x);
    x = residual_dropout(x, attention(layer.self_attn, h, h, mask, c.dropout, ctx), c.dropout, ctx);
    x = residual_dropout(x, feed_forward(layer.ffn, layer.ffn_norm(x)), c.dropout, ctx);
  }
  return encoder.final_norm(x);
}

template <typename Scalar>
Tensor<Scalar> ext_scores(const ExtHead<Scalar>& head, const Tensor<Scalar>& hidden,
                          std::span<const std::int32_t> cls_positions, std::size_t sentences) {
  const std::size_t b = hidden.dim(0);
  const auto picked = gather_rows(hidden, cls_positions, sentences);
  return sigmoid(reshape(head.classifier(picked), {b, sentences}));
}

template <typename Scalar>
Tensor<Scalar> decode_teacher_forced(const Decoder<Scalar>& decoder, const Tensor<Scalar>& enc_hidden,
                                     std::span<const std::int32_t> tgt_ids, std::size_t tgt_length,
                                     std::span<const std::uint8_t> src_pad_mask, ForwardContext& ctx) {
  const ModelConfig& c = decoder.config;
  const std::size_t b = enc_hidden.dim(0);
  const std::size_t l = enc_hidden.dim(1);
  const std::size_t t = tgt_length;
  if (t > c.max_positions)
    throw Error(Errc::PositionOverflow, "target length " + std::to_string(t) + " exceeds " + std::to_string(c.max_positions));
  if (tgt_ids.size() != b * t) throw Error(Errc::ShapeMismatch, "target ids do not match batch x length");
  if (src_pad_mask.size() != b * l) throw Error(Errc::ShapeMismatch, "source pad mask size");

  auto x = embedding_lookup(decoder.token_embedding, tgt_ids, {b, t});
  x = add(x, positions(decoder.position_embedding, t));
  x = dropout(x, c.dropout, ctx.train, ctx.next_seed());

  std::vector<std::uint8_t> causal(b * t * t, 0);
  for (std::size_t bi = 0; bi < b; ++bi)
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t j = i + 1; j < t; ++j) causal[(bi * t + i) * t + j] = 1;
  std::vector<std::uint8_t> cross(b * t * l);
  for (std::size_t bi = 0; bi < b; ++bi)
    for (std::size_t i = 0; i < t; ++i)
      std::copy_n(src_pad_mask.begin() + static_cast<std::ptrdiff_t>(bi * l), l,
                  cross.begin() + static_cast<std::ptrdiff_t>((bi * t + i) * l));

  for (const auto& layer : decoder.layers) {
    const auto h = layer.self_attn_norm(x);
    x = residual_dropout(x, attention(layer.self_attn, h, h, causal, c.dropout, ctx), c.dropout, ctx);
    const auto hc = layer.cross_attn_norm(x);
    x = residual_dropout(x, attention(layer.cross_attn, hc, enc_hidden, cross, c.dropout, ctx), c.dropout, ctx);
    x = residual_dropout(x, feed_forward(layer.ffn, layer.ffn_norm(x)), c.dropout, ctx);
  }
  x = decoder.final_norm(x);
  return matmul(x, transpose(decoder.token_embedding));
}

template <typename Scalar>
Tensor<Scalar> ext_loss(const Tensor<Scalar>& scores, std::span<const std::uint8_t> labels,
                        std::span<const std::uint8_t> sentence_pad_mask) {
  if (labels.size() != scores.numel() || sentence_pad_mask.size() != scores.numel())
    throw Error(Errc::ShapeMismatch, std::to_string(scores.numel()) + " scores vs " +
                                         std::to_string(labels.size()) + " labels");
  std::vector<Scalar> targets(labels.size());
  std::vector<Scalar> weights(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    targets[i] = labels[i] ? Scalar(1) : Scalar(0);
    weights[i] = sentence_pad_mask[i] ? Scalar(0) : Scalar(1);
  }
  return binary_cross_entropy(scores, std::span<const Scalar>(targets), std::span<const Scalar>(weights));
}

template <typename Scalar>
Tensor<Scalar> abs_loss(const Tensor<Scalar>& logits, std::span<const std::int32_t> tgt_ids,
                        std::span<const std::uint8_t> tgt_pad_mask, double smoothing) {
  if (logits.rank() != 3) throw Error(Errc::ShapeMismatch, "logits must be [B, T, V]");
  const std::size_t b = logits.dim(0);
  const std::size_t t = logits.dim(1);
  if (tgt_ids.size() != b * t || tgt_pad_mask.size() != b * t)
    throw Error(Errc::ShapeMismatch, "targets do not match logits " + shape_string(logits.shape()));
  std::vector<std::int32_t> next(b * t, 0);
  std::vector<Scalar> weights(b * t, Scalar(0));
  for (std::size_t bi = 0; bi < b; ++bi) {
    for (std::size_t i = 0; i + 1 < t; ++i) {
      const std::size_t at = bi * t + i;
      if (tgt_pad_mask[at + 1] || tgt_pad_mask[at]) continue;
      next[at] = tgt_ids[at + 1];
      weights[at] = Scalar(1);
    }
  }
  return smoothed_cross_entropy(logits, std::span<const std::int32_t>(next), std::span<const Scalar>(weights),
                                smoothing);
}

template <typename Scalar>
Tensor<Scalar> ext_forward(const SummarizationModel<Scalar>& model, const Batch& batch, ForwardContext& ctx) {
  const auto& head = model.ext_head();
  const auto hidden = encode(model.encoder(), batch.source, ctx);
  return ext_scores(head, hidden, batch.cls_positions, batch.sentences);
}

template <typename Scalar>
Tensor<Scalar> abs_forward(const SummarizationModel<Scalar>& model, const Batch& batch, ForwardContext& ctx) {
  const auto& decoder = model.decoder();
  const auto hidden = encode(model.encoder(), batch.source, ctx);
  return decode_teacher_forced(decoder, hidden, batch.tgt_ids, batch.tgt_length, batch.source.pad_mask, ctx);
}

#define SUMFORGE_INSTANTIATE(S)                                                                       \
  template class SummarizationModel<S>;                                                               \
  template Tensor<S> attention(const Attention<S>&, const Tensor<S>&, const Tensor<S>&,               \
                               std::span<const std::uint8_t>, double, ForwardContext&, Tensor<S>*);   \
  template Tensor<S> encode(const Encoder<S>&, const EncoderInput&, ForwardContext&);                 \
  template Tensor<S> ext_scores(const ExtHead<S>&, const Tensor<S>&, std::span<const std::int32_t>,   \
                                std::size_t);                                                         \
  template Tensor<S> decode_teacher_forced(const Decoder<S>&, const Tensor<S>&,                       \
                                           std::span<const std::int32_t>, std::size_t,                \
                                           std::span<const std::uint8_t>, ForwardContext&);           \
  template Tensor<S> ext_loss(const Tensor<S>&, std::span<const std::uint8_t>,                        \
                              std::span<const std::uint8_t>);                                         \
  template Tensor<S> abs_loss(const Tensor<S>&, std::span<const std::int32_t>,                        \
                              std::span<const std::uint8_t>, double);                                 \
  template Tensor<S> ext_forward(const SummarizationModel<S>&, const Batch&, ForwardContext&);        \
  template Tensor<S> abs_forward(const SummarizationModel<S>&, const Batch&, ForwardContext&);

SUMFORGE_INSTANTIATE(float)
SUMFORGE_INSTANTIATE(double)
#undef SUMFORGE_INSTANTIATE

template SummarizationModel<double> SummarizationModel<float>::cast<double>() const;
template SummarizationModel<float> SummarizationModel<double>::cast<float>() const;
template SummarizationModel<float> SummarizationModel<float>::cast<float>() const;
template SummarizationModel<double> SummarizationModel<double>::cast<double>() const;

}  // namespace sumforge::model
