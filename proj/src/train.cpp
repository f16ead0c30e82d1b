#include "sumforge/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "sumforge/error.hpp"
#include "sumforge/ingest.hpp"

namespace sumforge::train {

// ---------------------------------------------------------------------------
// Optimizer

template <typename Scalar>
void adam_step(std::span<Scalar> params, std::span<const Scalar> grads, AdamMoments<Scalar>& state,
               double lr, const AdamHyper& hyper) {
  if (params.size() != grads.size())
    throw Error(Errc::ShapeMismatch, std::to_string(params.size()) + " params vs " +
                                         std::to_string(grads.size()) + " grads");
  if (state.m.empty() && state.v.empty()) {
    state.m.assign(params.size(), Scalar(0));
    state.v.assign(params.size(), Scalar(0));
  }
  if (state.m.size() != params.size() || state.v.size() != params.size())
    throw Error(Errc::ShapeMismatch, "moment arrays do not match parameter size");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(hyper.beta1, t);
  const double c2 = 1.0 - std::pow(hyper.beta2, t);
  const auto b1 = static_cast<Scalar>(hyper.beta1);
  const auto b2 = static_cast<Scalar>(hyper.beta2);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Scalar g = grads[i];
    state.m[i] = b1 * state.m[i] + (Scalar(1) - b1) * g;
    state.v[i] = b2 * state.v[i] + (Scalar(1) - b2) * g * g;
    const double m_hat = static_cast<double>(state.m[i]) / c1;
    const double v_hat = static_cast<double>(state.v[i]) / c2;
    params[i] = static_cast<Scalar>(static_cast<double>(params[i]) - lr * m_hat / (std::sqrt(v_hat) + hyper.eps));
  }
}

template <typename Scalar>
Adam<Scalar>::Adam(model::NamedParameters<Scalar> params, AdamHyper hyper)
    : params_(std::move(params)), moments_(params_.size()), hyper_(hyper) {}

template <typename Scalar>
void Adam<Scalar>::step(double lr) {
  ++steps_;
  std::vector<Scalar> zeros;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor<Scalar>& p = params_[i].second;
    std::span<const Scalar> g = p.grad();
    if (g.empty()) {
      zeros.assign(p.numel(), Scalar(0));
      g = zeros;
    }
    adam_step(p.mutable_data(), g, moments_[i], lr, hyper_);
  }
}

double lr_schedule(std::uint64_t step, double base_lr, std::uint64_t warmup) {
  if (step < 1) throw Error(Errc::InvalidArgument, "lr_schedule step must be >= 1");
  if (warmup < 1) throw Error(Errc::InvalidArgument, "lr_schedule warmup must be >= 1");
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(warmup);
  return base_lr * std::min(1.0 / std::sqrt(s), s * std::pow(w, -1.5));
}

template <typename Scalar>
double clip_gradients(std::span<Tensor<Scalar>> params, double max_norm) {
  if (!(max_norm > 0.0)) throw Error(Errc::InvalidArgument, "max_norm must be positive");
  double sq = 0.0;
  for (const auto& p : params)
    for (Scalar g : p.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const auto factor = static_cast<Scalar>(max_norm / norm);
    for (auto& p : params) {
      if (!p.has_grad()) continue;
      for (Scalar& g : p.mutable_grad()) g *= factor;
    }
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Configuration and bookkeeping

void TrainConfig::validate() const {
  auto fail = [](const std::string& why) { throw Error(Errc::ConfigError, why); };
  if (!(base_lr_encoder > 0.0) || !(base_lr_decoder > 0.0)) fail("learning rates must be positive");
  if (warmup_encoder < 1 || warmup_decoder < 1) fail("warmups must be >= 1");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (!(grad_clip_norm > 0.0)) fail("grad_clip_norm must be positive");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) fail("label_smoothing must be in [0, 1)");
}

TrainConfig default_train_config(std::uint64_t max_steps) {
  TrainConfig c;
  c.max_steps = max_steps;
  c.warmup_encoder = std::max<std::uint64_t>(1, max_steps / 5);
  c.warmup_decoder = std::max<std::uint64_t>(1, max_steps / 10);
  return c;
}

std::string format_loss_trace(std::span<const TraceRow> trace) {
  std::string out = "step,loss,lr_encoder,lr_decoder\n";
  char line[128];
  for (const TraceRow& r : trace) {
    std::snprintf(line, sizeof line, "%llu,%.9g,%.9g,%.9g\n", static_cast<unsigned long long>(r.step), r.loss,
                  r.lr_encoder, r.lr_decoder);
    out += line;
  }
  return out;
}

void write_loss_trace(const std::filesystem::path& path, std::span<const TraceRow> trace) {
  ingest::write_file(path, format_loss_trace(trace));
}

template <typename Scalar>
ParameterPartition<Scalar> partition_parameters(const model::SummarizationModel<Scalar>& m) {
  ParameterPartition<Scalar> part;
  for (const auto& entry : m.parameters())
    (model::is_encoder_parameter(entry.first) ? part.encoder : part.decoder).push_back(entry);
  return part;
}

BatchOrder::BatchOrder(std::size_t count, std::size_t batch_size, std::uint64_t seed)
    : count_(count), batch_size_(batch_size), rng_(CounterRng(seed).split("batch-order")) {
  if (count == 0) throw Error(Errc::EmptyCorpus, "no training examples");
  if (batch_size == 0) throw Error(Errc::ConfigError, "batch_size must be >= 1");
  reshuffle();
}

void BatchOrder::reshuffle() {
  order_.resize(count_);
  for (std::size_t i = 0; i < count_; ++i) order_[i] = i;
  for (std::size_t i = count_; i > 1; --i) std::swap(order_[i - 1], order_[rng_.below(i)]);
  cursor_ = 0;
}

std::vector<std::size_t> BatchOrder::next() {
  std::vector<std::size_t> batch;
  const std::size_t want = std::min(batch_size_, count_);
  while (batch.size() < want) {
    if (cursor_ == order_.size()) reshuffle();
    batch.push_back(order_[cursor_++]);
  }
  return batch;
}

namespace {

std::vector<tokenize::TokenizedExample> gather(std::span<const tokenize::TokenizedExample> examples,
                                               const std::vector<std::size_t>& indices) {
  std::vector<tokenize::TokenizedExample> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(examples[i]);
  return out;
}

template <typename Scalar>
std::vector<Tensor<Scalar>> tensors_of(const model::NamedParameters<Scalar>& params) {
  std::vector<Tensor<Scalar>> out;
  for (const auto& [name, t] : params) out.push_back(t);
  return out;
}

template <typename Scalar>
void zero_grads(std::vector<Tensor<Scalar>>& params) {
  for (auto& p : params) p.zero_grad();
}

template <typename Scalar>
void require_kind(const model::SummarizationModel<Scalar>& m, model::TaskKind kind) {
  if (m.kind() != kind)
    throw Error(Errc::ModelKindMismatch, std::string("expected ") + model::task_name(kind) + " model, got " +
                                             model::task_name(m.kind()));
}

model::ForwardContext step_context(std::uint64_t seed, std::uint64_t step, std::string_view stream = "dropout") {
  model::ForwardContext ctx;
  ctx.train = true;
  ctx.rng = CounterRng(seed).split(stream).split(step);
  return ctx;
}

template <typename Scalar>
void maybe_checkpoint(const model::SummarizationModel<Scalar>& m, const TrainConfig& config, std::uint64_t step,
                      TrainResult& result) {
  if (config.checkpoint_dir.empty() || config.eval_every == 0 || step % config.eval_every != 0) return;
  std::error_code ec;
  std::filesystem::create_directories(config.checkpoint_dir, ec);
  const auto path = config.checkpoint_dir / ("step_" + std::to_string(step) + ".sumf");
  checkpoint::save_checkpoint(m, path, step, config.seed);
  result.written.push_back(path);
}

template <typename Scalar>
void finish(const model::SummarizationModel<Scalar>& m, const TrainConfig& config, TrainResult& result) {
  result.final_checkpoint = checkpoint::snapshot(m, config.max_steps, config.seed);
  if (config.checkpoint_dir.empty()) return;
  std::error_code ec;
  std::filesystem::create_directories(config.checkpoint_dir, ec);
  const auto path = config.checkpoint_dir / "model.sumf";
  checkpoint::write_checkpoint(result.final_checkpoint, path);
  result.written.push_back(path);
  write_loss_trace(config.checkpoint_dir / "loss.csv", result.trace);
}

}  // namespace

// ---------------------------------------------------------------------------
// Fine-tuning loops

template <typename Scalar>
TrainResult train_ext(std::span<const tokenize::TokenizedExample> examples,
                      model::SummarizationModel<Scalar>& m, const TrainConfig& config) {
  config.validate();
  require_kind(m, model::TaskKind::Extractive);
  if (examples.empty()) throw Error(Errc::EmptyCorpus, "no training examples");
  TrainResult result;
  BatchOrder order(examples.size(), config.batch_size, config.seed);
  Adam<Scalar> opt(m.parameters());
  std::vector<Tensor<Scalar>> params = tensors_of(m.parameters());
  for (std::uint64_t step = 1; step <= config.max_steps; ++step) {
    const auto chosen = gather(examples, order.next());
    const model::Batch batch = model::make_batch(chosen, config.pad_id);
    zero_grads(params);
    model::ForwardContext ctx = step_context(config.seed, step);
    const Tensor<Scalar> scores = model::ext_forward(m, batch, ctx);
    const Tensor<Scalar> loss = model::ext_loss(scores, batch.labels, batch.sentence_pad_mask);
    backward(loss);
    clip_gradients<Scalar>(params, config.grad_clip_norm);
    const double lr = lr_schedule(step, config.base_lr_encoder, config.warmup_encoder);
    opt.step(lr);
    result.trace.push_back({step, static_cast<double>(loss.item()), lr, 0.0});
    maybe_checkpoint(m, config, step, result);
  }
  finish(m, config, result);
  return result;
}

template <typename Scalar>
TrainResult train_abs(std::span<const tokenize::TokenizedExample> examples,
                      model::SummarizationModel<Scalar>& m, const TrainConfig& config) {
  config.validate();
  require_kind(m, model::TaskKind::Abstractive);
  if (examples.empty()) throw Error(Errc::EmptyCorpus, "no training examples");
  TrainResult result;
  BatchOrder order(examples.size(), config.batch_size, config.seed);
  ParameterPartition<Scalar> part = partition_parameters(m);
  if (part.encoder.size() + part.decoder.size() != m.parameters().size())
    throw Error(Errc::InvalidConfig, "parameter partition does not cover the model");
  Adam<Scalar> enc_opt(part.encoder);
  Adam<Scalar> dec_opt(part.decoder);
  std::vector<Tensor<Scalar>> params = tensors_of(m.parameters());
  for (std::uint64_t step = 1; step <= config.max_steps; ++step) {
    const auto chosen = gather(examples, order.next());
    const model::Batch batch = model::make_batch(chosen, config.pad_id);
    zero_grads(params);
    model::ForwardContext ctx = step_context(config.seed, step);
    const Tensor<Scalar> logits = model::abs_forward(m, batch, ctx);
    const Tensor<Scalar> loss = model::abs_loss(logits, batch.tgt_ids, batch.tgt_pad_mask, config.label_smoothing);
    backward(loss);
    clip_gradients<Scalar>(params, config.grad_clip_norm);
    const double lr_enc = lr_schedule(step, config.base_lr_encoder, config.warmup_encoder);
    const double lr_dec = lr_schedule(step, config.base_lr_decoder, config.warmup_decoder);
    enc_opt.step(lr_enc);
    dec_opt.step(lr_dec);
    result.trace.push_back({step, static_cast<double>(loss.item()), lr_enc, lr_dec});
    maybe_checkpoint(m, config, step, result);
  }
  finish(m, config, result);
  return result;
}

// ---------------------------------------------------------------------------
// Masked-token pre-fit

template <typename Scalar>
PrefitResult prefit_encoder(std::span<const tokenize::TokenizedExample> examples,
                            model::SummarizationModel<Scalar>& m, const PrefitConfig& config) {
  if (!(config.mask_prob > 0.0)) throw Error(Errc::NoMaskedPositions, "mask_prob must be positive");
  if (!(config.mask_prob < 1.0)) throw Error(Errc::ConfigError, "mask_prob must be below 1");
  if (config.batch_size < 1 || config.warmup < 1 || !(config.base_lr > 0.0) || !(config.grad_clip_norm > 0.0))
    throw Error(Errc::ConfigError, "invalid pre-fit configuration");
  if (examples.empty()) throw Error(Errc::EmptyCorpus, "no pre-fit examples");

  const model::Encoder<Scalar>& enc = m.encoder();
  const std::size_t vocab = enc.config.vocab_size;
  Tensor<Scalar> head_bias = Tensor<Scalar>::zeros({vocab}, true);

  model::NamedParameters<Scalar> trained;
  for (const auto& entry : m.parameters())
    if (model::is_encoder_parameter(entry.first)) trained.push_back(entry);
  trained.emplace_back("prefit.output_bias", head_bias);
  Adam<Scalar> opt(trained);
  std::vector<Tensor<Scalar>> params = tensors_of(trained);

  const auto& sp = config.specials;
  auto eligible = [&](std::int32_t id) {
    return id != sp.pad && id != sp.cls && id != sp.sep && id != sp.mask && (!sp.bos || id != *sp.bos) &&
           (!sp.eos || id != *sp.eos);
  };

  PrefitResult result;
  BatchOrder order(examples.size(), config.batch_size, config.seed);
  const CounterRng mask_root = CounterRng(config.seed).split("prefit-mask");
  for (std::uint64_t step = 1; step <= config.steps; ++step) {
    const auto chosen = gather(examples, order.next());
    const model::Batch batch = model::make_batch(chosen, sp.pad);
    model::EncoderInput input = batch.source;
    const std::size_t n = input.src_ids.size();
    std::vector<std::int32_t> targets(input.src_ids);
    std::vector<Scalar> weights(n, Scalar(0));
    CounterRng rng = mask_root.split(step);
    std::vector<std::size_t> candidates;
    std::size_t masked = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (input.pad_mask[i] || !eligible(input.src_ids[i])) continue;
      candidates.push_back(i);
      if (rng.uniform() < config.mask_prob) {
        weights[i] = Scalar(1);
        input.src_ids[i] = sp.mask;
        ++masked;
      }
    }
    if (candidates.empty()) throw Error(Errc::NoMaskedPositions, "batch has no maskable tokens");
    if (masked == 0) {
      const std::size_t i = candidates[rng.below(candidates.size())];
      weights[i] = Scalar(1);
      input.src_ids[i] = sp.mask;
    }

    zero_grads(params);
    model::ForwardContext ctx = step_context(config.seed, step, "prefit-dropout");
    const Tensor<Scalar> hidden = model::encode(enc, input, ctx);
    const Tensor<Scalar> logits = add(matmul(hidden, transpose(enc.token_embedding)), head_bias);
    const Tensor<Scalar> loss = smoothed_cross_entropy(logits, targets, std::span<const Scalar>(weights), 0.0);
    backward(loss);
    clip_gradients<Scalar>(params, config.grad_clip_norm);
    const double lr = lr_schedule(step, config.base_lr, config.warmup);
    opt.step(lr);
    result.trace.push_back({step, static_cast<double>(loss.item()), lr, 0.0});
  }
  m.set_pretrained_encoder(true);
  result.encoder = checkpoint::encoder_snapshot(m, config.steps, config.seed);
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation helpers

template <typename Scalar>
double teacher_forced_accuracy(const model::SummarizationModel<Scalar>& m,
                               std::span<const tokenize::TokenizedExample> examples, std::int32_t pad_id) {
  require_kind(m, model::TaskKind::Abstractive);
  if (examples.empty()) throw Error(Errc::EmptyCorpus, "no examples");
  NoGradGuard guard;
  std::size_t correct = 0;
  std::size_t total = 0;
  constexpr std::size_t kChunk = 8;
  for (std::size_t start = 0; start < examples.size(); start += kChunk) {
    const auto chunk = examples.subspan(start, std::min(kChunk, examples.size() - start));
    const model::Batch batch = model::make_batch(chunk, pad_id);
    model::ForwardContext ctx;
    const Tensor<Scalar> logits = model::abs_forward(m, batch, ctx);
    const std::size_t t_len = batch.tgt_length;
    const std::size_t v = logits.dim(-1);
    const auto data = logits.data();
    for (std::size_t b = 0; b < chunk.size(); ++b) {
      for (std::size_t t = 0; t + 1 < t_len; ++t) {
        if (batch.tgt_pad_mask[b * t_len + t + 1]) continue;
        const Scalar* row = data.data() + (b * t_len + t) * v;
        const auto best = static_cast<std::int32_t>(std::max_element(row, row + v) - row);
        correct += best == batch.tgt_ids[b * t_len + t + 1];
        ++total;
      }
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

template <typename Scalar>
double evaluate_ext_loss(const model::SummarizationModel<Scalar>& m,
                         std::span<const tokenize::TokenizedExample> examples, std::int32_t pad_id) {
  require_kind(m, model::TaskKind::Extractive);
  if (examples.empty()) throw Error(Errc::EmptyCorpus, "no examples");
  NoGradGuard guard;
  double total = 0.0;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const model::Batch batch = model::make_batch(examples.subspan(i, 1), pad_id);
    model::ForwardContext ctx;
    const Tensor<Scalar> scores = model::ext_forward(m, batch, ctx);
    total += static_cast<double>(model::ext_loss(scores, batch.labels, batch.sentence_pad_mask).item());
  }
  return total / static_cast<double>(examples.size());
}

#define SUMFORGE_INSTANTIATE_TRAIN(S)                                                                      \
  template void adam_step<S>(std::span<S>, std::span<const S>, AdamMoments<S>&, double, const AdamHyper&);  \
  template class Adam<S>;                                                                                   \
  template double clip_gradients<S>(std::span<Tensor<S>>, double);                                          \
  template ParameterPartition<S> partition_parameters<S>(const model::SummarizationModel<S>&);              \
  template TrainResult train_ext<S>(std::span<const tokenize::TokenizedExample>,                           \
                                    model::SummarizationModel<S>&, const TrainConfig&);                    \
  template TrainResult train_abs<S>(std::span<const tokenize::TokenizedExample>,                           \
                                    model::SummarizationModel<S>&, const TrainConfig&);                    \
  template PrefitResult prefit_encoder<S>(std::span<const tokenize::TokenizedExample>,                     \
                                          model::SummarizationModel<S>&, const PrefitConfig&);             \
  template double teacher_forced_accuracy<S>(const model::SummarizationModel<S>&,                          \
                                             std::span<const tokenize::TokenizedExample>, std::int32_t);   \
  template double evaluate_ext_loss<S>(const model::SummarizationModel<S>&,                                \
                                       std::span<const tokenize::TokenizedExample>, std::int32_t);

SUMFORGE_INSTANTIATE_TRAIN(float)
SUMFORGE_INSTANTIATE_TRAIN(double)

#undef SUMFORGE_INSTANTIATE_TRAIN

}  // namespace sumforge::train
