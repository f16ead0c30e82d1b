#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "sumforge/checkpoint.hpp"
#include "sumforge/model.hpp"
#include "sumforge/tokenize.hpp"

namespace sumforge::train {

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First and second moments of one parameter array.
template <typename Scalar>
struct AdamMoments {
  std::vector<Scalar> m;
  std::vector<Scalar> v;
  std::uint64_t step = 0;
};

/// One bias-corrected Adam update. Moments are sized on first use.
template <typename Scalar>
void adam_step(std::span<Scalar> params, std::span<const Scalar> grads, AdamMoments<Scalar>& state,
               double lr, const AdamHyper& hyper = {});

/// Adam over a fixed set of named tensors, reading their grad buffers.
template <typename Scalar>
class Adam {
 public:
  Adam(model::NamedParameters<Scalar> params, AdamHyper hyper = {});

  void step(double lr);
  std::uint64_t steps() const noexcept { return steps_; }
  const model::NamedParameters<Scalar>& parameters() const noexcept { return params_; }

 private:
  model::NamedParameters<Scalar> params_;
  std::vector<AdamMoments<Scalar>> moments_;
  AdamHyper hyper_;
  std::uint64_t steps_ = 0;
};

/// base_lr * min(step^-0.5, step * warmup^-1.5); step >= 1.
double lr_schedule(std::uint64_t step, double base_lr, std::uint64_t warmup);

/// Rescales all gradients when their global L2 norm exceeds max_norm.
/// Returns the norm before clipping.
template <typename Scalar>
double clip_gradients(std::span<Tensor<Scalar>> params, double max_norm);

struct TrainConfig {
  double base_lr_encoder = 2e-3;
  double base_lr_decoder = 0.1;
  std::uint64_t warmup_encoder = 1;
  std::uint64_t warmup_decoder = 1;
  std::size_t batch_size = 8;
  std::uint64_t max_steps = 0;
  double grad_clip_norm = 1.0;
  std::uint64_t seed = 0;
  std::uint64_t eval_every = 0;           // 0: checkpoint only at the end
  std::filesystem::path checkpoint_dir;  // empty: keep checkpoints in memory only
  double label_smoothing = 0.1;
  std::int32_t pad_id = 0;

  /// Throws ConfigError.
  void validate() const;
};

/// Warmups at 20% (encoder) and 10% (decoder) of max_steps.
TrainConfig default_train_config(std::uint64_t max_steps);

struct TraceRow {
  std::uint64_t step = 0;
  double loss = 0.0;
  double lr_encoder = 0.0;
  double lr_decoder = 0.0;

  friend bool operator==(const TraceRow&, const TraceRow&) = default;
};

struct TrainResult {
  std::vector<TraceRow> trace;
  checkpoint::Checkpoint final_checkpoint;
  std::vector<std::filesystem::path> written;
};

std::string format_loss_trace(std::span<const TraceRow> trace);
void write_loss_trace(const std::filesystem::path& path, std::span<const TraceRow> trace);

/// Disjoint split used by the two abstractive optimizers.
template <typename Scalar>
struct ParameterPartition {
  model::NamedParameters<Scalar> encoder;
  model::NamedParameters<Scalar> decoder;
};

template <typename Scalar>
ParameterPartition<Scalar> partition_parameters(const model::SummarizationModel<Scalar>& model);

/// Seeded epoch shuffling; batches wrap across epoch boundaries.
class BatchOrder {
 public:
  BatchOrder(std::size_t count, std::size_t batch_size, std::uint64_t seed);
  std::vector<std::size_t> next();

 private:
  void reshuffle();

  std::size_t count_;
  std::size_t batch_size_;
  CounterRng rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

template <typename Scalar>
TrainResult train_ext(std::span<const tokenize::TokenizedExample> examples,
                      model::SummarizationModel<Scalar>& model, const TrainConfig& config);

template <typename Scalar>
TrainResult train_abs(std::span<const tokenize::TokenizedExample> examples,
                      model::SummarizationModel<Scalar>& model, const TrainConfig& config);

struct PrefitConfig {
  std::uint64_t steps = 500;
  double mask_prob = 0.15;
  std::size_t batch_size = 8;
  double base_lr = 2e-3;
  std::uint64_t warmup = 50;
  double grad_clip_norm = 1.0;
  std::uint64_t seed = 0;
  tokenize::SpecialIds specials;
};

struct PrefitResult {
  std::vector<TraceRow> trace;
  checkpoint::Checkpoint encoder;  // reconstruction head excluded
};

/// Masked-token reconstruction on the encoder of `model`.
template <typename Scalar>
PrefitResult prefit_encoder(std::span<const tokenize::TokenizedExample> examples,
                            model::SummarizationModel<Scalar>& model, const PrefitConfig& config);

/// Fraction of non-pad target positions whose argmax logit is the next gold token.
template <typename Scalar>
double teacher_forced_accuracy(const model::SummarizationModel<Scalar>& model,
                               std::span<const tokenize::TokenizedExample> examples, std::int32_t pad_id = 0);

/// Mean extractive loss over examples without dropout.
template <typename Scalar>
double evaluate_ext_loss(const model::SummarizationModel<Scalar>& model,
                         std::span<const tokenize::TokenizedExample> examples, std::int32_t pad_id = 0);

}  // namespace sumforge::train
