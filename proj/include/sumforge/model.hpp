#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sumforge/rng.hpp"
#include "sumforge/tensor.hpp"
#include "sumforge/tokenize.hpp"

// Transformer encoder with interval segment embeddings, the sigmoid
// sentence head over [CLS] positions, and the causal decoder. The four
// variants (BertSumExt, BertSumAbs, TransformerExt, TransformerAbs) are
// the two task kinds crossed with `pretrained_encoder`.
namespace sumforge::model {

enum class TaskKind { Extractive, Abstractive };

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t d_ff = 256;
  std::size_t n_enc_layers = 6;
  std::size_t n_dec_layers = 6;
  std::size_t max_positions = 512;
  double dropout = 0.1;
  bool pretrained_encoder = false;

  /// Throws InvalidConfig.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

const char* task_name(TaskKind kind) noexcept;  // "ext" / "abs"
TaskKind parse_task(std::string_view name);     // throws ConfigError
std::string variant_name(TaskKind kind, bool pretrained_encoder);

/// Dropout switch plus the stream dropout masks are drawn from.
struct ForwardContext {
  bool train = false;
  CounterRng rng{0};

  std::uint64_t next_seed() noexcept { return rng.next_u64(); }
};

template <typename Scalar>
struct Linear {
  Tensor<Scalar> weight;  // [in, out]
  Tensor<Scalar> bias;    // [out]
  Tensor<Scalar> operator()(const Tensor<Scalar>& x) const { return add(matmul(x, weight), bias); }
};

template <typename Scalar>
struct Norm {
  Tensor<Scalar> gamma;
  Tensor<Scalar> beta;
  Tensor<Scalar> operator()(const Tensor<Scalar>& x) const { return layer_norm(x, gamma, beta, 1e-6); }
};

template <typename Scalar>
struct Attention {
  Linear<Scalar> query;
  Linear<Scalar> key;
  Linear<Scalar> value;
  Linear<Scalar> output;
  std::size_t heads = 1;
};

template <typename Scalar>
struct FeedForward {
  Linear<Scalar> inner;
  Linear<Scalar> outer;
};

template <typename Scalar>
struct EncoderLayer {
  Norm<Scalar> attn_norm;
  Attention<Scalar> self_attn;
  Norm<Scalar> ffn_norm;
  FeedForward<Scalar> ffn;
};

template <typename Scalar>
struct DecoderLayer {
  Norm<Scalar> self_attn_norm;
  Attention<Scalar> self_attn;
  Norm<Scalar> cross_attn_norm;
  Attention<Scalar> cross_attn;
  Norm<Scalar> ffn_norm;
  FeedForward<Scalar> ffn;
};

template <typename Scalar>
struct Encoder {
  ModelConfig config;
  Tensor<Scalar> token_embedding;     // [V, d]
  Tensor<Scalar> position_embedding;  // [P, d]
  Tensor<Scalar> segment_embedding;   // [2, d]
  std::vector<EncoderLayer<Scalar>> layers;
  Norm<Scalar> final_norm;
};

template <typename Scalar>
struct ExtHead {
  Linear<Scalar> classifier;  // [d, 1]
};

template <typename Scalar>
struct Decoder {
  ModelConfig config;
  Tensor<Scalar> token_embedding;  // [V, d], also the transposed output projection
  Tensor<Scalar> position_embedding;
  std::vector<DecoderLayer<Scalar>> layers;
  Norm<Scalar> final_norm;
};

template <typename Scalar>
using NamedParameters = std::vector<std::pair<std::string, Tensor<Scalar>>>;

/// Owns every parameter by name; the typed structs above alias them.
/// Move-only: use clone() for an independent copy.
template <typename Scalar>
class SummarizationModel {
 public:
  static SummarizationModel build(TaskKind kind, const ModelConfig& config, std::uint64_t seed);

  SummarizationModel(SummarizationModel&&) noexcept = default;
  SummarizationModel& operator=(SummarizationModel&&) noexcept = default;
  SummarizationModel(const SummarizationModel&) = delete;
  SummarizationModel& operator=(const SummarizationModel&) = delete;

  TaskKind kind() const noexcept { return kind_; }
  const ModelConfig& config() const noexcept { return config_; }
  std::string variant() const { return variant_name(kind_, config_.pretrained_encoder); }
  void set_pretrained_encoder(bool value) noexcept;

  const Encoder<Scalar>& encoder() const noexcept { return encoder_; }
  const ExtHead<Scalar>& ext_head() const;  // throws ModelKindMismatch
  const Decoder<Scalar>& decoder() const;   // throws ModelKindMismatch

  /// Sorted by name.
  const NamedParameters<Scalar>& parameters() const noexcept { return params_; }
  Tensor<Scalar> parameter(std::string_view name) const;  // throws InvalidArgument
  std::size_t parameter_count() const noexcept;

  SummarizationModel clone() const;
  /// Same architecture and values in another precision.
  template <typename Other>
  SummarizationModel<Other> cast() const;

 private:
  SummarizationModel() = default;
  void wire();

  TaskKind kind_ = TaskKind::Extractive;
  ModelConfig config_;
  NamedParameters<Scalar> params_;
  Encoder<Scalar> encoder_;
  ExtHead<Scalar> ext_head_;
  Decoder<Scalar> decoder_;
};

/// Parameter names and shapes `build` creates for a kind and config.
std::vector<std::pair<std::string, Shape>> parameter_layout(TaskKind kind, const ModelConfig& config);
/// Encoder-only subset (names prefixed "encoder.").
std::vector<std::pair<std::string, Shape>> encoder_layout(const ModelConfig& config);

bool is_encoder_parameter(std::string_view name) noexcept;

// -- Inputs -------------------------------------------------------------------

/// Token grid for the encoder. pad_mask[i] == 1 marks padding.
struct EncoderInput {
  std::size_t batch = 0;
  std::size_t length = 0;
  std::vector<std::int32_t> src_ids;
  std::vector<std::int32_t> segment_ids;
  std::vector<std::uint8_t> pad_mask;
};

/// Batch padded to its longest source, sentence count and target.
struct Batch {
  EncoderInput source;
  std::size_t sentences = 0;
  std::vector<std::int32_t> cls_positions;
  std::vector<std::uint8_t> sentence_pad_mask;
  std::vector<std::uint8_t> labels;
  std::size_t tgt_length = 0;
  std::vector<std::int32_t> tgt_ids;
  std::vector<std::uint8_t> tgt_pad_mask;
};

Batch make_batch(std::span<const tokenize::TokenizedExample> examples, std::int32_t pad_id);

// -- Forward ------------------------------------------------------------------

/// Multi-head attention. mask has B * Lq * Lk bytes, 1 = blocked. When
/// `probs_out` is set it receives the post-softmax weights [B, H, Lq, Lk].
template <typename Scalar>
Tensor<Scalar> attention(const Attention<Scalar>& attn, const Tensor<Scalar>& query_input,
                         const Tensor<Scalar>& memory, std::span<const std::uint8_t> mask,
                         double dropout_p, ForwardContext& ctx, Tensor<Scalar>* probs_out = nullptr);

/// [B, L, d] hidden states.
template <typename Scalar>
Tensor<Scalar> encode(const Encoder<Scalar>& encoder, const EncoderInput& input, ForwardContext& ctx);

/// Per-sentence probabilities [B, S].
template <typename Scalar>
Tensor<Scalar> ext_scores(const ExtHead<Scalar>& head, const Tensor<Scalar>& hidden,
                          std::span<const std::int32_t> cls_positions, std::size_t sentences);

/// Logits [B, T, V] under a causal mask; src_pad_mask has B * L bytes.
template <typename Scalar>
Tensor<Scalar> decode_teacher_forced(const Decoder<Scalar>& decoder, const Tensor<Scalar>& enc_hidden,
                                     std::span<const std::int32_t> tgt_ids, std::size_t tgt_length,
                                     std::span<const std::uint8_t> src_pad_mask, ForwardContext& ctx);

/// Mean BCE over sentences whose pad mask is 0.
template <typename Scalar>
Tensor<Scalar> ext_loss(const Tensor<Scalar>& scores, std::span<const std::uint8_t> labels,
                        std::span<const std::uint8_t> sentence_pad_mask);

/// Label-smoothed NLL of tgt[t + 1] given logits at t, over non-pad targets.
template <typename Scalar>
Tensor<Scalar> abs_loss(const Tensor<Scalar>& logits, std::span<const std::int32_t> tgt_ids,
                        std::span<const std::uint8_t> tgt_pad_mask, double smoothing = 0.1);

/// Scores for a batch through an extractive model.
template <typename Scalar>
Tensor<Scalar> ext_forward(const SummarizationModel<Scalar>& model, const Batch& batch, ForwardContext& ctx);

/// Teacher-forced logits for a batch through an abstractive model.
template <typename Scalar>
Tensor<Scalar> abs_forward(const SummarizationModel<Scalar>& model, const Batch& batch, ForwardContext& ctx);

}  // namespace sumforge::model
