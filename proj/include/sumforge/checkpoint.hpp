#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sumforge/model.hpp"

// Checkpoint file layout (all integers little-endian):
//   "SUMF" | u32 version | u32 json_length | json bytes
//   then per parameter: u32 name_length | name | u32 rank | u32 dims[rank] | f32 data[]
namespace sumforge::checkpoint {

inline constexpr std::uint32_t kFormatVersion = 1;

enum class Kind { Extractive, Abstractive, Encoder };

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<float> data;

  friend bool operator==(const NamedArray&, const NamedArray&) = default;
};

struct Checkpoint {
  Kind kind = Kind::Extractive;
  model::ModelConfig config;
  std::uint64_t step = 0;
  std::uint64_t seed = 0;
  std::vector<NamedArray> arrays;  // sorted by name
};

std::string serialize(const Checkpoint& ckpt);
/// Throws FormatVersionMismatch, IoError (truncation) or ShapeMismatch.
Checkpoint deserialize(std::string_view bytes);

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);

template <typename Scalar>
Checkpoint snapshot(const model::SummarizationModel<Scalar>& model, std::uint64_t step = 0,
                    std::uint64_t seed = 0);
/// Encoder parameters only, kind Encoder.
template <typename Scalar>
Checkpoint encoder_snapshot(const model::SummarizationModel<Scalar>& model, std::uint64_t step = 0,
                            std::uint64_t seed = 0);

template <typename Scalar>
void save_checkpoint(const model::SummarizationModel<Scalar>& model, const std::filesystem::path& path,
                     std::uint64_t step = 0, std::uint64_t seed = 0);

/// Rebuilds an extractive or abstractive model. Throws ModelKindMismatch for
/// encoder-only checkpoints.
template <typename Scalar>
model::SummarizationModel<Scalar> to_model(const Checkpoint& ckpt);
template <typename Scalar>
model::SummarizationModel<Scalar> load_checkpoint(const std::filesystem::path& path);

/// Copies encoder.* arrays into `model` and marks it pretrained. Every
/// encoder parameter must be present with a matching shape.
template <typename Scalar>
void load_encoder(model::SummarizationModel<Scalar>& model, const Checkpoint& ckpt);

model::TaskKind task_of(Kind kind);
const char* kind_name(Kind kind) noexcept;

}  // namespace sumforge::checkpoint
