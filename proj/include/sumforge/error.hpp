#pragma once

#include <stdexcept>
#include <string>

namespace sumforge {

enum class Errc {
  // ingest
  UnsupportedEncoding,
  InvalidUtf8,
  MissingSummary,
  EmptyArticle,
  UnpairedFile,
  IoError,
  // tokenize
  DuplicateToken,
  MissingSpecial,
  TooLong,
  CorruptShard,
  IdOutOfRange,
  // tensor
  ShapeMismatch,
  InvalidAxis,
  NotScalar,
  GraphCycle,
  // model
  InvalidConfig,
  PositionOverflow,
  IndexOutOfRange,
  AllMasked,
  FormatVersionMismatch,
  InvalidArgument,
  // train
  EmptyCorpus,
  ConfigError,
  NoMaskedPositions,
  // infer
  EmptyDocument,
  ModelKindMismatch,
  // rouge
  LengthMismatch,
};

const char* to_string(Errc code) noexcept;

/// Library-wide exception. `code()` identifies the failure class.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& detail);

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace sumforge
