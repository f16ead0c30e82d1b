#include "sumforge/error.hpp"

namespace sumforge {

const char* to_string(Errc code) noexcept {
  switch (code) {
    case Errc::UnsupportedEncoding: return "unsupported encoding";
    case Errc::InvalidUtf8: return "invalid utf-8";
    case Errc::MissingSummary: return "missing summary";
    case Errc::EmptyArticle: return "empty article";
    case Errc::UnpairedFile: return "unpaired file";
    case Errc::IoError: return "i/o error";
    case Errc::DuplicateToken: return "duplicate token";
    case Errc::MissingSpecial: return "missing special token";
    case Errc::TooLong: return "too long";
    case Errc::CorruptShard: return "corrupt shard";
    case Errc::IdOutOfRange: return "id out of range";
    case Errc::ShapeMismatch: return "shape mismatch";
    case Errc::InvalidAxis: return "invalid axis";
    case Errc::NotScalar: return "not a scalar";
    case Errc::GraphCycle: return "graph cycle";
    case Errc::InvalidConfig: return "invalid config";
    case Errc::PositionOverflow: return "position overflow";
    case Errc::IndexOutOfRange: return "index out of range";
    case Errc::AllMasked: return "all masked";
    case Errc::FormatVersionMismatch: return "format version mismatch";
    case Errc::InvalidArgument: return "invalid argument";
    case Errc::EmptyCorpus: return "empty corpus";
    case Errc::ConfigError: return "config error";
    case Errc::NoMaskedPositions: return "no masked positions";
    case Errc::EmptyDocument: return "empty document";
    case Errc::ModelKindMismatch: return "model kind mismatch";
    case Errc::LengthMismatch: return "length mismatch";
  }
  return "unknown error";
}

Error::Error(Errc code, const std::string& detail)
    : std::runtime_error(detail.empty() ? std::string(to_string(code))
                                        : std::string(to_string(code)) + ": " + detail),
      code_(code) {}

}  // namespace sumforge
