#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

namespace sceneaware {

enum class Errc {
  WrongLength,
  GapDetected,
  NonFinite,
  DegenerateProjection,
  InvalidHomography,
  MalformedLine,
  DuplicateObservation,
  UnknownScene,
  UnsupportedFormat,
  CorruptImage,
  MissingFeature,
  DimensionMismatch,
  InvalidK,
  NegativeWeight,
  EmptySamples,
  ShapeMismatch,
  NonFiniteGradient,
  EmptyDataset,
  UnregisteredScene,
  NonSmoothLoss,
  TooShort,
  UnlabeledWindow,
  InvalidArgument,
  CheckpointMismatch,
  Io,
  Config,
};

constexpr std::string_view to_string(Errc code) noexcept {
  switch (code) {
    case Errc::WrongLength: return "WrongLength";
    case Errc::GapDetected: return "GapDetected";
    case Errc::NonFinite: return "NonFinite";
    case Errc::DegenerateProjection: return "DegenerateProjection";
    case Errc::InvalidHomography: return "InvalidHomography";
    case Errc::MalformedLine: return "MalformedLine";
    case Errc::DuplicateObservation: return "DuplicateObservation";
    case Errc::UnknownScene: return "UnknownScene";
    case Errc::UnsupportedFormat: return "UnsupportedFormat";
    case Errc::CorruptImage: return "CorruptImage";
    case Errc::MissingFeature: return "MissingFeature";
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::InvalidK: return "InvalidK";
    case Errc::NegativeWeight: return "NegativeWeight";
    case Errc::EmptySamples: return "EmptySamples";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::NonFiniteGradient: return "NonFiniteGradient";
    case Errc::EmptyDataset: return "EmptyDataset";
    case Errc::UnregisteredScene: return "UnregisteredScene";
    case Errc::NonSmoothLoss: return "NonSmoothLoss";
    case Errc::TooShort: return "TooShort";
    case Errc::UnlabeledWindow: return "UnlabeledWindow";
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::CheckpointMismatch: return "CheckpointMismatch";
    case Errc::Io: return "Io";
    case Errc::Config: return "Config";
  }
  return "Unknown";
}

/// Every failure raised by the library. `line()` is set for errors tied to a
/// line of an input file (1-based), zero otherwise.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what, std::size_t line = 0)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code), line_(line) {}

  Errc code() const noexcept { return code_; }
  std::size_t line() const noexcept { return line_; }

 private:
  Errc code_;
  std::size_t line_;
};

}  // namespace sceneaware
