#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace optomech {

enum class ErrorKind {
  InvalidDimension,
  InvalidIndex,
  InvalidEmbedding,
  InvalidArgument,
  SpaceMismatch,
  SpaceShape,
  WrongKind,
  NumericValidity,
  ModelRegime,
  TruncationTooSmall,
  Domain,
  InvalidTarget,
  IntegratorAccuracy,
  IllPosed,
  Convergence,
  Config,
  Io,
};

std::string_view to_string(ErrorKind kind);

// Every library failure is an Error tagged with its kind.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidDimension: return "invalid-dimension";
    case ErrorKind::InvalidIndex: return "invalid-index";
    case ErrorKind::InvalidEmbedding: return "invalid-embedding";
    case ErrorKind::InvalidArgument: return "invalid-argument";
    case ErrorKind::SpaceMismatch: return "space-mismatch";
    case ErrorKind::SpaceShape: return "space-shape";
    case ErrorKind::WrongKind: return "wrong-kind";
    case ErrorKind::NumericValidity: return "numeric-validity";
    case ErrorKind::ModelRegime: return "model-regime";
    case ErrorKind::TruncationTooSmall: return "truncation-too-small";
    case ErrorKind::Domain: return "domain";
    case ErrorKind::InvalidTarget: return "invalid-target";
    case ErrorKind::IntegratorAccuracy: return "integrator-accuracy";
    case ErrorKind::IllPosed: return "ill-posed";
    case ErrorKind::Convergence: return "convergence";
    case ErrorKind::Config: return "config";
    case ErrorKind::Io: return "io";
  }
  return "unknown";
}

}  // namespace optomech
