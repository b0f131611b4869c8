#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dyadic {

enum class ErrorKind {
  InvalidModel,
  IndexOutOfRange,
  DivergentSeries,
  Inconclusive,
  OverflowRisk,
  SimulationDiverged,
  ConfigError,
  DegenerateInput,
  InsufficientData,
  NoConvergence,
  NegativeMass,
  TermLimitExceeded,
  EffectiveSampleCollapse,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidModel: return "InvalidModel";
    case ErrorKind::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorKind::DivergentSeries: return "DivergentSeries";
    case ErrorKind::Inconclusive: return "Inconclusive";
    case ErrorKind::OverflowRisk: return "OverflowRisk";
    case ErrorKind::SimulationDiverged: return "SimulationDiverged";
    case ErrorKind::ConfigError: return "ConfigError";
    case ErrorKind::DegenerateInput: return "DegenerateInput";
    case ErrorKind::InsufficientData: return "InsufficientData";
    case ErrorKind::NoConvergence: return "NoConvergence";
    case ErrorKind::NegativeMass: return "NegativeMass";
    case ErrorKind::TermLimitExceeded: return "TermLimitExceeded";
    case ErrorKind::EffectiveSampleCollapse: return "EffectiveSampleCollapse";
  }
  return "Unknown";
}

/// Process exit status used by the CLI for each error kind.
constexpr int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::ConfigError: return 2;
    case ErrorKind::SimulationDiverged: return 3;
    case ErrorKind::InsufficientData: return 4;
    default: return 1;
  }
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace dyadic
