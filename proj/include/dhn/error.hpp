#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dhn {

/// Every failure raised by the library carries one of these kinds so that
/// callers (the CLI in particular) can map them onto exit codes without
/// parsing messages.
enum class ErrorKind {
  InvalidConfig,
  DuplicateId,
  DanglingReference,
  MassImbalance,
  NonTreeRouting,
  ZeroMassFlow,
  HorizonTooShort,
  EmptyPath,
  ShapeMismatch,
  InsufficientData,
  DegenerateProblem,
  NotConverged,
  MapeUndefined,
  R2Undefined,
  ParseError,
  InfeasibleBounds,
  Infeasible,
  MaxIterations,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::DuplicateId: return "DuplicateId";
    case ErrorKind::DanglingReference: return "DanglingReference";
    case ErrorKind::MassImbalance: return "MassImbalance";
    case ErrorKind::NonTreeRouting: return "NonTreeRouting";
    case ErrorKind::ZeroMassFlow: return "ZeroMassFlow";
    case ErrorKind::HorizonTooShort: return "HorizonTooShort";
    case ErrorKind::EmptyPath: return "EmptyPath";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::InsufficientData: return "InsufficientData";
    case ErrorKind::DegenerateProblem: return "DegenerateProblem";
    case ErrorKind::NotConverged: return "NotConverged";
    case ErrorKind::MapeUndefined: return "MapeUndefined";
    case ErrorKind::R2Undefined: return "R2Undefined";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::InfeasibleBounds: return "InfeasibleBounds";
    case ErrorKind::Infeasible: return "Infeasible";
    case ErrorKind::MaxIterations: return "MaxIterations";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

namespace tol {
// Shared numerical tolerances.
inline constexpr double kMassBalanceRel = 1e-9;
inline constexpr double kPartition = 1e-9;
inline constexpr double kKernelSum = 1e-12;
inline constexpr double kNormalization = 1e-10;
inline constexpr double kIntegerSnap = 1e-9;
}  // namespace tol

}  // namespace dhn
