#pragma once

#include <Eigen/Dense>

#include <limits>
#include <stdexcept>
#include <string>

namespace srmpc {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Tolerances shared by the solvers and the set computations.
namespace tol {
inline constexpr double feasibility = 1e-8;
inline constexpr double optimality = 1e-8;
inline constexpr double lp_objective = 1e-9;  // redundancy removal and set equality
}  // namespace tol

inline constexpr double kInf = std::numeric_limits<double>::infinity();

enum class ErrorCode {
  EmptyPolytope,
  UnboundedDirection,
  DimensionTooHigh,
  NotConverged,
  EmptySet,
  MaxIterations,
  IllConditioned,
  NotStabilizable,
  InvalidArgument,
  TerminalEmpty,
  RiccatiFailure,
  Infeasible,
  GridTooCoarse,
  InfeasiblePoint,
  ConstraintQpInfeasible,
  PostCheckFailed,
  IncumbentInfeasible,
  AlphaUnderflow,
  DegenerateSequence,
  InfeasibleState,
  NoMonotoneFit,
  SafetyViolation,
  Io,
};

inline const char* to_string(ErrorCode c) {
  switch (c) {
    case ErrorCode::EmptyPolytope: return "EmptyPolytope";
    case ErrorCode::UnboundedDirection: return "UnboundedDirection";
    case ErrorCode::DimensionTooHigh: return "DimensionTooHigh";
    case ErrorCode::NotConverged: return "NotConverged";
    case ErrorCode::EmptySet: return "EmptySet";
    case ErrorCode::MaxIterations: return "MaxIterations";
    case ErrorCode::IllConditioned: return "IllConditioned";
    case ErrorCode::NotStabilizable: return "NotStabilizable";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::TerminalEmpty: return "TerminalEmpty";
    case ErrorCode::RiccatiFailure: return "RiccatiFailure";
    case ErrorCode::Infeasible: return "Infeasible";
    case ErrorCode::GridTooCoarse: return "GridTooCoarse";
    case ErrorCode::InfeasiblePoint: return "InfeasiblePoint";
    case ErrorCode::ConstraintQpInfeasible: return "ConstraintQpInfeasible";
    case ErrorCode::PostCheckFailed: return "PostCheckFailed";
    case ErrorCode::IncumbentInfeasible: return "IncumbentInfeasible";
    case ErrorCode::AlphaUnderflow: return "AlphaUnderflow";
    case ErrorCode::DegenerateSequence: return "DegenerateSequence";
    case ErrorCode::InfeasibleState: return "InfeasibleState";
    case ErrorCode::NoMonotoneFit: return "NoMonotoneFit";
    case ErrorCode::SafetyViolation: return "SafetyViolation";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, const std::string& what) {
  if (!cond) fail(ErrorCode::InvalidArgument, what);
}

}  // namespace srmpc
