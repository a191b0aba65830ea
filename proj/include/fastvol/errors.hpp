#ifndef FASTVOL_ERRORS_HPP
#define FASTVOL_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace fastvol {

// Error taxonomy. The CLI maps classes to exit codes:
// Config -> 2, Domain -> 3, Numeric -> 4.
enum class ErrorCode {
  // config / input
  ConfigError,
  UnknownModel,
  BadParameter,
  // domain contract violations
  InvalidAlpha,
  EllipticityViolation,
  PeriodicityViolation,
  DimensionMismatch,
  GridMismatch,
  DomainError,
  NotCoercive,
  NotXIndependent,
  NotOTM,
  OutOfBounds,
  StepTooLarge,
  // numerical failures
  NoConvergence,
  NegativeDensity,
  NonPositiveEigenfunction,
  BoundViolation,
  NegativeHbar,
  DegenerateRate,
  NonFinite,
  CoefficientError,
  ZeroHits,
  UnstableStep,
};

enum class ErrorClass { Config = 2, Domain = 3, Numeric = 4 };

constexpr ErrorClass error_class(ErrorCode c) {
  switch (c) {
    case ErrorCode::ConfigError:
    case ErrorCode::UnknownModel:
    case ErrorCode::BadParameter:
      return ErrorClass::Config;
    case ErrorCode::InvalidAlpha:
    case ErrorCode::EllipticityViolation:
    case ErrorCode::PeriodicityViolation:
    case ErrorCode::DimensionMismatch:
    case ErrorCode::GridMismatch:
    case ErrorCode::DomainError:
    case ErrorCode::NotCoercive:
    case ErrorCode::NotXIndependent:
    case ErrorCode::NotOTM:
    case ErrorCode::OutOfBounds:
    case ErrorCode::StepTooLarge:
      return ErrorClass::Domain;
    default:
      return ErrorClass::Numeric;
  }
}

const char* error_name(ErrorCode c);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(error_name(code)) + ": " + what), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

}  // namespace fastvol

#endif
