#pragma once

#include <stdexcept>
#include <string>

namespace hdapprox {

// Base class for every failure raised by the library. Callers that only care
// about "did the numerics work" can catch this.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NonFiniteEvaluation : public NumericalError {
 public:
  NonFiniteEvaluation(const std::string& what, std::size_t coordinate)
      : NumericalError(what), coordinate_(coordinate) {}
  std::size_t coordinate() const { return coordinate_; }

 private:
  std::size_t coordinate_;
};

class MaxIterations : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

// -g'' could not be made positive definite within the jitter cap.
class IndefiniteCurvature : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

// Saddlepoint iterates could not be kept inside the CGF domain.
class DomainEscape : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class InverseMapDiverged : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class OutOfSupport : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class DimensionTooLarge : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class ToleranceNotReached : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class DegenerateWeights : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class InsufficientSpread : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

// Invalid experiment configuration (unknown field, bad value, ...).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace hdapprox
