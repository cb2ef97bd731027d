#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "hdapprox/laplace.hpp"
#include "hdapprox/model.hpp"

namespace hdapprox {

enum class OracleMethod { kQuadrature, kImportanceSampling, kClosedForm };

std::string to_string(OracleMethod method);

struct OracleEstimate {
  double value = 0.0;      // log of the integral (or log density)
  double std_error = 0.0;  // 0 for deterministic methods
  OracleMethod method = OracleMethod::kClosedForm;
  std::size_t cost = 0;    // target evaluations
  // Importance sampling only: effective sample size of the weights.
  double effective_sample_size = 0.0;
};

/// log of the integral of exp{g - g(mode)} by iterated adaptive Gauss-Kronrod
/// quadrature on the box mode +- half_width_sds posterior SDs per axis. A side
/// of the box is pushed outward while the integrand on it is still above
/// 1e-20, so heavy-tailed log-concave targets are not truncated.
/// Throws DimensionTooLarge for p > 3 and ToleranceNotReached when the error
/// estimate stays above the target.
OracleEstimate quadrature_log_normalizer(const LogTargetModel& model,
                                         const ModeResult& mode,
                                         double half_width_sds = 12.0,
                                         double rel_tol = 1e-10);

/// Exact log marginal density of coordinate `interest_index` at psi:
/// log of the integral of exp{g(psi, lambda) - g(mode)} over the nuisance
/// block, minus `log_normalizer` (from quadrature_log_normalizer). The
/// nuisance block may have at most 2 coordinates.
OracleEstimate quadrature_log_marginal(const LogTargetModel& model,
                                       const ModeResult& mode,
                                       std::size_t interest_index, double psi,
                                       double log_normalizer,
                                       double half_width_sds = 12.0,
                                       double rel_tol = 1e-10);

/// Importance-sampling estimate of the same integral with a Gaussian proposal
/// N(mode, scale^2 (-g''(mode))^{-1}). The standard error is the delta-method
/// error of the log of the weight mean. Deterministic per seed.
/// Throws DegenerateWeights when the effective sample size is below 50.
OracleEstimate importance_log_normalizer(const LogTargetModel& model,
                                         const ModeResult& mode,
                                         std::size_t draws, double scale,
                                         std::uint64_t seed);

enum class ClosedFormFamily { kGamma, kNormal, kExpMeansConditional };

ClosedFormFamily closed_form_family_from_string(const std::string& name);

struct ClosedFormParams {
  // gamma: Gamma(shape, rate)
  double shape = 1.0;
  double rate = 1.0;
  // normal: N(mean, variance)
  double mean = 0.0;
  double variance = 1.0;
  // exp-means-conditional: u1 given u1 + u2 = total, m per group
  std::size_t per_group = 1;
  double total = 1.0;
};

/// Exact log density at s. Throws OutOfSupport outside the support.
double closed_form_density(ClosedFormFamily family, const ClosedFormParams& params,
                           double s);

}  // namespace hdapprox
