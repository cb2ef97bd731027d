#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "hdapprox/laplace.hpp"
#include "hdapprox/model.hpp"

namespace hdapprox {

// ---------------------------------------------------------------------------
// Assumption audit

struct AuditOptions {
  std::size_t samples = 100;
  std::uint64_t seed = 0;
  // Radius of the curvature ball; 0 selects gamma_n.
  double ball_radius = 0.0;
  // Cap on the number of (l, m) fourth-derivative slices examined per point.
  std::size_t max_slices = 50;
  // Proposal draws for the tail-mass proxy; 0 skips it.
  std::size_t tail_draws = 0;
};

/// Measured counterparts of the curvature and smoothness conditions behind
/// the Laplace error bounds. Eigenvalues are of -g'' and are divided by n.
struct AssumptionReport {
  double eta1 = 0.0;              // min eigenvalue / n over the ball
  double eta2 = 0.0;              // max eigenvalue / n over the ball
  double inf_norm_invsqrt = 0.0;  // ||(-g''(mode))^{-1/2}||_inf
  double c3_hat = 0.0;  // log_n max |eig| of third slices at the mode; -inf if zero
  double c4_hat = 0.0;  // log_n max |eig| of fourth slices near the mode; -inf if zero
  double gamma_n = 0.0;           // sqrt(log(n) p / n)
  double ball_radius = 0.0;
  std::size_t samples = 0;
  bool finite_difference_slices = false;
  std::size_t third_slices_checked = 0;
  std::size_t fourth_slices_checked = 0;
  // Importance-weighted posterior mass outside the ball; a proxy for the
  // tail-mass condition, NaN when not computed.
  double tail_mass_proxy = std::numeric_limits<double>::quiet_NaN();
  double tail_mass_se = std::numeric_limits<double>::quiet_NaN();
};

/// Samples `samples` points uniformly in the ball around the mode and records
/// the extreme eigenvalues of -g''. Third slices are taken at the mode;
/// fourth slices at the mode and 10 points of the sqrt(2)-enlarged ball.
/// Models without analytic slices are differenced numerically and the report
/// is flagged. Deterministic per seed.
AssumptionReport audit_assumptions(const LogTargetModel& model, const ModeResult& mode,
                                   const AuditOptions& opts = {});

/// Fixed field names: eta1, eta2, inf_norm_invsqrt, c3_hat, c4_hat, gamma_n,
/// samples, plus ball_radius, finite_difference_slices, tail_mass_proxy and
/// the unchecked higher orders. Infinite or NaN values become null.
void to_json(nlohmann::json& j, const AssumptionReport& report);

/// Finite-difference slices of the Hessian, used when a model has none.
Matrix fd_third_slice(const LogTargetModel& model, const Vector& theta, std::size_t l);
Matrix fd_fourth_slice(const LogTargetModel& model, const Vector& theta, std::size_t l,
                       std::size_t m);

// ---------------------------------------------------------------------------
// Predicted rates

enum class RateSource {
  kLaplaceGeneral,  // joint Laplace bound in terms of c_inf, c3, c4
  kLogistic,        // p^2 log(n) / n
  kGlm,             // p^3 log(n) / n
  kMarginal,        // marginal Laplace bound with horizon zeta
  kSaddlepoint,     // saddlepoint bound, same form as kLaplaceGeneral
};

std::string to_string(RateSource source);
RateSource rate_source_from_string(const std::string& name);

struct RatePrediction {
  RateSource source = RateSource::kLogistic;
  double c_inf = 0.5;
  double c3 = 1.0;
  double c4 = 1.0;
  double zeta = 6.0;

  /// Exponents of the dominant term for large n (ties go to the larger
  /// p exponent).
  double exponent_p() const;
  double exponent_n() const;
  bool includes_log_n() const;
};

double predicted_rate(const RatePrediction& pred, double n, double p);

// ---------------------------------------------------------------------------
// Exponent fitting

struct ScalingCell {
  double n = 0.0;
  double p = 0.0;
  double error = 0.0;
  // Monte Carlo standard error of log(error); 0 if the oracle is exact.
  double log_error_se = 0.0;
};

struct ScalingFit {
  double intercept = 0.0;
  double a = 0.0;  // exponent of p (0 for n-only fits)
  double b = 0.0;  // exponent of n
  double log_log_n = std::numeric_limits<double>::quiet_NaN();
  double se_a = 0.0;
  double se_b = 0.0;
  // Spread of (a, b) induced by the Monte Carlo error of the oracle.
  double mc_se_a = 0.0;
  double mc_se_b = 0.0;
  double r2 = 0.0;
  double residual = 0.0;  // residual standard deviation of log error
  std::size_t cells = 0;
  bool n_only = false;
};

/// Least squares log(error) = c + a log p + b log n [+ d log log n].
/// Throws InsufficientSpread unless there are at least 6 cells with 2
/// distinct n and 2 distinct p.
ScalingFit fit_scaling(const std::vector<ScalingCell>& cells,
                       bool with_log_log_n = false);

/// log(error) = c + b log n for fixed-p runs. Needs at least 3 cells and 2
/// distinct n.
ScalingFit fit_scaling_n(const std::vector<ScalingCell>& cells);

void to_json(nlohmann::json& j, const ScalingFit& fit);

}  // namespace hdapprox
