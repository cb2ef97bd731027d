#pragma once

#include <cstddef>
#include <functional>

#include "hdapprox/model.hpp"

namespace hdapprox {

struct SaddleOptions {
  std::size_t max_iter = 200;
  // Convergence when ||K'(t) - s|| <= tol_saddle * (1 + ||s||).
  double tol_saddle = 1e-10;
  std::size_t max_halvings = 200;
};

struct SaddleResult {
  Vector t_hat;
  double k_at_saddle = 0.0;
  Matrix k_hess_chol;  // lower triangular, L L^T = K''(t_hat)
  double log_det_k_hess = 0.0;
  double residual_norm = 0.0;
  std::size_t iterations = 0;
};

/// Newton iteration on K'(t) = s. Each step starts at full length and is
/// halved until the candidate is inside the CGF domain and the residual
/// decreases. Throws DomainEscape when no halving lands inside the domain or
/// the iterates stall with a residual far above tolerance (s outside the
/// range of K'), MaxIterations when the budget runs out. A stall within
/// 1e-6 (1 + ||s||) is rounding in K' and returns with that residual.
SaddleResult solve_saddle(const CumulantModel& cgf, const Vector& s,
                          const Vector& init, const SaddleOptions& opts = {});
SaddleResult solve_saddle(const CumulantModel& cgf, const Vector& s,
                          const SaddleOptions& opts = {});

/// log of exp{K(t) - t's} / ((2 pi)^{p/2} det K''(t)^{1/2}) at the saddlepoint.
double saddlepoint_log_density(const SaddleResult& saddle, const Vector& s);
double saddlepoint_log_density(const CumulantModel& cgf, const Vector& s,
                               const SaddleOptions& opts = {});

struct DoubleSaddleResult {
  Vector t_hat_full;      // joint saddlepoint
  Vector t_tilde_lambda;  // nuisance saddlepoint with t_psi = 0
  double log_det_full = 0.0;
  double log_det_nuisance = 0.0;
  double full_residual = 0.0;
  double nuisance_residual = 0.0;
  double log_cond_density = 0.0;
};

/// Double saddlepoint approximation to the conditional density of the
/// interest component s1 given the remaining components s2. The interest
/// component sits at `interest_index` of the statistic.
DoubleSaddleResult double_saddle_log_conditional(
    const CumulantModel& cgf, double s1, const Vector& s2,
    std::size_t interest_index = 0, const SaddleOptions& opts = {});

/// CGF of the nuisance block with the interest argument pinned to zero:
/// t_lambda -> K(t_psi = 0, t_lambda).
class NuisanceCgf final : public CumulantModel {
 public:
  NuisanceCgf(const CumulantModel& full, std::size_t interest_index);

  std::size_t dim() const override { return full_.dim() - 1; }
  std::size_t sample_size() const override { return full_.sample_size(); }
  double cgf(const Vector& t) const override;
  Vector cgf_gradient(const Vector& t) const override;
  Matrix cgf_hessian(const Vector& t) const override;
  bool in_domain(const Vector& t) const override;

 private:
  const CumulantModel& full_;
  std::size_t index_;
};

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  // A side that is a boundary of the support is exempt from the
  // endpoint-mass check (the density need not vanish there).
  bool lo_is_support_edge = false;
  bool hi_is_support_edge = false;
};

struct Renormalized {
  double log_normalizer = 0.0;   // log of the integral of exp(logdens)
  double quadrature_error = 0.0; // absolute error estimate of that integral,
                                 // relative to the peak-shifted integrand
  bool endpoint_mass_warning = false;
  std::function<double(double)> log_density;  // logdens - log_normalizer
};

/// Integrates exp(logdens) over the interval with adaptive Gauss-Kronrod on
/// `panels` equal sub-intervals and returns the normalized log density.
/// Sets endpoint_mass_warning when a non-support endpoint carries density
/// above 1e-12 of the peak.
Renormalized renormalize_1d(std::function<double(double)> logdens,
                            const Interval& bounds, std::size_t panels = 16);

}  // namespace hdapprox
