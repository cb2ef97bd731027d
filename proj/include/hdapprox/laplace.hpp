#pragma once

#include <cstddef>

#include "hdapprox/model.hpp"

namespace hdapprox {

struct SolverOptions {
  std::size_t max_iter = 200;
  // Convergence when ||grad|| <= tol_grad * (1 + |g|).
  double tol_grad = 1e-10;
  double armijo = 1e-4;
  double shrink = 0.5;
  std::size_t max_backtracks = 60;
  // Diagonal jitter, relative to the mean diagonal of -g''.
  double jitter_start = 1e-10;
  double jitter_growth = 10.0;
  double jitter_max = 1e-2;
};

/// Maximizer of a log target together with the Cholesky factor of the
/// negative Hessian there.
struct ModeResult {
  Vector theta_hat;
  double g_at_mode = 0.0;
  Matrix neg_hess_chol;  // lower triangular L, L L^T = -g''(theta_hat)
  double log_det_neg_hess = 0.0;
  double grad_norm = 0.0;
  std::size_t iterations = 0;

  std::size_t dim() const { return static_cast<std::size_t>(theta_hat.size()); }
};

struct ConstrainedModeResult {
  std::size_t interest_index = 0;
  double psi = 0.0;
  Vector lambda_hat_psi;  // nuisance coordinates, in model order
  Vector theta_hat_psi;   // full point with psi inserted
  double g_at_mode = 0.0;
  double log_det_neg_hess_lambda = 0.0;
  double grad_norm = 0.0;  // nuisance block only
  std::size_t iterations = 0;
};

/// Damped Newton ascent with Cholesky + diagonal jitter and Armijo
/// backtracking. Throws MaxIterations or IndefiniteCurvature.
ModeResult find_mode(const LogTargetModel& model, const Vector& init,
                     const SolverOptions& opts = {});

/// Laplace estimate of log of the integral of exp{g - g(theta_hat)}.
double laplace_log_normalizer(const ModeResult& mode);

/// Laplace approximation to the log posterior density at theta.
double laplace_log_density(const ModeResult& mode, const LogTargetModel& model,
                           const Vector& theta);

/// Maximizes g over the nuisance block with coordinate `interest_index`
/// pinned to psi. `init` holds the nuisance coordinates (dim - 1 entries).
ConstrainedModeResult constrained_mode(const LogTargetModel& model,
                                       std::size_t interest_index, double psi,
                                       const Vector& init,
                                       const SolverOptions& opts = {});

/// Marginal posterior log density of coordinate `interest_index` from Laplace
/// approximations of the numerator and denominator integrals. The constrained
/// mode search starts from the joint mode's nuisance block.
double marginal_laplace_log_density(const LogTargetModel& model,
                                    std::size_t interest_index, double psi,
                                    const ModeResult& mode,
                                    const SolverOptions& opts = {});

/// Same, reusing an already computed constrained mode.
double marginal_laplace_log_density(const ConstrainedModeResult& constrained,
                                    const ModeResult& mode);

/// Log determinant of a symmetric positive-definite matrix via its
/// Cholesky factor. Throws IndefiniteCurvature when the factorization fails.
double spd_log_det(const Matrix& m);

// Helpers shared with the saddlepoint module.
Vector drop_index(const Vector& v, std::size_t index);
Vector insert_index(const Vector& rest, std::size_t index, double value);
Matrix drop_row_col(const Matrix& m, std::size_t index);

}  // namespace hdapprox
