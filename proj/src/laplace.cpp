#include "hdapprox/laplace.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <string>

#include "hdapprox/errors.hpp"

namespace hdapprox {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

struct AscentProblem {
  std::function<double(const Vector&)> value;
  std::function<Vector(const Vector&)> gradient;
  std::function<Matrix(const Vector&)> hessian;
};

struct AscentResult {
  Vector x;
  double value = 0.0;
  Matrix chol;
  double log_det = 0.0;
  double grad_norm = 0.0;
  std::size_t iterations = 0;
};

double mean_abs_diagonal(const Matrix& a) {
  if (a.rows() == 0) return 1.0;
  const double m = a.diagonal().cwiseAbs().mean();
  return (std::isfinite(m) && m > 0.0) ? m : 1.0;
}

// Cholesky of a + jitter*I with the smallest jitter on the schedule that
// succeeds. Returns false past the cap.
bool jittered_cholesky(const Matrix& a, const SolverOptions& opts,
                       Eigen::LLT<Matrix>& llt) {
  llt.compute(a);
  if (llt.info() == Eigen::Success) return true;
  const double scale = mean_abs_diagonal(a);
  const Matrix id = Matrix::Identity(a.rows(), a.cols());
  for (double j = opts.jitter_start; j <= opts.jitter_max * (1.0 + 1e-12);
       j *= opts.jitter_growth) {
    llt.compute(a + (j * scale) * id);
    if (llt.info() == Eigen::Success) return true;
  }
  return false;
}

double log_det_from_chol(const Matrix& l) {
  return 2.0 * l.diagonal().array().log().sum();
}

AscentResult newton_ascent(const AscentProblem& prob, const Vector& init,
                           const SolverOptions& opts) {
  constexpr double eps = std::numeric_limits<double>::epsilon();
  Vector x = init;
  double fx = prob.value(x);
  if (!std::isfinite(fx)) {
    throw NumericalError("log target is not finite at the initial point");
  }
  Eigen::LLT<Matrix> llt;
  for (std::size_t iter = 0; iter <= opts.max_iter; ++iter) {
    const Vector grad = prob.gradient(x);
    const double gnorm = grad.norm();
    if (gnorm <= opts.tol_grad * (1.0 + std::abs(fx))) {
      AscentResult out;
      out.x = x;
      out.value = fx;
      out.grad_norm = gnorm;
      out.iterations = iter;
      if (x.size() > 0) {
        llt.compute(-prob.hessian(x));
        if (llt.info() != Eigen::Success) {
          throw IndefiniteCurvature(
              "negative Hessian is not positive definite at the stationary "
              "point");
        }
        out.chol = llt.matrixL();
        out.log_det = log_det_from_chol(out.chol);
      } else {
        out.chol = Matrix(0, 0);
      }
      return out;
    }
    if (iter == opts.max_iter) break;

    if (!jittered_cholesky(-prob.hessian(x), opts, llt)) {
      throw IndefiniteCurvature(
          "negative Hessian not positive definite after maximal jitter");
    }
    const Vector dir = llt.solve(grad);
    const double slope = grad.dot(dir);
    // Below this predicted increase the change in g is lost in rounding and
    // the Armijo test is meaningless.
    const double noise = 64.0 * eps * (1.0 + std::abs(fx));

    double step = 1.0;
    bool accepted = false;
    for (std::size_t k = 0; k <= opts.max_backtracks; ++k) {
      const Vector cand = x + step * dir;
      const double fc = prob.value(cand);
      if (std::isfinite(fc) &&
          (fc >= fx + opts.armijo * step * slope ||
           (slope <= noise && fc >= fx - noise))) {
        x = cand;
        fx = fc;
        accepted = true;
        break;
      }
      step *= opts.shrink;
    }
    if (!accepted) {
      throw MaxIterations("line search failed to increase the log target (grad norm " +
                          std::to_string(gnorm) + ")");
    }
  }
  throw MaxIterations("Newton ascent did not converge in " +
                      std::to_string(opts.max_iter) + " iterations");
}

}  // namespace

double spd_log_det(const Matrix& m) {
  if (m.rows() == 0) return 0.0;
  Eigen::LLT<Matrix> llt(m);
  if (llt.info() != Eigen::Success) {
    throw IndefiniteCurvature("matrix is not positive definite");
  }
  return log_det_from_chol(llt.matrixL());
}

Vector drop_index(const Vector& v, std::size_t index) {
  const auto n = v.size();
  const auto i = static_cast<Eigen::Index>(index);
  Vector out(n - 1);
  out.head(i) = v.head(i);
  out.tail(n - 1 - i) = v.tail(n - 1 - i);
  return out;
}

Vector insert_index(const Vector& rest, std::size_t index, double value) {
  const auto n = rest.size() + 1;
  const auto i = static_cast<Eigen::Index>(index);
  Vector out(n);
  out.head(i) = rest.head(i);
  out[i] = value;
  out.tail(n - 1 - i) = rest.tail(n - 1 - i);
  return out;
}

Matrix drop_row_col(const Matrix& m, std::size_t index) {
  const auto n = m.rows();
  const auto i = static_cast<Eigen::Index>(index);
  const auto r = n - 1 - i;
  Matrix out(n - 1, n - 1);
  out.topLeftCorner(i, i) = m.topLeftCorner(i, i);
  out.topRightCorner(i, r) = m.topRightCorner(i, r);
  out.bottomLeftCorner(r, i) = m.bottomLeftCorner(r, i);
  out.bottomRightCorner(r, r) = m.bottomRightCorner(r, r);
  return out;
}

ModeResult find_mode(const LogTargetModel& model, const Vector& init,
                     const SolverOptions& opts) {
  AscentProblem prob{
      [&](const Vector& x) { return model.value(x); },
      [&](const Vector& x) { return model.gradient(x); },
      [&](const Vector& x) { return model.hessian(x); },
  };
  auto r = newton_ascent(prob, init, opts);
  ModeResult out;
  out.theta_hat = std::move(r.x);
  out.g_at_mode = r.value;
  out.neg_hess_chol = std::move(r.chol);
  out.log_det_neg_hess = r.log_det;
  out.grad_norm = r.grad_norm;
  out.iterations = r.iterations;
  return out;
}

double laplace_log_normalizer(const ModeResult& mode) {
  const double p = static_cast<double>(mode.dim());
  return 0.5 * p * kLog2Pi - 0.5 * mode.log_det_neg_hess;
}

double laplace_log_density(const ModeResult& mode, const LogTargetModel& model,
                           const Vector& theta) {
  return model.value(theta) - mode.g_at_mode - laplace_log_normalizer(mode);
}

ConstrainedModeResult constrained_mode(const LogTargetModel& model,
                                       std::size_t interest_index, double psi,
                                       const Vector& init,
                                       const SolverOptions& opts) {
  if (interest_index >= model.dim()) {
    throw std::invalid_argument("interest index out of range");
  }
  if (static_cast<std::size_t>(init.size()) + 1 != model.dim()) {
    throw std::invalid_argument("constrained_mode: init must have dim - 1 entries");
  }
  auto full = [&](const Vector& lambda) {
    return insert_index(lambda, interest_index, psi);
  };
  AscentProblem prob{
      [&](const Vector& l) { return model.value(full(l)); },
      [&](const Vector& l) {
        return drop_index(model.gradient(full(l)), interest_index);
      },
      [&](const Vector& l) {
        return drop_row_col(model.hessian(full(l)), interest_index);
      },
  };
  auto r = newton_ascent(prob, init, opts);
  ConstrainedModeResult out;
  out.interest_index = interest_index;
  out.psi = psi;
  out.theta_hat_psi = full(r.x);
  out.lambda_hat_psi = std::move(r.x);
  out.g_at_mode = r.value;
  out.log_det_neg_hess_lambda = r.log_det;
  out.grad_norm = r.grad_norm;
  out.iterations = r.iterations;
  return out;
}

double marginal_laplace_log_density(const ConstrainedModeResult& constrained,
                                    const ModeResult& mode) {
  return 0.5 * mode.log_det_neg_hess - 0.5 * kLog2Pi -
         0.5 * constrained.log_det_neg_hess_lambda + constrained.g_at_mode -
         mode.g_at_mode;
}

double marginal_laplace_log_density(const LogTargetModel& model,
                                    std::size_t interest_index, double psi,
                                    const ModeResult& mode,
                                    const SolverOptions& opts) {
  const Vector init = drop_index(mode.theta_hat, interest_index);
  const auto constrained =
      constrained_mode(model, interest_index, psi, init, opts);
  return marginal_laplace_log_density(constrained, mode);
}

}  // namespace hdapprox
