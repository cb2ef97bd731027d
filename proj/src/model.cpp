#include "hdapprox/model.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "hdapprox/errors.hpp"

namespace hdapprox {

std::optional<Matrix> LogTargetModel::third_slice(const Vector&,
                                                  std::size_t) const {
  return std::nullopt;
}

std::optional<Matrix> LogTargetModel::fourth_slice(const Vector&, std::size_t,
                                                   std::size_t) const {
  return std::nullopt;
}

void symmetrize(Matrix& m) { m = 0.5 * (m + m.transpose()).eval(); }

double default_fd_step(double x) {
  static const double root = std::cbrt(std::numeric_limits<double>::epsilon());
  return root * (1.0 + std::abs(x));
}

FunctionTarget::FunctionTarget(std::size_t dim, std::size_t sample_size,
                               ValueFn value, GradFn grad, HessFn hess)
    : dim_(dim),
      n_(sample_size),
      value_(std::move(value)),
      grad_(std::move(grad)),
      hess_(std::move(hess)) {}

double FunctionTarget::value(const Vector& theta) const { return value_(theta); }

Vector FunctionTarget::gradient(const Vector& theta) const {
  if (grad_) return grad_(theta);
  return fd_gradient(*this, theta);
}

Matrix FunctionTarget::hessian(const Vector& theta) const {
  Matrix h = hess_ ? hess_(theta) : fd_hessian(*this, theta);
  symmetrize(h);
  return h;
}

Vector fd_gradient(const LogTargetModel& model, const Vector& theta,
                   double step) {
  const auto p = theta.size();
  Vector g(p);
  Vector probe = theta;
  for (Eigen::Index i = 0; i < p; ++i) {
    const double h = step > 0.0 ? step : default_fd_step(theta[i]);
    probe[i] = theta[i] + h;
    const double up = model.value(probe);
    probe[i] = theta[i] - h;
    const double down = model.value(probe);
    probe[i] = theta[i];
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NonFiniteEvaluation(
          "non-finite value at finite-difference probe of coordinate " +
              std::to_string(i),
          static_cast<std::size_t>(i));
    }
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

Matrix fd_hessian(const LogTargetModel& model, const Vector& theta,
                  double step) {
  const auto p = theta.size();
  Matrix h(p, p);
  Vector probe = theta;
  for (Eigen::Index i = 0; i < p; ++i) {
    const double s = step > 0.0 ? step : default_fd_step(theta[i]);
    probe[i] = theta[i] + s;
    const Vector up = model.gradient(probe);
    probe[i] = theta[i] - s;
    const Vector down = model.gradient(probe);
    probe[i] = theta[i];
    if (!up.allFinite() || !down.allFinite()) {
      throw NonFiniteEvaluation(
          "non-finite gradient at finite-difference probe of coordinate " +
              std::to_string(i),
          static_cast<std::size_t>(i));
    }
    h.col(i) = (up - down) / (2.0 * s);
  }
  symmetrize(h);
  return h;
}

Vector fd_cgf_gradient(const CumulantModel& cgf, const Vector& t, double step) {
  const auto p = t.size();
  Vector g(p);
  Vector probe = t;
  for (Eigen::Index i = 0; i < p; ++i) {
    const double h = step > 0.0 ? step : default_fd_step(t[i]);
    probe[i] = t[i] + h;
    const double up = cgf.cgf(probe);
    probe[i] = t[i] - h;
    const double down = cgf.cgf(probe);
    probe[i] = t[i];
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NonFiniteEvaluation(
          "non-finite CGF at finite-difference probe of coordinate " +
              std::to_string(i),
          static_cast<std::size_t>(i));
    }
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

namespace {

double relative_discrepancy(const Matrix& analytic, const Matrix& fd) {
  const double scale = std::max(fd.cwiseAbs().maxCoeff(), 1.0);
  return (analytic - fd).cwiseAbs().maxCoeff() / scale;
}

}  // namespace

DerivativeReport verify_derivatives(const LogTargetModel& model,
                                    const std::vector<Vector>& samples,
                                    DerivativeTolerances tol) {
  DerivativeReport report;
  report.passed = true;
  for (const auto& theta : samples) {
    DerivativeCheck check;
    check.theta = theta;
    try {
      check.gradient_rel_error =
          relative_discrepancy(model.gradient(theta), fd_gradient(model, theta));
      check.hessian_rel_error =
          relative_discrepancy(model.hessian(theta), fd_hessian(model, theta));
    } catch (const NonFiniteEvaluation&) {
      check.gradient_rel_error = std::numeric_limits<double>::infinity();
      check.hessian_rel_error = std::numeric_limits<double>::infinity();
    }
    // NaN compares false, so a NaN discrepancy fails the check.
    check.passed = check.gradient_rel_error < tol.gradient &&
                   check.hessian_rel_error < tol.hessian;
    report.max_gradient_rel_error =
        std::max(report.max_gradient_rel_error, check.gradient_rel_error);
    report.max_hessian_rel_error =
        std::max(report.max_hessian_rel_error, check.hessian_rel_error);
    report.passed = report.passed && check.passed;
    report.checks.push_back(std::move(check));
  }
  return report;
}

CgfCheck verify_cgf(const CumulantModel& cgf, const std::vector<Vector>& samples,
                    double gradient_tol) {
  CgfCheck out;
  for (const auto& t : samples) {
    if (!cgf.in_domain(t)) continue;
    double err = std::numeric_limits<double>::infinity();
    try {
      err = relative_discrepancy(cgf.cgf_gradient(t), fd_cgf_gradient(cgf, t));
    } catch (const NonFiniteEvaluation&) {
    }
    out.max_gradient_rel_error = std::max(out.max_gradient_rel_error, err);
    Eigen::LLT<Matrix> llt(cgf.cgf_hessian(t));
    if (llt.info() != Eigen::Success) out.hessian_positive_definite = false;
  }
  out.passed =
      out.max_gradient_rel_error < gradient_tol && out.hessian_positive_definite;
  return out;
}

}  // namespace hdapprox
