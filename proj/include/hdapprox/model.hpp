#pragma once

#include <functional>
#include <optional>
#include <vector>

#include <Eigen/Dense>

namespace hdapprox {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Log target g_n(theta) = log prior + log likelihood, known up to an additive
/// constant. Implementations must be pure: every method may be called
/// concurrently from several threads with distinct arguments.
///
/// Points outside the support evaluate to -infinity; derivatives are only
/// requested at points where value() is finite.
class LogTargetModel {
 public:
  virtual ~LogTargetModel() = default;

  virtual std::size_t dim() const = 0;
  virtual std::size_t sample_size() const = 0;

  virtual double value(const Vector& theta) const = 0;
  virtual Vector gradient(const Vector& theta) const = 0;
  /// Symmetric by contract; implementations that assemble it from parts
  /// should call symmetrize() before returning.
  virtual Matrix hessian(const Vector& theta) const = 0;

  /// Slice g'''_{..l}(theta). Empty when the model has no analytic third
  /// derivatives; callers then fall back to finite differences of hessian().
  virtual std::optional<Matrix> third_slice(const Vector& theta,
                                            std::size_t l) const;
  /// Slice g''''_{..lm}(theta), same fallback rule as third_slice().
  virtual std::optional<Matrix> fourth_slice(const Vector& theta,
                                             std::size_t l,
                                             std::size_t m) const;
};

/// Real-axis cumulant generating function of a p-dimensional statistic.
class CumulantModel {
 public:
  virtual ~CumulantModel() = default;

  virtual std::size_t dim() const = 0;
  virtual std::size_t sample_size() const = 0;

  virtual double cgf(const Vector& t) const = 0;
  virtual Vector cgf_gradient(const Vector& t) const = 0;
  virtual Matrix cgf_hessian(const Vector& t) const = 0;
  /// Strict interior of the domain of K. Must hold at t = 0.
  virtual bool in_domain(const Vector& t) const = 0;
};

/// LogTargetModel assembled from callables; mostly for tests and small
/// synthetic targets. A missing gradient or Hessian is filled in by central
/// finite differences.
class FunctionTarget final : public LogTargetModel {
 public:
  using ValueFn = std::function<double(const Vector&)>;
  using GradFn = std::function<Vector(const Vector&)>;
  using HessFn = std::function<Matrix(const Vector&)>;

  FunctionTarget(std::size_t dim, std::size_t sample_size, ValueFn value,
                 GradFn grad = {}, HessFn hess = {});

  std::size_t dim() const override { return dim_; }
  std::size_t sample_size() const override { return n_; }
  double value(const Vector& theta) const override;
  Vector gradient(const Vector& theta) const override;
  Matrix hessian(const Vector& theta) const override;

 private:
  std::size_t dim_;
  std::size_t n_;
  ValueFn value_;
  GradFn grad_;
  HessFn hess_;
};

void symmetrize(Matrix& m);

/// Central-difference step for coordinate value x: cbrt(eps) * (1 + |x|).
double default_fd_step(double x);

/// Central-difference gradient of model.value(). A non-positive step selects
/// default_fd_step() per coordinate. Throws NonFiniteEvaluation naming the
/// coordinate whose probe was not finite.
Vector fd_gradient(const LogTargetModel& model, const Vector& theta,
                   double step = 0.0);

/// Central differences of model.gradient(), symmetrized.
Matrix fd_hessian(const LogTargetModel& model, const Vector& theta,
                  double step = 0.0);

Vector fd_cgf_gradient(const CumulantModel& cgf, const Vector& t,
                       double step = 0.0);

struct DerivativeTolerances {
  double gradient = 1e-5;
  double hessian = 1e-4;
};

struct DerivativeCheck {
  Vector theta;
  double gradient_rel_error = 0.0;
  double hessian_rel_error = 0.0;
  bool passed = false;
};

struct DerivativeReport {
  std::vector<DerivativeCheck> checks;
  double max_gradient_rel_error = 0.0;
  double max_hessian_rel_error = 0.0;
  bool passed = false;
};

/// Compares analytic gradient/Hessian with finite differences at each sample.
/// The relative error is max|analytic - fd| / max(max|fd|, 1).
DerivativeReport verify_derivatives(const LogTargetModel& model,
                                    const std::vector<Vector>& samples,
                                    DerivativeTolerances tol = {});

/// Same check for the CGF gradient, plus a Cholesky test of K''(t).
struct CgfCheck {
  double max_gradient_rel_error = 0.0;
  bool hessian_positive_definite = true;
  bool passed = false;
};
CgfCheck verify_cgf(const CumulantModel& cgf, const std::vector<Vector>& samples,
                    double gradient_tol = 1e-5);

}  // namespace hdapprox
