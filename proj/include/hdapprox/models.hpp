#pragma once

#include <cmath>
#include <cstdint>
#include <iosfwd>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "hdapprox/model.hpp"

namespace hdapprox {

// ---------------------------------------------------------------------------
// Reference targets

/// g(theta) = -1/2 (theta - mean)' A (theta - mean) with A positive definite.
/// The posterior is exactly N(mean, A^{-1}).
class GaussianTarget final : public LogTargetModel {
 public:
  GaussianTarget(Matrix precision, Vector mean, std::size_t sample_size);

  std::size_t dim() const override { return static_cast<std::size_t>(mean_.size()); }
  std::size_t sample_size() const override { return n_; }
  double value(const Vector& theta) const override;
  Vector gradient(const Vector& theta) const override;
  Matrix hessian(const Vector& theta) const override;
  std::optional<Matrix> third_slice(const Vector& theta, std::size_t l) const override;
  std::optional<Matrix> fourth_slice(const Vector& theta, std::size_t l,
                                     std::size_t m) const override;

  const Matrix& precision() const { return precision_; }
  const Vector& mean() const { return mean_; }
  /// Exact normalized log density of N(mean, precision^{-1}).
  double exact_log_density(const Vector& theta) const;
  /// log of the integral of exp{g - max g}.
  double exact_log_normalizer() const;

 private:
  Matrix precision_;
  Vector mean_;
  std::size_t n_;
  double log_det_precision_;
};

/// Linear regression y = X beta + N(0, 1) noise with N(0, prior_sd^2 I)
/// prior; the posterior of beta is Gaussian.
GaussianTarget simulate_gaussian_conjugate(std::size_t n, std::size_t p,
                                           std::uint64_t seed,
                                           double prior_sd = 1.0);

/// g(theta) = n (theta - exp(theta)). The normalizing constant of
/// exp{g - g(0)} is Gamma(n) n^{-n} e^n.
class StirlingTarget final : public LogTargetModel {
 public:
  explicit StirlingTarget(double n) : n_(n) {}

  std::size_t dim() const override { return 1; }
  std::size_t sample_size() const override {
    return static_cast<std::size_t>(n_);
  }
  double value(const Vector& theta) const override;
  Vector gradient(const Vector& theta) const override;
  Matrix hessian(const Vector& theta) const override;
  std::optional<Matrix> third_slice(const Vector& theta, std::size_t l) const override;
  std::optional<Matrix> fourth_slice(const Vector& theta, std::size_t l,
                                     std::size_t m) const override;

  double exact_log_normalizer() const;
  /// Laplace estimate divided by the true normalizer:
  /// sqrt(2 pi) n^{n - 1/2} e^{-n} / Gamma(n).
  double laplace_ratio() const;

 private:
  double n_;
};

// ---------------------------------------------------------------------------
// Generalized linear models with canonical link

enum class GlmFamily { kLogistic, kPoisson, kExponential };

std::string to_string(GlmFamily family);
GlmFamily glm_family_from_string(const std::string& name);

/// Cumulant function K of the response and its derivatives, evaluated at the
/// canonical parameter eta. For the exponential family eta = -rate < 0.
struct CanonicalCumulant {
  GlmFamily family;
  double k(double eta) const;
  double d1(double eta) const;  // mean
  double d2(double eta) const;  // variance function
  double d3(double eta) const;
  double d4(double eta) const;
  bool feasible(double eta) const;
};

/// log posterior sum_j [y_j eta_j - K(eta_j)] - beta'beta / (2 prior_sd^2),
/// eta = X beta. prior_sd = infinity drops the prior.
class GlmModel : public LogTargetModel {
 public:
  GlmModel(GlmFamily family, Matrix x, Vector y,
           double prior_sd = std::numeric_limits<double>::infinity());

  std::size_t dim() const override { return static_cast<std::size_t>(x_.cols()); }
  std::size_t sample_size() const override {
    return static_cast<std::size_t>(x_.rows());
  }
  double value(const Vector& beta) const override;
  Vector gradient(const Vector& beta) const override;
  Matrix hessian(const Vector& beta) const override;
  std::optional<Matrix> third_slice(const Vector& beta, std::size_t l) const override;
  std::optional<Matrix> fourth_slice(const Vector& beta, std::size_t l,
                                     std::size_t m) const override;

  GlmFamily family() const { return cumulant_.family; }
  const CanonicalCumulant& cumulant() const { return cumulant_; }
  const Matrix& design() const { return x_; }
  const Vector& response() const { return y_; }
  double prior_sd() const { return prior_sd_; }
  bool has_prior() const { return std::isfinite(prior_sd_); }
  /// True iff every linear predictor lies in the natural parameter space.
  bool feasible(const Vector& beta) const;

  /// Header row x_1..x_p,y then one row per observation, 17 significant
  /// digits.
  void write_csv(std::ostream& out) const;

 private:
  CanonicalCumulant cumulant_;
  Matrix x_;
  Vector y_;
  double prior_sd_;
};

/// Logistic regression with iid N(0, prior_sd^2) priors.
class LogisticRegressionModel final : public GlmModel {
 public:
  LogisticRegressionModel(Matrix x, Vector y, double prior_sd = 1.0)
      : GlmModel(GlmFamily::kLogistic, std::move(x), std::move(y), prior_sd) {}
};

/// Rows of X iid N(0, I_p), y_j ~ Bernoulli(expit(x_j' beta0)).
/// An empty beta0 means the zero vector.
LogisticRegressionModel simulate_logistic(std::size_t n, std::size_t p,
                                          const Vector& beta0,
                                          std::uint64_t seed,
                                          double prior_sd = 1.0);

/// Canonical GLM with iid N(0, 1) design. For the exponential family rows
/// whose rate -x'beta0 falls below min_rate are redrawn; the number of
/// redraws is stored in `rejections`.
struct SimulatedGlm {
  GlmModel model;
  std::size_t rejections = 0;
};
SimulatedGlm simulate_glm(GlmFamily family, std::size_t n, std::size_t p,
                          const Vector& beta0, std::uint64_t seed,
                          double prior_sd = 1.0, double min_rate = 0.05);

/// Two-group exponential model ("gamma rates"): m observations per group,
/// y ~ Exp(rates[group]). Canonical coordinates are (psi, tau) with
/// eta = -rate = tau + psi * [group == 2], so psi = rate_1 - rate_2 and
/// tau = -rate_1. Flat prior.
GlmModel make_gamma_rates_model(std::size_t m, double rate1, double rate2,
                                std::uint64_t seed);

/// Maps a GLM between canonical coordinates and the mixed parametrization in
/// which the nuisance coordinates are replaced by their mean parameters
/// mu_k = E[sum_j y_j x_jk] / n. The interest coordinate is left canonical;
/// without an interest index every coordinate is mapped.
class MeanParametrization {
 public:
  MeanParametrization(const GlmModel& model,
                      std::optional<std::size_t> interest_index);

  Vector to_mean(const Vector& theta) const;
  /// Inverse map by Newton's method on the convex dual objective, starting
  /// from `start` (canonical). Throws InverseMapDiverged.
  Vector from_mean(const Vector& phi, const Vector& start) const;

  const GlmModel& model() const { return model_; }
  std::optional<std::size_t> interest_index() const { return interest_; }
  const std::vector<Eigen::Index>& nuisance_indices() const { return nuisance_; }

 private:
  const GlmModel& model_;
  std::optional<std::size_t> interest_;
  std::vector<Eigen::Index> nuisance_;
};

/// The GLM log likelihood expressed in mixed (interest canonical, nuisance
/// mean) coordinates, with a flat prior in those coordinates. Points where
/// the inverse map has no solution evaluate to -infinity.
class MixedParametrizationTarget final : public LogTargetModel {
 public:
  /// `reference` is a feasible canonical point used to start inverse-map
  /// solves (typically the canonical mle).
  MixedParametrizationTarget(const GlmModel& model, std::size_t interest_index,
                             Vector reference);

  std::size_t dim() const override { return model_.dim(); }
  std::size_t sample_size() const override { return model_.sample_size(); }
  double value(const Vector& phi) const override;
  Vector gradient(const Vector& phi) const override;
  Matrix hessian(const Vector& phi) const override;

  const MeanParametrization& map() const { return map_; }
  Vector canonical(const Vector& phi) const;

 private:
  struct Pieces;
  Pieces pieces(const Vector& phi) const;

  const GlmModel& model_;
  MeanParametrization map_;
  Vector reference_;
};

/// CGF of the sufficient statistic S = X'y of a canonical GLM at parameter
/// theta: K(t) = sum_j K(x_j'(theta + t)) - K(x_j' theta).
class GlmSufficientStatCgf final : public CumulantModel {
 public:
  GlmSufficientStatCgf(const GlmModel& model, Vector theta);

  std::size_t dim() const override { return model_.dim(); }
  std::size_t sample_size() const override { return model_.sample_size(); }
  double cgf(const Vector& t) const override;
  Vector cgf_gradient(const Vector& t) const override;
  Matrix cgf_hessian(const Vector& t) const override;
  bool in_domain(const Vector& t) const override;

 private:
  const GlmModel& model_;
  Vector theta_;
  Vector eta0_;
};

// ---------------------------------------------------------------------------
// CGF models

/// K(t) = -shape log(1 - t / rate): sum of `shape` unit exponentials scaled
/// by 1/rate, i.e. Gamma(shape, rate).
class GammaCgf final : public CumulantModel {
 public:
  explicit GammaCgf(double shape, double rate = 1.0) : shape_(shape), rate_(rate) {}

  std::size_t dim() const override { return 1; }
  std::size_t sample_size() const override {
    return static_cast<std::size_t>(shape_);
  }
  double cgf(const Vector& t) const override;
  Vector cgf_gradient(const Vector& t) const override;
  Matrix cgf_hessian(const Vector& t) const override;
  bool in_domain(const Vector& t) const override;

  double shape() const { return shape_; }
  double rate() const { return rate_; }

 private:
  double shape_;
  double rate_;
};

/// K(t) = mean't + t' cov t / 2.
class NormalCgf final : public CumulantModel {
 public:
  NormalCgf(Vector mean, Matrix covariance, std::size_t sample_size = 1);
  /// n t't / 2, the CGF of a sum of n iid standard normal vectors.
  static NormalCgf iid_sum(std::size_t p, std::size_t n);

  std::size_t dim() const override { return static_cast<std::size_t>(mean_.size()); }
  std::size_t sample_size() const override { return n_; }
  double cgf(const Vector& t) const override;
  Vector cgf_gradient(const Vector& t) const override;
  Matrix cgf_hessian(const Vector& t) const override;
  bool in_domain(const Vector&) const override { return true; }

  const Vector& mean() const { return mean_; }
  const Matrix& covariance() const { return cov_; }

 private:
  Vector mean_;
  Matrix cov_;
  std::size_t n_;
};

/// Sufficient statistic S = (-sum_j x_jk y_j)_k of exponential regression
/// with rates lambda_j = x_j' beta0 > 0:
/// K(t) = sum_j log{1 / (1 + x_j't / lambda_j)}.
class ExponentialRegressionCgf final : public CumulantModel {
 public:
  ExponentialRegressionCgf(Matrix x, Vector lambda);

  std::size_t dim() const override { return static_cast<std::size_t>(x_.cols()); }
  std::size_t sample_size() const override {
    return static_cast<std::size_t>(x_.rows());
  }
  double cgf(const Vector& t) const override;
  Vector cgf_gradient(const Vector& t) const override;
  Matrix cgf_hessian(const Vector& t) const override;
  bool in_domain(const Vector& t) const override;

  const Matrix& design() const { return x_; }
  const Vector& rates() const { return lambda_; }

 private:
  Matrix x_;
  Vector lambda_;
  Matrix scaled_;  // rows x_j / lambda_j
};

struct SimulatedExponentialRegression {
  ExponentialRegressionCgf cgf;
  Vector y;
  Vector statistic;  // observed S
  std::size_t rejections = 0;
};

/// Rows x_j ~ N(0, I_p) redrawn until x_j' beta0 >= min_rate.
SimulatedExponentialRegression simulate_exponential_regression(
    std::size_t n, std::size_t p, const Vector& beta0, std::uint64_t seed,
    double min_rate = 0.05);

// ---------------------------------------------------------------------------
// Equality of exponential means

/// g groups of m exponential observations with group sums u. As a log target
/// the coordinates are (psi_1, ..., psi_{g-1}, lambda) with group rates
/// eta_j = lambda + psi_1 + ... + psi_{j-1}; the log likelihood is
/// sum_j (-u_j eta_j + m log eta_j) under a flat prior.
class ExponentialMeansModel final : public LogTargetModel {
 public:
  ExponentialMeansModel(std::size_t m, Vector u);

  std::size_t dim() const override { return static_cast<std::size_t>(u_.size()); }
  std::size_t sample_size() const override {
    return m_ * static_cast<std::size_t>(u_.size());
  }
  double value(const Vector& theta) const override;
  Vector gradient(const Vector& theta) const override;
  Matrix hessian(const Vector& theta) const override;

  std::size_t groups() const { return static_cast<std::size_t>(u_.size()); }
  std::size_t per_group() const { return m_; }
  const Vector& sums() const { return u_; }
  Vector rates(const Vector& theta) const;
  /// Partial sums (u_1, u_1 + u_2, ..., u_1 + ... + u_g).
  Vector partial_sums() const;

 private:
  std::size_t m_;
  Vector u_;
};

/// Joint CGF of the partial sums P_i = u_1 + ... + u_i when every u_j is an
/// independent Gamma(m, eta) sum (the null of equal rates).
class ExponentialMeansNullCgf final : public CumulantModel {
 public:
  ExponentialMeansNullCgf(std::size_t groups, std::size_t m, double eta);

  std::size_t dim() const override { return groups_; }
  std::size_t sample_size() const override { return groups_ * m_; }
  double cgf(const Vector& t) const override;
  Vector cgf_gradient(const Vector& t) const override;
  Matrix cgf_hessian(const Vector& t) const override;
  bool in_domain(const Vector& t) const override;

 private:
  Vector tail_sums(const Vector& t) const;

  std::size_t groups_;
  std::size_t m_;
  double eta_;
};

ExponentialMeansModel simulate_exponential_means(std::size_t groups,
                                                 std::size_t m,
                                                 const Vector& rates,
                                                 std::uint64_t seed);

/// Exact log density of u_1 given u_1 + u_2 = total for two groups under the
/// null: total * Beta(m, m). Throws OutOfSupport unless 0 < u1 < total.
double exp_means_exact_conditional(const ExponentialMeansModel& model,
                                   double u1, double total);
double exp_means_exact_conditional(std::size_t m, double u1, double total);

}  // namespace hdapprox
