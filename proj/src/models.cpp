#include "hdapprox/models.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <cstdio>
#include <ostream>
#include <stdexcept>

#include "hdapprox/errors.hpp"
#include "hdapprox/rng.hpp"

namespace hdapprox {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Stream tags keep the draws of different simulators independent even when
// they share a seed.
enum StreamTag : std::uint64_t {
  kGaussianStream = 0x61,
  kLogisticStream = 0x62,
  kGlmStream = 0x63,
  kGammaRatesStream = 0x64,
  kExpRegressionStream = 0x65,
  kExpMeansStream = 0x66,
};

double expit(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

Matrix draw_design(CounterRng& rng, std::size_t n, std::size_t p) {
  Matrix x(n, p);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t k = 0; k < p; ++k) x(j, k) = rng.normal();
  return x;
}

std::size_t draw_poisson(CounterRng& rng, double mean) {
  // Sequential inversion; adequate for the moderate means simulated here.
  double u = rng.uniform();
  double prob = std::exp(-mean);
  double cdf = prob;
  std::size_t k = 0;
  while (u > cdf && k < 100000) {
    ++k;
    prob *= mean / static_cast<double>(k);
    cdf += prob;
    if (prob == 0.0 && cdf < u) break;
  }
  return k;
}

Vector zeros_if_empty(const Vector& v, std::size_t p) {
  if (v.size() == 0) return Vector::Zero(static_cast<Eigen::Index>(p));
  if (static_cast<std::size_t>(v.size()) != p) {
    throw std::invalid_argument("beta0 has the wrong dimension");
  }
  return v;
}

}  // namespace

// ---------------------------------------------------------------------------
// GaussianTarget

GaussianTarget::GaussianTarget(Matrix precision, Vector mean,
                               std::size_t sample_size)
    : precision_(std::move(precision)), mean_(std::move(mean)), n_(sample_size) {
  symmetrize(precision_);
  Eigen::LLT<Matrix> llt(precision_);
  if (llt.info() != Eigen::Success) {
    throw std::invalid_argument("GaussianTarget: precision not positive definite");
  }
  log_det_precision_ = 2.0 * Matrix(llt.matrixL()).diagonal().array().log().sum();
}

double GaussianTarget::value(const Vector& theta) const {
  const Vector d = theta - mean_;
  return -0.5 * d.dot(precision_ * d);
}

Vector GaussianTarget::gradient(const Vector& theta) const {
  return -precision_ * (theta - mean_);
}

Matrix GaussianTarget::hessian(const Vector&) const { return -precision_; }

std::optional<Matrix> GaussianTarget::third_slice(const Vector&, std::size_t) const {
  return Matrix::Zero(precision_.rows(), precision_.cols());
}

std::optional<Matrix> GaussianTarget::fourth_slice(const Vector&, std::size_t,
                                                   std::size_t) const {
  return Matrix::Zero(precision_.rows(), precision_.cols());
}

double GaussianTarget::exact_log_density(const Vector& theta) const {
  return value(theta) - exact_log_normalizer();
}

double GaussianTarget::exact_log_normalizer() const {
  return 0.5 * static_cast<double>(dim()) * kLog2Pi - 0.5 * log_det_precision_;
}

GaussianTarget simulate_gaussian_conjugate(std::size_t n, std::size_t p,
                                           std::uint64_t seed, double prior_sd) {
  CounterRng rng(derive_key({seed, kGaussianStream, n, p}));
  const Matrix x = draw_design(rng, n, p);
  Vector beta0(p);
  for (std::size_t k = 0; k < p; ++k) beta0[k] = rng.normal();
  Vector y = x * beta0;
  for (std::size_t j = 0; j < n; ++j) y[j] += rng.normal();
  Matrix precision = x.transpose() * x;
  precision.diagonal().array() += 1.0 / (prior_sd * prior_sd);
  const Vector mean = precision.llt().solve(x.transpose() * y);
  return GaussianTarget(std::move(precision), mean, n);
}

// ---------------------------------------------------------------------------
// StirlingTarget

double StirlingTarget::value(const Vector& theta) const {
  return n_ * (theta[0] - std::exp(theta[0]));
}

Vector StirlingTarget::gradient(const Vector& theta) const {
  return Vector::Constant(1, n_ * (1.0 - std::exp(theta[0])));
}

Matrix StirlingTarget::hessian(const Vector& theta) const {
  return Matrix::Constant(1, 1, -n_ * std::exp(theta[0]));
}

std::optional<Matrix> StirlingTarget::third_slice(const Vector& theta,
                                                  std::size_t) const {
  return hessian(theta);
}

std::optional<Matrix> StirlingTarget::fourth_slice(const Vector& theta, std::size_t,
                                                   std::size_t) const {
  return hessian(theta);
}

double StirlingTarget::exact_log_normalizer() const {
  return std::lgamma(n_) - n_ * std::log(n_) + n_;
}

double StirlingTarget::laplace_ratio() const {
  return std::exp(0.5 * kLog2Pi + (n_ - 0.5) * std::log(n_) - n_ -
                  std::lgamma(n_));
}

// ---------------------------------------------------------------------------
// Canonical GLMs

std::string to_string(GlmFamily family) {
  switch (family) {
    case GlmFamily::kLogistic: return "logistic";
    case GlmFamily::kPoisson: return "poisson";
    case GlmFamily::kExponential: return "exponential";
  }
  return "unknown";
}

GlmFamily glm_family_from_string(const std::string& name) {
  if (name == "logistic") return GlmFamily::kLogistic;
  if (name == "poisson") return GlmFamily::kPoisson;
  if (name == "exponential") return GlmFamily::kExponential;
  throw std::invalid_argument("unknown GLM family: " + name);
}

double CanonicalCumulant::k(double eta) const {
  switch (family) {
    case GlmFamily::kLogistic:
      return eta > 0 ? eta + std::log1p(std::exp(-eta)) : std::log1p(std::exp(eta));
    case GlmFamily::kPoisson: return std::exp(eta);
    case GlmFamily::kExponential:
      return eta < 0 ? -std::log(-eta) : std::numeric_limits<double>::infinity();
  }
  return 0.0;
}

double CanonicalCumulant::d1(double eta) const {
  switch (family) {
    case GlmFamily::kLogistic: return expit(eta);
    case GlmFamily::kPoisson: return std::exp(eta);
    case GlmFamily::kExponential: return -1.0 / eta;
  }
  return 0.0;
}

double CanonicalCumulant::d2(double eta) const {
  switch (family) {
    case GlmFamily::kLogistic: {
      const double s = expit(eta);
      return s * (1.0 - s);
    }
    case GlmFamily::kPoisson: return std::exp(eta);
    case GlmFamily::kExponential: return 1.0 / (eta * eta);
  }
  return 0.0;
}

double CanonicalCumulant::d3(double eta) const {
  switch (family) {
    case GlmFamily::kLogistic: {
      const double s = expit(eta);
      return s * (1.0 - s) * (1.0 - 2.0 * s);
    }
    case GlmFamily::kPoisson: return std::exp(eta);
    case GlmFamily::kExponential: return -2.0 / (eta * eta * eta);
  }
  return 0.0;
}

double CanonicalCumulant::d4(double eta) const {
  switch (family) {
    case GlmFamily::kLogistic: {
      const double s = expit(eta);
      const double v = s * (1.0 - s);
      return v * (1.0 - 6.0 * v);
    }
    case GlmFamily::kPoisson: return std::exp(eta);
    case GlmFamily::kExponential: {
      const double e2 = eta * eta;
      return 6.0 / (e2 * e2);
    }
  }
  return 0.0;
}

bool CanonicalCumulant::feasible(double eta) const {
  if (!std::isfinite(eta)) return false;
  return family != GlmFamily::kExponential || eta < 0.0;
}

GlmModel::GlmModel(GlmFamily family, Matrix x, Vector y, double prior_sd)
    : cumulant_{family}, x_(std::move(x)), y_(std::move(y)), prior_sd_(prior_sd) {
  if (x_.rows() != y_.size()) {
    throw std::invalid_argument("GlmModel: design and response sizes differ");
  }
  if (!(prior_sd_ > 0.0)) {
    throw std::invalid_argument("GlmModel: prior_sd must be positive");
  }
}

bool GlmModel::feasible(const Vector& beta) const {
  if (cumulant_.family != GlmFamily::kExponential) return beta.allFinite();
  const Vector eta = x_ * beta;
  return eta.allFinite() && (eta.array() < 0.0).all();
}

double GlmModel::value(const Vector& beta) const {
  const Vector eta = x_ * beta;
  double sum = 0.0;
  for (Eigen::Index j = 0; j < eta.size(); ++j) {
    if (!cumulant_.feasible(eta[j])) return kNegInf;
    sum += y_[j] * eta[j] - cumulant_.k(eta[j]);
  }
  if (has_prior()) sum -= beta.squaredNorm() / (2.0 * prior_sd_ * prior_sd_);
  return sum;
}

Vector GlmModel::gradient(const Vector& beta) const {
  const Vector eta = x_ * beta;
  Vector resid(eta.size());
  for (Eigen::Index j = 0; j < eta.size(); ++j) resid[j] = y_[j] - cumulant_.d1(eta[j]);
  Vector g = x_.transpose() * resid;
  if (has_prior()) g -= beta / (prior_sd_ * prior_sd_);
  return g;
}

Matrix GlmModel::hessian(const Vector& beta) const {
  const Vector eta = x_ * beta;
  Vector w(eta.size());
  for (Eigen::Index j = 0; j < eta.size(); ++j) w[j] = cumulant_.d2(eta[j]);
  Matrix h = -(x_.transpose() * w.asDiagonal() * x_);
  if (has_prior()) h.diagonal().array() -= 1.0 / (prior_sd_ * prior_sd_);
  symmetrize(h);
  return h;
}

std::optional<Matrix> GlmModel::third_slice(const Vector& beta, std::size_t l) const {
  const Vector eta = x_ * beta;
  Vector w(eta.size());
  for (Eigen::Index j = 0; j < eta.size(); ++j)
    w[j] = cumulant_.d3(eta[j]) * x_(j, static_cast<Eigen::Index>(l));
  Matrix s = -(x_.transpose() * w.asDiagonal() * x_);
  symmetrize(s);
  return s;
}

std::optional<Matrix> GlmModel::fourth_slice(const Vector& beta, std::size_t l,
                                             std::size_t m) const {
  const Vector eta = x_ * beta;
  Vector w(eta.size());
  for (Eigen::Index j = 0; j < eta.size(); ++j)
    w[j] = cumulant_.d4(eta[j]) * x_(j, static_cast<Eigen::Index>(l)) *
           x_(j, static_cast<Eigen::Index>(m));
  Matrix s = -(x_.transpose() * w.asDiagonal() * x_);
  symmetrize(s);
  return s;
}

void GlmModel::write_csv(std::ostream& out) const {
  char buf[64];
  for (Eigen::Index k = 0; k < x_.cols(); ++k) out << "x_" << (k + 1) << ',';
  out << "y\n";
  for (Eigen::Index j = 0; j < x_.rows(); ++j) {
    for (Eigen::Index k = 0; k < x_.cols(); ++k) {
      std::snprintf(buf, sizeof buf, "%.17g,", x_(j, k));
      out << buf;
    }
    std::snprintf(buf, sizeof buf, "%.17g\n", y_[j]);
    out << buf;
  }
}

LogisticRegressionModel simulate_logistic(std::size_t n, std::size_t p,
                                          const Vector& beta0, std::uint64_t seed,
                                          double prior_sd) {
  if (n == 0 || p == 0) throw std::invalid_argument("simulate_logistic: n, p >= 1");
  const Vector beta = zeros_if_empty(beta0, p);
  CounterRng rng(derive_key({seed, kLogisticStream, n, p}));
  Matrix x = draw_design(rng, n, p);
  Vector y(n);
  for (std::size_t j = 0; j < n; ++j) {
    const double prob = expit(x.row(j).dot(beta));
    y[j] = rng.uniform() < prob ? 1.0 : 0.0;
  }
  return LogisticRegressionModel(std::move(x), std::move(y), prior_sd);
}

SimulatedGlm simulate_glm(GlmFamily family, std::size_t n, std::size_t p,
                          const Vector& beta0, std::uint64_t seed,
                          double prior_sd, double min_rate) {
  if (n == 0 || p == 0) throw std::invalid_argument("simulate_glm: n, p >= 1");
  const Vector beta = zeros_if_empty(beta0, p);
  CounterRng rng(derive_key({seed, kGlmStream, static_cast<std::uint64_t>(family), n, p}));
  Matrix x(n, p);
  Vector y(n);
  std::size_t rejections = 0;
  for (std::size_t j = 0; j < n; ++j) {
    for (;;) {
      for (std::size_t k = 0; k < p; ++k) x(j, k) = rng.normal();
      const double eta = x.row(j).dot(beta);
      if (family == GlmFamily::kExponential && -eta < min_rate) {
        if (++rejections > 1000 * n) {
          throw std::invalid_argument(
              "simulate_glm: beta0 rarely yields a positive rate");
        }
        continue;
      }
      switch (family) {
        case GlmFamily::kLogistic: y[j] = rng.uniform() < expit(eta) ? 1.0 : 0.0; break;
        case GlmFamily::kPoisson: y[j] = static_cast<double>(draw_poisson(rng, std::exp(eta))); break;
        case GlmFamily::kExponential: y[j] = rng.exponential(-eta); break;
      }
      break;
    }
  }
  return SimulatedGlm{GlmModel(family, std::move(x), std::move(y), prior_sd),
                      rejections};
}

GlmModel make_gamma_rates_model(std::size_t m, double rate1, double rate2,
                                std::uint64_t seed) {
  if (m == 0 || !(rate1 > 0) || !(rate2 > 0)) {
    throw std::invalid_argument("make_gamma_rates_model: m >= 1, rates > 0");
  }
  CounterRng rng(derive_key({seed, kGammaRatesStream, m}));
  Matrix x(2 * m, 2);
  Vector y(2 * m);
  for (std::size_t j = 0; j < 2 * m; ++j) {
    const bool second = j >= m;
    x(j, 0) = second ? 1.0 : 0.0;
    x(j, 1) = 1.0;
    y[j] = rng.exponential(second ? rate2 : rate1);
  }
  return GlmModel(GlmFamily::kExponential, std::move(x), std::move(y));
}

// ---------------------------------------------------------------------------
// Mean parametrization

MeanParametrization::MeanParametrization(const GlmModel& model,
                                         std::optional<std::size_t> interest_index)
    : model_(model), interest_(interest_index) {
  if (interest_ && *interest_ >= model.dim()) {
    throw std::invalid_argument("interest index out of range");
  }
  for (std::size_t k = 0; k < model.dim(); ++k)
    if (!interest_ || k != *interest_) nuisance_.push_back(static_cast<Eigen::Index>(k));
}

Vector MeanParametrization::to_mean(const Vector& theta) const {
  const Matrix& x = model_.design();
  const Vector eta = x * theta;
  Vector mean(eta.size());
  for (Eigen::Index j = 0; j < eta.size(); ++j) mean[j] = model_.cumulant().d1(eta[j]);
  const double n = static_cast<double>(x.rows());
  Vector phi = theta;
  for (auto k : nuisance_) phi[k] = x.col(k).dot(mean) / n;
  return phi;
}

Vector MeanParametrization::from_mean(const Vector& phi, const Vector& start) const {
  const Matrix& x = model_.design();
  const auto& cum = model_.cumulant();
  const double n = static_cast<double>(x.rows());
  const auto q = static_cast<Eigen::Index>(nuisance_.size());

  Matrix xn(x.rows(), q);
  Vector mu(q);
  Vector tau(q);
  for (Eigen::Index i = 0; i < q; ++i) {
    xn.col(i) = x.col(nuisance_[i]);
    mu[i] = phi[nuisance_[i]];
    tau[i] = start[nuisance_[i]];
  }
  Vector offset = Vector::Zero(x.rows());
  if (interest_) offset = x.col(static_cast<Eigen::Index>(*interest_)) * phi[*interest_];

  // Dual objective h(tau) = sum_j K(eta_j) / n - mu'tau is convex with
  // gradient m(tau) - mu; +infinity outside the natural parameter space.
  auto objective = [&](const Vector& t) {
    const Vector eta = offset + xn * t;
    double s = 0.0;
    for (Eigen::Index j = 0; j < eta.size(); ++j) {
      if (!cum.feasible(eta[j])) return std::numeric_limits<double>::infinity();
      s += cum.k(eta[j]);
    }
    return s / n - mu.dot(t);
  };

  double h = objective(tau);
  // The reference point may be infeasible once the interest coordinate
  // moves; scaling the nuisance block outward fixes the intercept-style
  // designs used here.
  for (int k = 0; k < 64 && !std::isfinite(h); ++k) {
    tau *= 2.0;
    h = objective(tau);
  }
  if (!std::isfinite(h)) {
    throw InverseMapDiverged("no feasible starting point for the inverse mean map");
  }

  const double tol = 1e-13 * (1.0 + mu.norm());
  for (int iter = 0; iter < 200; ++iter) {
    const Vector eta = offset + xn * tau;
    Vector m1(eta.size());
    Vector w(eta.size());
    for (Eigen::Index j = 0; j < eta.size(); ++j) {
      m1[j] = cum.d1(eta[j]);
      w[j] = cum.d2(eta[j]);
    }
    const Vector grad = xn.transpose() * m1 / n - mu;
    if (grad.norm() <= tol) {
      Vector theta = phi;
      for (Eigen::Index i = 0; i < q; ++i) theta[nuisance_[i]] = tau[i];
      return theta;
    }
    const Matrix hess = xn.transpose() * w.asDiagonal() * xn / n;
    const Vector step = hess.ldlt().solve(grad);
    const double decrement = grad.dot(step);
    double alpha = 1.0;
    bool moved = false;
    for (int k = 0; k < 60; ++k, alpha *= 0.5) {
      const Vector cand = tau - alpha * step;
      const double hc = objective(cand);
      if (std::isfinite(hc) &&
          (hc <= h - 1e-4 * alpha * decrement ||
           decrement <= 64 * std::numeric_limits<double>::epsilon() * (1.0 + std::abs(h)))) {
        tau = cand;
        h = hc;
        moved = true;
        break;
      }
    }
    if (!moved) break;
  }
  throw InverseMapDiverged("Newton solve for the inverse mean map did not converge");
}

struct MixedParametrizationTarget::Pieces {
  Vector theta;
  Vector eta;
  Matrix jac;      // d theta / d phi
  Matrix a_inv;    // (d mu / d tau)^{-1}
};

MixedParametrizationTarget::MixedParametrizationTarget(const GlmModel& model,
                                                       std::size_t interest_index,
                                                       Vector reference)
    : model_(model), map_(model, interest_index), reference_(std::move(reference)) {
  if (model.has_prior()) {
    throw std::invalid_argument(
        "MixedParametrizationTarget expects a GLM without a canonical prior");
  }
}

Vector MixedParametrizationTarget::canonical(const Vector& phi) const {
  return map_.from_mean(phi, reference_);
}

MixedParametrizationTarget::Pieces MixedParametrizationTarget::pieces(
    const Vector& phi) const {
  const Matrix& x = model_.design();
  const auto& cum = model_.cumulant();
  const double n = static_cast<double>(x.rows());
  const auto& nuis = map_.nuisance_indices();
  const auto q = static_cast<Eigen::Index>(nuis.size());
  const auto p = static_cast<Eigen::Index>(model_.dim());
  const auto interest = static_cast<Eigen::Index>(*map_.interest_index());

  Pieces out;
  out.theta = canonical(phi);
  out.eta = x * out.theta;
  Vector w(out.eta.size());
  for (Eigen::Index j = 0; j < w.size(); ++j) w[j] = cum.d2(out.eta[j]);

  Matrix xn(x.rows(), q);
  for (Eigen::Index i = 0; i < q; ++i) xn.col(i) = x.col(nuis[i]);
  const Matrix a = xn.transpose() * w.asDiagonal() * xn / n;
  const Vector b = xn.transpose() * w.cwiseProduct(x.col(interest)) / n;
  out.a_inv = a.ldlt().solve(Matrix::Identity(q, q));

  out.jac = Matrix::Zero(p, p);
  out.jac(interest, interest) = 1.0;
  const Vector tau_psi = -out.a_inv * b;
  for (Eigen::Index i = 0; i < q; ++i) {
    out.jac(nuis[i], interest) = tau_psi[i];
    for (Eigen::Index k = 0; k < q; ++k) out.jac(nuis[i], nuis[k]) = out.a_inv(i, k);
  }
  return out;
}

double MixedParametrizationTarget::value(const Vector& phi) const {
  try {
    return model_.value(canonical(phi));
  } catch (const InverseMapDiverged&) {
    return kNegInf;
  }
}

Vector MixedParametrizationTarget::gradient(const Vector& phi) const {
  const auto pc = pieces(phi);
  return pc.jac.transpose() * model_.gradient(pc.theta);
}

Matrix MixedParametrizationTarget::hessian(const Vector& phi) const {
  const auto pc = pieces(phi);
  const Matrix& x = model_.design();
  const auto& cum = model_.cumulant();
  const double n = static_cast<double>(x.rows());
  const auto& nuis = map_.nuisance_indices();
  const auto q = static_cast<Eigen::Index>(nuis.size());

  const Matrix xj = x * pc.jac;
  Vector w(pc.eta.size());
  for (Eigen::Index j = 0; j < w.size(); ++j) w[j] = cum.d2(pc.eta[j]);

  // Curvature of the implicit map tau(phi), weighted by the canonical score
  // of the nuisance block.
  const Vector score = model_.gradient(pc.theta);
  Vector v(q);
  Matrix xn(x.rows(), q);
  for (Eigen::Index i = 0; i < q; ++i) {
    v[i] = score[nuis[i]];
    xn.col(i) = x.col(nuis[i]);
  }
  const Vector proj = xn * (pc.a_inv * v);
  Vector c(pc.eta.size());
  for (Eigen::Index j = 0; j < c.size(); ++j) c[j] = w[j] + proj[j] * cum.d3(pc.eta[j]) / n;

  Matrix h = -(xj.transpose() * c.asDiagonal() * xj);
  symmetrize(h);
  return h;
}

// ---------------------------------------------------------------------------
// GlmSufficientStatCgf

GlmSufficientStatCgf::GlmSufficientStatCgf(const GlmModel& model, Vector theta)
    : model_(model), theta_(std::move(theta)), eta0_(model.design() * theta_) {
  if (!model.feasible(theta_)) {
    throw std::invalid_argument("GlmSufficientStatCgf: theta is infeasible");
  }
}

double GlmSufficientStatCgf::cgf(const Vector& t) const {
  const Vector eta = eta0_ + model_.design() * t;
  const auto& cum = model_.cumulant();
  double s = 0.0;
  for (Eigen::Index j = 0; j < eta.size(); ++j) s += cum.k(eta[j]) - cum.k(eta0_[j]);
  return s;
}

Vector GlmSufficientStatCgf::cgf_gradient(const Vector& t) const {
  const Vector eta = eta0_ + model_.design() * t;
  Vector m(eta.size());
  for (Eigen::Index j = 0; j < eta.size(); ++j) m[j] = model_.cumulant().d1(eta[j]);
  return model_.design().transpose() * m;
}

Matrix GlmSufficientStatCgf::cgf_hessian(const Vector& t) const {
  const Vector eta = eta0_ + model_.design() * t;
  Vector w(eta.size());
  for (Eigen::Index j = 0; j < eta.size(); ++j) w[j] = model_.cumulant().d2(eta[j]);
  Matrix h = model_.design().transpose() * w.asDiagonal() * model_.design();
  symmetrize(h);
  return h;
}

bool GlmSufficientStatCgf::in_domain(const Vector& t) const {
  return model_.feasible(theta_ + t);
}

// ---------------------------------------------------------------------------
// Gamma / normal CGFs

double GammaCgf::cgf(const Vector& t) const {
  return -shape_ * std::log1p(-t[0] / rate_);
}

Vector GammaCgf::cgf_gradient(const Vector& t) const {
  return Vector::Constant(1, shape_ / (rate_ - t[0]));
}

Matrix GammaCgf::cgf_hessian(const Vector& t) const {
  const double d = rate_ - t[0];
  return Matrix::Constant(1, 1, shape_ / (d * d));
}

bool GammaCgf::in_domain(const Vector& t) const {
  return std::isfinite(t[0]) && t[0] < rate_;
}

NormalCgf::NormalCgf(Vector mean, Matrix covariance, std::size_t sample_size)
    : mean_(std::move(mean)), cov_(std::move(covariance)), n_(sample_size) {
  symmetrize(cov_);
}

NormalCgf NormalCgf::iid_sum(std::size_t p, std::size_t n) {
  const auto dim = static_cast<Eigen::Index>(p);
  return NormalCgf(Vector::Zero(dim),
                   static_cast<double>(n) * Matrix::Identity(dim, dim), n);
}

double NormalCgf::cgf(const Vector& t) const {
  return mean_.dot(t) + 0.5 * t.dot(cov_ * t);
}

Vector NormalCgf::cgf_gradient(const Vector& t) const { return mean_ + cov_ * t; }

Matrix NormalCgf::cgf_hessian(const Vector&) const { return cov_; }

// ---------------------------------------------------------------------------
// Exponential regression

ExponentialRegressionCgf::ExponentialRegressionCgf(Matrix x, Vector lambda)
    : x_(std::move(x)), lambda_(std::move(lambda)) {
  if (x_.rows() != lambda_.size()) {
    throw std::invalid_argument("ExponentialRegressionCgf: size mismatch");
  }
  if (!(lambda_.array() > 0.0).all()) {
    throw std::invalid_argument("ExponentialRegressionCgf: rates must be positive");
  }
  scaled_ = lambda_.cwiseInverse().asDiagonal() * x_;
}

double ExponentialRegressionCgf::cgf(const Vector& t) const {
  const Vector z = Vector::Ones(x_.rows()) + scaled_ * t;
  if (!(z.array() > 0.0).all()) return std::numeric_limits<double>::infinity();
  return -z.array().log().sum();
}

Vector ExponentialRegressionCgf::cgf_gradient(const Vector& t) const {
  const Vector z = Vector::Ones(x_.rows()) + scaled_ * t;
  return -(scaled_.transpose() * z.cwiseInverse());
}

Matrix ExponentialRegressionCgf::cgf_hessian(const Vector& t) const {
  const Vector z = Vector::Ones(x_.rows()) + scaled_ * t;
  const Vector w = z.array().square().inverse();
  Matrix h = scaled_.transpose() * w.asDiagonal() * scaled_;
  symmetrize(h);
  return h;
}

bool ExponentialRegressionCgf::in_domain(const Vector& t) const {
  if (!t.allFinite()) return false;
  const Vector z = Vector::Ones(x_.rows()) + scaled_ * t;
  return (z.array() > 0.0).all();
}

SimulatedExponentialRegression simulate_exponential_regression(
    std::size_t n, std::size_t p, const Vector& beta0, std::uint64_t seed,
    double min_rate) {
  if (n == 0 || p == 0) throw std::invalid_argument("n, p >= 1");
  if (static_cast<std::size_t>(beta0.size()) != p || beta0.isZero()) {
    throw std::invalid_argument("beta0 must be a non-zero p-vector");
  }
  CounterRng rng(derive_key({seed, kExpRegressionStream, n, p}));
  Matrix x(n, p);
  Vector lambda(n);
  Vector y(n);
  std::size_t rejections = 0;
  for (std::size_t j = 0; j < n; ++j) {
    for (;;) {
      for (std::size_t k = 0; k < p; ++k) x(j, k) = rng.normal();
      lambda[j] = x.row(j).dot(beta0);
      if (lambda[j] >= min_rate) break;
      if (++rejections > 1000 * n) {
        throw std::invalid_argument("beta0 rarely yields a positive rate");
      }
    }
    y[j] = rng.exponential(lambda[j]);
  }
  Vector s = -(x.transpose() * y);
  return SimulatedExponentialRegression{ExponentialRegressionCgf(std::move(x), lambda),
                                        std::move(y), std::move(s), rejections};
}

// ---------------------------------------------------------------------------
// Exponential means

ExponentialMeansModel::ExponentialMeansModel(std::size_t m, Vector u)
    : m_(m), u_(std::move(u)) {
  if (m_ == 0 || u_.size() < 1) throw std::invalid_argument("ExponentialMeansModel: m, g >= 1");
  if (!(u_.array() > 0.0).all()) {
    throw std::invalid_argument("ExponentialMeansModel: group sums must be positive");
  }
}

Vector ExponentialMeansModel::rates(const Vector& theta) const {
  const auto g = u_.size();
  Vector eta(g);
  double acc = theta[g - 1];
  for (Eigen::Index j = 0; j < g; ++j) {
    if (j > 0) acc += theta[j - 1];
    eta[j] = acc;
  }
  return eta;
}

Vector ExponentialMeansModel::partial_sums() const {
  Vector out(u_.size());
  double acc = 0.0;
  for (Eigen::Index j = 0; j < u_.size(); ++j) out[j] = (acc += u_[j]);
  return out;
}

double ExponentialMeansModel::value(const Vector& theta) const {
  const Vector eta = rates(theta);
  if (!(eta.array() > 0.0).all()) return kNegInf;
  const double m = static_cast<double>(m_);
  return (-u_.cwiseProduct(eta).array() + m * eta.array().log()).sum();
}

namespace {

// d eta / d theta for the (psi_1..psi_{g-1}, lambda) coordinates.
Matrix exp_means_jacobian(Eigen::Index g) {
  Matrix d = Matrix::Zero(g, g);
  for (Eigen::Index j = 0; j < g; ++j) {
    d(j, g - 1) = 1.0;
    for (Eigen::Index i = 0; i < j; ++i) d(j, i) = 1.0;
  }
  return d;
}

}  // namespace

Vector ExponentialMeansModel::gradient(const Vector& theta) const {
  const Vector eta = rates(theta);
  const double m = static_cast<double>(m_);
  const Vector e = (-u_.array() + m / eta.array()).matrix();
  return exp_means_jacobian(u_.size()).transpose() * e;
}

Matrix ExponentialMeansModel::hessian(const Vector& theta) const {
  const Vector eta = rates(theta);
  const double m = static_cast<double>(m_);
  const Vector w = (m / eta.array().square()).matrix();
  const Matrix d = exp_means_jacobian(u_.size());
  Matrix h = -(d.transpose() * w.asDiagonal() * d);
  symmetrize(h);
  return h;
}

ExponentialMeansNullCgf::ExponentialMeansNullCgf(std::size_t groups, std::size_t m,
                                                 double eta)
    : groups_(groups), m_(m), eta_(eta) {
  if (groups == 0 || m == 0 || !(eta > 0)) {
    throw std::invalid_argument("ExponentialMeansNullCgf: groups, m >= 1, eta > 0");
  }
}

Vector ExponentialMeansNullCgf::tail_sums(const Vector& t) const {
  Vector c(t.size());
  double acc = 0.0;
  for (Eigen::Index j = t.size() - 1; j >= 0; --j) c[j] = (acc += t[j]);
  return c;
}

double ExponentialMeansNullCgf::cgf(const Vector& t) const {
  const Vector c = tail_sums(t);
  return -static_cast<double>(m_) * (1.0 - c.array() / eta_).log().sum();
}

Vector ExponentialMeansNullCgf::cgf_gradient(const Vector& t) const {
  const Vector c = tail_sums(t);
  Vector g(t.size());
  double acc = 0.0;
  for (Eigen::Index i = 0; i < t.size(); ++i) {
    acc += static_cast<double>(m_) / (eta_ - c[i]);
    g[i] = acc;
  }
  return g;
}

Matrix ExponentialMeansNullCgf::cgf_hessian(const Vector& t) const {
  const Vector c = tail_sums(t);
  const auto g = t.size();
  Vector cum(g);
  double acc = 0.0;
  for (Eigen::Index j = 0; j < g; ++j) {
    const double d = eta_ - c[j];
    acc += static_cast<double>(m_) / (d * d);
    cum[j] = acc;
  }
  Matrix h(g, g);
  for (Eigen::Index i = 0; i < g; ++i)
    for (Eigen::Index k = 0; k < g; ++k) h(i, k) = cum[std::min(i, k)];
  return h;
}

bool ExponentialMeansNullCgf::in_domain(const Vector& t) const {
  if (!t.allFinite()) return false;
  return (tail_sums(t).array() < eta_).all();
}

ExponentialMeansModel simulate_exponential_means(std::size_t groups, std::size_t m,
                                                 const Vector& rates,
                                                 std::uint64_t seed) {
  if (static_cast<std::size_t>(rates.size()) != groups) {
    throw std::invalid_argument("simulate_exponential_means: need one rate per group");
  }
  CounterRng rng(derive_key({seed, kExpMeansStream, groups, m}));
  Vector u = Vector::Zero(static_cast<Eigen::Index>(groups));
  for (std::size_t j = 0; j < groups; ++j)
    for (std::size_t k = 0; k < m; ++k) u[j] += rng.exponential(rates[j]);
  return ExponentialMeansModel(m, std::move(u));
}

double exp_means_exact_conditional(std::size_t m, double u1, double total) {
  if (!(u1 > 0.0 && u1 < total)) {
    throw OutOfSupport("u1 must lie strictly between 0 and the total");
  }
  const double a = static_cast<double>(m);
  const double log_beta = 2.0 * std::lgamma(a) - std::lgamma(2.0 * a);
  return (a - 1.0) * (std::log(u1) + std::log(total - u1)) -
         (2.0 * a - 1.0) * std::log(total) - log_beta;
}

double exp_means_exact_conditional(const ExponentialMeansModel& model, double u1,
                                   double total) {
  if (model.groups() != 2) {
    throw std::invalid_argument("exact conditional is implemented for two groups");
  }
  return exp_means_exact_conditional(model.per_group(), u1, total);
}

}  // namespace hdapprox
