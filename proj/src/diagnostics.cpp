#include "hdapprox/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>
#include <utility>

#include "hdapprox/errors.hpp"
#include "hdapprox/rng.hpp"

namespace hdapprox {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr std::size_t kFourthSlicePoints = 10;

Vector uniform_in_ball(CounterRng& rng, const Vector& center, double radius) {
  const auto p = center.size();
  Vector dir(p);
  for (Eigen::Index i = 0; i < p; ++i) dir[i] = rng.normal();
  const double norm = dir.norm();
  if (norm == 0.0) return center;
  const double r = radius * std::pow(rng.uniform(), 1.0 / static_cast<double>(p));
  return center + (r / norm) * dir;
}

double max_abs_eigenvalue(const Matrix& m) {
  if (m.rows() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Matrix> es(m, Eigen::EigenvaluesOnly);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

double log_base_n(double value, double n) {
  if (!(value > 0.0)) return kNegInf;
  return std::log(value) / std::log(n);
}

// (l, m) pairs with l <= m; a deterministic subsample when there are more
// than `cap`.
std::vector<std::pair<std::size_t, std::size_t>> slice_pairs(std::size_t p, std::size_t cap,
                                                             CounterRng& rng) {
  std::vector<std::pair<std::size_t, std::size_t>> all;
  for (std::size_t l = 0; l < p; ++l)
    for (std::size_t m = l; m < p; ++m) all.emplace_back(l, m);
  if (all.size() <= cap) return all;
  // Partial Fisher-Yates.
  for (std::size_t i = 0; i < cap; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.next() % (all.size() - i));
    std::swap(all[i], all[j]);
  }
  all.resize(cap);
  return all;
}

nlohmann::json finite_or_null(double v) {
  if (std::isfinite(v)) return v;
  return nullptr;
}

}  // namespace

Matrix fd_third_slice(const LogTargetModel& model, const Vector& theta, std::size_t l) {
  const auto i = static_cast<Eigen::Index>(l);
  const double h = std::cbrt(std::numeric_limits<double>::epsilon()) * (1.0 + std::abs(theta[i]));
  Vector up = theta;
  Vector down = theta;
  up[i] += h;
  down[i] -= h;
  Matrix s = (model.hessian(up) - model.hessian(down)) / (up[i] - down[i]);
  symmetrize(s);
  return s;
}

Matrix fd_fourth_slice(const LogTargetModel& model, const Vector& theta, std::size_t l,
                       std::size_t m) {
  const auto i = static_cast<Eigen::Index>(l);
  const auto k = static_cast<Eigen::Index>(m);
  const double eps4 = std::pow(std::numeric_limits<double>::epsilon(), 0.25);
  const double hi = eps4 * (1.0 + std::abs(theta[i]));
  Matrix s;
  if (l == m) {
    Vector up = theta;
    Vector down = theta;
    up[i] += hi;
    down[i] -= hi;
    s = (model.hessian(up) - 2.0 * model.hessian(theta) + model.hessian(down)) / (hi * hi);
  } else {
    const double hk = eps4 * (1.0 + std::abs(theta[k]));
    auto at = [&](double si, double sk) {
      Vector t = theta;
      t[i] += si * hi;
      t[k] += sk * hk;
      return model.hessian(t);
    };
    s = (at(1, 1) - at(1, -1) - at(-1, 1) + at(-1, -1)) / (4.0 * hi * hk);
  }
  symmetrize(s);
  return s;
}

AssumptionReport audit_assumptions(const LogTargetModel& model, const ModeResult& mode,
                                   const AuditOptions& opts) {
  const std::size_t p = model.dim();
  const double n = static_cast<double>(model.sample_size());
  if (p == 0 || n < 2.0) throw std::invalid_argument("audit needs p >= 1 and n >= 2");
  const Vector& center = mode.theta_hat;

  AssumptionReport rep;
  rep.gamma_n = std::sqrt(std::log(n) * static_cast<double>(p) / n);
  rep.ball_radius = opts.ball_radius > 0.0 ? opts.ball_radius : rep.gamma_n;
  rep.samples = opts.samples;
  CounterRng rng(derive_key({opts.seed, 0xd1a9, p}));

  // Curvature over the ball; the mode itself is always included.
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  auto record = [&](const Vector& theta) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(-model.hessian(theta), Eigen::EigenvaluesOnly);
    lo = std::min(lo, es.eigenvalues().minCoeff());
    hi = std::max(hi, es.eigenvalues().maxCoeff());
  };
  record(center);
  for (std::size_t k = 0; k < opts.samples; ++k) record(uniform_in_ball(rng, center, rep.ball_radius));
  rep.eta1 = lo / n;
  rep.eta2 = hi / n;

  {
    Eigen::SelfAdjointEigenSolver<Matrix> es(-model.hessian(center));
    const Vector inv_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().cwiseInverse();
    const Matrix m = es.eigenvectors() * inv_sqrt.asDiagonal() * es.eigenvectors().transpose();
    rep.inf_norm_invsqrt = m.cwiseAbs().rowwise().sum().maxCoeff();
  }

  double third = 0.0;
  for (std::size_t l = 0; l < p; ++l) {
    auto slice = model.third_slice(center, l);
    if (!slice) {
      rep.finite_difference_slices = true;
      slice = fd_third_slice(model, center, l);
    }
    third = std::max(third, max_abs_eigenvalue(*slice));
    ++rep.third_slices_checked;
  }
  rep.c3_hat = log_base_n(third, n);

  double fourth = 0.0;
  const auto pairs = slice_pairs(p, opts.max_slices, rng);
  std::vector<Vector> points{center};
  for (std::size_t k = 0; k < kFourthSlicePoints; ++k)
    points.push_back(uniform_in_ball(rng, center, std::sqrt(2.0) * rep.gamma_n));
  for (const auto& theta : points) {
    for (const auto& [l, m] : pairs) {
      auto slice = model.fourth_slice(theta, l, m);
      if (!slice) {
        rep.finite_difference_slices = true;
        slice = fd_fourth_slice(model, theta, l, m);
      }
      fourth = std::max(fourth, max_abs_eigenvalue(*slice));
      ++rep.fourth_slices_checked;
    }
  }
  rep.c4_hat = log_base_n(fourth, n);

  if (opts.tail_draws > 0) {
    // Weighted fraction of draws from N(mode, (-g'')^{-1}) falling outside
    // the ball.
    const Matrix& chol = mode.neg_hess_chol;
    const auto pd = static_cast<Eigen::Index>(p);
    std::vector<double> log_w(opts.tail_draws);
    std::vector<char> outside(opts.tail_draws);
    Vector z(pd);
    for (std::size_t k = 0; k < opts.tail_draws; ++k) {
      for (Eigen::Index i = 0; i < pd; ++i) z[i] = rng.normal();
      const Vector step = chol.transpose().triangularView<Eigen::Upper>().solve(z);
      const double g = model.value(center + step);
      log_w[k] = std::isfinite(g) ? g - mode.g_at_mode + 0.5 * z.squaredNorm() : kNegInf;
      outside[k] = step.norm() > rep.ball_radius;
    }
    const double top = *std::max_element(log_w.begin(), log_w.end());
    double total = 0.0;
    double tail = 0.0;
    double tail_sq = 0.0;
    for (std::size_t k = 0; k < opts.tail_draws; ++k) {
      const double w = std::isfinite(top) ? std::exp(log_w[k] - top) : 0.0;
      total += w;
      if (outside[k]) {
        tail += w;
        tail_sq += w * w;
      }
    }
    if (total > 0.0) {
      rep.tail_mass_proxy = tail / total;
      // Ratio-estimator standard error, ignoring the denominator's spread.
      rep.tail_mass_se = std::sqrt(tail_sq) / total;
    }
  }
  return rep;
}

void to_json(nlohmann::json& j, const AssumptionReport& r) {
  j = nlohmann::json{
      {"eta1", finite_or_null(r.eta1)},
      {"eta2", finite_or_null(r.eta2)},
      {"inf_norm_invsqrt", finite_or_null(r.inf_norm_invsqrt)},
      {"c3_hat", finite_or_null(r.c3_hat)},
      {"c4_hat", finite_or_null(r.c4_hat)},
      {"gamma_n", finite_or_null(r.gamma_n)},
      {"samples", r.samples},
      {"ball_radius", finite_or_null(r.ball_radius)},
      {"finite_difference_slices", r.finite_difference_slices},
      {"third_slices_checked", r.third_slices_checked},
      {"fourth_slices_checked", r.fourth_slices_checked},
      {"tail_mass_proxy", finite_or_null(r.tail_mass_proxy)},
      {"tail_mass_se", finite_or_null(r.tail_mass_se)},
      // Orders 5 and 6 of the marginal expansion are not audited: finite
      // differences beyond order 4 carry no usable digits.
      {"unchecked_orders", {5, 6}},
      // Bounds on the CGF's imaginary-part derivatives need complex
      // evaluation, which the library does not do.
      {"unverifiable", {"cgf_imaginary_part_bounds"}},
  };
}

// ---------------------------------------------------------------------------

std::string to_string(RateSource source) {
  switch (source) {
    case RateSource::kLaplaceGeneral: return "laplace-general";
    case RateSource::kLogistic: return "logistic";
    case RateSource::kGlm: return "glm";
    case RateSource::kMarginal: return "marginal";
    case RateSource::kSaddlepoint: return "saddlepoint";
  }
  return "unknown";
}

RateSource rate_source_from_string(const std::string& name) {
  for (auto s : {RateSource::kLaplaceGeneral, RateSource::kLogistic, RateSource::kGlm,
                 RateSource::kMarginal, RateSource::kSaddlepoint}) {
    if (to_string(s) == name) return s;
  }
  throw std::invalid_argument("unknown rate source: " + name);
}

namespace {

struct RateTerm {
  double exp_p;
  double exp_n;  // negative: decay in n
  double exp_log_n;
};

std::vector<RateTerm> rate_terms(const RatePrediction& r) {
  switch (r.source) {
    case RateSource::kLaplaceGeneral:
    case RateSource::kSaddlepoint:
      return {{3.0 + 2.0 * r.c_inf, -(3.0 - 2.0 * r.c3), 0.0},
              {2.0 + 2.0 * r.c_inf, -(2.0 - r.c4), 0.0}};
    case RateSource::kLogistic: return {{2.0, -1.0, 1.0}};
    case RateSource::kGlm: return {{3.0, -1.0, 1.0}};
    case RateSource::kMarginal:
      return {{2.0, -1.0, 2.0},
              {r.zeta - 1.0, -(r.zeta - 2.0) / 2.0, r.zeta / 2.0},
              {1.0, -(1.5 - r.c3), 0.5}};
  }
  return {};
}

const RateTerm& dominant_term(const std::vector<RateTerm>& terms) {
  return *std::max_element(terms.begin(), terms.end(), [](const RateTerm& a, const RateTerm& b) {
    if (a.exp_n != b.exp_n) return a.exp_n < b.exp_n;
    return a.exp_p < b.exp_p;
  });
}

}  // namespace

double RatePrediction::exponent_p() const { return dominant_term(rate_terms(*this)).exp_p; }
double RatePrediction::exponent_n() const { return dominant_term(rate_terms(*this)).exp_n; }
bool RatePrediction::includes_log_n() const {
  return dominant_term(rate_terms(*this)).exp_log_n != 0.0;
}

double predicted_rate(const RatePrediction& pred, double n, double p) {
  double best = 0.0;
  for (const auto& t : rate_terms(pred)) {
    double v = std::pow(p, t.exp_p) * std::pow(n, t.exp_n);
    if (t.exp_log_n != 0.0) v *= std::pow(std::log(n), t.exp_log_n);
    best = std::max(best, v);
  }
  return best;
}

// ---------------------------------------------------------------------------

namespace {

ScalingFit least_squares(const Matrix& x, const Vector& y, const Vector& y_se) {
  const auto m = x.rows();
  const auto k = x.cols();
  Eigen::ColPivHouseholderQR<Matrix> qr(x);
  if (qr.rank() < k) throw InsufficientSpread("design for the exponent fit is rank deficient");
  const Vector coef = qr.solve(y);
  const Vector resid = y - x * coef;
  const double rss = resid.squaredNorm();
  const double tss = (y.array() - y.mean()).square().sum();
  const double dof = static_cast<double>(std::max<Eigen::Index>(m - k, 1));
  const double sigma2 = rss / dof;

  // (X'X)^{-1} and the projection (X'X)^{-1} X'.
  const Matrix xtx_inv = (x.transpose() * x).ldlt().solve(Matrix::Identity(k, k));
  const Matrix proj = xtx_inv * x.transpose();
  const Matrix mc_cov = proj * y_se.array().square().matrix().asDiagonal() * proj.transpose();

  ScalingFit fit;
  fit.intercept = coef[0];
  fit.cells = static_cast<std::size_t>(m);
  fit.r2 = tss > 0.0 ? 1.0 - rss / tss : 1.0;
  fit.residual = std::sqrt(sigma2);
  auto se = [&](Eigen::Index i) { return std::sqrt(sigma2 * xtx_inv(i, i)); };
  auto mc = [&](Eigen::Index i) { return std::sqrt(std::max(mc_cov(i, i), 0.0)); };
  if (k == 2) {
    fit.n_only = true;
    fit.b = coef[1];
    fit.se_b = se(1);
    fit.mc_se_b = mc(1);
  } else {
    fit.a = coef[1];
    fit.b = coef[2];
    fit.se_a = se(1);
    fit.se_b = se(2);
    fit.mc_se_a = mc(1);
    fit.mc_se_b = mc(2);
    if (k == 4) fit.log_log_n = coef[3];
  }
  return fit;
}

void check_errors(const std::vector<ScalingCell>& cells) {
  for (const auto& c : cells) {
    if (!(c.error > 0.0) || !std::isfinite(c.error) || !(c.n > 0.0) || !(c.p > 0.0)) {
      throw std::invalid_argument("exponent fit needs positive finite errors, n and p");
    }
  }
}

}  // namespace

ScalingFit fit_scaling(const std::vector<ScalingCell>& cells, bool with_log_log_n) {
  std::set<double> ns;
  std::set<double> ps;
  for (const auto& c : cells) {
    ns.insert(c.n);
    ps.insert(c.p);
  }
  if (cells.size() < 6 || ns.size() < 2 || ps.size() < 2) {
    throw InsufficientSpread("exponent fit needs >= 6 cells over >= 2 distinct n and p");
  }
  check_errors(cells);
  const auto m = static_cast<Eigen::Index>(cells.size());
  Matrix x(m, with_log_log_n ? 4 : 3);
  Vector y(m);
  Vector y_se(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    const auto& c = cells[static_cast<std::size_t>(i)];
    x(i, 0) = 1.0;
    x(i, 1) = std::log(c.p);
    x(i, 2) = std::log(c.n);
    if (with_log_log_n) x(i, 3) = std::log(std::log(c.n));
    y[i] = std::log(c.error);
    y_se[i] = c.log_error_se;
  }
  return least_squares(x, y, y_se);
}

ScalingFit fit_scaling_n(const std::vector<ScalingCell>& cells) {
  std::set<double> ns;
  for (const auto& c : cells) ns.insert(c.n);
  if (cells.size() < 3 || ns.size() < 2) {
    throw InsufficientSpread("n-only exponent fit needs >= 3 cells over >= 2 distinct n");
  }
  check_errors(cells);
  const auto m = static_cast<Eigen::Index>(cells.size());
  Matrix x(m, 2);
  Vector y(m);
  Vector y_se(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    const auto& c = cells[static_cast<std::size_t>(i)];
    x(i, 0) = 1.0;
    x(i, 1) = std::log(c.n);
    y[i] = std::log(c.error);
    y_se[i] = c.log_error_se;
  }
  return least_squares(x, y, y_se);
}

void to_json(nlohmann::json& j, const ScalingFit& f) {
  j = nlohmann::json{
      {"intercept", finite_or_null(f.intercept)},
      {"a", f.n_only ? nlohmann::json(nullptr) : finite_or_null(f.a)},
      {"b", finite_or_null(f.b)},
      {"se_a", f.n_only ? nlohmann::json(nullptr) : finite_or_null(f.se_a)},
      {"se_b", finite_or_null(f.se_b)},
      {"mc_se_a", f.n_only ? nlohmann::json(nullptr) : finite_or_null(f.mc_se_a)},
      {"mc_se_b", finite_or_null(f.mc_se_b)},
      {"log_log_n", finite_or_null(f.log_log_n)},
      {"r2", finite_or_null(f.r2)},
      {"residual", finite_or_null(f.residual)},
      {"cells", f.cells},
      {"n_only", f.n_only},
  };
}

}  // namespace hdapprox
