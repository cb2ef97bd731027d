#include "hdapprox/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "hdapprox/errors.hpp"
#include "hdapprox/models.hpp"
#include "hdapprox/quadrature.hpp"
#include "hdapprox/rng.hpp"

namespace hdapprox {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

// Integrand level below which the box edge counts as negligible.
constexpr double kEdgeLevel = 1e-20;
constexpr int kMaxExpansions = 12;

// The error estimate sums inner and outer bounds, so a small overshoot of the
// nominal target is expected; only a clear miss is reported.
constexpr double kToleranceSlack = 10.0;

struct Box {
  Vector lo;
  Vector hi;
};

// Pushes each side of the box outward while the integrand at the face centre
// is still material.
Box expand_box(const std::function<double(const Vector&)>& integrand,
               const Vector& center, Vector lo, Vector hi) {
  for (Eigen::Index i = 0; i < center.size(); ++i) {
    for (int side = 0; side < 2; ++side) {
      double& edge = side == 0 ? lo[i] : hi[i];
      for (int k = 0; k < kMaxExpansions; ++k) {
        Vector probe = center;
        probe[i] = edge;
        const double v = integrand(probe);
        if (!(v > kEdgeLevel)) break;
        edge = center[i] + 2.0 * (edge - center[i]);
      }
    }
  }
  return {std::move(lo), std::move(hi)};
}

double safe_exp(double v) { return std::isfinite(v) ? std::exp(v) : 0.0; }

Vector marginal_sds(const Matrix& neg_hess_chol) {
  const auto p = neg_hess_chol.rows();
  // (-H)^{-1} = L^{-T} L^{-1}; its diagonal is the column norms of L^{-1}.
  const Matrix linv = neg_hess_chol.triangularView<Eigen::Lower>().solve(
      Matrix::Identity(p, p));
  return linv.colwise().norm().transpose();
}

void check_tolerance(const QuadratureResult& q, double rel_tol) {
  if (!(q.value > 0.0) || !std::isfinite(q.value)) {
    throw ToleranceNotReached("quadrature produced a non-positive integral");
  }
  if (q.error > kToleranceSlack * rel_tol * q.value) {
    throw ToleranceNotReached("quadrature error estimate " +
                              std::to_string(q.error / q.value) +
                              " exceeds the relative tolerance");
  }
}

}  // namespace

std::string to_string(OracleMethod method) {
  switch (method) {
    case OracleMethod::kQuadrature: return "quadrature";
    case OracleMethod::kImportanceSampling: return "importance-sampling";
    case OracleMethod::kClosedForm: return "closed-form";
  }
  return "unknown";
}

OracleEstimate quadrature_log_normalizer(const LogTargetModel& model,
                                         const ModeResult& mode,
                                         double half_width_sds, double rel_tol) {
  const std::size_t p = model.dim();
  if (p > 3) {
    throw DimensionTooLarge("quadrature oracle supports p <= 3, got p = " +
                            std::to_string(p));
  }
  if (p == 0) return {0.0, 0.0, OracleMethod::kQuadrature, 0, 0.0};

  const double g_hat = mode.g_at_mode;
  auto integrand = [&](const Vector& theta) { return safe_exp(model.value(theta) - g_hat); };

  const Vector sd = marginal_sds(mode.neg_hess_chol);
  const Vector& c = mode.theta_hat;
  Box box = expand_box(integrand, c, c - half_width_sds * sd, c + half_width_sds * sd);

  const auto q = integrate_box(integrand, box.lo, box.hi, rel_tol);
  check_tolerance(q, rel_tol);
  return {std::log(q.value), 0.0, OracleMethod::kQuadrature, q.evaluations, 0.0};
}

OracleEstimate quadrature_log_marginal(const LogTargetModel& model,
                                       const ModeResult& mode,
                                       std::size_t interest_index, double psi,
                                       double log_normalizer,
                                       double half_width_sds, double rel_tol) {
  const std::size_t p = model.dim();
  if (interest_index >= p) throw std::invalid_argument("interest index out of range");
  if (p > 3) {
    throw DimensionTooLarge("marginal quadrature supports at most 2 nuisance coordinates");
  }
  const double g_hat = mode.g_at_mode;
  if (p == 1) {
    Vector theta(1);
    theta[0] = psi;
    return {model.value(theta) - g_hat - log_normalizer, 0.0,
            OracleMethod::kQuadrature, 1, 0.0};
  }

  auto integrand = [&](const Vector& lambda) {
    return safe_exp(model.value(insert_index(lambda, interest_index, psi)) - g_hat);
  };

  // Centre on the conditional mode so the peak sits inside the box even for
  // psi far from the joint mode; widths come from the conditional curvature.
  Vector center = drop_index(mode.theta_hat, interest_index);
  Vector sd;
  try {
    const auto cm = constrained_mode(model, interest_index, psi, center);
    center = cm.lambda_hat_psi;
    const Matrix neg = -drop_row_col(model.hessian(cm.theta_hat_psi), interest_index);
    sd = neg.llt().solve(Matrix::Identity(neg.rows(), neg.cols())).diagonal().cwiseSqrt();
  } catch (const NumericalError&) {
    sd = drop_index(marginal_sds(mode.neg_hess_chol), interest_index);
  }
  Box box = expand_box(integrand, center, center - half_width_sds * sd,
                       center + half_width_sds * sd);
  const auto q = integrate_box(integrand, box.lo, box.hi, rel_tol);
  if (!(q.value > 0.0)) {
    // Negligible conditional mass at this psi.
    return {-std::numeric_limits<double>::infinity(), 0.0, OracleMethod::kQuadrature,
            q.evaluations, 0.0};
  }
  check_tolerance(q, rel_tol);
  return {std::log(q.value) - log_normalizer, 0.0, OracleMethod::kQuadrature,
          q.evaluations, 0.0};
}

OracleEstimate importance_log_normalizer(const LogTargetModel& model,
                                         const ModeResult& mode,
                                         std::size_t draws, double scale,
                                         std::uint64_t seed) {
  if (draws < 1000) throw std::invalid_argument("importance sampling needs >= 1000 draws");
  if (!(scale > 0.0)) throw std::invalid_argument("proposal scale must be positive");
  const auto p = static_cast<Eigen::Index>(model.dim());
  const Matrix& l = mode.neg_hess_chol;
  const double pd = static_cast<double>(p);
  // log q at theta = mode + scale L^{-T} z.
  const double log_q_const =
      -0.5 * pd * kLog2Pi - pd * std::log(scale) + 0.5 * mode.log_det_neg_hess;

  CounterRng rng(derive_key({seed, 0x15, static_cast<std::uint64_t>(p)}));
  std::vector<double> log_w(draws);
  Vector z(p);
  for (std::size_t k = 0; k < draws; ++k) {
    for (Eigen::Index i = 0; i < p; ++i) z[i] = rng.normal();
    const Vector step = l.transpose().triangularView<Eigen::Upper>().solve(z);
    const Vector theta = mode.theta_hat + scale * step;
    const double log_q = log_q_const - 0.5 * z.squaredNorm();
    const double g = model.value(theta);
    log_w[k] = std::isfinite(g) ? g - mode.g_at_mode - log_q
                                : -std::numeric_limits<double>::infinity();
  }

  const double top = *std::max_element(log_w.begin(), log_w.end());
  if (!std::isfinite(top)) throw DegenerateWeights("every importance weight is zero");
  double sum = 0.0;
  double sum_sq = 0.0;
  for (double lw : log_w) {
    const double w = std::exp(lw - top);
    sum += w;
    sum_sq += w * w;
  }
  const double n = static_cast<double>(draws);
  const double ess = sum * sum / sum_sq;
  if (ess < 50.0) {
    throw DegenerateWeights("effective sample size " + std::to_string(ess) +
                            " is below 50; the proposal does not cover the target");
  }
  const double mean = sum / n;
  const double var = std::max(sum_sq / n - mean * mean, 0.0) * n / (n - 1.0);

  OracleEstimate out;
  out.value = top + std::log(mean);
  out.std_error = std::sqrt(var / n) / mean;
  out.method = OracleMethod::kImportanceSampling;
  out.cost = draws;
  out.effective_sample_size = ess;
  return out;
}

ClosedFormFamily closed_form_family_from_string(const std::string& name) {
  if (name == "gamma") return ClosedFormFamily::kGamma;
  if (name == "normal") return ClosedFormFamily::kNormal;
  if (name == "exp-means-conditional") return ClosedFormFamily::kExpMeansConditional;
  throw std::invalid_argument("unknown closed-form family: " + name);
}

double closed_form_density(ClosedFormFamily family, const ClosedFormParams& params,
                           double s) {
  switch (family) {
    case ClosedFormFamily::kGamma: {
      if (!(s > 0.0)) throw OutOfSupport("gamma density needs s > 0");
      const double a = params.shape;
      const double r = params.rate;
      return a * std::log(r) + (a - 1.0) * std::log(s) - r * s - std::lgamma(a);
    }
    case ClosedFormFamily::kNormal: {
      const double d = s - params.mean;
      return -0.5 * (kLog2Pi + std::log(params.variance)) - 0.5 * d * d / params.variance;
    }
    case ClosedFormFamily::kExpMeansConditional:
      return exp_means_exact_conditional(params.per_group, s, params.total);
  }
  throw std::invalid_argument("unknown closed-form family");
}

}  // namespace hdapprox
