#include "hdapprox/saddlepoint.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "hdapprox/errors.hpp"
#include "hdapprox/laplace.hpp"
#include "hdapprox/quadrature.hpp"

namespace hdapprox {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

Vector solve_spd(const Matrix& a, const Vector& b) {
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() == Eigen::Success) return llt.solve(b);
  // K'' is positive definite inside the domain; LDLT covers rounding near
  // the boundary.
  return a.ldlt().solve(b);
}

}  // namespace

SaddleResult solve_saddle(const CumulantModel& cgf, const Vector& s,
                          const Vector& init, const SaddleOptions& opts) {
  if (static_cast<std::size_t>(s.size()) != cgf.dim() ||
      static_cast<std::size_t>(init.size()) != cgf.dim()) {
    throw std::invalid_argument("solve_saddle: dimension mismatch");
  }
  if (!cgf.in_domain(init)) {
    throw DomainEscape("initial point is outside the CGF domain");
  }
  const double target = opts.tol_saddle * (1.0 + s.norm());
  Vector t = init;
  Vector r = cgf.cgf_gradient(t) - s;
  double rn = r.norm();
  bool stalled = false;
  for (std::size_t iter = 0;; ++iter) {
    if (rn <= target || stalled) {
      // A few full Newton steps past the tolerance bring t to rounding level
      // cheaply; the log det term is first order in the error of t.
      for (int polish = 0; polish < 4 && rn > 0.0; ++polish) {
        const Vector cand = t + solve_spd(cgf.cgf_hessian(t), -r);
        if (!cgf.in_domain(cand)) break;
        const Vector rc = cgf.cgf_gradient(cand) - s;
        const double rcn = rc.norm();
        if (!(rcn < rn)) break;
        t = cand;
        r = rc;
        rn = rcn;
      }
      SaddleResult out;
      out.t_hat = t;
      out.k_at_saddle = cgf.cgf(t);
      Eigen::LLT<Matrix> llt(cgf.cgf_hessian(t));
      if (llt.info() != Eigen::Success) {
        throw NumericalError("K'' is not positive definite at the saddlepoint");
      }
      out.k_hess_chol = llt.matrixL();
      out.log_det_k_hess = 2.0 * out.k_hess_chol.diagonal().array().log().sum();
      out.residual_norm = rn;
      out.iterations = iter;
      return out;
    }
    if (iter == opts.max_iter) break;

    const Vector step = solve_spd(cgf.cgf_hessian(t), -r);
    double alpha = 1.0;
    bool any_inside = false;
    bool accepted = false;
    for (std::size_t k = 0; k <= opts.max_halvings; ++k, alpha *= 0.5) {
      const Vector cand = t + alpha * step;
      if (!cgf.in_domain(cand)) continue;
      any_inside = true;
      const Vector rc = cgf.cgf_gradient(cand) - s;
      const double rcn = rc.norm();
      if (std::isfinite(rcn) && rcn < rn) {
        t = cand;
        r = rc;
        rn = rcn;
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      if (!any_inside) {
        throw DomainEscape(
            "saddlepoint iterates left the CGF domain; s is likely outside "
            "the range of K'");
      }
      // Iterates that run off towards the domain edge while the residual
      // stays large mean K'(t) = s has no solution.
      if (rn > 1e-6 * (1.0 + s.norm())) {
        throw DomainEscape("saddlepoint residual stalled at " + std::to_string(rn) +
                           "; s is likely outside the range of K'");
      }
      // Otherwise rounding in K' near the domain edge limits the residual;
      // return what was reached and let residual_norm tell.
      stalled = true;
    }
  }
  throw MaxIterations("saddlepoint Newton did not converge in " +
                      std::to_string(opts.max_iter) + " iterations");
}

SaddleResult solve_saddle(const CumulantModel& cgf, const Vector& s,
                          const SaddleOptions& opts) {
  return solve_saddle(cgf, s, Vector::Zero(s.size()), opts);
}

double saddlepoint_log_density(const SaddleResult& saddle, const Vector& s) {
  const double p = static_cast<double>(s.size());
  return saddle.k_at_saddle - saddle.t_hat.dot(s) - 0.5 * p * kLog2Pi -
         0.5 * saddle.log_det_k_hess;
}

double saddlepoint_log_density(const CumulantModel& cgf, const Vector& s,
                               const SaddleOptions& opts) {
  return saddlepoint_log_density(solve_saddle(cgf, s, opts), s);
}

NuisanceCgf::NuisanceCgf(const CumulantModel& full, std::size_t interest_index)
    : full_(full), index_(interest_index) {
  if (interest_index >= full.dim()) {
    throw std::invalid_argument("interest index out of range");
  }
}

double NuisanceCgf::cgf(const Vector& t) const {
  return full_.cgf(insert_index(t, index_, 0.0));
}

Vector NuisanceCgf::cgf_gradient(const Vector& t) const {
  return drop_index(full_.cgf_gradient(insert_index(t, index_, 0.0)), index_);
}

Matrix NuisanceCgf::cgf_hessian(const Vector& t) const {
  return drop_row_col(full_.cgf_hessian(insert_index(t, index_, 0.0)), index_);
}

bool NuisanceCgf::in_domain(const Vector& t) const {
  return full_.in_domain(insert_index(t, index_, 0.0));
}

DoubleSaddleResult double_saddle_log_conditional(const CumulantModel& cgf,
                                                 double s1, const Vector& s2,
                                                 std::size_t interest_index,
                                                 const SaddleOptions& opts) {
  const Vector s = insert_index(s2, interest_index, s1);
  SaddleResult full;
  try {
    full = solve_saddle(cgf, s, opts);
  } catch (const DomainEscape& e) {
    throw DomainEscape(std::string("joint saddlepoint: ") + e.what());
  } catch (const MaxIterations& e) {
    throw MaxIterations(std::string("joint saddlepoint: ") + e.what());
  }
  const NuisanceCgf nuisance(cgf, interest_index);
  SaddleResult nuis;
  if (nuisance.dim() > 0) {
    try {
      nuis = solve_saddle(nuisance, s2, opts);
    } catch (const DomainEscape& e) {
      throw DomainEscape(std::string("nuisance saddlepoint: ") + e.what());
    } catch (const MaxIterations& e) {
      throw MaxIterations(std::string("nuisance saddlepoint: ") + e.what());
    }
  } else {
    nuis.t_hat = Vector(0);
    nuis.k_at_saddle = 0.0;
  }

  DoubleSaddleResult out;
  out.t_hat_full = full.t_hat;
  out.t_tilde_lambda = nuis.t_hat;
  out.log_det_full = full.log_det_k_hess;
  out.log_det_nuisance = nuis.log_det_k_hess;
  out.full_residual = full.residual_norm;
  out.nuisance_residual = nuis.residual_norm;
  out.log_cond_density =
      0.5 * nuis.log_det_k_hess - 0.5 * (kLog2Pi + full.log_det_k_hess) +
      full.k_at_saddle - nuis.k_at_saddle + nuis.t_hat.dot(s2) -
      full.t_hat.dot(s);
  return out;
}

Renormalized renormalize_1d(std::function<double(double)> logdens,
                            const Interval& bounds, std::size_t panels) {
  if (!(bounds.hi > bounds.lo)) {
    throw std::invalid_argument("renormalize_1d: empty interval");
  }
  panels = std::max<std::size_t>(panels, 1);
  const double width = (bounds.hi - bounds.lo) / static_cast<double>(panels);

  // Peak estimate on an interior grid; exp() is taken relative to it.
  double peak = -std::numeric_limits<double>::infinity();
  const std::size_t grid = 32 * panels;
  for (std::size_t i = 0; i < grid; ++i) {
    const double x = bounds.lo + (bounds.hi - bounds.lo) *
                                     (static_cast<double>(i) + 0.5) /
                                     static_cast<double>(grid);
    const double v = logdens(x);
    if (std::isfinite(v)) peak = std::max(peak, v);
  }
  if (!std::isfinite(peak)) {
    throw NumericalError("renormalize_1d: log density is not finite on the grid");
  }

  auto shifted = [&](double x) {
    const double v = logdens(x);
    return std::isfinite(v) ? std::exp(v - peak) : 0.0;
  };
  double total = 0.0;
  double error = 0.0;
  for (std::size_t k = 0; k < panels; ++k) {
    const double a = bounds.lo + width * static_cast<double>(k);
    const double b = k + 1 == panels ? bounds.hi : a + width;
    const auto q = integrate_1d(shifted, a, b, 1e-11, 15);
    total += q.value;
    error += q.error;
  }

  Renormalized out;
  out.log_normalizer = peak + std::log(total);
  out.quadrature_error = error / total;
  const double threshold = std::log(1e-12);
  auto heavy = [&](double x) {
    const double v = logdens(x);
    return std::isfinite(v) && v - peak > threshold;
  };
  out.endpoint_mass_warning = (!bounds.lo_is_support_edge && heavy(bounds.lo)) ||
                              (!bounds.hi_is_support_edge && heavy(bounds.hi));
  const double shift = out.log_normalizer;
  out.log_density = [logdens = std::move(logdens), shift](double x) {
    return logdens(x) - shift;
  };
  return out;
}

}  // namespace hdapprox
