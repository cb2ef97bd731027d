#include "hdapprox/quadrature.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <vector>

#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

namespace hdapprox {

namespace {

struct Piece {
  double a, b, value, error, l1;
  unsigned depth;
  bool operator<(const Piece& o) const { return error < o.error; }
};

// N-point Kronrod rule with its embedded (N-1)/2-point Gauss rule (nodes and
// weights from Boost.Math). The Gauss nodes sit at the even Kronrod indices
// when the Gauss order is odd, at the odd ones otherwise. The error estimate
// is rescaled as in QUADPACK's qk rules, since the raw |K - G| is the error
// of the Gauss rule and overstates the Kronrod error by orders of magnitude.
template <unsigned N, class F>
Piece kronrod_rule(F&& f, double a, double b, unsigned depth) {
  using boost::math::quadrature::gauss;
  using boost::math::quadrature::gauss_kronrod;
  const auto& x = gauss_kronrod<double, N>::abscissa();
  const auto& wk = gauss_kronrod<double, N>::weights();
  const auto& wg = gauss<double, (N - 1) / 2>::weights();
  const double centre = 0.5 * (a + b);
  const double half = 0.5 * (b - a);

  double fv[N];
  fv[0] = f(centre);
  for (std::size_t i = 1; i < (N + 1) / 2; ++i) {
    fv[2 * i - 1] = f(centre - half * x[i]);
    fv[2 * i] = f(centre + half * x[i]);
  }
  double resk = wk[0] * fv[0];
  constexpr bool odd_gauss = ((N - 1) / 2) % 2 == 1;
  double resg = odd_gauss ? wg[0] * fv[0] : 0.0;
  double resabs = wk[0] * std::abs(fv[0]);
  for (std::size_t i = 1; i < (N + 1) / 2; ++i) {
    const double pair = fv[2 * i - 1] + fv[2 * i];
    resk += wk[i] * pair;
    resabs += wk[i] * (std::abs(fv[2 * i - 1]) + std::abs(fv[2 * i]));
    if (odd_gauss && i % 2 == 0) resg += wg[i / 2] * pair;
    if (!odd_gauss && i % 2 == 1) resg += wg[(i - 1) / 2] * pair;
  }
  const double mean = 0.5 * resk;
  double resasc = wk[0] * std::abs(fv[0] - mean);
  for (std::size_t i = 1; i < (N + 1) / 2; ++i) {
    resasc += wk[i] * (std::abs(fv[2 * i - 1] - mean) + std::abs(fv[2 * i] - mean));
  }
  const double h = std::abs(half);
  resabs *= h;
  resasc *= h;
  double err = std::abs((resk - resg) * half);
  if (resasc != 0.0 && err != 0.0) {
    err = resasc * std::min(1.0, std::pow(200.0 * err / resasc, 1.5));
  }
  constexpr double eps = std::numeric_limits<double>::epsilon();
  if (resabs > std::numeric_limits<double>::min() / (50.0 * eps)) {
    err = std::max(50.0 * eps * resabs, err);
  }
  return {a, b, resk * half, err, resabs, depth};
}

}  // namespace

QuadratureResult integrate_1d(const std::function<double(double)>& f, double a,
                              double b, double rel_tol, unsigned max_depth,
                              double abs_tol) {
  QuadratureResult out;
  auto counted = [&](double x) {
    ++out.evaluations;
    return f(x);
  };
  auto rule = [&](double lo, double hi, unsigned depth) {
    return kronrod_rule<41>(counted, lo, hi, depth);
  };

  std::priority_queue<Piece> open;
  std::vector<Piece> done;
  Piece first = rule(a, b, 0);
  double value = first.value;
  double error = first.error;
  double l1 = first.l1;
  open.push(first);
  // Each piece's estimate is floored at 50 eps times its L1 mass, so targets
  // below about twice that floor are unreachable.
  constexpr double floor = 100.0 * std::numeric_limits<double>::epsilon();
  while (!open.empty() &&
         error > std::max({abs_tol, rel_tol * std::abs(value), floor * l1})) {
    const Piece worst = open.top();
    open.pop();
    if (worst.depth >= max_depth) {
      done.push_back(worst);
      continue;
    }
    const double mid = 0.5 * (worst.a + worst.b);
    const Piece left = rule(worst.a, mid, worst.depth + 1);
    const Piece right = rule(mid, worst.b, worst.depth + 1);
    value += left.value + right.value - worst.value;
    error += left.error + right.error - worst.error;
    l1 += left.l1 + right.l1 - worst.l1;
    open.push(left);
    open.push(right);
  }
  // Re-sum so the running updates leave no drift.
  out.value = out.error = out.l1 = 0.0;
  auto add = [&](const Piece& p) {
    out.value += p.value;
    out.error += p.error;
    out.l1 += p.l1;
  };
  for (const auto& p : done) add(p);
  for (; !open.empty(); open.pop()) add(open.top());
  return out;
}

namespace {

// Integral over axes [axis, p) with the leading coordinates held in `point`.
// The error of an outer integral is at most its width times the largest
// inner error, so inner tolerances shrink by the outer width.
QuadratureResult integrate_from(const std::function<double(const Vector&)>& f,
                                const Vector& lo, const Vector& hi,
                                Eigen::Index axis, Vector& point, double rel_tol,
                                double abs_tol, unsigned max_depth) {
  const bool innermost = axis + 1 == lo.size();
  const double width = hi[axis] - lo[axis];
  std::size_t evaluations = 0;
  double inner_error = 0.0;
  auto slice = [&](double x) {
    point[axis] = x;
    if (innermost) {
      ++evaluations;
      return f(point);
    }
    const auto inner = integrate_from(f, lo, hi, axis + 1, point, 0.1 * rel_tol,
                                      0.1 * abs_tol / width, max_depth);
    evaluations += inner.evaluations;
    inner_error = std::max(inner_error, inner.error);
    return inner.value;
  };
  auto out = integrate_1d(slice, lo[axis], hi[axis], rel_tol, max_depth, abs_tol);
  out.evaluations = evaluations;
  out.error += width * inner_error;
  return out;
}

}  // namespace

QuadratureResult integrate_box(const std::function<double(const Vector&)>& f,
                               const Vector& lo, const Vector& hi,
                               double rel_tol) {
  Vector point = lo;
  // Non-adaptive nested rule for the scale of the integral.
  auto coarse = integrate_from(f, lo, hi, 0, point, 0.0, 0.0, 0);
  std::size_t evaluations = coarse.evaluations;
  double scale = std::abs(coarse.value);
  // Relative accuracy on every slice is the fallback when the coarse pass
  // saw nothing; otherwise the absolute target drives refinement.
  for (int round = 0;; ++round) {
    const double abs_tol = std::max(rel_tol, 1e-14) * scale;
    auto q = integrate_from(f, lo, hi, 0, point, scale > 0.0 ? 0.0 : rel_tol, abs_tol, 30);
    evaluations += q.evaluations;
    // A coarse pass that missed a narrow peak understates the scale, which
    // only costs work; one that overstates it would loosen the target, so
    // repeat with the refined value.
    if (round < 3 && std::abs(q.value) < 0.5 * scale) {
      scale = std::abs(q.value);
      continue;
    }
    q.evaluations = evaluations;
    return q;
  }
}

}  // namespace hdapprox
