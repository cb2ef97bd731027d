#pragma once

#include <cstddef>
#include <functional>

#include "hdapprox/model.hpp"

namespace hdapprox {

struct QuadratureResult {
  double value = 0.0;
  double error = 0.0;  // summed (QUADPACK-rescaled) Kronrod error estimate
  double l1 = 0.0;     // integral of |f|
  std::size_t evaluations = 0;
};

/// Globally adaptive integral of f over [a, b] with the 41-point
/// Gauss-Kronrod rule: the piece with the largest error estimate is bisected
/// until the summed estimate is below max(abs_tol, rel_tol |value|). Pieces
/// bisected max_depth times are not split further.
QuadratureResult integrate_1d(const std::function<double(double)>& f, double a,
                              double b, double rel_tol = 1e-12,
                              unsigned max_depth = 30, double abs_tol = 0.0);

/// Iterated tensor-product version of integrate_1d over the box [lo, hi].
/// A coarse pass sizes an absolute tolerance, which is split across the
/// nested integrals so slices carrying negligible mass stay cheap.
QuadratureResult integrate_box(const std::function<double(const Vector&)>& f,
                               const Vector& lo, const Vector& hi,
                               double rel_tol = 1e-11);

}  // namespace hdapprox
