// Small helpers shared by the unit tests: seeded random points and
// independent reference implementations used as oracles.
#pragma once

#include <cmath>
#include <vector>

#include "hdapprox/model.hpp"
#include "hdapprox/rng.hpp"

namespace testsupport {

using hdapprox::Matrix;
using hdapprox::Vector;

inline Vector random_vector(hdapprox::CounterRng& rng, Eigen::Index p, double sd = 1.0) {
  Vector v(p);
  for (Eigen::Index i = 0; i < p; ++i) v[i] = sd * rng.normal();
  return v;
}

inline std::vector<Vector> random_points(std::uint64_t seed, Eigen::Index p, std::size_t count,
                                         double sd = 1.0, const Vector& center = Vector()) {
  hdapprox::CounterRng rng(seed);
  std::vector<Vector> out;
  for (std::size_t k = 0; k < count; ++k) {
    Vector v = random_vector(rng, p, sd);
    if (center.size() == p) v += center;
    out.push_back(v);
  }
  return out;
}

inline Matrix random_spd(hdapprox::CounterRng& rng, Eigen::Index p, double ridge = 1.0) {
  Matrix a(p, p);
  for (Eigen::Index i = 0; i < p; ++i)
    for (Eigen::Index j = 0; j < p; ++j) a(i, j) = rng.normal();
  Matrix s = a * a.transpose() / static_cast<double>(p);
  s.diagonal().array() += ridge;
  return s;
}

// Logistic log posterior written out term by term, without the library's
// cumulant helpers.
inline double logistic_value_ref(const Matrix& x, const Vector& y, double prior_sd,
                                 const Vector& b) {
  double s = 0.0;
  for (Eigen::Index j = 0; j < x.rows(); ++j) {
    const double eta = x.row(j).dot(b);
    s += y[j] * eta - std::log1p(std::exp(eta));
  }
  return s - b.squaredNorm() / (2.0 * prior_sd * prior_sd);
}

inline Vector logistic_gradient_ref(const Matrix& x, const Vector& y, double prior_sd,
                                    const Vector& b) {
  Vector g = -b / (prior_sd * prior_sd);
  for (Eigen::Index j = 0; j < x.rows(); ++j) {
    const double mu = 1.0 / (1.0 + std::exp(-x.row(j).dot(b)));
    g += (y[j] - mu) * x.row(j).transpose();
  }
  return g;
}

inline double max_abs(const Vector& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

}  // namespace testsupport
