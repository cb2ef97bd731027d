#include <doctest.h>

#include <cmath>

#include "hdapprox/errors.hpp"
#include "hdapprox/laplace.hpp"
#include "hdapprox/models.hpp"
#include "support.hpp"

using namespace hdapprox;

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

// Plain gradient ascent with a fixed step below 1/L; slow but needs nothing
// beyond the gradient, so it checks the Newton solver independently.
Vector gradient_ascent_logistic(const Matrix& x, const Vector& y, double prior_sd) {
  const double lipschitz = x.squaredNorm() / 4.0 + 1.0 / (prior_sd * prior_sd);
  const double step = 1.0 / lipschitz;
  Vector b = Vector::Zero(x.cols());
  for (int it = 0; it < 2000000; ++it) {
    const Vector g = testsupport::logistic_gradient_ref(x, y, prior_sd, b);
    if (g.norm() < 1e-11) break;
    b += step * g;
  }
  return b;
}

}  // namespace

TEST_CASE("find_mode of an isotropic quadratic with a linear term") {
  const double n = 4.0;
  const Vector a = (Vector(2) << 1.0, 0.0).finished();
  FunctionTarget f(
      2, 4, [&](const Vector& t) { return -0.5 * n * t.squaredNorm() + a.dot(t); },
      [&](const Vector& t) -> Vector { return -n * t + a; },
      [&](const Vector&) -> Matrix { return -n * Matrix::Identity(2, 2); });
  const auto mode = find_mode(f, Vector::Zero(2));
  CHECK(mode.theta_hat[0] == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(std::abs(mode.theta_hat[1]) < 1e-14);
}

TEST_CASE("find_mode of the Stirling target from theta = 1") {
  const StirlingTarget s(10.0);
  const auto mode = find_mode(s, Vector::Constant(1, 1.0));
  CHECK(std::abs(mode.theta_hat[0]) < 1e-10);
  CHECK(mode.g_at_mode == doctest::Approx(-10.0).epsilon(1e-14));
}

TEST_CASE("find_mode agrees with gradient ascent on a logistic posterior") {
  const auto model = simulate_logistic(200, 5, Vector(), 21);
  const auto mode = find_mode(model, Vector::Zero(5));
  const Vector ref = gradient_ascent_logistic(model.design(), model.response(), 1.0);
  for (Eigen::Index i = 0; i < 5; ++i) CHECK(std::abs(mode.theta_hat[i] - ref[i]) < 1e-6);
}

TEST_CASE("converged modes satisfy the relative gradient contract") {
  const auto logistic = simulate_logistic(400, 6, Vector(), 2);
  const auto poisson = simulate_glm(GlmFamily::kPoisson, 300, 4, Vector(), 3).model;
  const auto gauss = simulate_gaussian_conjugate(100, 8, 4);
  const StirlingTarget stirling(3.0);
  const std::vector<const LogTargetModel*> models{&logistic, &poisson, &gauss, &stirling};
  for (const auto* m : models) {
    const auto mode = find_mode(*m, Vector::Zero(static_cast<Eigen::Index>(m->dim())));
    CHECK(mode.grad_norm <= 1e-10 * (1.0 + std::abs(mode.g_at_mode)));
    CHECK(m->gradient(mode.theta_hat).norm() <= 1e-10 * (1.0 + std::abs(mode.g_at_mode)));
  }
}

TEST_CASE("laplace_log_normalizer for -H = 4 I in two dimensions") {
  FunctionTarget f(2, 4, [](const Vector& t) { return -2.0 * t.squaredNorm(); });
  const auto mode = find_mode(f, Vector::Constant(2, 0.3));
  CHECK(laplace_log_normalizer(mode) == doctest::Approx(std::log(2.0 * M_PI / 4.0)).epsilon(1e-8));
  CHECK(laplace_log_normalizer(mode) == doctest::Approx(0.45158).epsilon(1e-5));
}

TEST_CASE("Laplace density is exact on Gaussian targets") {
  hdapprox::CounterRng rng(7);
  for (Eigen::Index p : {1, 3, 6}) {
    const Matrix a = testsupport::random_spd(rng, p, 2.0);
    const Vector mu = testsupport::random_vector(rng, p);
    const GaussianTarget g(a, mu, 10);
    const auto mode = find_mode(g, Vector::Zero(p));
    CHECK(laplace_log_normalizer(mode) == doctest::Approx(g.exact_log_normalizer()).epsilon(1e-12));
    for (const auto& theta : testsupport::random_points(8, p, 5, 1.0, mu)) {
      CHECK(laplace_log_density(mode, g, theta) ==
            doctest::Approx(g.exact_log_density(theta)).epsilon(1e-10));
    }
  }
}

TEST_CASE("Stirling Laplace ratio has its closed form") {
  for (double n : {1.0, 2.0, 5.0, 10.0, 100.0}) {
    const StirlingTarget s(n);
    const auto mode = find_mode(s, Vector::Constant(1, 1.0));
    const double ratio = std::exp(laplace_log_normalizer(mode) - s.exact_log_normalizer());
    CHECK(ratio == doctest::Approx(s.laplace_ratio()).epsilon(1e-10));
  }
  CHECK(StirlingTarget(1.0).laplace_ratio() == doctest::Approx(0.92214).epsilon(1e-5));
  CHECK(StirlingTarget(2.0).laplace_ratio() == doctest::Approx(0.95950).epsilon(1e-5));
  CHECK(StirlingTarget(10.0).laplace_ratio() == doctest::Approx(0.99171).epsilon(1e-5));
}

TEST_CASE("Laplace normalizer is invariant under translation of the target") {
  const auto base = simulate_logistic(150, 3, Vector(), 5);
  const Vector shift = (Vector(3) << 0.7, -1.2, 2.5).finished();
  FunctionTarget moved(
      3, 150, [&](const Vector& t) { return base.value(t - shift) + 17.0; },
      [&](const Vector& t) -> Vector { return base.gradient(t - shift); },
      [&](const Vector& t) -> Matrix { return base.hessian(t - shift); });
  const auto m0 = find_mode(base, Vector::Zero(3));
  const auto m1 = find_mode(moved, Vector::Zero(3));
  CHECK(laplace_log_normalizer(m1) == doctest::Approx(laplace_log_normalizer(m0)).epsilon(1e-12));
  CHECK((m1.theta_hat - m0.theta_hat - shift).norm() < 1e-9);
}

TEST_CASE("find_mode rejects convex targets and exhausted iteration budgets") {
  FunctionTarget convex(2, 1, [](const Vector& t) { return t.squaredNorm(); },
                        [](const Vector& t) -> Vector { return 2.0 * t; },
                        [](const Vector&) -> Matrix { return 2.0 * Matrix::Identity(2, 2); });
  CHECK_THROWS_AS(find_mode(convex, Vector::Constant(2, 1.0)), IndefiniteCurvature);

  SolverOptions opts;
  opts.max_iter = 1;
  CHECK_THROWS_AS(find_mode(StirlingTarget(5.0), Vector::Constant(1, 3.0), opts), MaxIterations);
}

TEST_CASE("constrained mode of a block-diagonal quadratic does not move with psi") {
  Matrix a = Matrix::Zero(3, 3);
  a(0, 0) = 2.0;
  a.bottomRightCorner(2, 2) << 3.0, 0.5, 0.5, 1.0;
  const Vector mu = (Vector(3) << 0.4, -1.0, 2.0).finished();
  const GaussianTarget g(a, mu, 10);
  const auto c = constrained_mode(g, 0, 1.7, Vector::Zero(2));
  CHECK(std::abs(c.lambda_hat_psi[0] - mu[1]) < 1e-12);
  CHECK(std::abs(c.lambda_hat_psi[1] - mu[2]) < 1e-12);
}

TEST_CASE("constrained mode of a correlated quadratic follows the regression adjustment") {
  Matrix a(2, 2);
  a << 2.0, 0.8, 0.8, 1.5;
  const Vector mu = (Vector(2) << 0.3, -0.6).finished();
  const GaussianTarget g(a, mu, 10);
  const double psi = mu[0] + 0.1;
  const auto c = constrained_mode(g, 0, psi, Vector::Zero(1));
  // Maximizing over lambda with psi fixed: lambda = mu_l - (A_lp / A_ll)(psi - mu_p).
  CHECK(c.lambda_hat_psi[0] == doctest::Approx(mu[1] - 0.8 / 1.5 * 0.1).epsilon(1e-12));
  CHECK(c.theta_hat_psi[0] == psi);
}

TEST_CASE("marginal Laplace density is exact on Gaussian targets") {
  hdapprox::CounterRng rng(19);
  const Matrix a = testsupport::random_spd(rng, 4, 1.0);
  const Vector mu = testsupport::random_vector(rng, 4);
  const GaussianTarget g(a, mu, 10);
  const auto mode = find_mode(g, Vector::Zero(4));
  const Matrix cov = a.inverse();
  for (std::size_t idx : {0u, 2u}) {
    const auto i = static_cast<Eigen::Index>(idx);
    const double var = cov(i, i);
    for (double z : {-2.0, -0.5, 0.0, 1.3}) {
      const double psi = mu[i] + z * std::sqrt(var);
      const double exact = -0.5 * (kLog2Pi + std::log(var)) - 0.5 * z * z;
      CHECK(marginal_laplace_log_density(g, idx, psi, mode) == doctest::Approx(exact).epsilon(1e-10));
    }
  }
}

TEST_CASE("spd_log_det and index helpers") {
  Matrix m(2, 2);
  m << 4.0, 1.0, 1.0, 3.0;
  CHECK(spd_log_det(m) == doctest::Approx(std::log(11.0)).epsilon(1e-14));
  Matrix bad(2, 2);
  bad << 1.0, 2.0, 2.0, 1.0;
  CHECK_THROWS_AS(spd_log_det(bad), IndefiniteCurvature);
  const Vector v = (Vector(3) << 1.0, 2.0, 3.0).finished();
  CHECK(insert_index(drop_index(v, 1), 1, 2.0) == v);
  Matrix big(3, 3);
  big << 1, 2, 3, 4, 5, 6, 7, 8, 9;
  const Matrix small = drop_row_col(big, 1);
  CHECK(small(0, 1) == 3.0);
  CHECK(small(1, 0) == 7.0);
}
