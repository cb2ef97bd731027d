#include <doctest.h>

#include <cmath>
#include <sstream>
#include <string>

#include "hdapprox/errors.hpp"
#include "hdapprox/laplace.hpp"
#include "hdapprox/models.hpp"
#include "hdapprox/saddlepoint.hpp"
#include "support.hpp"

using namespace hdapprox;

namespace {

// Central difference of the Hessian along coordinate l.
Matrix fd_hessian_direction(const LogTargetModel& m, const Vector& theta, Eigen::Index l,
                            double h = 1e-5) {
  Vector up = theta, down = theta;
  up[l] += h;
  down[l] -= h;
  return (m.hessian(up) - m.hessian(down)) / (2.0 * h);
}

}  // namespace

TEST_CASE("simulate_logistic is a pure function of its seed") {
  const auto a = simulate_logistic(100, 3, Vector(), 7);
  const auto b = simulate_logistic(100, 3, Vector(), 7);
  CHECK(a.design() == b.design());
  CHECK(a.response() == b.response());
  const auto c = simulate_logistic(100, 3, Vector(), 8);
  CHECK(a.design() != c.design());
}

TEST_CASE("logistic responses under beta0 = 0 are fair coin flips") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const std::size_t n = 4000;
    const auto m = simulate_logistic(n, 2, Vector(), seed);
    const double mean = m.response().mean();
    CHECK(std::abs(mean - 0.5) < 3.0 * std::sqrt(0.25 / static_cast<double>(n)));
    CHECK((m.response().array() * (1.0 - m.response().array()) == 0.0).all());
  }
}

TEST_CASE("logistic mle is consistent for beta0 = (1, 0)") {
  const auto m = simulate_logistic(5000, 2, (Vector(2) << 1.0, 0.0).finished(), 11);
  const auto mode = find_mode(m, Vector::Zero(2));
  CHECK(std::abs(mode.theta_hat[0] - 1.0) < 0.1);
  CHECK(std::abs(mode.theta_hat[1]) < 0.1);
}

TEST_CASE("logistic log posterior and Hessian match their term-by-term forms") {
  const auto m = simulate_logistic(120, 4, Vector(), 3, 2.0);
  const auto pts = testsupport::random_points(5, 4, 4, 0.7);
  const double offset = m.value(pts[0]) - testsupport::logistic_value_ref(m.design(), m.response(), 2.0, pts[0]);
  for (const auto& b : pts) {
    const double ref = testsupport::logistic_value_ref(m.design(), m.response(), 2.0, b);
    CHECK(m.value(b) - ref == doctest::Approx(offset).epsilon(1e-12));
    Matrix h = -Matrix::Identity(4, 4) / 4.0;
    for (Eigen::Index j = 0; j < m.design().rows(); ++j) {
      const double pr = 1.0 / (1.0 + std::exp(-m.design().row(j).dot(b)));
      h -= pr * (1.0 - pr) * m.design().row(j).transpose() * m.design().row(j);
    }
    CHECK((m.hessian(b) - h).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("GLM third and fourth slices match differences of lower derivatives") {
  const auto poisson = simulate_glm(GlmFamily::kPoisson, 80, 3, Vector(), 6).model;
  const auto logistic = simulate_logistic(80, 3, Vector(), 6);
  const auto expo = simulate_glm(GlmFamily::kExponential, 80, 3,
                                 (Vector(3) << -2.0, 0.2, 0.1).finished(), 6).model;
  const std::vector<std::pair<const GlmModel*, Vector>> cases{
      {&poisson, (Vector(3) << 0.1, -0.2, 0.05).finished()},
      {&logistic, (Vector(3) << 0.3, 0.1, -0.4).finished()},
      {&expo, (Vector(3) << -2.0, 0.2, 0.1).finished()}};
  for (const auto& [m, theta] : cases) {
    CAPTURE(to_string(m->family()));
    for (std::size_t l = 0; l < 3; ++l) {
      const Matrix t3 = *m->third_slice(theta, l);
      const Matrix fd3 = fd_hessian_direction(*m, theta, static_cast<Eigen::Index>(l));
      CHECK((t3 - fd3).cwiseAbs().maxCoeff() <= 1e-5 * std::max(1.0, t3.cwiseAbs().maxCoeff()));
      for (std::size_t k = 0; k < 3; ++k) {
        Vector up = theta, down = theta;
        const double h = 1e-5;
        up[static_cast<Eigen::Index>(k)] += h;
        down[static_cast<Eigen::Index>(k)] -= h;
        const Matrix fd4 = (*m->third_slice(up, l) - *m->third_slice(down, l)) / (2.0 * h);
        const Matrix t4 = *m->fourth_slice(theta, l, k);
        CHECK((t4 - fd4).cwiseAbs().maxCoeff() <= 1e-5 * std::max(1.0, t4.cwiseAbs().maxCoeff()));
      }
    }
  }
}

TEST_CASE("canonical cumulants of the bundled families") {
  const CanonicalCumulant logit{GlmFamily::kLogistic};
  const CanonicalCumulant pois{GlmFamily::kPoisson};
  const CanonicalCumulant expo{GlmFamily::kExponential};
  for (double eta : {-3.0, -0.4, 0.0, 1.7}) {
    CHECK(logit.k(eta) == doctest::Approx(std::log1p(std::exp(eta))).epsilon(1e-14));
    CHECK(pois.d2(eta) == doctest::Approx(std::exp(eta)).epsilon(1e-14));
  }
  // Exp(rate) in canonical form: eta = -rate, K = -log(-eta), mean 1/rate.
  CHECK(expo.k(-2.0) == doctest::Approx(-std::log(2.0)).epsilon(1e-14));
  CHECK(expo.d1(-2.0) == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(expo.d2(-2.0) == doctest::Approx(0.25).epsilon(1e-14));
  CHECK_FALSE(expo.feasible(0.5));
  // Logistic cumulant stays finite far in the tails.
  CHECK(std::isfinite(logit.k(800.0)));
  CHECK(logit.d1(-800.0) >= 0.0);
}

TEST_CASE("exponential GLM simulation keeps every rate above the floor") {
  const Vector beta0 = (Vector(3) << -1.0, 0.6, 0.4).finished();
  const auto sim = simulate_glm(GlmFamily::kExponential, 400, 3, beta0, 5, 1.0, 0.2);
  const Vector eta = sim.model.design() * beta0;
  CHECK((-eta.array() >= 0.2).all());
  CHECK(sim.rejections > 0);
  CHECK((sim.model.response().array() > 0.0).all());
}

TEST_CASE("GLM datasets serialize to a header plus one row per observation") {
  const auto m = simulate_glm(GlmFamily::kPoisson, 5, 2, Vector(), 1).model;
  std::ostringstream out;
  m.write_csv(out);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  CHECK(line == "x_1,x_2,y");
  std::size_t rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 5);
}

TEST_CASE("mean parametrization round trip") {
  const auto sim = simulate_glm(GlmFamily::kPoisson, 150, 3, (Vector(3) << 0.2, -0.3, 0.1).finished(), 4);
  for (const auto interest : {std::optional<std::size_t>{}, std::optional<std::size_t>{1}}) {
    const MeanParametrization map(sim.model, interest);
    for (const auto& theta : testsupport::random_points(3, 3, 5, 0.3)) {
      const Vector phi = map.to_mean(theta);
      const Vector back = map.from_mean(phi, Vector::Zero(3));
      CHECK((back - theta).cwiseAbs().maxCoeff() < 1e-10);
    }
  }
  const MeanParametrization partial(sim.model, 1);
  const Vector theta = (Vector(3) << 0.1, 0.4, -0.2).finished();
  CHECK(partial.to_mean(theta)[1] == 0.4);
  CHECK(partial.nuisance_indices().size() == 2);
}

TEST_CASE("one-sample Poisson mean coordinate is exp(theta)") {
  const Matrix x = Matrix::Ones(7, 1);
  const Vector y = (Vector(7) << 0, 1, 3, 2, 0, 1, 4).finished();
  const GlmModel m(GlmFamily::kPoisson, x, y);
  const MeanParametrization map(m, std::nullopt);
  for (double theta : {-1.0, 0.0, 0.8}) {
    CHECK(map.to_mean(Vector::Constant(1, theta))[0] == doctest::Approx(std::exp(theta)).epsilon(1e-14));
  }
}

TEST_CASE("inverse mean map rejects means outside the attainable range") {
  const Matrix x = Matrix::Ones(4, 1);
  const GlmModel m(GlmFamily::kPoisson, x, Vector::Ones(4));
  const MeanParametrization map(m, std::nullopt);
  CHECK_THROWS_AS(map.from_mean(Vector::Constant(1, -1.0), Vector::Zero(1)), InverseMapDiverged);
}

TEST_CASE("gamma-rates cross curvature vanishes at constrained modes in mixed coordinates") {
  const GlmModel gr = make_gamma_rates_model(60, 1.0, 1.5, 12);
  const auto mle = find_mode(gr, (Vector(2) << 0.0, -1.0).finished());
  const MixedParametrizationTarget mixed(gr, 0, mle.theta_hat);
  const Vector phi_hat = mixed.map().to_mean(mle.theta_hat);
  const double sd = std::sqrt(-1.0 / mixed.hessian(phi_hat)(0, 0));
  for (double z : {-2.0, -0.5, 0.0, 1.0, 2.0}) {
    const double psi = phi_hat[0] + z * sd;
    const auto c = constrained_mode(mixed, 0, psi, phi_hat.tail(1));
    const Matrix h = mixed.hessian(c.theta_hat_psi);
    CAPTURE(psi);
    CHECK(std::abs(h(0, 1)) < 1e-8);
  }
  // Canonical coordinates are not orthogonal.
  const auto cc = constrained_mode(gr, 0, mle.theta_hat[0] + sd, mle.theta_hat.tail(1));
  CHECK(std::abs(gr.hessian(cc.theta_hat_psi)(0, 1)) > 1.0);
}

TEST_CASE("mixed target value and mapped canonical likelihood agree") {
  const GlmModel gr = make_gamma_rates_model(25, 2.0, 1.0, 3);
  const auto mle = find_mode(gr, (Vector(2) << 0.0, -1.0).finished());
  const MixedParametrizationTarget mixed(gr, 0, mle.theta_hat);
  for (const auto& theta : testsupport::random_points(6, 2, 4, 0.1, mle.theta_hat)) {
    const Vector phi = mixed.map().to_mean(theta);
    CHECK((mixed.canonical(phi) - theta).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(mixed.value(phi) == doctest::Approx(gr.value(theta)).epsilon(1e-12));
  }
  // Beyond the attainable mean range the target is -infinity.
  CHECK(mixed.value((Vector(2) << 0.0, -5.0).finished()) == -std::numeric_limits<double>::infinity());
}

TEST_CASE("exponential means log likelihood in rate coordinates") {
  const auto m = simulate_exponential_means(3, 6, (Vector(3) << 1.0, 2.0, 0.5).finished(), 2);
  const Vector theta = (Vector(3) << 0.3, -0.1, 1.2).finished();
  const Vector eta = m.rates(theta);
  CHECK(eta[0] == doctest::Approx(1.2));
  CHECK(eta[1] == doctest::Approx(1.5));
  CHECK(eta[2] == doctest::Approx(1.4));
  double ref = 0.0;
  for (Eigen::Index j = 0; j < 3; ++j) ref += -m.sums()[j] * eta[j] + 6.0 * std::log(eta[j]);
  CHECK(m.value(theta) == doctest::Approx(ref).epsilon(1e-14));
  const Vector ps = m.partial_sums();
  CHECK(ps[2] == doctest::Approx(m.sums().sum()).epsilon(1e-15));
}

TEST_CASE("exact exponential-means conditional density") {
  for (double total : {0.5, 1.0, 7.0}) {
    CHECK(exp_means_exact_conditional(1, 0.3 * total, total) == doctest::Approx(-std::log(total)).epsilon(1e-14));
  }
  CHECK(std::exp(exp_means_exact_conditional(2, 0.5, 1.0)) == doctest::Approx(1.5).epsilon(1e-14));
  for (std::size_t m : {2u, 5u, 20u}) {
    for (double u : {0.1, 0.7, 1.3}) {
      CHECK(exp_means_exact_conditional(m, u, 3.0) ==
            doctest::Approx(exp_means_exact_conditional(m, 3.0 - u, 3.0)).epsilon(1e-13));
    }
  }
  CHECK_THROWS_AS(exp_means_exact_conditional(2, 0.0, 1.0), OutOfSupport);
  CHECK_THROWS_AS(exp_means_exact_conditional(2, 1.2, 1.0), OutOfSupport);
}

TEST_CASE("partial-sum saddlepoint factorizes into per-group gamma approximations") {
  // P = A u with det A = 1, so the joint approximation at P equals the
  // product of independent gamma approximations at the increments.
  const std::size_t m = 4;
  const double eta = 1.7;
  const ExponentialMeansNullCgf joint(3, m, eta);
  const GammaCgf one(static_cast<double>(m), eta);
  for (const auto& raw : testsupport::random_points(14, 3, 5, 0.6)) {
    const Vector u = (raw.array().exp() * 2.0).matrix();
    Vector p(3);
    p << u[0], u[0] + u[1], u[0] + u[1] + u[2];
    double product = 0.0;
    for (Eigen::Index j = 0; j < 3; ++j) product += saddlepoint_log_density(one, Vector::Constant(1, u[j]));
    CHECK(saddlepoint_log_density(joint, p) == doctest::Approx(product).epsilon(1e-10));
  }
}

TEST_CASE("exponential regression CGF closed forms") {
  const auto er = simulate_exponential_regression(60, 3, (Vector(3) << 1.0, 0.4, -0.2).finished(), 8);
  const auto& k = er.cgf;
  CHECK((k.design() * (Vector(3) << 1.0, 0.4, -0.2).finished() - k.rates()).norm() < 1e-12);
  CHECK((k.rates().array() >= 0.05).all());
  const Vector t = (Vector(3) << 0.05, -0.02, 0.01).finished();
  double ref = 0.0;
  for (Eigen::Index j = 0; j < k.design().rows(); ++j)
    ref += -std::log1p(k.design().row(j).dot(t) / k.rates()[j]);
  CHECK(k.cgf(t) == doctest::Approx(ref).epsilon(1e-13));
  Vector mean = Vector::Zero(3);
  for (Eigen::Index j = 0; j < k.design().rows(); ++j) mean -= k.design().row(j).transpose() / k.rates()[j];
  CHECK((k.cgf_gradient(Vector::Zero(3)) - mean).cwiseAbs().maxCoeff() < 1e-10);
  // The domain is bounded by the first row to hit 1 + x't / lambda = 0.
  const Eigen::Index j0 = 0;
  const Vector edge = -1.01 * k.rates()[j0] * k.design().row(j0).transpose() / k.design().row(j0).squaredNorm();
  CHECK_FALSE(k.in_domain(edge));
}

TEST_CASE("gamma and normal CGFs") {
  const GammaCgf g(3.0, 2.0);
  CHECK(g.cgf(Vector::Constant(1, 1.0)) == doctest::Approx(-3.0 * std::log(0.5)).epsilon(1e-14));
  CHECK(g.cgf_gradient(Vector::Zero(1))[0] == doctest::Approx(1.5).epsilon(1e-14));
  CHECK(g.cgf_hessian(Vector::Zero(1))(0, 0) == doctest::Approx(0.75).epsilon(1e-14));
  CHECK_FALSE(g.in_domain(Vector::Constant(1, 2.0)));
  const auto n = NormalCgf::iid_sum(2, 4);
  const Vector t = (Vector(2) << 0.5, -1.0).finished();
  CHECK(n.cgf(t) == doctest::Approx(0.5 * 4.0 * 1.25).epsilon(1e-14));
}

TEST_CASE("Stirling target normalizer and Gaussian target density") {
  const StirlingTarget s(5.0);
  CHECK(s.exact_log_normalizer() == doctest::Approx(std::log(24.0 * std::exp(5.0) / 3125.0)).epsilon(1e-13));
  const GaussianTarget g(Matrix::Identity(2, 2) * 4.0, Vector::Zero(2), 4);
  CHECK(g.exact_log_density(Vector::Zero(2)) == doctest::Approx(std::log(4.0 / (2.0 * M_PI))).epsilon(1e-14));
}
