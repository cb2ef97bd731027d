#include "hdapprox/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <memory>
#include <set>
#include <thread>

#include "hdapprox/errors.hpp"
#include "hdapprox/laplace.hpp"
#include "hdapprox/models.hpp"
#include "hdapprox/oracle.hpp"
#include "hdapprox/rng.hpp"
#include "hdapprox/saddlepoint.hpp"

namespace hdapprox {

using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kLog2Pi = 1.8378770664093454835606594728112;

// ---------------------------------------------------------------------------
// Strict JSON access

void reject_unknown(const json& obj, const std::set<std::string>& allowed,
                    const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.count(key)) throw ConfigError("unknown field '" + key + "' in " + where);
  }
}

double get_number(const json& obj, const std::string& key, double fallback,
                  const std::string& where) {
  if (!obj.contains(key)) return fallback;
  const auto& v = obj.at(key);
  if (!v.is_number()) throw ConfigError(where + "." + key + " must be a number");
  return v.get<double>();
}

bool is_count(const json& v) {
  return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
}

std::size_t get_count(const json& obj, const std::string& key, std::size_t fallback,
                      const std::string& where) {
  if (!obj.contains(key)) return fallback;
  const auto& v = obj.at(key);
  if (!is_count(v)) {
    throw ConfigError(where + "." + key + " must be a non-negative integer");
  }
  return v.get<std::size_t>();
}

bool get_bool(const json& obj, const std::string& key, bool fallback, const std::string& where) {
  if (!obj.contains(key)) return fallback;
  const auto& v = obj.at(key);
  if (!v.is_boolean()) throw ConfigError(where + "." + key + " must be true or false");
  return v.get<bool>();
}

std::string get_string(const json& obj, const std::string& key, const std::string& fallback,
                       const std::string& where) {
  if (!obj.contains(key)) return fallback;
  const auto& v = obj.at(key);
  if (!v.is_string()) throw ConfigError(where + "." + key + " must be a string");
  return v.get<std::string>();
}

// beta0 may list fewer than p entries; the rest are zero.
Vector get_beta0(const json& params, std::size_t p) {
  Vector beta = Vector::Zero(static_cast<Eigen::Index>(p));
  if (!params.contains("beta0")) return beta;
  const auto& v = params.at("beta0");
  if (!v.is_array()) throw ConfigError("model_params.beta0 must be an array of numbers");
  if (v.size() > p) {
    throw ConfigError("model_params.beta0 has " + std::to_string(v.size()) +
                      " entries but p = " + std::to_string(p));
  }
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i].is_number()) throw ConfigError("model_params.beta0 must hold numbers");
    beta[static_cast<Eigen::Index>(i)] = v[i].get<double>();
  }
  return beta;
}

// ---------------------------------------------------------------------------
// Experiment / model compatibility

const std::map<std::string, std::set<std::string>>& target_model_params() {
  static const std::map<std::string, std::set<std::string>> m{
      {"gaussian", {"prior_sd"}},
      {"stirling", {}},
      {"logistic", {"prior_sd", "beta0"}},
      {"poisson", {"prior_sd", "beta0"}},
      {"exponential", {"prior_sd", "beta0", "min_rate"}},
      {"gamma-rates", {"rate1", "rate2", "parametrization"}},
  };
  return m;
}

const std::map<std::string, std::set<std::string>>& cgf_model_params() {
  static const std::map<std::string, std::set<std::string>> m{
      {"gamma", {"rate", "renormalize"}},
      {"normal", {}},
      {"exponential-regression", {"beta0", "min_rate"}},
  };
  return m;
}

const std::set<std::string> kMarginalParams{"interest_index", "psi_points", "psi_sds"};

std::optional<std::size_t> required_p(const std::string& model) {
  if (model == "stirling" || model == "gamma") return 1;
  if (model == "gamma-rates" || model == "exp-means") return 2;
  return std::nullopt;
}

std::string primary_method(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::kLaplaceScaling: return "laplace";
    case ExperimentKind::kMarginal: return "marginal-laplace";
    case ExperimentKind::kSaddlepointExactness: return "saddlepoint";
    case ExperimentKind::kDoubleSaddle: return "double-saddle";
    case ExperimentKind::kDiagnose: return "audit";
  }
  return "";
}

RatePrediction default_prediction(const ExperimentConfig& c) {
  RatePrediction r;
  switch (c.experiment) {
    case ExperimentKind::kLaplaceScaling:
    case ExperimentKind::kDiagnose:
      if (c.model == "logistic") r.source = RateSource::kLogistic;
      else if (c.model == "poisson" || c.model == "exponential") r.source = RateSource::kGlm;
      else r.source = RateSource::kLaplaceGeneral;
      break;
    case ExperimentKind::kMarginal: r.source = RateSource::kMarginal; break;
    case ExperimentKind::kSaddlepointExactness:
    case ExperimentKind::kDoubleSaddle: r.source = RateSource::kSaddlepoint; break;
  }
  return r;
}

void validate(const ExperimentConfig& c) {
  const auto& tm = target_model_params();
  const auto& cm = cgf_model_params();
  std::set<std::string> allowed;
  std::set<std::string> oracles;
  switch (c.experiment) {
    case ExperimentKind::kLaplaceScaling:
    case ExperimentKind::kMarginal:
    case ExperimentKind::kDiagnose: {
      auto it = tm.find(c.model);
      if (it == tm.end()) {
        throw ConfigError("model '" + c.model + "' is not available for " +
                          to_string(c.experiment));
      }
      allowed = it->second;
      if (c.experiment == ExperimentKind::kMarginal) {
        allowed.insert(kMarginalParams.begin(), kMarginalParams.end());
        oracles = {"quadrature"};
      } else if (c.experiment == ExperimentKind::kLaplaceScaling) {
        oracles = {"quadrature", "importance-sampling"};
        if (c.model == "gaussian" || c.model == "stirling") oracles.insert("closed-form");
      } else {
        oracles = {"none", ""};
      }
      break;
    }
    case ExperimentKind::kSaddlepointExactness: {
      auto it = cm.find(c.model);
      if (it == cm.end()) {
        throw ConfigError("model '" + c.model + "' is not available for saddlepoint-exactness");
      }
      allowed = it->second;
      oracles = c.model == "exponential-regression" ? std::set<std::string>{"none", ""}
                                                    : std::set<std::string>{"closed-form"};
      break;
    }
    case ExperimentKind::kDoubleSaddle:
      if (c.model != "exp-means") {
        throw ConfigError("double-saddle supports model 'exp-means' only");
      }
      allowed = {"rate", "renormalize"};
      oracles = {"closed-form"};
      break;
  }
  reject_unknown(c.model_params, allowed, "model_params");
  if (!oracles.count(c.oracle)) {
    std::string list;
    for (const auto& o : oracles) if (!o.empty()) list += (list.empty() ? "" : ", ") + o;
    throw ConfigError("oracle '" + c.oracle + "' cannot be used here (choose: " + list + ")");
  }
  reject_unknown(c.oracle_params, {"draws", "scale", "half_width_sds", "rel_tol"},
                 "oracle_params");
  if (get_count(c.oracle_params, "draws", 1000, "oracle_params") < 1000) {
    throw ConfigError("oracle_params.draws must be at least 1000");
  }
  reject_unknown(c.audit, {"samples", "tail_draws", "ball_radius", "max_slices"}, "audit");

  if (auto p = required_p(c.model)) {
    if (c.p_rule.kind != PRule::Kind::kFixed || c.p_rule.p != *p) {
      throw ConfigError("model '" + c.model + "' requires p_rule {\"kind\": \"fixed\", \"p\": " +
                        std::to_string(*p) + "}");
    }
  }
  if (c.experiment == ExperimentKind::kMarginal) {
    const auto idx = get_count(c.model_params, "interest_index", 0, "model_params");
    for (auto n : c.n_grid) {
      if (idx >= c.p_rule.evaluate(n)) throw ConfigError("interest_index must be < p");
    }
  }
}

// ---------------------------------------------------------------------------
// Target construction

struct TargetCell {
  std::unique_ptr<GlmModel> glm;  // owns the data behind `target` when needed
  std::unique_ptr<LogTargetModel> target;
  Vector init;
  std::optional<double> exact_log_normalizer;
};

TargetCell build_target(const ExperimentConfig& c, std::size_t n, std::size_t p,
                        std::uint64_t cell_seed) {
  const json& mp = c.model_params;
  const std::string w = "model_params";
  TargetCell cell;
  if (c.model == "gaussian") {
    auto g = std::make_unique<GaussianTarget>(
        simulate_gaussian_conjugate(n, p, cell_seed, get_number(mp, "prior_sd", 1.0, w)));
    cell.init = Vector::Zero(static_cast<Eigen::Index>(p));
    cell.exact_log_normalizer = g->exact_log_normalizer();
    cell.target = std::move(g);
  } else if (c.model == "stirling") {
    auto s = std::make_unique<StirlingTarget>(static_cast<double>(n));
    cell.init = Vector::Constant(1, 1.0);
    cell.exact_log_normalizer = s->exact_log_normalizer();
    cell.target = std::move(s);
  } else if (c.model == "logistic") {
    cell.target = std::make_unique<LogisticRegressionModel>(simulate_logistic(
        n, p, get_beta0(mp, p), cell_seed, get_number(mp, "prior_sd", 1.0, w)));
    cell.init = Vector::Zero(static_cast<Eigen::Index>(p));
  } else if (c.model == "poisson" || c.model == "exponential") {
    const auto family = glm_family_from_string(c.model);
    Vector beta0 = get_beta0(mp, p);
    if (family == GlmFamily::kExponential && !mp.contains("beta0")) beta0[0] = -1.0;
    if (family == GlmFamily::kExponential && beta0.isZero()) {
      throw ConfigError("exponential model needs a non-zero beta0");
    }
    auto sim = simulate_glm(family, n, p, beta0, cell_seed, get_number(mp, "prior_sd", 1.0, w),
                            get_number(mp, "min_rate", 0.05, w));
    cell.init = family == GlmFamily::kExponential ? beta0 : Vector::Zero(beta0.size());
    cell.target = std::make_unique<GlmModel>(std::move(sim.model));
  } else if (c.model == "gamma-rates") {
    if (n % 2 != 0) throw ConfigError("gamma-rates needs an even n (two equal groups)");
    const std::string param = get_string(mp, "parametrization", "mixed", w);
    if (param != "mixed" && param != "canonical") {
      throw ConfigError("model_params.parametrization must be 'mixed' or 'canonical'");
    }
    cell.glm = std::make_unique<GlmModel>(make_gamma_rates_model(
        n / 2, get_number(mp, "rate1", 1.0, w), get_number(mp, "rate2", 1.0, w), cell_seed));
    // Canonical mle in closed form: tau = -1/mean(group 1), psi = tau2 - tau.
    const Matrix& x = cell.glm->design();
    const Vector& y = cell.glm->response();
    double s1 = 0.0;
    double s2 = 0.0;
    for (Eigen::Index j = 0; j < y.size(); ++j) (x(j, 0) > 0.5 ? s2 : s1) += y[j];
    const double m = static_cast<double>(n / 2);
    Vector mle(2);
    mle[1] = -m / s1;
    mle[0] = -m / s2 - mle[1];
    if (param == "canonical") {
      cell.init = mle;
      cell.target = std::make_unique<GlmModel>(*cell.glm);
    } else {
      auto mixed = std::make_unique<MixedParametrizationTarget>(*cell.glm, 0, mle);
      cell.init = mixed->map().to_mean(mle);
      cell.target = std::move(mixed);
    }
  } else {
    throw ConfigError("unknown model '" + c.model + "'");
  }
  return cell;
}

OracleEstimate run_target_oracle(const ExperimentConfig& c, const TargetCell& cell,
                                 const ModeResult& mode, std::uint64_t cell_seed) {
  const json& op = c.oracle_params;
  const std::string w = "oracle_params";
  if (c.oracle == "closed-form") {
    return {*cell.exact_log_normalizer, 0.0, OracleMethod::kClosedForm, 0, 0.0};
  }
  if (c.oracle == "quadrature") {
    return quadrature_log_normalizer(*cell.target, mode, get_number(op, "half_width_sds", 12.0, w),
                                     get_number(op, "rel_tol", 1e-10, w));
  }
  return importance_log_normalizer(*cell.target, mode, get_count(op, "draws", 100000, w),
                                   get_number(op, "scale", 1.2, w),
                                   derive_key({cell_seed, 0x0ac1e}));
}

CellRecord make_row(std::size_t n, std::size_t p, std::size_t rep, const std::string& method,
                    double approx, double oracle, double se) {
  CellRecord r;
  r.n = n;
  r.p = p;
  r.replicate = rep;
  r.method = method;
  r.log_approx = approx;
  r.log_oracle = oracle;
  r.oracle_se = se;
  r.rel_error = std::isfinite(approx) && std::isfinite(oracle) ? relative_error(approx, oracle)
                                                               : kNaN;
  r.runtime_ms = 0.0;
  return r;
}

struct CellOutput {
  std::vector<CellRecord> rows;
  json report;  // diagnose only
};

// ---------------------------------------------------------------------------
// Per-experiment cell bodies

CellOutput laplace_cell(const ExperimentConfig& c, std::size_t n, std::size_t p, std::size_t rep,
                        std::uint64_t seed) {
  const auto cell = build_target(c, n, p, seed);
  const auto mode = find_mode(*cell.target, cell.init);
  const auto oracle = run_target_oracle(c, cell, mode, seed);
  return {{make_row(n, p, rep, "laplace", laplace_log_normalizer(mode), oracle.value,
                    oracle.std_error)},
          nullptr};
}

CellOutput marginal_cell(const ExperimentConfig& c, std::size_t n, std::size_t p,
                         std::size_t rep, std::uint64_t seed) {
  const json& mp = c.model_params;
  const std::string w = "model_params";
  const auto idx = get_count(mp, "interest_index", 0, w);
  const auto points = std::max<std::size_t>(get_count(mp, "psi_points", 9, w), 1);
  const double sds = get_number(mp, "psi_sds", 2.0, w);
  const double half_width = get_number(c.oracle_params, "half_width_sds", 12.0, "oracle_params");
  const double rel_tol = get_number(c.oracle_params, "rel_tol", 1e-10, "oracle_params");

  const auto cell = build_target(c, n, p, seed);
  const auto& target = *cell.target;
  const auto mode = find_mode(target, cell.init);
  const auto log_z = quadrature_log_normalizer(target, mode, half_width, rel_tol).value;

  // Posterior SD of the interest coordinate from the curvature at the mode.
  const Matrix linv = mode.neg_hess_chol.triangularView<Eigen::Lower>().solve(
      Matrix::Identity(mode.neg_hess_chol.rows(), mode.neg_hess_chol.cols()));
  const double sd = linv.col(static_cast<Eigen::Index>(idx)).norm();
  const double center = mode.theta_hat[static_cast<Eigen::Index>(idx)];

  // The row reports the worst point of the psi grid.
  CellRecord worst;
  worst.rel_error = -1.0;
  for (std::size_t k = 0; k < points; ++k) {
    const double frac = points == 1 ? 0.0
                                    : -1.0 + 2.0 * static_cast<double>(k) /
                                                 static_cast<double>(points - 1);
    const double psi = center + sds * frac * sd;
    const double approx = marginal_laplace_log_density(target, idx, psi, mode);
    const auto exact = quadrature_log_marginal(target, mode, idx, psi, log_z, half_width, rel_tol);
    auto row = make_row(n, p, rep, "marginal-laplace", approx, exact.value, 0.0);
    if (!(row.rel_error <= worst.rel_error)) worst = row;
  }
  return {{worst}, nullptr};
}

CellOutput saddle_cell(const ExperimentConfig& c, std::size_t n, std::size_t p, std::size_t rep,
                       std::uint64_t seed) {
  const json& mp = c.model_params;
  const std::string w = "model_params";
  CounterRng rng(derive_key({seed, 0x5add1e}));
  CellOutput out;
  if (c.model == "gamma") {
    const double rate = get_number(mp, "rate", 1.0, w);
    const GammaCgf cgf(static_cast<double>(n), rate);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += rng.exponential(rate);
    ClosedFormParams params;
    params.shape = static_cast<double>(n);
    params.rate = rate;
    const double exact = closed_form_density(ClosedFormFamily::kGamma, params, s);
    const Vector sv = Vector::Constant(1, s);
    const double approx = saddlepoint_log_density(cgf, sv);
    out.rows.push_back(make_row(n, p, rep, "saddlepoint", approx, exact, 0.0));
    if (get_bool(mp, "renormalize", true, w)) {
      const double nd = static_cast<double>(n);
      const double hi = (nd + 40.0 * std::sqrt(nd) + 40.0) / rate;
      auto logdens = [&cgf](double x) {
        return saddlepoint_log_density(cgf, Vector::Constant(1, x));
      };
      const auto renorm = renormalize_1d(logdens, {0.0, hi, true, false});
      out.rows.push_back(make_row(n, p, rep, "saddlepoint-renormalized",
                                  renorm.log_density(s), exact, 0.0));
    }
  } else if (c.model == "normal") {
    const NormalCgf cgf = NormalCgf::iid_sum(p, n);
    const double nd = static_cast<double>(n);
    Vector s(static_cast<Eigen::Index>(p));
    for (Eigen::Index i = 0; i < s.size(); ++i) s[i] = std::sqrt(nd) * rng.normal();
    const double exact =
        -0.5 * static_cast<double>(p) * (kLog2Pi + std::log(nd)) - 0.5 * s.squaredNorm() / nd;
    out.rows.push_back(make_row(n, p, rep, "saddlepoint", saddlepoint_log_density(cgf, s), exact,
                                0.0));
  } else {
    const Vector beta0 = get_beta0(mp, p);
    if (beta0.isZero()) throw ConfigError("exponential-regression needs a non-zero beta0");
    const auto sim = simulate_exponential_regression(n, p, beta0, seed,
                                                     get_number(mp, "min_rate", 0.05, w));
    out.rows.push_back(make_row(n, p, rep, "saddlepoint",
                                saddlepoint_log_density(sim.cgf, sim.statistic), kNaN, kNaN));
  }
  return out;
}

CellOutput double_saddle_cell(const ExperimentConfig& c, std::size_t n, std::size_t p,
                              std::size_t rep, std::uint64_t seed) {
  const json& mp = c.model_params;
  const std::string w = "model_params";
  if (n % 2 != 0) throw ConfigError("exp-means needs an even n (two equal groups)");
  const std::size_t m = n / 2;
  const double rate = get_number(mp, "rate", 1.0, w);
  const auto data = simulate_exponential_means(2, m, Vector::Constant(2, rate), seed);
  const double u1 = data.sums()[0];
  const double total = data.sums().sum();
  const ExponentialMeansNullCgf cgf(2, m, rate);
  const Vector s2 = Vector::Constant(1, total);
  auto logdens = [&](double x) {
    return double_saddle_log_conditional(cgf, x, s2).log_cond_density;
  };
  const double exact = exp_means_exact_conditional(m, u1, total);
  CellOutput out;
  out.rows.push_back(make_row(n, p, rep, "double-saddle", logdens(u1), exact, 0.0));
  if (get_bool(mp, "renormalize", true, w)) {
    const auto renorm = renormalize_1d(logdens, {0.0, total, true, true});
    out.rows.push_back(make_row(n, p, rep, "double-saddle-renormalized", renorm.log_density(u1),
                                exact, 0.0));
  }
  return out;
}

CellOutput diagnose_cell(const ExperimentConfig& c, std::size_t n, std::size_t p,
                         std::size_t rep, std::uint64_t seed) {
  const std::string w = "audit";
  const auto cell = build_target(c, n, p, seed);
  const auto mode = find_mode(*cell.target, cell.init);
  AuditOptions ao;
  ao.samples = get_count(c.audit, "samples", 100, w);
  ao.tail_draws = get_count(c.audit, "tail_draws", 0, w);
  ao.ball_radius = get_number(c.audit, "ball_radius", 0.0, w);
  ao.max_slices = get_count(c.audit, "max_slices", 50, w);
  ao.seed = seed;
  const auto rep_report = audit_assumptions(*cell.target, mode, ao);
  CellOutput out;
  out.rows.push_back(make_row(n, p, rep, "audit", kNaN, kNaN, kNaN));
  out.report = json{{"n", n}, {"p", p}, {"replicate", rep}, {"report", rep_report}};
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------

std::string to_string(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::kLaplaceScaling: return "laplace-scaling";
    case ExperimentKind::kMarginal: return "marginal";
    case ExperimentKind::kSaddlepointExactness: return "saddlepoint-exactness";
    case ExperimentKind::kDoubleSaddle: return "double-saddle";
    case ExperimentKind::kDiagnose: return "diagnose";
  }
  return "unknown";
}

ExperimentKind experiment_kind_from_string(const std::string& name) {
  for (auto k : {ExperimentKind::kLaplaceScaling, ExperimentKind::kMarginal,
                 ExperimentKind::kSaddlepointExactness, ExperimentKind::kDoubleSaddle,
                 ExperimentKind::kDiagnose}) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("unknown experiment '" + name + "'");
}

std::size_t PRule::evaluate(std::size_t n) const {
  if (kind == Kind::kFixed) return p;
  const auto v = static_cast<std::size_t>(std::llround(std::pow(static_cast<double>(n), alpha)));
  return std::max<std::size_t>(v, 1);
}

ExperimentConfig parse_config(const json& j) {
  reject_unknown(j, {"experiment", "model", "model_params", "n_grid", "p_rule", "replicates",
                     "seed", "oracle", "oracle_params", "audit", "prediction", "output"},
                 "config");
  const std::string w = "config";
  ExperimentConfig c;
  for (const char* key : {"experiment", "model", "n_grid"}) {
    if (!j.contains(key)) throw ConfigError(std::string("config is missing '") + key + "'");
  }
  c.experiment = experiment_kind_from_string(get_string(j, "experiment", "", w));
  c.model = get_string(j, "model", "", w);
  if (j.contains("model_params")) c.model_params = j.at("model_params");
  if (!c.model_params.is_object()) throw ConfigError("model_params must be an object");

  const auto& grid = j.at("n_grid");
  if (!grid.is_array() || grid.empty()) throw ConfigError("n_grid must be a non-empty array");
  for (const auto& v : grid) {
    if (!is_count(v) || v.get<std::size_t>() < 1) {
      throw ConfigError("n_grid entries must be positive integers");
    }
    c.n_grid.push_back(v.get<std::size_t>());
  }

  if (j.contains("p_rule")) {
    const auto& pr = j.at("p_rule");
    reject_unknown(pr, {"kind", "p", "alpha"}, "p_rule");
    const std::string kind = get_string(pr, "kind", "", "p_rule");
    if (kind == "fixed") {
      if (pr.contains("alpha")) throw ConfigError("p_rule.alpha is only valid for kind 'power'");
      c.p_rule.kind = PRule::Kind::kFixed;
      c.p_rule.p = get_count(pr, "p", 0, "p_rule");
      if (c.p_rule.p < 1) throw ConfigError("p_rule.p must be a positive integer");
    } else if (kind == "power") {
      if (pr.contains("p")) throw ConfigError("p_rule.p is only valid for kind 'fixed'");
      if (!pr.contains("alpha")) throw ConfigError("p_rule of kind 'power' needs alpha");
      c.p_rule.kind = PRule::Kind::kPower;
      c.p_rule.alpha = get_number(pr, "alpha", 0.0, "p_rule");
      if (!(c.p_rule.alpha >= 0.0 && c.p_rule.alpha < 1.0)) {
        throw ConfigError("p_rule.alpha must lie in [0, 1)");
      }
    } else {
      throw ConfigError("p_rule.kind must be 'fixed' or 'power'");
    }
  }

  c.replicates = get_count(j, "replicates", 1, w);
  if (c.replicates < 1) throw ConfigError("replicates must be at least 1");
  c.seed = get_count(j, "seed", 0, w);
  c.oracle = get_string(j, "oracle", "", w);
  if (j.contains("oracle_params")) c.oracle_params = j.at("oracle_params");
  if (j.contains("audit")) c.audit = j.at("audit");
  if (j.contains("prediction")) {
    const auto& pj = j.at("prediction");
    reject_unknown(pj, {"source", "c_inf", "c3", "c4", "zeta"}, "prediction");
    RatePrediction r;
    try {
      r.source = rate_source_from_string(get_string(pj, "source", "", "prediction"));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    r.c_inf = get_number(pj, "c_inf", r.c_inf, "prediction");
    r.c3 = get_number(pj, "c3", r.c3, "prediction");
    r.c4 = get_number(pj, "c4", r.c4, "prediction");
    r.zeta = get_number(pj, "zeta", r.zeta, "prediction");
    c.prediction = r;
  }
  c.output = get_string(j, "output", "", w);
  validate(c);
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path + " is not valid JSON: " + e.what());
  }
  return parse_config(j);
}

bool ScalingRun::any_failed() const {
  return std::any_of(cells.begin(), cells.end(), [](const CellRecord& r) { return !r.error.empty(); });
}

namespace {

// Delta-method standard error of log(rel_error) induced by the oracle's
// Monte Carlo error.
double log_error_se(const CellRecord& r) {
  if (!(r.oracle_se > 0.0)) return 0.0;
  const double d = r.log_approx - r.log_oracle;
  return r.oracle_se * std::exp(d) / std::abs(std::expm1(d));
}

}  // namespace

std::optional<ScalingFit> fit_cells(const std::vector<CellRecord>& cells,
                                    const std::string& method, std::string* why) {
  std::vector<ScalingCell> pts;
  std::set<std::size_t> ps;
  for (const auto& r : cells) {
    if (r.method != method || !r.error.empty()) continue;
    if (!(r.rel_error > 0.0) || !std::isfinite(r.rel_error)) continue;
    pts.push_back({static_cast<double>(r.n), static_cast<double>(r.p), r.rel_error,
                   log_error_se(r)});
    ps.insert(r.p);
  }
  try {
    return ps.size() >= 2 ? fit_scaling(pts) : fit_scaling_n(pts);
  } catch (const NumericalError& e) {
    if (why) *why = e.what();
  } catch (const std::invalid_argument& e) {
    if (why) *why = e.what();
  }
  return std::nullopt;
}

ScalingRun run_experiment(const ExperimentConfig& config, const RunOptions& opts) {
  validate(config);
  ScalingRun run;
  run.config = config;
  run.primary_method = primary_method(config.experiment);
  run.prediction = config.prediction.value_or(default_prediction(config));

  struct Task {
    std::size_t n, p, rep;
  };
  std::vector<Task> tasks;
  std::vector<std::size_t> grid = config.n_grid;
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  for (auto n : grid)
    for (std::size_t r = 0; r < config.replicates; ++r) tasks.push_back({n, config.p_rule.evaluate(n), r});

  std::vector<CellOutput> results(tasks.size());
  auto run_one = [&](std::size_t i) {
    const auto& t = tasks[i];
    const auto seed = derive_key({config.seed, t.n, t.p, t.rep});
    const auto start = std::chrono::steady_clock::now();
    CellOutput out;
    try {
      switch (config.experiment) {
        case ExperimentKind::kLaplaceScaling: out = laplace_cell(config, t.n, t.p, t.rep, seed); break;
        case ExperimentKind::kMarginal: out = marginal_cell(config, t.n, t.p, t.rep, seed); break;
        case ExperimentKind::kSaddlepointExactness: out = saddle_cell(config, t.n, t.p, t.rep, seed); break;
        case ExperimentKind::kDoubleSaddle: out = double_saddle_cell(config, t.n, t.p, t.rep, seed); break;
        case ExperimentKind::kDiagnose: out = diagnose_cell(config, t.n, t.p, t.rep, seed); break;
      }
    } catch (const std::exception& e) {
      CellRecord r = make_row(t.n, t.p, t.rep, run.primary_method, kNaN, kNaN, kNaN);
      r.error = e.what();
      out.rows = {r};
      out.report = json{{"n", t.n}, {"p", t.p}, {"replicate", t.rep}, {"error", e.what()}};
    }
    if (opts.timing) {
      const double ms = std::chrono::duration<double, std::milli>(
                            std::chrono::steady_clock::now() - start).count();
      for (auto& r : out.rows) r.runtime_ms = ms;
    }
    results[i] = std::move(out);
  };

  std::size_t threads = opts.threads == 0 ? std::thread::hardware_concurrency() : opts.threads;
  threads = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(tasks.size(), 1));
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < tasks.size();) run_one(i);
  };
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t k = 0; k < threads; ++k) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  for (auto& res : results) {
    for (auto& r : res.rows) run.cells.push_back(std::move(r));
    if (config.experiment == ExperimentKind::kDiagnose) run.reports.push_back(std::move(res.report));
  }
  if (config.experiment != ExperimentKind::kDiagnose) {
    run.fitted = fit_cells(run.cells, run.primary_method, &run.fit_error);
  }
  return run;
}

json summarize(const ScalingRun& run) {
  json j;
  j["experiment"] = to_string(run.config.experiment);
  j["model"] = run.config.model;
  j["primary_method"] = run.primary_method;
  std::size_t failed = 0;
  for (const auto& r : run.cells) failed += !r.error.empty();
  j["failed_cells"] = failed;

  json pred;
  pred["source"] = to_string(run.prediction.source);
  pred["exponent_p"] = run.prediction.exponent_p();
  pred["exponent_n"] = run.prediction.exponent_n();
  pred["includes_log_n"] = run.prediction.includes_log_n();
  j["prediction"] = pred;

  if (run.config.experiment == ExperimentKind::kDiagnose) {
    j["reports"] = run.reports;
    return j;
  }
  if (run.fitted) {
    j["fitted"] = *run.fitted;
  } else {
    j["fitted"] = nullptr;
    j["fit_error"] = run.fit_error;
  }

  // Mean relative error per n with its Monte Carlo standard error.
  std::map<std::size_t, std::vector<const CellRecord*>> by_n;
  for (const auto& r : run.cells) {
    if (r.method == run.primary_method && r.error.empty() && std::isfinite(r.rel_error)) {
      by_n[r.n].push_back(&r);
    }
  }
  json per_n = json::array();
  for (const auto& [n, rows] : by_n) {
    double mean = 0.0;
    double p_mean = 0.0;
    double mc_var = 0.0;
    for (const auto* r : rows) {
      mean += r->rel_error;
      p_mean += static_cast<double>(r->p);
      // d rel_error / d log_oracle = exp(log_approx - log_oracle) in size.
      const double se = std::isfinite(r->oracle_se) ? r->oracle_se : 0.0;
      const double g = std::exp(r->log_approx - r->log_oracle) * se;
      mc_var += g * g;
    }
    const double k = static_cast<double>(rows.size());
    mean /= k;
    p_mean /= k;
    per_n.push_back({{"n", n},
                     {"p", p_mean},
                     {"cells", rows.size()},
                     {"mean_rel_error", mean},
                     {"mc_se", std::sqrt(mc_var) / k},
                     {"predicted_rate", predicted_rate(run.prediction, static_cast<double>(n), p_mean)}});
  }
  j["per_n"] = per_n;
  return j;
}

}  // namespace hdapprox
