#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hdapprox/diagnostics.hpp"

namespace hdapprox {

enum class ExperimentKind {
  kLaplaceScaling,
  kMarginal,
  kSaddlepointExactness,
  kDoubleSaddle,
  kDiagnose,
};

std::string to_string(ExperimentKind kind);
ExperimentKind experiment_kind_from_string(const std::string& name);

struct PRule {
  enum class Kind { kFixed, kPower } kind = Kind::kFixed;
  std::size_t p = 1;   // kFixed
  double alpha = 0.0;  // kPower: p = round(n^alpha), at least 1
  std::size_t evaluate(std::size_t n) const;
};

/// Parsed experiment configuration. model_params, oracle_params and audit
/// are validated against the keys each model / oracle understands.
struct ExperimentConfig {
  ExperimentKind experiment = ExperimentKind::kLaplaceScaling;
  std::string model;
  nlohmann::json model_params = nlohmann::json::object();
  std::vector<std::size_t> n_grid;
  PRule p_rule;
  std::size_t replicates = 1;
  std::uint64_t seed = 0;
  std::string oracle;
  nlohmann::json oracle_params = nlohmann::json::object();
  nlohmann::json audit = nlohmann::json::object();
  std::optional<RatePrediction> prediction;
  std::string output;
};

/// Strict parse: unknown or mistyped fields throw ConfigError.
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::string& path);

/// One output row. A grid cell can produce several rows (one per method).
/// Fields that do not apply are NaN; a failed cell carries its message in
/// `error` and NaN elsewhere.
struct CellRecord {
  std::size_t n = 0;
  std::size_t p = 0;
  std::size_t replicate = 0;
  std::string method;
  double log_approx = 0.0;
  double log_oracle = 0.0;
  double oracle_se = 0.0;
  double rel_error = 0.0;
  double runtime_ms = 0.0;
  std::string error;
};

struct RunOptions {
  std::size_t threads = 1;
  // Record wall-clock time per cell. Off by default so that repeated runs
  // produce byte-identical files.
  bool timing = false;
};

struct ScalingRun {
  ExperimentConfig config;
  std::vector<CellRecord> cells;  // sorted by (n, p, replicate, method)
  std::string primary_method;     // rows used for the exponent fit
  std::optional<ScalingFit> fitted;
  std::string fit_error;          // why `fitted` is empty
  RatePrediction prediction;
  nlohmann::json reports = nlohmann::json::array();  // diagnose only

  bool any_failed() const;
};

/// |exp(log_approx - log_oracle) - 1|.
double relative_error(double log_approx, double log_oracle);

/// Runs every (n, p, replicate) cell; cell failures are recorded, never
/// thrown. Throws ConfigError for configurations that cannot run at all.
ScalingRun run_experiment(const ExperimentConfig& config, const RunOptions& opts = {});

/// Refit of the primary-method rows (used by run_experiment and after
/// re-reading a CSV).
std::optional<ScalingFit> fit_cells(const std::vector<CellRecord>& cells,
                                    const std::string& method, std::string* why = nullptr);

/// Per-n means of the primary rows, fitted exponents and the prediction.
nlohmann::json summarize(const ScalingRun& run);

void write_csv(const std::vector<CellRecord>& cells, std::ostream& out);
/// Writes the CSV to `path`; IO failures throw std::runtime_error naming the
/// path.
void emit_csv(const ScalingRun& run, const std::string& path);
std::vector<CellRecord> read_csv(std::istream& in);
std::vector<CellRecord> read_csv(const std::string& path);

}  // namespace hdapprox
