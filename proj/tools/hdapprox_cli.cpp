// Command-line front end: one subcommand per experiment kind.
//
//   hdapprox laplace-scaling --config run.json [--out cells.csv] [--seed 7]
//            [--threads 4] [--timing] [--summary summary.json]
//
// Exit status: 0 when every cell succeeded, 2 when some cell recorded an
// error, 1 on configuration or IO failure.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "hdapprox/errors.hpp"
#include "hdapprox/experiment.hpp"

namespace {

struct Flags {
  std::string config;
  std::string out;
  std::string summary;
  std::optional<std::uint64_t> seed;
  std::size_t threads = 1;
  bool timing = false;
};

int run(const std::string& kind, const Flags& flags) {
  using namespace hdapprox;
  ExperimentConfig cfg;
  try {
    cfg = load_config(flags.config);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  if (to_string(cfg.experiment) != kind) {
    std::cerr << "error: config describes a '" << to_string(cfg.experiment)
              << "' experiment but the subcommand is '" << kind << "'\n";
    return 1;
  }
  if (flags.seed) cfg.seed = *flags.seed;
  if (!flags.out.empty()) cfg.output = flags.out;
  if (cfg.output.empty()) {
    std::cerr << "error: no output path (set \"output\" in the config or pass --out)\n";
    return 1;
  }

  ScalingRun result;
  try {
    result = run_experiment(cfg, RunOptions{flags.threads, flags.timing});
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  const nlohmann::json summary = summarize(result);
  try {
    if (cfg.experiment == ExperimentKind::kDiagnose) {
      std::ofstream out(cfg.output);
      if (!out) throw std::runtime_error("cannot open " + cfg.output + " for writing");
      out << result.reports.dump(2) << "\n";
      if (!out) throw std::runtime_error("write to " + cfg.output + " failed");
    } else {
      emit_csv(result, cfg.output);
    }
    if (!flags.summary.empty()) {
      std::ofstream out(flags.summary);
      if (!out) throw std::runtime_error("cannot open " + flags.summary + " for writing");
      out << summary.dump(2) << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  std::cout << summary.dump(2) << "\n";
  for (const auto& r : result.cells) {
    if (!r.error.empty()) {
      std::cerr << "cell n=" << r.n << " p=" << r.p << " replicate=" << r.replicate
                << " failed: " << r.error << "\n";
    }
  }
  return result.any_failed() ? 2 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Laplace and saddlepoint approximation experiments"};
  app.require_subcommand(1);

  Flags flags;
  const char* kinds[][2] = {
      {"laplace-scaling", "Laplace normalizer error across an (n, p) grid"},
      {"marginal", "marginal Laplace density against quadrature"},
      {"saddlepoint-exactness", "saddlepoint density against closed forms"},
      {"double-saddle", "double saddlepoint conditional density against the exact one"},
      {"diagnose", "curvature and smoothness audit of fitted models"},
  };
  for (const auto& k : kinds) {
    auto* sub = app.add_subcommand(k[0], k[1]);
    sub->add_option("--config", flags.config, "JSON experiment configuration")
        ->required()
        ->check(CLI::ExistingFile);
    sub->add_option("--out", flags.out, "output path (overrides the config)");
    sub->add_option("--seed", flags.seed, "base seed (overrides the config)");
    sub->add_option("--threads", flags.threads, "grid cells run in parallel (0 = all cores)");
    sub->add_flag("--timing", flags.timing, "record per-cell wall time in runtime_ms");
    sub->add_option("--summary", flags.summary, "also write the JSON summary here");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  for (auto* sub : app.get_subcommands()) return run(sub->get_name(), flags);
  return 1;
}
