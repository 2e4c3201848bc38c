#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ebll/checkpoint.hpp"
#include "ebll/config.hpp"
#include "ebll/harness.hpp"

using namespace ebll;

namespace {

enum Exit { kOk = 0, kFailure = 1, kBadConfig = 2, kDiverged = 3, kMissingCheckpoint = 4 };

struct Common {
  std::string config_path;
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "INI configuration file")->required();
  cmd->add_option("--out", c.out, "Output directory (overrides experiment.output_dir)");
  cmd->add_option("--seed", c.seed, "Experiment seed (overrides experiment.seed)");
}

config::RunConfig load(const Common& c) {
  auto cfg = config::load_config(c.config_path);
  if (c.seed) cfg.set_seed(*c.seed);
  if (c.out) cfg.output_dir = *c.out;
  return cfg;
}

template <class F>
int guarded(F&& body) {
  try {
    body();
    return kOk;
  } catch (const config::ConfigError& e) {
    std::cerr << "invalid config: " << e.what() << "\n";
    return kBadConfig;
  } catch (const data::IdxError& e) {
    std::cerr << "invalid data: " << e.what() << "\n";
    return kBadConfig;
  } catch (const lifelong::DivergenceError& e) {
    std::cerr << "training diverged: " << e.what() << "\n";
    return kDiverged;
  } catch (const harness::MissingCheckpoint& e) {
    std::cerr << e.what() << "\n";
    return kMissingCheckpoint;
  } catch (const checkpoint::CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return kMissingCheckpoint;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Encoder-based lifelong learning experiments"};
  app.require_subcommand(1);

  Common run_opts;
  auto* run = app.add_subcommand("run", "Train one strategy over the configured task sequence");
  add_common(run, run_opts);

  Common cmp_opts;
  std::vector<std::string> strategies;
  std::vector<std::uint64_t> seeds;
  auto* compare = app.add_subcommand("compare", "Run a strategy x seed grid and summarise it");
  add_common(compare, cmp_opts);
  compare->add_option("--strategies", strategies, "Comma-separated strategies (default: the configured one)")
      ->delimiter(',');
  compare->add_option("--seeds", seeds, "Comma-separated seeds (default: the configured seed)")->delimiter(',');

  Common an_opts;
  std::string which;
  std::optional<std::string> run_dir;
  bool untrained = false;
  auto* analyze = app.add_subcommand("analyze", "Diagnostics on the checkpoints of a finished run");
  add_common(analyze, an_opts);
  analyze->add_option("--which", which, "contractiveness, drift or bounds")
      ->required()
      ->check(CLI::IsMember({"contractiveness", "drift", "bounds"}));
  analyze->add_option("--run", run_dir, "Run directory holding the checkpoints (default: experiment.output_dir)");
  analyze->add_flag("--untrained", untrained, "Use a freshly initialised model (contractiveness only)");

  app.add_subcommand("schema", "Print every configuration key with its type and default")->callback([] {
    std::cout << config::schema_description();
  });

  CLI11_PARSE(app, argc, argv);

  if (run->parsed()) {
    return guarded([&] {
      const auto cfg = load(run_opts);
      harness::execute_run(cfg, cfg.output_dir, &std::cout);
    });
  }
  if (compare->parsed()) {
    return guarded([&] {
      const auto cfg = load(cmp_opts);
      std::vector<lifelong::Strategy> list;
      for (const auto& s : strategies) {
        try {
          list.push_back(lifelong::parse_strategy(s));
        } catch (const std::exception& e) {
          throw config::ConfigError("--strategies", e.what());
        }
      }
      if (list.empty()) list.push_back(cfg.strategy);
      if (seeds.empty()) seeds.push_back(cfg.seed);
      const auto rows = harness::execute_compare(cfg, list, seeds, cfg.output_dir, &std::cout);
      std::cout << harness::summary_csv(rows);
    });
  }
  if (analyze->parsed()) {
    return guarded([&] {
      const auto cfg = load(an_opts);
      const std::filesystem::path source = run_dir ? std::filesystem::path(*run_dir)
                                                   : std::filesystem::path(config::load_config(an_opts.config_path).output_dir);
      const std::filesystem::path dest = an_opts.out ? std::filesystem::path(*an_opts.out) : source;
      switch (harness::parse_analysis(which)) {
        case harness::Analysis::Contractiveness:
          for (const auto& r : harness::analyze_contractiveness(cfg, source, dest, untrained)) {
            std::cout << r.regime << ": samples " << r.samples.mean << " features " << r.features.mean
                      << " reconstructions " << r.reconstructions.mean << "\n";
          }
          break;
        case harness::Analysis::Drift: {
          const auto trace = harness::analyze_drift(cfg, source, dest);
          std::cout << "drift epochs " << trace.distance.size() << ", final " << trace.distance.back() << "\n";
          break;
        }
        case harness::Analysis::Bounds: {
          const auto terms = harness::analyze_bounds(cfg, source, dest);
          const auto values = terms.values();
          for (std::size_t i = 0; i < values.size(); ++i) {
            std::cout << analysis::BoundTerms::kNames[i] << " " << values[i] << "\n";
          }
          std::cout << "sample_distance " << terms.sample_distance << "\n";
          break;
        }
      }
    });
  }
  return kOk;
}
