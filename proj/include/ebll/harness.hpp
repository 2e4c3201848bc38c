#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "ebll/analysis.hpp"
#include "ebll/config.hpp"
#include "ebll/lifelong.hpp"

namespace ebll::harness {

/// A checkpoint that an analysis needs is absent.
class MissingCheckpoint : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Files of a run directory.
std::filesystem::path metrics_path(const std::filesystem::path& dir);
std::filesystem::path model_path(const std::filesystem::path& dir, int task);
std::filesystem::path autoencoder_path(const std::filesystem::path& dir, int task);
std::filesystem::path memory_path(const std::filesystem::path& dir);
std::filesystem::path log_path(const std::filesystem::path& dir);

/// Train the configured sequence and write metrics.csv, one model checkpoint
/// per task, the autoencoders, the last task's memory archive and run.log.
/// Progress lines go to `log` as well when it is non-null.
lifelong::RunHistory execute_run(const config::RunConfig& cfg, const std::filesystem::path& out_dir,
                                 std::ostream* log = nullptr);

struct SummaryRow {
  std::string strategy;
  /// Task id, or 0 for the average over tasks.
  int task = 0;
  std::size_t runs = 0;
  double accuracy_mean = 0.0;
  double accuracy_std = 0.0;
  double forgetting_mean = 0.0;
  double forgetting_std = 0.0;
  /// Reference accuracy for this task (feature extraction for earlier tasks,
  /// finetuning for the last); NaN when that strategy was not run.
  double reference = 0.0;
  double delta_vs_ref = 0.0;
};

struct RunResult {
  lifelong::Strategy strategy;
  std::uint64_t seed;
  lifelong::EvalRecord final_eval;
};

std::vector<SummaryRow> summarize(const std::vector<RunResult>& runs);
std::string summary_csv(const std::vector<SummaryRow>& rows);

/// Every (strategy, seed) pair runs in <out_dir>/<strategy>_seed<seed>;
/// the summary is written to <out_dir>/summary.csv.
std::vector<SummaryRow> execute_compare(const config::RunConfig& cfg, const std::vector<lifelong::Strategy>& strategies,
                                        const std::vector<std::uint64_t>& seeds, const std::filesystem::path& out_dir,
                                        std::ostream* log = nullptr);

enum class Analysis { Contractiveness, Drift, Bounds };
Analysis parse_analysis(const std::string& name);

/// Writes contractiveness.csv and contractiveness_trials.csv. With `untrained`
/// a freshly initialised model and autoencoder stand in for the checkpoints.
std::vector<analysis::ContractivenessReport> analyze_contractiveness(const config::RunConfig& cfg,
                                                                     const std::filesystem::path& run_dir,
                                                                     const std::filesystem::path& out_dir,
                                                                     bool untrained);

/// Replays training of task analysis.task + 1 from the checkpoint of
/// analysis.task and writes drift.csv.
analysis::DriftTrace analyze_drift(const config::RunConfig& cfg, const std::filesystem::path& run_dir,
                                   const std::filesystem::path& out_dir);

/// Bound terms between the checkpoints of analysis.task and the task after
/// it, on the test inputs of both tasks; writes bounds.csv.
analysis::BoundTerms analyze_bounds(const config::RunConfig& cfg, const std::filesystem::path& run_dir,
                                    const std::filesystem::path& out_dir);

}  // namespace ebll::harness
