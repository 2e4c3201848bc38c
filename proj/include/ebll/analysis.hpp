#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ebll/autoencoder.hpp"
#include "ebll/lifelong.hpp"
#include "ebll/model.hpp"

namespace ebll::analysis {

// ---------------------------------------------------------------------------
// Contractiveness of F and r on random Gaussian inputs.
//
// Each trial draws two Gaussian distributions whose per-coordinate means and
// variances are uniform in the regime's ranges, samples both, and records the
// mean pairwise MSE between the two groups at the input, feature and
// reconstruction level. Pairwise MSE is the mean over coordinates of the
// squared difference, averaged over cross-group pairs.
// ---------------------------------------------------------------------------

struct GaussianRegime {
  std::string name;
  double mean_low = -1.0;
  double mean_high = 1.0;
  double variance_low = 0.5;
  double variance_high = 1.5;
  /// Both groups share one distribution (degenerate sanity case).
  bool identical_groups = false;

  static GaussianRegime near();
  static GaussianRegime far();
  static GaussianRegime parse(const std::string& name);
};

struct MeanWithError {
  double mean = 0.0;
  double standard_error = 0.0;
};

MeanWithError mean_with_error(std::span<const double> values);

struct ContractivenessReport {
  std::string regime;
  std::size_t trials = 0;
  MeanWithError samples;
  MeanWithError features;
  MeanWithError reconstructions;
  /// (samples, features, reconstructions) per trial.
  std::vector<std::array<double, 3>> per_trial;
};

/// Mean MSE over cross pairs (a_i, b_j), taking at most `max_pairs` pairs in row-major order.
double mean_pairwise_mse(const Tensor& a, const Tensor& b, std::size_t max_pairs);

ContractivenessReport contractiveness_experiment(const model::TaskModel& model, const ae::Autoencoder& ae,
                                                 std::size_t trials, std::size_t samples_per_trial,
                                                 const GaussianRegime& regime, std::uint64_t seed,
                                                 std::size_t max_pairs = 2500);

// ---------------------------------------------------------------------------
// Representation drift of an old task's inputs while a new task trains.
// ---------------------------------------------------------------------------

struct DriftTrace {
  std::vector<std::size_t> epochs;
  /// Mean over the reference set of ||F(x) - F*(x)||^2.
  std::vector<double> distance;
  /// Training code loss of the same epoch (0 at epoch 0 and for strategies without codes).
  std::vector<double> code_loss;
};

double mean_squared_feature_distance(const model::TaskModel& current, const model::TaskModel& reference,
                                     const Tensor& inputs);

/// Epoch observer for lifelong::train_task. The model seen at epoch 0 of
/// `task` becomes F*; every later epoch adds one point to the trace.
class DriftTracker {
public:
  DriftTracker(int task, Tensor reference_inputs);

  void operator()(int task, const lifelong::EpochStats& stats, const model::TaskModel& m);
  const DriftTrace& trace() const noexcept { return trace_; }

private:
  int task_;
  Tensor inputs_;
  Tensor reference_features_;
  DriftTrace trace_;
};

/// Trace from a list of per-epoch models (index 0 = before training).
DriftTrace drift_trace(std::span<const model::TaskModel> per_epoch, const Tensor& reference_inputs,
                       const model::TaskModel& snapshot);

/// True when the means of consecutive non-overlapping windows never decrease.
/// Epoch 0 is excluded; a trailing partial window counts as its own window.
bool windowed_non_decreasing(const DriftTrace& trace, std::size_t window);

// ---------------------------------------------------------------------------
// Two-task bound decomposition: the five distances that, with the
// distillation loss, bound the gap to joint training.
// ---------------------------------------------------------------------------

struct BoundTerms {
  /// mean ||F(x1) - F*(x1)||
  double feature_drift = 0.0;
  /// mean ||F*(x1) - r(F*(x1))||
  double reconstruction_error_old = 0.0;
  /// mean ||r(F*(x1)) - r(F*(x2))|| over paired samples
  double reconstruction_gap = 0.0;
  /// mean ||r(F*(x2)) - r(F(x2))||
  double reconstruction_drift = 0.0;
  /// mean ||r(F(x2)) - F(x2)||
  double reconstruction_error_new = 0.0;
  /// mean ||x1 - x2|| over the same pairs as reconstruction_gap (context, not a term).
  double sample_distance = 0.0;

  static constexpr std::array<const char*, 5> kNames{
      "feature_drift", "reconstruction_error_old", "reconstruction_gap", "reconstruction_drift",
      "reconstruction_error_new"};
  std::array<double, 5> values() const {
    return {feature_drift, reconstruction_error_old, reconstruction_gap, reconstruction_drift,
            reconstruction_error_new};
  }
};

/// x1 comes from the old task, x2 from the new one; pairs are (x1[i], x2[i])
/// for i below the smaller row count.
BoundTerms bound_decomposition(const model::TaskModel& current, const model::TaskModel& snapshot,
                               const ae::Autoencoder& ae, const Tensor& x1, const Tensor& x2);

}  // namespace ebll::analysis
