#include "ebll/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ebll/rng.hpp"

namespace ebll::analysis {

GaussianRegime GaussianRegime::near() { return {"near", -1.0, 1.0, 0.5, 1.5, false}; }

GaussianRegime GaussianRegime::far() { return {"far", -10.0, 10.0, 0.5, 1.5, false}; }

GaussianRegime GaussianRegime::parse(const std::string& name) {
  if (name == "near") return near();
  if (name == "far") return far();
  throw std::invalid_argument("unknown regime '" + name + "' (expected near or far)");
}

MeanWithError mean_with_error(std::span<const double> values) {
  MeanWithError out;
  if (values.empty()) return out;
  for (double v : values) out.mean += v;
  out.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - out.mean) * (v - out.mean);
    const double sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
    out.standard_error = sd / std::sqrt(static_cast<double>(values.size()));
  }
  return out;
}

double mean_pairwise_mse(const Tensor& a, const Tensor& b, std::size_t max_pairs) {
  if (a.cols() != b.cols()) throw DimensionError("mean_pairwise_mse: width mismatch");
  double total = 0.0;
  std::size_t pairs = 0;
  const double width = static_cast<double>(a.cols());
  for (std::size_t i = 0; i < a.rows() && pairs < max_pairs; ++i) {
    const auto x = a.row(i);
    for (std::size_t j = 0; j < b.rows() && pairs < max_pairs; ++j) {
      const auto y = b.row(j);
      double s = 0.0;
      for (std::size_t k = 0; k < x.size(); ++k) s += (x[k] - y[k]) * (x[k] - y[k]);
      total += s / width;
      ++pairs;
    }
  }
  return pairs ? total / static_cast<double>(pairs) : 0.0;
}

namespace {

struct Gaussian {
  std::vector<double> mean;
  std::vector<double> stddev;
};

Gaussian draw_distribution(const GaussianRegime& regime, std::size_t dim, Rng& rng) {
  std::uniform_real_distribution<double> mean(regime.mean_low, regime.mean_high);
  std::uniform_real_distribution<double> var(regime.variance_low, regime.variance_high);
  Gaussian g;
  for (std::size_t i = 0; i < dim; ++i) {
    g.mean.push_back(regime.mean_low == regime.mean_high ? regime.mean_low : mean(rng));
    g.stddev.push_back(std::sqrt(regime.variance_low == regime.variance_high ? regime.variance_low : var(rng)));
  }
  return g;
}

Tensor sample(const Gaussian& g, std::size_t n, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor x({n, g.mean.size()});
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t i = 0; i < g.mean.size(); ++i) x.at(r, i) = g.mean[i] + g.stddev[i] * normal(rng);
  }
  return x;
}

}  // namespace

ContractivenessReport contractiveness_experiment(const model::TaskModel& model, const ae::Autoencoder& ae,
                                                 std::size_t trials, std::size_t samples_per_trial,
                                                 const GaussianRegime& regime, std::uint64_t seed,
                                                 std::size_t max_pairs) {
  if (trials < 2) throw std::invalid_argument("contractiveness_experiment: needs at least 2 trials");
  if (samples_per_trial == 0) throw std::invalid_argument("contractiveness_experiment: samples_per_trial must be >= 1");
  if (ae.feature_dim() != model.architecture().feature_dim()) {
    throw DimensionError("contractiveness_experiment: autoencoder does not match the feature width");
  }
  const std::size_t dim = model.architecture().input_dim;
  ContractivenessReport report;
  report.regime = regime.name;
  report.trials = trials;
  std::vector<double> xs, fs, rs;
  for (std::size_t t = 0; t < trials; ++t) {
    Rng rng(derive_seed(seed, Stream::Analysis, {t}));
    const Gaussian ga = draw_distribution(regime, dim, rng);
    const Gaussian gb = regime.identical_groups ? ga : draw_distribution(regime, dim, rng);
    const Tensor a = sample(ga, samples_per_trial, rng);
    const Tensor b = sample(gb, samples_per_trial, rng);
    const Tensor fa = model.features(a);
    const Tensor fb = model.features(b);
    const std::array<double, 3> row{mean_pairwise_mse(a, b, max_pairs), mean_pairwise_mse(fa, fb, max_pairs),
                                    mean_pairwise_mse(ae.reconstruct(fa), ae.reconstruct(fb), max_pairs)};
    xs.push_back(row[0]);
    fs.push_back(row[1]);
    rs.push_back(row[2]);
    report.per_trial.push_back(row);
  }
  report.samples = mean_with_error(xs);
  report.features = mean_with_error(fs);
  report.reconstructions = mean_with_error(rs);
  return report;
}

namespace {

double mean_squared_rows(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw DimensionError("feature drift: shapes " + shape_string(a.shape()) + " and " + shape_string(b.shape()) +
                         " differ between model states");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) total += (a[i] - b[i]) * (a[i] - b[i]);
  return total / static_cast<double>(a.rows());
}

double mean_row_distance(const Tensor& a, const Tensor& b, std::size_t rows) {
  if (a.cols() != b.cols()) throw DimensionError("bound_decomposition: width mismatch");
  if (rows == 0) return 0.0;
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const auto x = a.row(r);
    const auto y = b.row(r);
    double s = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) s += (x[k] - y[k]) * (x[k] - y[k]);
    total += std::sqrt(s);
  }
  return total / static_cast<double>(rows);
}

}  // namespace

double mean_squared_feature_distance(const model::TaskModel& current, const model::TaskModel& reference,
                                     const Tensor& inputs) {
  return mean_squared_rows(current.features(inputs), reference.features(inputs));
}

DriftTracker::DriftTracker(int task, Tensor reference_inputs) : task_(task), inputs_(std::move(reference_inputs)) {}

void DriftTracker::operator()(int task, const lifelong::EpochStats& stats, const model::TaskModel& m) {
  if (task != task_) return;
  const Tensor f = m.features(inputs_);
  if (stats.epoch == 0) {
    reference_features_ = f;
    trace_ = DriftTrace{};
  } else if (reference_features_.empty()) {
    throw std::logic_error("DriftTracker: epoch 0 of the tracked task was never observed");
  }
  trace_.epochs.push_back(stats.epoch);
  trace_.distance.push_back(mean_squared_rows(f, reference_features_));
  trace_.code_loss.push_back(stats.loss_code);
}

DriftTrace drift_trace(std::span<const model::TaskModel> per_epoch, const Tensor& reference_inputs,
                       const model::TaskModel& snapshot) {
  DriftTrace trace;
  const Tensor ref = snapshot.features(reference_inputs);
  for (std::size_t e = 0; e < per_epoch.size(); ++e) {
    trace.epochs.push_back(e);
    trace.distance.push_back(mean_squared_rows(per_epoch[e].features(reference_inputs), ref));
    trace.code_loss.push_back(0.0);
  }
  return trace;
}

bool windowed_non_decreasing(const DriftTrace& trace, std::size_t window) {
  if (window == 0) throw std::invalid_argument("window must be >= 1");
  std::vector<double> means;
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < trace.distance.size(); ++i) {
    if (trace.epochs[i] == 0) continue;
    sum += trace.distance[i];
    if (++count == window) {
      means.push_back(sum / static_cast<double>(count));
      sum = 0.0;
      count = 0;
    }
  }
  if (count) means.push_back(sum / static_cast<double>(count));
  return std::is_sorted(means.begin(), means.end());
}

BoundTerms bound_decomposition(const model::TaskModel& current, const model::TaskModel& snapshot,
                               const ae::Autoencoder& ae, const Tensor& x1, const Tensor& x2) {
  const Tensor f1 = current.features(x1);
  const Tensor f1_star = snapshot.features(x1);
  const Tensor f2 = current.features(x2);
  const Tensor f2_star = snapshot.features(x2);
  const Tensor r1_star = ae.reconstruct(f1_star);
  const Tensor r2_star = ae.reconstruct(f2_star);
  const Tensor r2 = ae.reconstruct(f2);
  const std::size_t pairs = std::min(x1.rows(), x2.rows());

  BoundTerms t;
  t.feature_drift = mean_row_distance(f1, f1_star, x1.rows());
  t.reconstruction_error_old = mean_row_distance(f1_star, r1_star, x1.rows());
  t.reconstruction_gap = mean_row_distance(r1_star, r2_star, pairs);
  t.reconstruction_drift = mean_row_distance(r2_star, r2, x2.rows());
  t.reconstruction_error_new = mean_row_distance(r2, f2, x2.rows());
  t.sample_distance = mean_row_distance(x1, x2, pairs);
  return t;
}

}  // namespace ebll::analysis
