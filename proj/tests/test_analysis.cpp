#include <cmath>

#include <doctest.h>

#include "ebll/analysis.hpp"
#include "fixtures.hpp"

using namespace ebll;
using namespace ebll::analysis;

namespace {

DriftTrace trace_of(std::vector<double> d) {
  DriftTrace t;
  for (std::size_t i = 0; i < d.size(); ++i) {
    t.epochs.push_back(i);
    t.code_loss.push_back(0.0);
  }
  t.distance = std::move(d);
  return t;
}

struct Trained {
  std::vector<data::TaskData> tasks;
  lifelong::RunHistory run;
};

const Trained& trained_ebll() {
  static const Trained t = [] {
    Trained out{fixture::tiny_tasks(2, 11), {}};
    out.run = lifelong::run_sequence(out.tasks, lifelong::Strategy::EBLL, fixture::tiny_config(11));
    return out;
  }();
  return t;
}

}  // namespace

TEST_CASE("mean with standard error") {
  const std::vector<double> v{1.0, 2.0, 3.0, 4.0};
  const auto m = mean_with_error(v);
  CHECK(m.mean == 2.5);
  // Sample standard deviation sqrt(5/3) over sqrt(4).
  CHECK(m.standard_error == doctest::Approx(std::sqrt(5.0 / 3.0) / 2.0).epsilon(1e-14));
}

TEST_CASE("pairwise mse averages squared differences over cross pairs") {
  const auto a = Tensor::matrix({{0, 0}, {1, 1}});
  const auto b = Tensor::matrix({{0, 2}});
  // Pairs: (0,0)-(0,2) -> 2, (1,1)-(0,2) -> 1.
  CHECK(mean_pairwise_mse(a, b, 100) == 1.5);
  CHECK(mean_pairwise_mse(a, b, 1) == 2.0);
}

TEST_CASE("identical zero-variance groups give zero distance at every level") {
  const auto& t = trained_ebll();
  GaussianRegime degenerate{"degenerate", -1.0, 1.0, 0.0, 0.0, true};
  const auto report = contractiveness_experiment(t.run.final_state.model, t.run.final_state.encoders.at(1), 3, 10,
                                                 degenerate, 5);
  CHECK(report.samples.mean == 0.0);
  CHECK(report.features.mean == 0.0);
  // Row position inside a matmul can change the last bits of a decoded row.
  CHECK(report.reconstructions.mean < 1e-24);
}

TEST_CASE("contractiveness is deterministic, regimes separate and trial count is checked") {
  const auto& t = trained_ebll();
  const auto& m = t.run.models_after_task[0];
  const auto& ae = t.run.final_state.encoders.at(1);
  const auto near = contractiveness_experiment(m, ae, 10, 20, GaussianRegime::near(), 9);
  const auto again = contractiveness_experiment(m, ae, 10, 20, GaussianRegime::near(), 9);
  CHECK(near.per_trial == again.per_trial);
  CHECK(near.trials == 10);
  CHECK(near.per_trial.size() == 10);
  for (const auto& row : near.per_trial) {
    for (double v : row) CHECK(v >= 0.0);
  }
  const auto far = contractiveness_experiment(m, ae, 10, 20, GaussianRegime::far(), 9);
  CHECK(far.samples.mean > near.samples.mean);
  CHECK_THROWS(contractiveness_experiment(m, ae, 1, 20, GaussianRegime::near(), 9));

  ae::Autoencoder wrong(5, 2, 1);
  CHECK_THROWS_AS(contractiveness_experiment(m, wrong, 2, 5, GaussianRegime::near(), 9), DimensionError);
  CHECK(GaussianRegime::parse("far").mean_high == 10.0);
  CHECK_THROWS(GaussianRegime::parse("middle"));
}

TEST_CASE("an untrained model still yields a well-formed report") {
  const auto cfg = fixture::tiny_config();
  model::TaskModel m(cfg.architecture, 3);
  ae::Autoencoder ae(cfg.architecture.feature_dim(), 3, 4);
  const auto r = contractiveness_experiment(m, ae, 2, 5, GaussianRegime::near(), 1);
  CHECK(r.per_trial.size() == 2);
  CHECK(std::isfinite(r.reconstructions.standard_error));
}

TEST_CASE("drift starts at zero and stays zero when F is frozen") {
  const auto cfg = fixture::tiny_config(12);
  const auto tasks = fixture::tiny_tasks(2, 12);
  for (auto s : {lifelong::Strategy::FeatureExtraction, lifelong::Strategy::Finetune}) {
    auto state = lifelong::make_learner(s, cfg);
    lifelong::train_task(state, std::span(tasks.data(), 1), cfg);
    DriftTracker tracker(2, tasks[0].test.inputs);
    lifelong::train_task(state, tasks, cfg, nullptr, std::ref(tracker));
    const auto& trace = tracker.trace();
    REQUIRE(trace.distance.size() == cfg.epochs + 1);
    CHECK(trace.epochs.front() == 0);
    CHECK(trace.distance.front() == 0.0);
    for (double d : trace.distance) {
      CHECK(std::isfinite(d));
      CHECK(d >= 0.0);
    }
    if (s == lifelong::Strategy::FeatureExtraction) {
      for (double d : trace.distance) CHECK(d == 0.0);
    } else {
      CHECK(trace.distance.back() > 0.0);
    }
  }
}

TEST_CASE("drift from a list of models matches the direct distance") {
  const auto& t = trained_ebll();
  const auto& x = t.tasks[0].test.inputs;
  const std::vector<model::TaskModel> models{t.run.models_after_task[0], t.run.models_after_task[1]};
  const auto trace = drift_trace(models, x, t.run.models_after_task[0]);
  REQUIRE(trace.distance.size() == 2);
  CHECK(trace.distance[0] == 0.0);
  const Tensor a = models[1].features(x), b = models[0].features(x);
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) total += (a[i] - b[i]) * (a[i] - b[i]);
  CHECK(trace.distance[1] == doctest::Approx(total / static_cast<double>(x.rows())).epsilon(1e-12));
}

TEST_CASE("windowed monotonicity uses non-overlapping blocks after epoch zero") {
  CHECK(windowed_non_decreasing(trace_of({0, 1, 2, 3, 4, 5, 6, 7}), 5));
  // Block means 3 then 6.5: non-decreasing despite a dip inside the second block.
  CHECK(windowed_non_decreasing(trace_of({0, 1, 2, 3, 4, 5, 9, 4}), 5));
  CHECK_FALSE(windowed_non_decreasing(trace_of({0, 5, 5, 5, 5, 5, 1, 1}), 5));
  // Epoch 0 is ignored even when it is large.
  CHECK(windowed_non_decreasing(trace_of({100, 1, 1, 1}), 2));
  CHECK_THROWS(windowed_non_decreasing(trace_of({0, 1}), 0));
}

TEST_CASE("bound terms vanish where the extractors or the reconstruction coincide") {
  const auto& t = trained_ebll();
  const auto& snap = t.run.models_after_task[0];
  const auto& ae = t.run.final_state.encoders.at(1);
  const auto& x1 = t.tasks[0].test.inputs;
  const auto& x2 = t.tasks[1].test.inputs;
  const auto same = bound_decomposition(snap, snap, ae, x1, x2);
  CHECK(same.feature_drift == 0.0);
  CHECK(same.reconstruction_drift == 0.0);
  CHECK(same.reconstruction_error_old > 0.0);

  // A decoder that outputs the single x1 feature vector reconstructs it exactly.
  const Tensor one = Tensor::matrix({{x1.at(0, 0), x1.at(0, 1), x1.at(0, 2), x1.at(0, 3), x1.at(0, 4), x1.at(0, 5)}});
  ae::Autoencoder perfect = ae;
  perfect.w_dec().value.fill(0.0);
  const Tensor f = snap.features(one);
  perfect.b_dec().value = Tensor({f.cols()}, std::vector<double>(f.data()));
  CHECK(bound_decomposition(t.run.final_state.model, snap, perfect, one, x2).reconstruction_error_old == 0.0);

  const auto moved = bound_decomposition(t.run.final_state.model, snap, ae, x1, x2);
  CHECK(moved.feature_drift > 0.0);
  CHECK(BoundTerms::kNames.size() == 5);
  for (double v : moved.values()) CHECK(std::isfinite(v));
  CHECK(moved.reconstruction_gap <= moved.sample_distance);
}
