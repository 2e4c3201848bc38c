#include "ebll/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>

#include "ebll/checkpoint.hpp"
#include "ebll/metrics.hpp"
#include "ebll/rng.hpp"

namespace ebll::harness {

namespace fs = std::filesystem;

fs::path metrics_path(const fs::path& dir) { return dir / "metrics.csv"; }
fs::path model_path(const fs::path& dir, int task) { return dir / ("model_task" + std::to_string(task) + ".ckpt"); }
fs::path autoencoder_path(const fs::path& dir, int task) {
  return dir / ("autoencoder_task" + std::to_string(task) + ".ckpt");
}
fs::path memory_path(const fs::path& dir) { return dir / "memory.ckpt"; }
fs::path log_path(const fs::path& dir) { return dir / "run.log"; }

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create directory " + dir.string() + ": " + ec.message());
}

checkpoint::Archive require(const fs::path& path) {
  if (!fs::exists(path)) throw MissingCheckpoint("missing checkpoint " + path.string());
  return checkpoint::load(path);
}

model::TaskModel load_model(const fs::path& dir, int task) {
  return checkpoint::model_from_archive(require(model_path(dir, task)));
}

ae::Autoencoder load_autoencoder(const fs::path& dir, int task) {
  auto ae = checkpoint::autoencoder_from_archive(require(autoencoder_path(dir, task)));
  ae.set_frozen(true);
  return ae;
}

std::string fmt(double v) { return format_real(v); }

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double stddev(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

/// Autoencoder of `task`: the run's checkpoint, or for strategies that never
/// train one, the one EBLL would have trained on the same snapshot.
ae::Autoencoder task_autoencoder(const config::RunConfig& cfg, const fs::path& run_dir, int task,
                                 const model::TaskModel& snapshot, const std::vector<data::TaskData>& tasks) {
  if (lifelong::uses_autoencoders(cfg.strategy) || fs::exists(autoencoder_path(run_dir, task))) {
    return load_autoencoder(run_dir, task);
  }
  auto fitted = lifelong::fit_task_autoencoder(snapshot, tasks.at(static_cast<std::size_t>(task - 1)).train, cfg.sequence);
  fitted.autoencoder.set_frozen(true);
  return fitted.autoencoder;
}

void require_next_task(const config::RunConfig& cfg) {
  if (cfg.analysis.task + 1 > static_cast<int>(cfg.task_count)) {
    throw config::ConfigError("analysis.task", "needs a later task to compare against");
  }
}

}  // namespace

lifelong::RunHistory execute_run(const config::RunConfig& cfg, const fs::path& out_dir, std::ostream* log) {
  const auto tasks = config::build_tasks(cfg);
  make_dir(out_dir);
  std::ostringstream text;
  auto say = [&](const std::string& line) {
    text << line << "\n";
    if (log) *log << line << std::endl;
  };
  say("run " + cfg.name + " strategy " + lifelong::to_string(cfg.strategy) + " seed " + std::to_string(cfg.seed) +
      " tasks " + std::to_string(tasks.size()));

  auto history = lifelong::run_sequence(tasks, cfg.strategy, cfg.sequence);

  for (std::size_t k = 0; k < history.models_after_task.size(); ++k) {
    const int task = static_cast<int>(k) + 1;
    checkpoint::save(checkpoint::to_archive(history.models_after_task[k]), model_path(out_dir, task));
    const auto& ev = history.evaluations[k];
    std::string line = "after task " + std::to_string(task) + ":";
    for (const auto& a : ev.tasks) line += " acc" + std::to_string(a.task) + "=" + fmt(a.accuracy);
    line += " average_accuracy=" + fmt(ev.average_accuracy) + " average_forgetting=" + fmt(ev.average_forgetting);
    say(line);
    const auto& outcome = history.outcomes[k];
    if (outcome.autoencoder) {
      const auto& r = *outcome.autoencoder;
      const double ae_params = static_cast<double>(r.autoencoder.parameter_count());
      const double model_params = static_cast<double>(history.models_after_task[k].parameter_count());
      say("autoencoder task " + std::to_string(task) + ": epochs=" + std::to_string(r.history.size()) +
          " stopped_by_rule=" + (r.stopped_by_rule ? "1" : "0") + " parameters=" + fmt(ae_params) +
          " model_parameters=" + fmt(model_params) + " memory_ratio=" + fmt(ae_params / model_params));
    }
  }
  for (const auto& [task, ae] : history.final_state.encoders) {
    checkpoint::save(checkpoint::to_archive(ae), autoencoder_path(out_dir, task));
  }
  checkpoint::save(checkpoint::to_archive(history.final_state.memory), memory_path(out_dir));
  history.metrics.write_csv(metrics_path(out_dir));
  write_text(log_path(out_dir), text.str());
  return history;
}

std::vector<SummaryRow> summarize(const std::vector<RunResult>& runs) {
  std::vector<lifelong::Strategy> order;
  std::map<lifelong::Strategy, std::map<int, std::pair<std::vector<double>, std::vector<double>>>> per;
  int last_task = 0;
  for (const auto& r : runs) {
    if (std::find(order.begin(), order.end(), r.strategy) == order.end()) order.push_back(r.strategy);
    auto& slot = per[r.strategy];
    for (const auto& a : r.final_eval.tasks) {
      slot[a.task].first.push_back(a.accuracy);
      slot[a.task].second.push_back(a.forgetting);
      last_task = std::max(last_task, a.task);
    }
    slot[0].first.push_back(r.final_eval.average_accuracy);
    slot[0].second.push_back(r.final_eval.average_forgetting);
  }

  auto reference_for = [&](int task) {
    const auto s = task == last_task ? lifelong::Strategy::Finetune : lifelong::Strategy::FeatureExtraction;
    const auto it = per.find(s);
    if (task == 0 || it == per.end() || !it->second.count(task)) return std::numeric_limits<double>::quiet_NaN();
    return mean(it->second.at(task).first);
  };

  std::vector<SummaryRow> rows;
  for (auto s : order) {
    for (const auto& [task, values] : per.at(s)) {
      if (task == 0) continue;
      SummaryRow row{lifelong::to_string(s), task, values.first.size(), mean(values.first), stddev(values.first),
                     mean(values.second), stddev(values.second), reference_for(task), 0.0};
      row.delta_vs_ref = row.accuracy_mean - row.reference;
      rows.push_back(row);
    }
    const auto& avg = per.at(s).at(0);
    SummaryRow row{lifelong::to_string(s), 0, avg.first.size(), mean(avg.first), stddev(avg.first),
                   mean(avg.second), stddev(avg.second), std::numeric_limits<double>::quiet_NaN(),
                   std::numeric_limits<double>::quiet_NaN()};
    rows.push_back(row);
  }
  return rows;
}

std::string summary_csv(const std::vector<SummaryRow>& rows) {
  std::ostringstream out;
  out << "strategy,task,runs,accuracy_mean,accuracy_std,forgetting_mean,forgetting_std,reference,delta_vs_ref\n";
  auto opt = [](double v) { return std::isnan(v) ? std::string() : format_real(v); };
  for (const auto& r : rows) {
    out << r.strategy << "," << (r.task == 0 ? std::string("average") : std::to_string(r.task)) << "," << r.runs
        << "," << fmt(r.accuracy_mean) << "," << fmt(r.accuracy_std) << "," << fmt(r.forgetting_mean) << ","
        << fmt(r.forgetting_std) << "," << opt(r.reference) << "," << opt(r.delta_vs_ref) << "\n";
  }
  return out.str();
}

std::vector<SummaryRow> execute_compare(const config::RunConfig& cfg, const std::vector<lifelong::Strategy>& strategies,
                                        const std::vector<std::uint64_t>& seeds, const fs::path& out_dir,
                                        std::ostream* log) {
  if (strategies.empty() || seeds.empty()) throw std::invalid_argument("compare needs at least one strategy and seed");
  make_dir(out_dir);
  std::vector<RunResult> results;
  for (auto s : strategies) {
    for (auto seed : seeds) {
      config::RunConfig run = cfg;
      run.strategy = s;
      run.set_seed(seed);
      run.name = cfg.name + "_" + lifelong::to_string(s) + "_seed" + std::to_string(seed);
      run.sequence.run_id = run.name;
      const auto dir = out_dir / (std::string(lifelong::to_string(s)) + "_seed" + std::to_string(seed));
      auto history = execute_run(run, dir, log);
      results.push_back({s, seed, history.evaluations.back()});
    }
  }
  auto rows = summarize(results);
  write_text(out_dir / "summary.csv", summary_csv(rows));
  return rows;
}

Analysis parse_analysis(const std::string& name) {
  if (name == "contractiveness") return Analysis::Contractiveness;
  if (name == "drift") return Analysis::Drift;
  if (name == "bounds") return Analysis::Bounds;
  throw std::invalid_argument("unknown analysis '" + name + "' (expected contractiveness, drift or bounds)");
}

std::vector<analysis::ContractivenessReport> analyze_contractiveness(const config::RunConfig& cfg,
                                                                     const fs::path& run_dir, const fs::path& out_dir,
                                                                     bool untrained) {
  const int task = cfg.analysis.task;
  model::TaskModel m;
  ae::Autoencoder ae;
  if (untrained) {
    const auto arch = lifelong::architecture_for(cfg.strategy, cfg.sequence.architecture);
    m = model::TaskModel(arch, cfg.seed);
    ae = ae::Autoencoder(arch.feature_dim(), cfg.sequence.effective_code_dim(),
                         derive_seed(cfg.seed, Stream::Autoencoder, {static_cast<std::uint64_t>(task)}));
  } else {
    m = load_model(run_dir, task);
    ae = task_autoencoder(cfg, run_dir, task, m, config::build_tasks(cfg));
  }

  std::vector<analysis::ContractivenessReport> reports;
  for (const auto& regime : {analysis::GaussianRegime::near(), analysis::GaussianRegime::far()}) {
    reports.push_back(analysis::contractiveness_experiment(m, ae, cfg.analysis.trials, cfg.analysis.samples_per_trial,
                                                           regime, derive_seed(cfg.seed, Stream::Analysis, {0}),
                                                           cfg.analysis.max_pairs));
  }

  make_dir(out_dir);
  std::ostringstream summary, trials;
  summary << "regime,trials,level,mean_mse,standard_error\n";
  trials << "regime,trial,mse_samples,mse_features,mse_reconstructions\n";
  for (const auto& r : reports) {
    const std::pair<const char*, analysis::MeanWithError> levels[] = {
        {"samples", r.samples}, {"features", r.features}, {"reconstructions", r.reconstructions}};
    for (const auto& [level, v] : levels) {
      summary << r.regime << "," << r.trials << "," << level << "," << fmt(v.mean) << "," << fmt(v.standard_error)
              << "\n";
    }
    for (std::size_t t = 0; t < r.per_trial.size(); ++t) {
      trials << r.regime << "," << t << "," << fmt(r.per_trial[t][0]) << "," << fmt(r.per_trial[t][1]) << ","
             << fmt(r.per_trial[t][2]) << "\n";
    }
  }
  write_text(out_dir / "contractiveness.csv", summary.str());
  write_text(out_dir / "contractiveness_trials.csv", trials.str());
  return reports;
}

analysis::DriftTrace analyze_drift(const config::RunConfig& cfg, const fs::path& run_dir, const fs::path& out_dir) {
  require_next_task(cfg);
  const int task = cfg.analysis.task;
  const auto tasks = config::build_tasks(cfg);

  lifelong::LearnerState state;
  state.strategy = cfg.strategy;
  state.model = load_model(run_dir, task);
  for (int t = 1; t <= task; ++t) {
    state.trained_tasks.push_back(t);
    if (lifelong::uses_autoencoders(cfg.strategy)) state.encoders.emplace(t, load_autoencoder(run_dir, t));
  }
  const std::span<const data::TaskData> seen(tasks.data(), static_cast<std::size_t>(task));
  state.reference_accuracy = [&] {
    std::map<int, double> ref;
    for (const auto& a : lifelong::evaluate(state.model, seen, {}).tasks) ref[a.task] = a.accuracy;
    return ref;
  }();

  analysis::DriftTracker tracker(task + 1, tasks[static_cast<std::size_t>(task - 1)].test.inputs);
  const std::span<const data::TaskData> available(tasks.data(), static_cast<std::size_t>(task + 1));
  lifelong::train_task(state, available, cfg.sequence, nullptr, std::ref(tracker));

  make_dir(out_dir);
  std::ostringstream out;
  out << "epoch,distance,code_loss\n";
  const auto& trace = tracker.trace();
  for (std::size_t i = 0; i < trace.distance.size(); ++i) {
    out << trace.epochs[i] << "," << fmt(trace.distance[i]) << "," << fmt(trace.code_loss[i]) << "\n";
  }
  write_text(out_dir / "drift.csv", out.str());
  return trace;
}

analysis::BoundTerms analyze_bounds(const config::RunConfig& cfg, const fs::path& run_dir, const fs::path& out_dir) {
  require_next_task(cfg);
  const int task = cfg.analysis.task;
  const auto snapshot = load_model(run_dir, task);
  const auto current = load_model(run_dir, task + 1);
  const auto tasks = config::build_tasks(cfg);
  const auto ae = task_autoencoder(cfg, run_dir, task, snapshot, tasks);
  const auto terms = analysis::bound_decomposition(current, snapshot, ae, tasks[static_cast<std::size_t>(task - 1)].test.inputs,
                                                   tasks[static_cast<std::size_t>(task)].test.inputs);
  make_dir(out_dir);
  std::ostringstream out;
  for (std::size_t i = 0; i < analysis::BoundTerms::kNames.size(); ++i) {
    out << (i ? "," : "") << analysis::BoundTerms::kNames[i];
  }
  out << "\n";
  const auto values = terms.values();
  for (std::size_t i = 0; i < values.size(); ++i) out << (i ? "," : "") << fmt(values[i]);
  out << "\n";
  write_text(out_dir / "bounds.csv", out.str());
  return terms;
}

}  // namespace ebll::harness
