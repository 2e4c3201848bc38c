#include "ebll/lifelong.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "ebll/rng.hpp"

namespace ebll::lifelong {

const char* to_string(Strategy s) {
  switch (s) {
    case Strategy::Finetune: return "finetune";
    case Strategy::FeatureExtraction: return "feature_extraction";
    case Strategy::LwF: return "lwf";
    case Strategy::EBLL: return "ebll";
    case Strategy::EBLLSeparateFCs: return "ebll_separate_fcs";
    case Strategy::Joint: return "joint";
  }
  return "?";
}

Strategy parse_strategy(const std::string& name) {
  for (auto s : {Strategy::Finetune, Strategy::FeatureExtraction, Strategy::LwF, Strategy::EBLL,
                 Strategy::EBLLSeparateFCs, Strategy::Joint}) {
    if (name == to_string(s)) return s;
  }
  throw std::invalid_argument("unknown strategy '" + name +
                              "' (expected finetune, feature_extraction, lwf, ebll, ebll_separate_fcs or joint)");
}

bool uses_autoencoders(Strategy s) { return s == Strategy::EBLL || s == Strategy::EBLLSeparateFCs; }

bool uses_distillation(Strategy s) { return s == Strategy::LwF || uses_autoencoders(s); }

RecordTable::RecordTable(std::vector<std::uint64_t> ids, Tensor rows) : ids_(std::move(ids)), rows_(std::move(rows)) {
  if (rows_.rows() != ids_.size()) throw DimensionError("record table: id count does not match rows");
  index_.reserve(ids_.size());
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (!index_.emplace(ids_[i], i).second) throw IntegrityError("record table: duplicate sample id");
  }
}

Tensor RecordTable::lookup(std::span<const std::uint64_t> ids) const {
  const std::size_t w = rows_.cols();
  Tensor out({ids.size(), w});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    auto it = index_.find(ids[i]);
    if (it == index_.end()) throw IntegrityError("sample id " + std::to_string(ids[i]) + " missing from memory");
    const auto src = rows_.row(it->second);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

std::uint64_t RecordTable::checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  mix(ids_.data(), ids_.size() * sizeof(std::uint64_t));
  mix(rows_.data().data(), rows_.size() * sizeof(double));
  return h;
}

double alpha_for(const std::vector<double>& alphas, double fallback, int task_id) {
  const auto i = static_cast<std::size_t>(task_id - 1);
  return task_id >= 1 && i < alphas.size() ? alphas[i] : fallback;
}

TaskMemory record_memory(const model::FrozenSnapshot& snapshot, const std::map<int, ae::Autoencoder>& encoders,
                         const data::Dataset& new_data, bool require_encoders, const std::vector<double>& alphas,
                         double default_alpha) {
  TaskMemory memory;
  const auto& m = snapshot.model();
  const auto past = m.tasks();
  if (past.empty() || new_data.size() == 0) {
    for (int t : past) memory.entries.push_back(PastTask{t, alpha_for(alphas, default_alpha, t), {}, {}, {}});
    return memory;
  }
  nn::Graph g;
  nn::Var x = g.constant(new_data.inputs);
  nn::Var features = m.forward_features(g, x);
  nn::Var shared = m.forward_shared(g, features);
  for (int t : past) {
    PastTask entry;
    entry.task_id = t;
    entry.alpha = alpha_for(alphas, default_alpha, t);
    Tensor probs = nn::softmax_temp(m.forward_head_logits(g, t, shared), 1.0).value();
    entry.targets = RecordTable(new_data.ids, std::move(probs));
    auto it = encoders.find(t);
    if (it != encoders.end()) {
      entry.encoder = it->second;
      entry.encoder->set_frozen(true);
      entry.codes = RecordTable(new_data.ids, entry.encoder->encode(features.value()));
    } else if (require_encoders) {
      throw std::invalid_argument("record_memory: no encoder for past task " + std::to_string(t));
    }
    memory.entries.push_back(std::move(entry));
  }
  return memory;
}

LossTerms ebll_batch_loss(nn::Graph& g, model::TaskModel& model, const TaskMemory& memory, const data::Batch& batch,
                          int task, double theta) {
  nn::Var x = g.constant(batch.inputs);
  nn::Var features = model.forward_features(g, x);
  nn::Var shared = model.forward_shared(g, features);
  nn::Var current = nn::softmax_temp(model.forward_head_logits(g, task, shared), 1.0);
  LossTerms out;
  out.total = nn::cross_entropy(current, batch.labels);
  out.task = out.total.value()[0];

  for (const auto& entry : memory.entries) {
    if (entry.targets.empty()) throw IntegrityError("memory for task " + std::to_string(entry.task_id) + " is empty");
    nn::Var p = nn::softmax_temp(model.forward_head_logits(g, entry.task_id, shared), 1.0);
    nn::Var d = nn::distillation_loss(p, g.constant(entry.targets.lookup(batch.ids)), theta);
    out.distillation += d.value()[0];
    out.total = nn::add(out.total, d);
  }
  for (const auto& entry : memory.entries) {
    if (!entry.encoder) continue;
    const ae::Autoencoder& enc = *entry.encoder;
    nn::Var code = enc.encode(g, features);
    nn::Var c = nn::squared_l2_half(code, g.constant(entry.codes.lookup(batch.ids)));
    out.code += entry.alpha * c.value()[0];
    out.total = nn::add(out.total, nn::scale(c, entry.alpha));
  }
  return out;
}

void SequenceConfig::validate() const {
  architecture.validate();
  if (epochs == 0) throw std::invalid_argument("epochs must be >= 1");
  if (batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
  sgd.validate();
  if (!(lr_drop_factor > 0.0)) throw std::invalid_argument("lr_drop_factor must be > 0");
  if (!(theta > 0.0)) throw std::invalid_argument("theta must be > 0");
  if (!(default_alpha >= 0.0)) throw std::invalid_argument("alpha must be >= 0");
  for (double a : alphas) {
    if (!(a >= 0.0)) throw std::invalid_argument("alpha must be >= 0");
  }
  autoencoder.validate();
  augment.validate();
  if (effective_code_dim() >= architecture.feature_dim()) {
    throw std::invalid_argument("code_dim must be smaller than the feature width");
  }
}

std::size_t SequenceConfig::effective_code_dim() const {
  return code_dim != 0 ? code_dim : std::max<std::size_t>(1, architecture.feature_dim() / 4);
}

double SequenceConfig::learning_rate_at(std::size_t epoch) const {
  double lr = sgd.learning_rate;
  for (auto drop : lr_drop_epochs) {
    if (epoch > drop) lr *= lr_drop_factor;
  }
  return lr;
}

SequenceConfig benchmark_config(std::uint64_t seed) {
  SequenceConfig cfg;
  cfg.seed = seed;
  cfg.default_alpha = 10.0;
  cfg.autoencoder.lambda = 1.0;
  cfg.code_dim = 2;
  return cfg;
}

model::Architecture architecture_for(Strategy s, const model::Architecture& base) {
  if (s != Strategy::EBLLSeparateFCs) return base;
  model::Architecture arch = base;
  arch.head_hidden_widths.insert(arch.head_hidden_widths.begin(), arch.shared_widths.begin(),
                                 arch.shared_widths.end());
  arch.shared_widths.clear();
  return arch;
}

double accuracy(const model::TaskModel& m, int task, const data::Dataset& ds) {
  if (ds.size() == 0) return 0.0;
  constexpr std::size_t chunk = 2048;
  std::size_t correct = 0;
  std::vector<std::size_t> rows;
  for (std::size_t start = 0; start < ds.size(); start += chunk) {
    const std::size_t stop = std::min(ds.size(), start + chunk);
    rows.resize(stop - start);
    std::iota(rows.begin(), rows.end(), start);
    const Tensor p = m.probabilities(task, data::gather(ds, rows).inputs);
    for (std::size_t r = 0; r < p.rows(); ++r) {
      const auto row = p.row(r);
      const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
      if (best == ds.labels[start + r]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

EvalRecord evaluate(const model::TaskModel& m, std::span<const data::TaskData> tasks,
                    const std::map<int, double>& reference) {
  EvalRecord rec;
  if (tasks.empty()) return rec;
  rec.after_task = tasks.back().test.task_id;
  double forgetting_sum = 0.0;
  std::size_t earlier = 0;
  for (const auto& td : tasks) {
    const int t = td.test.task_id;
    TaskAccuracy a;
    a.task = t;
    a.accuracy = accuracy(m, t, td.test);
    auto it = reference.find(t);
    a.reference = it == reference.end() ? a.accuracy : it->second;
    a.forgetting = a.reference - a.accuracy;
    rec.average_accuracy += a.accuracy;
    if (t != rec.after_task) {
      forgetting_sum += a.forgetting;
      ++earlier;
    }
    rec.tasks.push_back(a);
  }
  rec.average_accuracy /= static_cast<double>(tasks.size());
  rec.average_forgetting = earlier ? forgetting_sum / static_cast<double>(earlier) : 0.0;
  return rec;
}

LearnerState make_learner(Strategy s, const SequenceConfig& cfg) {
  cfg.validate();
  LearnerState state;
  state.strategy = s;
  state.model = model::TaskModel(architecture_for(s, cfg.architecture), derive_seed(cfg.seed, Stream::Trunk));
  return state;
}

namespace {

void log_row(MetricsLog* log, const SequenceConfig& cfg, const char* phase, int task, long epoch, int eval_task,
             const char* metric, double value) {
  if (log) log->append({cfg.run_id, phase, task, epoch, eval_task, metric, value});
}

std::vector<nn::Parameter*> trainable_parameters(LearnerState& state, int new_task, bool first_task) {
  auto& m = state.model;
  std::vector<nn::Parameter*> out;
  auto take = [&out](std::vector<nn::Parameter*> ps) { out.insert(out.end(), ps.begin(), ps.end()); };
  if (first_task) {
    take(m.all_parameters());
    return out;
  }
  switch (state.strategy) {
    case Strategy::FeatureExtraction:
      take(m.head_parameters(new_task));
      break;
    case Strategy::Finetune:
      take(m.feature_parameters());
      take(m.shared_parameters());
      take(m.head_parameters(new_task));
      break;
    case Strategy::LwF:
    case Strategy::EBLL:
    case Strategy::EBLLSeparateFCs:
    case Strategy::Joint:
      take(m.all_parameters());
      break;
  }
  return out;
}

// Batches for joint training: each step draws a task uniformly and takes the
// next rows of that task's own shuffled order, reshuffling when it runs out.
class JointSchedule {
public:
  JointSchedule(std::span<const data::Dataset> sets, std::size_t batch_size, std::uint64_t seed)
      : sets_(sets), batch_size_(batch_size), seed_(seed), cursors_(sets.size(), 0), cycles_(sets.size(), 0),
        orders_(sets.size()), rng_(derive_seed(seed, Stream::JointSchedule)) {
    for (std::size_t i = 0; i < sets.size(); ++i) reshuffle(i);
  }

  std::size_t steps() const {
    std::size_t total = 0;
    for (const auto& s : sets_) total += s.size();
    return (total + batch_size_ - 1) / batch_size_;
  }

  std::pair<std::size_t, std::vector<std::size_t>> next() {
    std::uniform_int_distribution<std::size_t> pick(0, sets_.size() - 1);
    const std::size_t t = pick(rng_);
    std::vector<std::size_t> rows;
    while (rows.size() < batch_size_ && rows.size() < sets_[t].size()) {
      if (cursors_[t] == orders_[t].size()) reshuffle(t);
      rows.push_back(orders_[t][cursors_[t]++]);
    }
    return {t, std::move(rows)};
  }

private:
  void reshuffle(std::size_t t) {
    orders_[t].resize(sets_[t].size());
    std::iota(orders_[t].begin(), orders_[t].end(), std::size_t{0});
    Rng r(derive_seed(seed_, Stream::JointSchedule, {t, cycles_[t]++}));
    std::shuffle(orders_[t].begin(), orders_[t].end(), r);
    cursors_[t] = 0;
  }

  std::span<const data::Dataset> sets_;
  std::size_t batch_size_;
  std::uint64_t seed_;
  std::vector<std::size_t> cursors_;
  std::vector<std::size_t> cycles_;
  std::vector<std::vector<std::size_t>> orders_;
  Rng rng_;
};

void check_finite_loss(double v, int task, std::size_t epoch) {
  if (!std::isfinite(v)) {
    throw DivergenceError("non-finite training loss at task " + std::to_string(task) + ", epoch " +
                          std::to_string(epoch));
  }
}

}  // namespace

ae::AeTrainResult fit_task_autoencoder(const model::TaskModel& m, const data::Dataset& train, const SequenceConfig& cfg) {
  const int task = train.task_id;
  const auto snap = model::snapshot(m);
  const data::Dataset ae_set = cfg.autoencoder_on_augmented ? data::augment(train, cfg.augment) : data::originals(train);
  const Tensor features = snap.model().features(ae_set.inputs);
  return ae::train_autoencoder(features, ae_set.labels, snap.model(), task, cfg.effective_code_dim(), cfg.autoencoder,
                               derive_seed(cfg.seed, Stream::Autoencoder, {static_cast<std::uint64_t>(task)}));
}

TaskOutcome train_task(LearnerState& state, std::span<const data::TaskData> available, const SequenceConfig& cfg,
                       MetricsLog* log, const EpochObserver& observer) {
  if (available.empty()) throw std::invalid_argument("train_task: no dataset");
  const data::TaskData& current = available.back();
  const int task = current.train.task_id;
  const bool first = state.trained_tasks.empty();
  const Strategy strategy = state.strategy;

  std::vector<data::Dataset> joint_sets;
  if (strategy == Strategy::Joint) {
    for (int t : state.trained_tasks) {
      const bool present = std::any_of(available.begin(), available.end(),
                                       [t](const data::TaskData& d) { return d.train.task_id == t; });
      if (!present) {
        throw nn::ContractError("joint training needs every task's data; task " + std::to_string(t) + " was withheld");
      }
    }
    for (const auto& td : available) joint_sets.push_back(data::augment(td.train, cfg.augment));
  }
  const data::Dataset train_set = data::augment(current.train, cfg.augment);

  state.memory = TaskMemory{};
  if (!first && uses_distillation(strategy)) {
    const auto snap = model::snapshot(state.model);
    const std::map<int, ae::Autoencoder> no_encoders;
    state.memory = record_memory(snap, uses_autoencoders(strategy) ? state.encoders : no_encoders, train_set,
                                 uses_autoencoders(strategy), cfg.alphas, cfg.default_alpha);
  }

  state.model.add_head(task, current.train.class_count, derive_seed(cfg.seed, Stream::Head, {static_cast<std::uint64_t>(task)}));
  state.model.set_frozen(true);
  auto params = trainable_parameters(state, task, first);
  for (auto* p : params) p->frozen = false;

  optim::Sgd sgd(cfg.sgd);
  TaskOutcome outcome;
  outcome.task = task;
  EpochStats initial;
  initial.learning_rate = cfg.learning_rate_at(1);
  if (observer) observer(task, initial, state.model);

  const bool joint = strategy == Strategy::Joint && joint_sets.size() > 1;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    sgd.set_learning_rate(cfg.learning_rate_at(epoch));
    EpochStats stats;
    stats.epoch = epoch;
    stats.learning_rate = sgd.config().learning_rate;
    std::size_t seen = 0;

    auto run_batch = [&](const data::Batch& batch, int batch_task, const TaskMemory& memory) {
      for (auto* p : params) p->zero_grad();
      nn::Graph g;
      LossTerms terms;
      try {
        terms = ebll_batch_loss(g, state.model, memory, batch, batch_task, cfg.theta);
      } catch (const nn::NormalizationError& e) {
        // Recorded targets are validated when stored, so this is the model's own output overflowing.
        throw DivergenceError(std::string(e.what()) + " at task " + std::to_string(task) + ", epoch " +
                              std::to_string(epoch));
      }
      const double total = terms.total.value()[0];
      check_finite_loss(total, task, epoch);
      g.backward(terms.total);
      try {
        sgd.step(params);
      } catch (const optim::NonFiniteGradient& e) {
        throw DivergenceError(e.what());
      }
      for (const auto* p : params) {
        const auto& v = p->value.data();
        if (!std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); })) {
          throw DivergenceError("parameter " + p->id + " overflowed at task " + std::to_string(task) +
                                ", epoch " + std::to_string(epoch));
        }
      }
      const double w = static_cast<double>(batch.labels.size());
      stats.loss_total += total * w;
      stats.loss_task += terms.task * w;
      stats.loss_distillation += terms.distillation * w;
      stats.loss_code += terms.code * w;
      seen += batch.labels.size();
    };

    if (joint) {
      JointSchedule schedule(joint_sets, cfg.batch_size,
                             derive_seed(cfg.seed, Stream::Epoch, {static_cast<std::uint64_t>(task), epoch}));
      const TaskMemory none;
      for (std::size_t step = 0, n = schedule.steps(); step < n; ++step) {
        auto [t, rows] = schedule.next();
        run_batch(data::gather(joint_sets[t], rows), joint_sets[t].task_id, none);
      }
    } else {
      const auto order =
          data::batches(train_set, cfg.batch_size, derive_seed(cfg.seed, Stream::Epoch, {static_cast<std::uint64_t>(task), epoch}));
      for (const auto& rows : order) run_batch(data::gather(train_set, rows), task, state.memory);
    }

    const double n = static_cast<double>(seen);
    stats.loss_total /= n;
    stats.loss_task /= n;
    stats.loss_distillation /= n;
    stats.loss_code /= n;
    outcome.epochs.push_back(stats);
    const auto e = static_cast<long>(epoch);
    log_row(log, cfg, "train", task, e, 0, "learning_rate", stats.learning_rate);
    log_row(log, cfg, "train", task, e, 0, "loss_total", stats.loss_total);
    log_row(log, cfg, "train", task, e, 0, "loss_task", stats.loss_task);
    log_row(log, cfg, "train", task, e, 0, "loss_distillation", stats.loss_distillation);
    log_row(log, cfg, "train", task, e, 0, "loss_code", stats.loss_code);
    if (observer) observer(task, stats, state.model);
  }

  state.model.set_frozen(false);
  state.trained_tasks.push_back(task);
  state.reference_accuracy[task] = accuracy(state.model, task, current.test);

  if (uses_autoencoders(strategy)) {
    auto result = fit_task_autoencoder(state.model, current.train, cfg);
    for (const auto& r : result.history) {
      log_row(log, cfg, "autoencoder", task, static_cast<long>(r.epoch), 0, "code_loss", r.code_loss);
      log_row(log, cfg, "autoencoder", task, static_cast<long>(r.epoch), 0, "classification_loss",
              r.classification_loss);
    }
    const double ae_params = static_cast<double>(result.autoencoder.parameter_count());
    const double model_params = static_cast<double>(state.model.parameter_count());
    log_row(log, cfg, "autoencoder", task, 0, 0, "stopped_by_rule", result.stopped_by_rule ? 1.0 : 0.0);
    log_row(log, cfg, "autoencoder", task, 0, 0, "epochs_run", static_cast<double>(result.history.size()));
    log_row(log, cfg, "autoencoder", task, 0, 0, "ae_parameters", ae_params);
    log_row(log, cfg, "autoencoder", task, 0, 0, "model_parameters", model_params);
    log_row(log, cfg, "autoencoder", task, 0, 0, "ae_memory_ratio", ae_params / model_params);
    result.autoencoder.set_frozen(true);
    state.encoders.insert_or_assign(task, result.autoencoder);
    outcome.autoencoder = std::move(result);
  }
  return outcome;
}

RunHistory run_sequence(std::span<const data::TaskData> tasks, Strategy s, const SequenceConfig& cfg,
                        const EpochObserver& observer) {
  if (tasks.empty()) throw std::invalid_argument("run_sequence: at least one task is required");
  RunHistory history;
  history.final_state = make_learner(s, cfg);
  for (std::size_t k = 0; k < tasks.size(); ++k) {
    const auto available = tasks.subspan(0, k + 1);
    history.outcomes.push_back(train_task(history.final_state, available, cfg, &history.metrics, observer));
    EvalRecord rec = evaluate(history.final_state.model, available, history.final_state.reference_accuracy);
    for (const auto& a : rec.tasks) {
      log_row(&history.metrics, cfg, "eval", rec.after_task, 0, a.task, "accuracy", a.accuracy);
      log_row(&history.metrics, cfg, "eval", rec.after_task, 0, a.task, "reference", a.reference);
      log_row(&history.metrics, cfg, "eval", rec.after_task, 0, a.task, "forgetting", a.forgetting);
    }
    log_row(&history.metrics, cfg, "eval", rec.after_task, 0, 0, "average_accuracy", rec.average_accuracy);
    log_row(&history.metrics, cfg, "eval", rec.after_task, 0, 0, "average_forgetting", rec.average_forgetting);
    history.evaluations.push_back(std::move(rec));
    history.models_after_task.push_back(history.final_state.model);
  }
  return history;
}

}  // namespace ebll::lifelong
