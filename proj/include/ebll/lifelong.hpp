#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "ebll/autoencoder.hpp"
#include "ebll/data.hpp"
#include "ebll/metrics.hpp"
#include "ebll/model.hpp"
#include "ebll/optim.hpp"

namespace ebll::lifelong {

enum class Strategy { Finetune, FeatureExtraction, LwF, EBLL, EBLLSeparateFCs, Joint };

const char* to_string(Strategy s);
/// Accepts the names produced by to_string (finetune, feature_extraction, lwf, ebll, ebll_separate_fcs, joint).
Strategy parse_strategy(const std::string& name);
bool uses_autoencoders(Strategy s);
bool uses_distillation(Strategy s);

class IntegrityError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Raised when a training loss becomes NaN or infinite.
class DivergenceError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Rows recorded for a set of sample ids, looked up by id.
class RecordTable {
public:
  RecordTable() = default;
  RecordTable(std::vector<std::uint64_t> ids, Tensor rows);

  /// Stack the rows of the given ids; IntegrityError when one is absent.
  Tensor lookup(std::span<const std::uint64_t> ids) const;
  std::size_t size() const noexcept { return ids_.size(); }
  bool empty() const noexcept { return ids_.empty(); }
  const Tensor& rows() const noexcept { return rows_; }
  const std::vector<std::uint64_t>& ids() const noexcept { return ids_; }
  /// FNV-1a over ids and the raw bytes of every row.
  std::uint64_t checksum() const;

private:
  std::vector<std::uint64_t> ids_;
  Tensor rows_;
  std::unordered_map<std::uint64_t, std::size_t> index_;
};

/// What is kept about one earlier task while a new task is trained.
struct PastTask {
  int task_id = 0;
  double alpha = 0.0;
  RecordTable targets;  // Y*_t: snapshot probabilities on the new data
  RecordTable codes;    // C*_t: snapshot codes on the new data (empty without an encoder)
  std::optional<ae::Autoencoder> encoder;
};

struct TaskMemory {
  std::vector<PastTask> entries;

  bool empty() const noexcept { return entries.empty(); }
};

/// Per-task code strength: alphas[t-1] when given, else `fallback`.
double alpha_for(const std::vector<double>& alphas, double fallback, int task_id);

/// Record snapshot outputs (and codes, for every task that has an encoder)
/// for every sample of `new_data`, for every head in the snapshot.
/// With `require_encoders`, a head without an encoder is an error.
TaskMemory record_memory(const model::FrozenSnapshot& snapshot, const std::map<int, ae::Autoencoder>& encoders,
                         const data::Dataset& new_data, bool require_encoders,
                         const std::vector<double>& alphas, double default_alpha);

struct LossTerms {
  nn::Var total;
  double task = 0.0;
  double distillation = 0.0;
  double code = 0.0;
};

/// Mean over the batch of
///   CE(new head) + sum_t distill(head_t, Y*_t) + sum_t alpha_t * 1/2 ||code_t - C*_t||^2
/// where the code sum covers past tasks that carry an encoder.
LossTerms ebll_batch_loss(nn::Graph& g, model::TaskModel& model, const TaskMemory& memory,
                          const data::Batch& batch, int task, double theta);

struct SequenceConfig {
  std::uint64_t seed = 1;
  std::string run_id = "run";
  model::Architecture architecture{};
  std::size_t epochs = 40;
  std::size_t batch_size = 32;
  optim::SgdConfig sgd{};
  std::vector<std::size_t> lr_drop_epochs{30};
  double lr_drop_factor = 0.1;
  double theta = 2.0;
  std::vector<double> alphas{};
  double default_alpha = 1e-2;
  /// 0 picks feature_dim / 4.
  std::size_t code_dim = 0;
  ae::AeTrainConfig autoencoder{};
  /// Train autoencoders on the augmented set rather than the original samples.
  bool autoencoder_on_augmented = false;
  data::AugmentSpec augment{};

  void validate() const;
  std::size_t effective_code_dim() const;
  double learning_rate_at(std::size_t epoch) const;
};

/// Settings of the synthetic benchmark: library defaults except for the
/// loss weights and code size, which are rescaled for the small model
/// (alpha 10, lambda 1, code_dim 2).
SequenceConfig benchmark_config(std::uint64_t seed);

/// Architecture actually used by a strategy: the separate-heads variant moves
/// the shared layers into every head.
model::Architecture architecture_for(Strategy s, const model::Architecture& base);

struct EpochStats {
  std::size_t epoch = 0;  // 0 = before the first update
  double learning_rate = 0.0;
  double loss_total = 0.0;
  double loss_task = 0.0;
  double loss_distillation = 0.0;
  double loss_code = 0.0;
};

using EpochObserver = std::function<void(int task, const EpochStats&, const model::TaskModel&)>;

struct TaskAccuracy {
  int task = 0;
  double accuracy = 0.0;
  double reference = 0.0;
  double forgetting = 0.0;
};

struct EvalRecord {
  int after_task = 0;
  std::vector<TaskAccuracy> tasks;
  double average_accuracy = 0.0;
  /// Mean forgetting over tasks trained before `after_task`; 0 when there are none.
  double average_forgetting = 0.0;
};

double accuracy(const model::TaskModel& m, int task, const data::Dataset& ds);

/// Accuracy on every test split; forgetting is measured against `reference`
/// (accuracy right after each task was trained). Missing references count as
/// the current accuracy.
EvalRecord evaluate(const model::TaskModel& m, std::span<const data::TaskData> tasks,
                    const std::map<int, double>& reference);

/// Everything a learner carries from one task to the next.
struct LearnerState {
  Strategy strategy = Strategy::Finetune;
  model::TaskModel model;
  std::map<int, ae::Autoencoder> encoders;
  std::map<int, double> reference_accuracy;
  std::vector<int> trained_tasks;
  TaskMemory memory;  // as recorded for the most recent task
};

LearnerState make_learner(Strategy s, const SequenceConfig& cfg);

struct TaskOutcome {
  int task = 0;
  std::vector<EpochStats> epochs;
  std::optional<ae::AeTrainResult> autoencoder;
};

/// Autoencoder for `train.task_id`, trained against a frozen copy of `m`
/// exactly as train_task does after an EBLL task.
ae::AeTrainResult fit_task_autoencoder(const model::TaskModel& m, const data::Dataset& train, const SequenceConfig& cfg);

/// Train the last task in `available` from the learner's current weights.
/// Every strategy except Joint reads only `available.back()`; Joint needs
/// every task the learner has seen.
TaskOutcome train_task(LearnerState& state, std::span<const data::TaskData> available, const SequenceConfig& cfg,
                       MetricsLog* log = nullptr, const EpochObserver& observer = {});

struct RunHistory {
  LearnerState final_state;
  std::vector<TaskOutcome> outcomes;
  std::vector<EvalRecord> evaluations;  // one per task, after it was trained
  std::vector<model::TaskModel> models_after_task;
  MetricsLog metrics;
};

RunHistory run_sequence(std::span<const data::TaskData> tasks, Strategy s, const SequenceConfig& cfg,
                        const EpochObserver& observer = {});

}  // namespace ebll::lifelong
