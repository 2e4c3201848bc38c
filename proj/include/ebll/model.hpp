#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "ebll/autodiff.hpp"

namespace ebll::model {

class LookupError : public std::out_of_range {
public:
  using std::out_of_range::out_of_range;
};

enum class Activation { None, Relu };

struct Dense {
  nn::Parameter weight;  // [out x in]
  nn::Parameter bias;    // [out]
  Activation activation = Activation::None;

  std::size_t in_dim() const { return weight.value.shape()[1]; }
  std::size_t out_dim() const { return weight.value.shape()[0]; }
};

/// Symmetric uniform init in +-sqrt(6 / (fan_in + fan_out)), zero bias.
Dense make_dense(const std::string& id, std::size_t in, std::size_t out, Activation act,
                 std::uint64_t seed);

/// A chain of dense layers.
class LayerStack {
public:
  LayerStack() = default;
  /// Hidden layers of the given widths with ReLU; when `output` is non-zero a
  /// final linear layer of that width is appended.
  LayerStack(const std::string& prefix, std::size_t in, const std::vector<std::size_t>& hidden,
             std::size_t output, std::uint64_t seed);
  /// Adopt existing layers; `in` is the input width (needed when `layers` is empty).
  LayerStack(std::size_t in, std::vector<Dense> layers);

  nn::Var apply(nn::Graph& g, nn::Var x);
  /// Same computation with every weight entered as a constant.
  nn::Var apply(nn::Graph& g, nn::Var x) const;

  bool empty() const noexcept { return layers_.empty(); }
  std::size_t in_dim() const;
  std::size_t out_dim() const;
  std::vector<Dense>& layers() noexcept { return layers_; }
  const std::vector<Dense>& layers() const noexcept { return layers_; }
  std::vector<nn::Parameter*> parameters();
  std::vector<const nn::Parameter*> parameters() const;
  void set_frozen(bool frozen);

private:
  std::size_t input_dim_ = 0;
  std::vector<Dense> layers_;
};

/// Widths of the feature extractor F, the shared operator T and the hidden
/// part of each task head. An empty `shared_widths` gives the separate-heads
/// variant where every head sits directly on the features.
struct Architecture {
  std::size_t input_dim = 16;
  std::vector<std::size_t> feature_widths{64, 64};
  std::vector<std::size_t> shared_widths{32};
  std::vector<std::size_t> head_hidden_widths{};

  void validate() const;
  std::size_t feature_dim() const { return feature_widths.back(); }
  std::size_t head_input_dim() const {
    return shared_widths.empty() ? feature_dim() : shared_widths.back();
  }
};

/// f_t = head_t o shared o features.
class TaskModel {
public:
  TaskModel() = default;
  TaskModel(Architecture arch, std::uint64_t seed);

  const Architecture& architecture() const noexcept { return arch_; }

  nn::Var forward_features(nn::Graph& g, nn::Var x);
  nn::Var forward_features(nn::Graph& g, nn::Var x) const;
  nn::Var forward_shared(nn::Graph& g, nn::Var features);
  nn::Var forward_shared(nn::Graph& g, nn::Var features) const;
  nn::Var forward_head_logits(nn::Graph& g, int task, nn::Var shared);
  nn::Var forward_head_logits(nn::Graph& g, int task, nn::Var shared) const;
  /// Class probabilities (softmax at temperature 1).
  nn::Var forward_task(nn::Graph& g, int task, nn::Var x);
  nn::Var forward_task(nn::Graph& g, int task, nn::Var x) const;

  /// Graph-free evaluation.
  Tensor features(const Tensor& x) const;
  Tensor probabilities(int task, const Tensor& x) const;

  void add_head(int task, std::size_t class_count, std::uint64_t seed);
  bool has_head(int task) const { return heads_.count(task) != 0; }
  std::vector<int> tasks() const;
  std::size_t class_count(int task) const;

  LayerStack& feature_stack() noexcept { return features_; }
  const LayerStack& feature_stack() const noexcept { return features_; }
  LayerStack& shared_stack() noexcept { return shared_; }
  const LayerStack& shared_stack() const noexcept { return shared_; }
  LayerStack& head(int task);
  const LayerStack& head(int task) const;

  std::vector<nn::Parameter*> feature_parameters() { return features_.parameters(); }
  std::vector<nn::Parameter*> shared_parameters() { return shared_.parameters(); }
  std::vector<nn::Parameter*> head_parameters(int task) { return head(task).parameters(); }
  std::vector<nn::Parameter*> all_parameters();
  std::vector<const nn::Parameter*> all_parameters() const;
  std::size_t parameter_count() const;

  void set_frozen(bool frozen);
  void zero_grad();

  /// Rebuild from already-initialized stacks (checkpoint loading).
  static TaskModel assemble(Architecture arch, LayerStack features, LayerStack shared,
                            std::map<int, LayerStack> heads);

private:
  Architecture arch_;
  LayerStack features_;
  LayerStack shared_;
  std::map<int, LayerStack> heads_;
};

/// Deep, frozen copy of a model: F*, T* and every T*_t.
class FrozenSnapshot {
public:
  explicit FrozenSnapshot(const TaskModel& source);

  const TaskModel& model() const noexcept { return model_; }

private:
  TaskModel model_;
};

FrozenSnapshot snapshot(const TaskModel& m);

}  // namespace ebll::model
