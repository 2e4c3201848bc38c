#include "ebll/model.hpp"

#include <cmath>

#include "ebll/rng.hpp"

namespace ebll::model {

Dense make_dense(const std::string& id, std::size_t in, std::size_t out, Activation act,
                 std::uint64_t seed) {
  Rng rng(seed);
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Tensor w({out, in});
  for (double& v : w.data()) v = dist(rng);
  return Dense{nn::Parameter(id + ".weight", std::move(w)), nn::Parameter(id + ".bias", Tensor({out})),
               act};
}

LayerStack::LayerStack(const std::string& prefix, std::size_t in, const std::vector<std::size_t>& hidden,
                       std::size_t output, std::uint64_t seed)
    : input_dim_(in) {
  std::size_t fan_in = in;
  std::uint64_t layer = 0;
  for (std::size_t width : hidden) {
    layers_.push_back(make_dense(prefix + "." + std::to_string(layer), fan_in, width, Activation::Relu,
                                 derive_seed(seed, {layer})));
    fan_in = width;
    ++layer;
  }
  if (output != 0) {
    layers_.push_back(make_dense(prefix + "." + std::to_string(layer), fan_in, output, Activation::None,
                                 derive_seed(seed, {layer})));
  }
}

LayerStack::LayerStack(std::size_t in, std::vector<Dense> layers) : input_dim_(in), layers_(std::move(layers)) {
  std::size_t width = in;
  for (const auto& l : layers_) {
    if (l.in_dim() != width || l.bias.value.size() != l.out_dim()) {
      throw DimensionError("layer " + l.weight.id + " does not chain: expected input width " + std::to_string(width));
    }
    width = l.out_dim();
  }
}

namespace {

template <class Stack>
nn::Var apply_layers(Stack& layers, nn::Graph& g, nn::Var x) {
  for (auto& layer : layers) {
    x = nn::affine(x, g.parameter(layer.weight), g.parameter(layer.bias));
    if (layer.activation == Activation::Relu) x = nn::relu(x);
  }
  return x;
}

}  // namespace

nn::Var LayerStack::apply(nn::Graph& g, nn::Var x) { return apply_layers(layers_, g, x); }
nn::Var LayerStack::apply(nn::Graph& g, nn::Var x) const { return apply_layers(layers_, g, x); }

std::size_t LayerStack::in_dim() const { return layers_.empty() ? input_dim_ : layers_.front().in_dim(); }
std::size_t LayerStack::out_dim() const { return layers_.empty() ? input_dim_ : layers_.back().out_dim(); }

std::vector<nn::Parameter*> LayerStack::parameters() {
  std::vector<nn::Parameter*> out;
  for (auto& l : layers_) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

std::vector<const nn::Parameter*> LayerStack::parameters() const {
  std::vector<const nn::Parameter*> out;
  for (const auto& l : layers_) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

void LayerStack::set_frozen(bool frozen) {
  for (auto* p : parameters()) p->frozen = frozen;
}

void Architecture::validate() const {
  if (input_dim == 0) throw std::invalid_argument("architecture: input_dim must be positive");
  if (feature_widths.empty()) throw std::invalid_argument("architecture: feature extractor needs a layer");
  auto positive = [](const std::vector<std::size_t>& w) {
    for (auto v : w) {
      if (v == 0) return false;
    }
    return true;
  };
  if (!positive(feature_widths) || !positive(shared_widths) || !positive(head_hidden_widths)) {
    throw std::invalid_argument("architecture: layer widths must be positive");
  }
}

TaskModel::TaskModel(Architecture arch, std::uint64_t seed) : arch_(std::move(arch)) {
  arch_.validate();
  features_ = LayerStack("F", arch_.input_dim, arch_.feature_widths, 0, derive_seed(seed, Stream::Trunk, {0}));
  shared_ = LayerStack("T", arch_.feature_dim(), arch_.shared_widths, 0, derive_seed(seed, Stream::Trunk, {1}));
}

TaskModel TaskModel::assemble(Architecture arch, LayerStack features, LayerStack shared,
                              std::map<int, LayerStack> heads) {
  arch.validate();
  TaskModel m;
  m.arch_ = std::move(arch);
  m.features_ = std::move(features);
  m.shared_ = std::move(shared);
  m.heads_ = std::move(heads);
  if (m.features_.in_dim() != m.arch_.input_dim || m.features_.out_dim() != m.arch_.feature_dim() ||
      m.shared_.out_dim() != m.arch_.head_input_dim()) {
    throw DimensionError("assemble: stacks do not match the architecture");
  }
  for (const auto& [t, h] : m.heads_) {
    if (h.in_dim() != m.arch_.head_input_dim()) {
      throw DimensionError("assemble: head " + std::to_string(t) + " input width mismatch");
    }
  }
  return m;
}

namespace {

void require_input(const TaskModel& m, const Tensor& x) {
  if (x.cols() != m.architecture().input_dim) {
    throw DimensionError("model input has width " + std::to_string(x.cols()) + ", expected " +
                         std::to_string(m.architecture().input_dim));
  }
}

}  // namespace

nn::Var TaskModel::forward_features(nn::Graph& g, nn::Var x) {
  require_input(*this, x.value());
  return features_.apply(g, x);
}

nn::Var TaskModel::forward_features(nn::Graph& g, nn::Var x) const {
  require_input(*this, x.value());
  return features_.apply(g, x);
}

nn::Var TaskModel::forward_shared(nn::Graph& g, nn::Var features) { return shared_.apply(g, features); }
nn::Var TaskModel::forward_shared(nn::Graph& g, nn::Var features) const { return shared_.apply(g, features); }

nn::Var TaskModel::forward_head_logits(nn::Graph& g, int task, nn::Var shared) {
  return head(task).apply(g, shared);
}

nn::Var TaskModel::forward_head_logits(nn::Graph& g, int task, nn::Var shared) const {
  return head(task).apply(g, shared);
}

nn::Var TaskModel::forward_task(nn::Graph& g, int task, nn::Var x) {
  LayerStack& h = head(task);
  return nn::softmax_temp(h.apply(g, forward_shared(g, forward_features(g, x))), 1.0);
}

nn::Var TaskModel::forward_task(nn::Graph& g, int task, nn::Var x) const {
  const LayerStack& h = head(task);
  return nn::softmax_temp(h.apply(g, forward_shared(g, forward_features(g, x))), 1.0);
}

Tensor TaskModel::features(const Tensor& x) const {
  nn::Graph g;
  return forward_features(g, g.constant(x)).value();
}

Tensor TaskModel::probabilities(int task, const Tensor& x) const {
  nn::Graph g;
  return forward_task(g, task, g.constant(x)).value();
}

void TaskModel::add_head(int task, std::size_t class_count, std::uint64_t seed) {
  if (has_head(task)) throw std::invalid_argument("task " + std::to_string(task) + " already has a head");
  if (class_count < 2) throw std::invalid_argument("a task head needs at least 2 classes");
  heads_.emplace(task, LayerStack("head" + std::to_string(task), arch_.head_input_dim(),
                                  arch_.head_hidden_widths, class_count, seed));
}

std::vector<int> TaskModel::tasks() const {
  std::vector<int> out;
  for (const auto& [t, h] : heads_) out.push_back(t);
  return out;
}

std::size_t TaskModel::class_count(int task) const { return head(task).out_dim(); }

LayerStack& TaskModel::head(int task) {
  auto it = heads_.find(task);
  if (it == heads_.end()) throw LookupError("no head for task " + std::to_string(task));
  return it->second;
}

const LayerStack& TaskModel::head(int task) const {
  auto it = heads_.find(task);
  if (it == heads_.end()) throw LookupError("no head for task " + std::to_string(task));
  return it->second;
}

std::vector<nn::Parameter*> TaskModel::all_parameters() {
  auto out = features_.parameters();
  for (auto* p : shared_.parameters()) out.push_back(p);
  for (auto& [t, h] : heads_) {
    for (auto* p : h.parameters()) out.push_back(p);
  }
  return out;
}

std::vector<const nn::Parameter*> TaskModel::all_parameters() const {
  auto out = features_.parameters();
  for (auto* p : shared_.parameters()) out.push_back(p);
  for (const auto& [t, h] : heads_) {
    for (auto* p : h.parameters()) out.push_back(p);
  }
  return out;
}

std::size_t TaskModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : all_parameters()) n += p->value.size();
  return n;
}

void TaskModel::set_frozen(bool frozen) {
  for (auto* p : all_parameters()) p->frozen = frozen;
}

void TaskModel::zero_grad() {
  for (auto* p : all_parameters()) p->zero_grad();
}

FrozenSnapshot::FrozenSnapshot(const TaskModel& source) : model_(source) { model_.set_frozen(true); }

FrozenSnapshot snapshot(const TaskModel& m) { return FrozenSnapshot(m); }

}  // namespace ebll::model
