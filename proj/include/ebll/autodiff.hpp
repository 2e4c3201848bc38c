#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ebll/tensor.hpp"

namespace ebll::nn {

class ContractError : public std::logic_error {
public:
  using std::logic_error::logic_error;
};

class ParameterError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

class NormalizationError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Floor applied to probabilities before a log or a fractional power.
inline constexpr double kProbabilityFloor = 1e-12;

struct Parameter {
  Parameter() = default;
  Parameter(std::string id, Tensor value);

  void zero_grad() { grad.fill(0.0); }

  std::string id;
  Tensor value;
  Tensor grad;
  /// Frozen parameters enter a graph as constants and never receive gradient.
  bool frozen = false;
};

class Graph;

/// Handle to a node recorded in a Graph. Cheap to copy; valid while the
/// owning graph lives.
class Var {
public:
  Var() = default;

  const Tensor& value() const;
  /// Adjoint after Graph::backward; a zero tensor when nothing flowed here.
  Tensor grad() const;
  Graph& graph() const { return *graph_; }
  std::size_t index() const { return index_; }
  bool requires_grad() const;

private:
  friend class Graph;
  Var(Graph* g, std::size_t i) : graph_(g), index_(i) {}

  Graph* graph_ = nullptr;
  std::size_t index_ = 0;
};

/// Tape of the primitive operations applied during one forward pass.
///
/// Nodes are appended in evaluation order; backward replays their adjoint
/// rules in reverse. A graph is single-use: build, call backward once, drop.
class Graph {
public:
  using BackwardFn = std::function<void(Graph&, std::size_t self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  Var parameter(Parameter& p);
  /// Read-only parameters always enter as constants.
  Var parameter(const Parameter& p) { return constant(p.value); }

  /// Accumulate d(loss)/d(node) for every node feeding `loss` and push leaf
  /// adjoints into their Parameter::grad. Returns the number of operations
  /// whose adjoint rule ran.
  std::size_t backward(Var loss);

  std::size_t size() const noexcept { return nodes_.size(); }
  /// Number of probability entries floored to kProbabilityFloor so far.
  std::size_t clamp_events() const noexcept { return clamp_events_; }
  void note_clamps(std::size_t n) noexcept { clamp_events_ += n; }

  // Used by op implementations.
  Var record(Tensor value, std::vector<std::size_t> inputs, BackwardFn fn);
  const Tensor& value_of(std::size_t i) const { return nodes_[i].value; }
  const Tensor& grad_of(std::size_t i) const { return nodes_[i].grad; }
  bool needs_grad(std::size_t i) const { return nodes_[i].requires_grad; }
  /// Adjoint buffer of node i, allocated as zeros on first use.
  Tensor& grad_buffer(std::size_t i);

private:
  friend class Var;

  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };

  std::vector<Node> nodes_;
  std::size_t clamp_events_ = 0;
  bool consumed_ = false;
};

// Layers. Every op accepts rank-1 inputs or rank-2 batches (one sample per row).

/// x W^T + b. W is [out x in], b is [out].
Var affine(Var x, Var weight, Var bias);
Var sigmoid(Var x);
/// max(0, x); the subgradient at exactly 0 is 0.
Var relu(Var x);

/// Row-wise softmax of logits / theta.
Var softmax_temp(Var logits, double theta = 1.0);
/// Row-wise p^(1/theta) / sum_j p_j^(1/theta) for probability rows p.
Var temper_probabilities(Var probabilities, double theta);

// Scalar losses. Each returns the mean over batch rows of the per-row value.

/// -log p[label] per row.
Var cross_entropy(Var probabilities, std::span<const std::size_t> labels);
/// -sum_i target_i log p_i per row, target rows arbitrary non-negative weights.
Var soft_cross_entropy(Var probabilities, const Tensor& targets);
/// -<Z*, log Z> with Z, Z* the theta-tempered current and recorded rows.
/// Only `current` receives gradient.
Var distillation_loss(Var current, Var recorded, double theta);
/// 1/2 ||a - b||^2 per row.
Var squared_l2_half(Var a, Var b);
/// ||a - b||_2 per row (subgradient 0 where a == b).
Var l2_distance(Var a, Var b);

Var add(Var a, Var b);
Var scale(Var a, double factor);

// Plain-value helpers (no graph).
Tensor softmax_rows(const Tensor& logits, double theta = 1.0);
Tensor temper_rows(const Tensor& probabilities, double theta, std::size_t* clamps = nullptr);

}  // namespace ebll::nn
