#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>

#include "ebll/autodiff.hpp"

namespace ebll::optim {

/// Raised before any parameter is touched when a gradient holds NaN/Inf.
class NonFiniteGradient : public std::runtime_error {
public:
  explicit NonFiniteGradient(const std::string& parameter_id)
      : std::runtime_error("non-finite gradient in parameter " + parameter_id), parameter(parameter_id) {}
  std::string parameter;
};

struct SgdConfig {
  double learning_rate = 0.05;
  double weight_decay = 5e-4;
  double momentum = 0.9;

  void validate() const;
};

/// Heavy-ball SGD with L2 weight decay folded into the gradient:
///   v <- momentum * v + grad + weight_decay * value
///   value <- value - learning_rate * v
class Sgd {
public:
  explicit Sgd(SgdConfig cfg);

  void step(std::span<nn::Parameter* const> params);
  void set_learning_rate(double lr);
  const SgdConfig& config() const noexcept { return cfg_; }

private:
  SgdConfig cfg_;
  std::unordered_map<std::string, Tensor> velocity_;
};

struct AdaDeltaConfig {
  double rho = 0.95;
  double epsilon = 1e-6;

  void validate() const;
};

/// AdaDelta: per-element step sizes from running RMS of gradients and updates.
class AdaDelta {
public:
  struct Slot {
    Tensor acc_grad_sq;
    Tensor acc_update_sq;
  };

  explicit AdaDelta(AdaDeltaConfig cfg);

  void step(std::span<nn::Parameter* const> params);
  const Slot* slot(const std::string& parameter_id) const;
  const AdaDeltaConfig& config() const noexcept { return cfg_; }

private:
  AdaDeltaConfig cfg_;
  std::unordered_map<std::string, Slot> slots_;
};

}  // namespace ebll::optim
