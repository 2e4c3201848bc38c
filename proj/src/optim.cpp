#include "ebll/optim.hpp"

#include <cmath>

namespace ebll::optim {

namespace {

void check_finite(std::span<nn::Parameter* const> params) {
  for (const nn::Parameter* p : params) {
    if (!p->grad.all_finite()) throw NonFiniteGradient(p->id);
  }
}

}  // namespace

void SgdConfig::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("sgd learning_rate must be > 0");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("sgd weight_decay must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("sgd momentum must be in [0, 1)");
}

Sgd::Sgd(SgdConfig cfg) : cfg_(cfg) { cfg_.validate(); }

void Sgd::set_learning_rate(double lr) {
  SgdConfig next = cfg_;
  next.learning_rate = lr;
  next.validate();
  cfg_ = next;
}

void Sgd::step(std::span<nn::Parameter* const> params) {
  check_finite(params);
  for (nn::Parameter* p : params) {
    auto [it, fresh] = velocity_.try_emplace(p->id, Tensor::zeros_like(p->value));
    auto& v = it->second.data();
    auto& w = p->value.data();
    const auto& g = p->grad.data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      v[i] = cfg_.momentum * v[i] + g[i] + cfg_.weight_decay * w[i];
      w[i] -= cfg_.learning_rate * v[i];
    }
  }
}

void AdaDeltaConfig::validate() const {
  if (!(rho > 0.0 && rho < 1.0)) throw std::invalid_argument("adadelta rho must be in (0, 1)");
  if (!(epsilon > 0.0)) throw std::invalid_argument("adadelta epsilon must be > 0");
}

AdaDelta::AdaDelta(AdaDeltaConfig cfg) : cfg_(cfg) { cfg_.validate(); }

const AdaDelta::Slot* AdaDelta::slot(const std::string& parameter_id) const {
  auto it = slots_.find(parameter_id);
  return it == slots_.end() ? nullptr : &it->second;
}

void AdaDelta::step(std::span<nn::Parameter* const> params) {
  check_finite(params);
  const double rho = cfg_.rho;
  const double eps = cfg_.epsilon;
  for (nn::Parameter* p : params) {
    auto [it, fresh] =
        slots_.try_emplace(p->id, Slot{Tensor::zeros_like(p->value), Tensor::zeros_like(p->value)});
    auto& eg = it->second.acc_grad_sq.data();
    auto& ex = it->second.acc_update_sq.data();
    auto& w = p->value.data();
    const auto& g = p->grad.data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      eg[i] = rho * eg[i] + (1.0 - rho) * g[i] * g[i];
      const double delta = -(std::sqrt(ex[i] + eps) / std::sqrt(eg[i] + eps)) * g[i];
      ex[i] = rho * ex[i] + (1.0 - rho) * delta * delta;
      w[i] += delta;
    }
  }
}

}  // namespace ebll::optim
