#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ebll/autodiff.hpp"
#include "ebll/model.hpp"
#include "ebll/optim.hpp"

namespace ebll::ae {

/// Two-layer undercomplete autoencoder r(x) = W_dec sigmoid(W_enc x + b_enc) + b_dec.
class Autoencoder {
public:
  Autoencoder() = default;
  /// Throws std::invalid_argument unless code_dim < feature_dim.
  Autoencoder(std::size_t feature_dim, std::size_t code_dim, std::uint64_t seed);
  /// Adopt existing weights (checkpoint loading); shapes are validated.
  Autoencoder(nn::Parameter w_enc, nn::Parameter b_enc, nn::Parameter w_dec, nn::Parameter b_dec);

  std::size_t feature_dim() const { return w_enc_.value.shape()[1]; }
  std::size_t code_dim() const { return w_enc_.value.shape()[0]; }

  nn::Var encode(nn::Graph& g, nn::Var features);
  nn::Var encode(nn::Graph& g, nn::Var features) const;
  nn::Var reconstruct(nn::Graph& g, nn::Var features);
  nn::Var reconstruct(nn::Graph& g, nn::Var features) const;

  Tensor encode(const Tensor& features) const;
  Tensor reconstruct(const Tensor& features) const;

  std::vector<nn::Parameter*> parameters() { return {&w_enc_, &b_enc_, &w_dec_, &b_dec_}; }
  std::vector<const nn::Parameter*> parameters() const { return {&w_enc_, &b_enc_, &w_dec_, &b_dec_}; }
  std::size_t parameter_count() const;
  void set_frozen(bool frozen);

  nn::Parameter& w_enc() { return w_enc_; }
  nn::Parameter& b_enc() { return b_enc_; }
  nn::Parameter& w_dec() { return w_dec_; }
  nn::Parameter& b_dec() { return b_dec_; }

private:
  void validate() const;

  nn::Parameter w_enc_;  // [c x d]
  nn::Parameter b_enc_;  // [c]
  nn::Parameter w_dec_;  // [d x c]
  nn::Parameter b_dec_;  // [d]
};

enum class ReconstructionLoss {
  /// 1/2 ||r(x) - x||^2, mean over samples.
  SquaredHalf,
  /// ||r(x) - x||_2, mean over samples.
  Norm,
};

struct AeTrainConfig {
  double lambda = 1e-6;
  ReconstructionLoss reconstruction = ReconstructionLoss::SquaredHalf;
  std::size_t batch_size = 32;
  std::size_t stop_window = 5;
  /// Stop once the windowed mean classification loss improves by less than
  /// this fraction over the preceding window.
  double stop_tolerance = 1e-3;
  std::size_t max_epochs = 200;
  optim::AdaDeltaConfig optimizer{};

  void validate() const;
};

struct ObjectiveTerms {
  nn::Var total;
  nn::Var reconstruction;  // before multiplying by lambda
  nn::Var classification;
};

/// lambda * reconstruction(r(f), f) + cross-entropy of the frozen head of
/// `task` in `frozen_model` applied to r(f). Gradient reaches only the
/// autoencoder parameters; `frozen_model` must be fully frozen.
ObjectiveTerms ae_objective(nn::Graph& g, Autoencoder& ae, const Tensor& features_star,
                            std::span<const std::size_t> labels, const model::TaskModel& frozen_model,
                            int task, double lambda,
                            ReconstructionLoss reconstruction = ReconstructionLoss::SquaredHalf);

struct AeEpochRecord {
  std::size_t epoch;  // 1-based
  double code_loss;
  double classification_loss;
};

struct AeTrainResult {
  Autoencoder autoencoder;
  std::vector<AeEpochRecord> history;
  bool stopped_by_rule = false;
};

/// Returns true when the rule fires after the last recorded epoch.
bool should_stop(std::span<const AeEpochRecord> history, std::size_t window, double tolerance);

/// Minimize the objective above over a fixed feature set with AdaDelta.
AeTrainResult train_autoencoder(const Tensor& features_star, std::span<const std::size_t> labels,
                                const model::TaskModel& frozen_model, int task, std::size_t code_dim,
                                const AeTrainConfig& cfg, std::uint64_t seed);

}  // namespace ebll::ae
