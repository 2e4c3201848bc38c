#include "ebll/autoencoder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "ebll/rng.hpp"

namespace ebll::ae {

Autoencoder::Autoencoder(std::size_t feature_dim, std::size_t code_dim, std::uint64_t seed) {
  if (code_dim == 0 || code_dim >= feature_dim) {
    throw std::invalid_argument("autoencoder must be undercomplete: code_dim " + std::to_string(code_dim) +
                                " vs feature_dim " + std::to_string(feature_dim));
  }
  auto enc = model::make_dense("ae.enc", feature_dim, code_dim, model::Activation::None,
                               derive_seed(seed, {0}));
  auto dec = model::make_dense("ae.dec", code_dim, feature_dim, model::Activation::None,
                               derive_seed(seed, {1}));
  w_enc_ = std::move(enc.weight);
  b_enc_ = std::move(enc.bias);
  w_dec_ = std::move(dec.weight);
  b_dec_ = std::move(dec.bias);
}

Autoencoder::Autoencoder(nn::Parameter w_enc, nn::Parameter b_enc, nn::Parameter w_dec,
                         nn::Parameter b_dec)
    : w_enc_(std::move(w_enc)), b_enc_(std::move(b_enc)), w_dec_(std::move(w_dec)), b_dec_(std::move(b_dec)) {
  validate();
}

void Autoencoder::validate() const {
  const auto& we = w_enc_.value.shape();
  const auto& wd = w_dec_.value.shape();
  if (we.size() != 2 || wd.size() != 2 || wd[0] != we[1] || wd[1] != we[0] || b_enc_.value.size() != we[0] ||
      b_dec_.value.size() != we[1]) {
    throw DimensionError("autoencoder weights have inconsistent shapes: enc " + shape_string(we) + ", dec " +
                         shape_string(wd));
  }
  if (we[0] >= we[1]) throw std::invalid_argument("autoencoder must be undercomplete");
}

namespace {

template <class Self>
nn::Var encode_impl(Self& self, nn::Graph& g, nn::Var f, const nn::Parameter& we, const nn::Parameter& be) {
  if (f.value().cols() != self.feature_dim()) {
    throw DimensionError("autoencoder input width " + std::to_string(f.value().cols()) + ", expected " +
                         std::to_string(self.feature_dim()));
  }
  return nn::sigmoid(nn::affine(f, g.parameter(we), g.parameter(be)));
}

}  // namespace

nn::Var Autoencoder::encode(nn::Graph& g, nn::Var features) {
  if (features.value().cols() != feature_dim()) {
    throw DimensionError("autoencoder input width " + std::to_string(features.value().cols()) +
                         ", expected " + std::to_string(feature_dim()));
  }
  return nn::sigmoid(nn::affine(features, g.parameter(w_enc_), g.parameter(b_enc_)));
}

nn::Var Autoencoder::encode(nn::Graph& g, nn::Var features) const {
  return encode_impl(*this, g, features, w_enc_, b_enc_);
}

nn::Var Autoencoder::reconstruct(nn::Graph& g, nn::Var features) {
  return nn::affine(encode(g, features), g.parameter(w_dec_), g.parameter(b_dec_));
}

nn::Var Autoencoder::reconstruct(nn::Graph& g, nn::Var features) const {
  return nn::affine(encode(g, features), g.parameter(w_dec_), g.parameter(b_dec_));
}

Tensor Autoencoder::encode(const Tensor& features) const {
  nn::Graph g;
  return encode(g, g.constant(features)).value();
}

Tensor Autoencoder::reconstruct(const Tensor& features) const {
  nn::Graph g;
  return reconstruct(g, g.constant(features)).value();
}

std::size_t Autoencoder::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : parameters()) n += p->value.size();
  return n;
}

void Autoencoder::set_frozen(bool frozen) {
  for (auto* p : parameters()) p->frozen = frozen;
}

void AeTrainConfig::validate() const {
  if (!(lambda >= 0.0)) throw std::invalid_argument("autoencoder lambda must be >= 0");
  if (batch_size == 0) throw std::invalid_argument("autoencoder batch_size must be >= 1");
  if (stop_window == 0) throw std::invalid_argument("autoencoder stop_window must be >= 1");
  if (max_epochs < stop_window) throw std::invalid_argument("autoencoder max_epochs must be >= stop_window");
  if (!(stop_tolerance >= 0.0)) throw std::invalid_argument("autoencoder stop_tolerance must be >= 0");
  optimizer.validate();
}

ObjectiveTerms ae_objective(nn::Graph& g, Autoencoder& ae, const Tensor& features_star,
                            std::span<const std::size_t> labels, const model::TaskModel& frozen_model,
                            int task, double lambda, ReconstructionLoss reconstruction) {
  for (const auto* p : frozen_model.all_parameters()) {
    if (!p->frozen) throw nn::ContractError("ae_objective: frozen head parameter " + p->id + " is trainable");
  }
  nn::Var f = g.constant(features_star);
  nn::Var r = ae.reconstruct(g, f);
  nn::Var rec = reconstruction == ReconstructionLoss::SquaredHalf ? nn::squared_l2_half(r, f)
                                                                  : nn::l2_distance(r, f);
  nn::Var probs =
      nn::softmax_temp(frozen_model.forward_head_logits(g, task, frozen_model.forward_shared(g, r)), 1.0);
  nn::Var cls = nn::cross_entropy(probs, labels);
  return {nn::add(nn::scale(rec, lambda), cls), rec, cls};
}

bool should_stop(std::span<const AeEpochRecord> history, std::size_t window, double tolerance) {
  if (history.size() < 2 * window) return false;
  const std::size_t n = history.size();
  double previous = 0.0, current = 0.0;
  for (std::size_t i = n - 2 * window; i < n - window; ++i) previous += history[i].classification_loss;
  for (std::size_t i = n - window; i < n; ++i) current += history[i].classification_loss;
  previous /= static_cast<double>(window);
  current /= static_cast<double>(window);
  if (previous <= 0.0) return true;
  return (previous - current) / previous < tolerance;
}

AeTrainResult train_autoencoder(const Tensor& features_star, std::span<const std::size_t> labels,
                                const model::TaskModel& frozen_model, int task, std::size_t code_dim,
                                const AeTrainConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (features_star.empty() || labels.empty()) throw std::invalid_argument("train_autoencoder: empty dataset");
  const std::size_t n = features_star.rows();
  const std::size_t d = features_star.cols();
  if (labels.size() != n) throw DimensionError("train_autoencoder: label count does not match feature rows");

  AeTrainResult result{Autoencoder(d, code_dim, derive_seed(seed, Stream::Autoencoder)), {}, false};
  Autoencoder& ae = result.autoencoder;
  optim::AdaDelta opt(cfg.optimizer);
  auto params = ae.parameters();

  std::vector<std::size_t> order(n);
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(seed, Stream::AutoencoderEpoch, {epoch}));
    std::shuffle(order.begin(), order.end(), rng);

    double code_sum = 0.0, cls_sum = 0.0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t stop = std::min(n, start + cfg.batch_size);
      Tensor batch({stop - start, d});
      std::vector<std::size_t> y(stop - start);
      for (std::size_t i = start; i < stop; ++i) {
        std::copy_n(features_star.row(order[i]).begin(), d, batch.row(i - start).begin());
        y[i - start] = labels[order[i]];
      }
      for (auto* p : params) p->zero_grad();
      nn::Graph g;
      auto terms = ae_objective(g, ae, batch, y, frozen_model, task, cfg.lambda, cfg.reconstruction);
      g.backward(terms.total);
      opt.step(params);
      const double w = static_cast<double>(stop - start);
      code_sum += terms.reconstruction.value()[0] * w;
      cls_sum += terms.classification.value()[0] * w;
    }
    result.history.push_back({epoch, code_sum / static_cast<double>(n), cls_sum / static_cast<double>(n)});
    if (should_stop(result.history, cfg.stop_window, cfg.stop_tolerance)) {
      result.stopped_by_rule = true;
      break;
    }
  }
  return result;
}

}  // namespace ebll::ae
