#include "ebll/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <sstream>

namespace ebll::nn {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

ConstMap as_matrix(const Tensor& t) {
  return ConstMap(t.data().data(), static_cast<Eigen::Index>(t.rows()),
                  static_cast<Eigen::Index>(t.cols()));
}

MutMap as_matrix(Tensor& t) {
  return MutMap(t.data().data(), static_cast<Eigen::Index>(t.rows()),
                static_cast<Eigen::Index>(t.cols()));
}

Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

void require_probability_rows(const char* op, const char* name, const Tensor& p) {
  for (std::size_t r = 0; r < p.rows(); ++r) {
    double sum = 0.0;
    for (double v : p.row(r)) {
      if (!(v >= 0.0)) {
        std::ostringstream msg;
        msg << op << ": " << name << " row " << r << " has a negative or NaN entry";
        throw NormalizationError(msg.str());
      }
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
      std::ostringstream msg;
      msg.precision(17);
      msg << op << ": " << name << " row " << r << " sums to " << sum << ", expected 1";
      throw NormalizationError(msg.str());
    }
  }
}

void require_theta(double theta) {
  if (!(theta > 0.0) || !std::isfinite(theta)) {
    throw ParameterError("temperature theta must be positive, got " + std::to_string(theta));
  }
}

// Upstream scalar adjoint of a loss node.
double upstream(Graph& g, std::size_t self) { return g.grad_of(self)[0]; }

}  // namespace

Parameter::Parameter(std::string id_, Tensor value_)
    : id(std::move(id_)), value(std::move(value_)), grad(Tensor::zeros_like(value)) {}

const Tensor& Var::value() const { return graph_->value_of(index_); }

Tensor Var::grad() const {
  const Tensor& g = graph_->grad_of(index_);
  if (g.empty()) return Tensor::zeros_like(value());
  return g;
}

bool Var::requires_grad() const { return graph_->needs_grad(index_); }

Var Graph::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, {}, nullptr, false});
  return Var(this, nodes_.size() - 1);
}

Var Graph::parameter(Parameter& p) {
  if (!p.grad.same_shape(p.value)) {
    throw ContractError("parameter " + p.id + " has gradient shape " + shape_string(p.grad.shape()) +
                        " but value shape " + shape_string(p.value.shape()));
  }
  const bool trainable = !p.frozen;
  nodes_.push_back(Node{p.value, {}, {}, {}, trainable ? &p : nullptr, trainable});
  return Var(this, nodes_.size() - 1);
}

Var Graph::record(Tensor value, std::vector<std::size_t> inputs, BackwardFn fn) {
  const bool needs = std::any_of(inputs.begin(), inputs.end(),
                                 [this](std::size_t i) { return nodes_[i].requires_grad; });
  nodes_.push_back(Node{std::move(value), {}, std::move(inputs), needs ? std::move(fn) : BackwardFn{},
                        nullptr, needs});
  return Var(this, nodes_.size() - 1);
}

Tensor& Graph::grad_buffer(std::size_t i) {
  Node& n = nodes_[i];
  if (n.grad.empty()) n.grad = Tensor::zeros_like(n.value);
  return n.grad;
}

std::size_t Graph::backward(Var loss) {
  if (loss.graph_ != this) throw ContractError("backward: loss belongs to another graph");
  if (consumed_) throw ContractError("backward: graph already replayed");
  if (nodes_[loss.index_].value.size() != 1) {
    throw ContractError("backward: loss must be a scalar, got shape " +
                        shape_string(nodes_[loss.index_].value.shape()));
  }
  consumed_ = true;
  if (!nodes_[loss.index_].requires_grad) return 0;

  grad_buffer(loss.index_)[0] = 1.0;
  std::size_t visited = 0;
  for (std::size_t k = loss.index_ + 1; k-- > 0;) {
    Node& n = nodes_[k];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.param != nullptr) {
      auto& dst = n.param->grad.data();
      const auto& src = n.grad.data();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
      continue;
    }
    n.backward(*this, k);
    ++visited;
  }
  return visited;
}

Var affine(Var x, Var weight, Var bias) {
  Graph& g = x.graph();
  const Tensor& X = x.value();
  const Tensor& W = weight.value();
  const Tensor& b = bias.value();
  if (W.rank() != 2 || b.rank() != 1 || W.shape()[1] != X.cols() || W.shape()[0] != b.size()) {
    throw DimensionError("affine: input " + shape_string(X.shape()) + " incompatible with weight " +
                         shape_string(W.shape()) + " and bias " + shape_string(b.shape()));
  }
  const std::size_t out = W.shape()[0];
  Tensor y = X.rank() == 1 ? Tensor({out}) : Tensor({X.rows(), out});
  auto Y = as_matrix(y);
  Y.noalias() = as_matrix(X) * as_matrix(W).transpose();
  Y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.data().data(), static_cast<Eigen::Index>(out));

  const std::size_t xi = x.index(), wi = weight.index(), bi = bias.index();
  return g.record(std::move(y), {xi, wi, bi}, [xi, wi, bi](Graph& gr, std::size_t self) {
    auto G = as_matrix(gr.grad_of(self));
    if (gr.needs_grad(xi)) as_matrix(gr.grad_buffer(xi)).noalias() += G * as_matrix(gr.value_of(wi));
    if (gr.needs_grad(wi)) {
      as_matrix(gr.grad_buffer(wi)).noalias() += G.transpose() * as_matrix(gr.value_of(xi));
    }
    if (gr.needs_grad(bi)) {
      Tensor& db = gr.grad_buffer(bi);
      Eigen::Map<Eigen::RowVectorXd>(db.data().data(), static_cast<Eigen::Index>(db.size())) +=
          G.colwise().sum();
    }
  });
}

Var sigmoid(Var x) {
  Tensor y = x.value();
  for (double& v : y.data()) {
    // exp(-v) overflows to inf for v < -709, giving exactly 0 instead of a subnormal;
    // the branch keeps the result strictly positive down to v ~ -745.
    v = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  }
  const std::size_t xi = x.index();
  return x.graph().record(std::move(y), {xi}, [xi](Graph& gr, std::size_t self) {
    const auto& yv = gr.value_of(self).data();
    const auto& gy = gr.grad_of(self).data();
    auto& gx = gr.grad_buffer(xi).data();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * yv[i] * (1.0 - yv[i]);
  });
}

Var relu(Var x) {
  Tensor y = x.value();
  for (double& v : y.data()) v = v > 0.0 ? v : 0.0;
  const std::size_t xi = x.index();
  return x.graph().record(std::move(y), {xi}, [xi](Graph& gr, std::size_t self) {
    const auto& xv = gr.value_of(xi).data();
    const auto& gy = gr.grad_of(self).data();
    auto& gx = gr.grad_buffer(xi).data();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      if (xv[i] > 0.0) gx[i] += gy[i];
    }
  });
}

Tensor softmax_rows(const Tensor& logits, double theta) {
  require_theta(theta);
  Tensor y = logits;
  for (std::size_t r = 0; r < y.rows(); ++r) {
    auto row = y.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (double& v : row) {
      v = std::exp((v - mx) / theta);
      sum += v;
    }
    for (double& v : row) v /= sum;
  }
  return y;
}

Tensor temper_rows(const Tensor& probabilities, double theta, std::size_t* clamps) {
  require_theta(theta);
  Tensor z = probabilities;
  std::size_t floored = 0;
  for (std::size_t r = 0; r < z.rows(); ++r) {
    auto row = z.row(r);
    // Work in log space: a_i = log(p_i) / theta, then a normalized exp.
    double mx = -INFINITY;
    for (double& v : row) {
      if (v < kProbabilityFloor) {
        v = kProbabilityFloor;
        ++floored;
      }
      v = std::log(v) / theta;
      mx = std::max(mx, v);
    }
    double sum = 0.0;
    for (double& v : row) {
      v = std::exp(v - mx);
      sum += v;
    }
    for (double& v : row) v /= sum;
  }
  if (clamps) *clamps += floored;
  return z;
}

Var softmax_temp(Var logits, double theta) {
  Tensor y = softmax_rows(logits.value(), theta);
  const std::size_t xi = logits.index();
  return logits.graph().record(std::move(y), {xi}, [xi, theta](Graph& gr, std::size_t self) {
    const Tensor& yv = gr.value_of(self);
    const Tensor& gy = gr.grad_of(self);
    Tensor& gx = gr.grad_buffer(xi);
    for (std::size_t r = 0; r < yv.rows(); ++r) {
      auto y = yv.row(r);
      auto gyr = gy.row(r);
      auto gxr = gx.row(r);
      double dot = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) dot += gyr[i] * y[i];
      for (std::size_t i = 0; i < y.size(); ++i) gxr[i] += y[i] * (gyr[i] - dot) / theta;
    }
  });
}

Var temper_probabilities(Var probabilities, double theta) {
  Graph& g = probabilities.graph();
  std::size_t clamps = 0;
  Tensor z = temper_rows(probabilities.value(), theta, &clamps);
  g.note_clamps(clamps);
  const std::size_t pi = probabilities.index();
  return g.record(std::move(z), {pi}, [pi, theta](Graph& gr, std::size_t self) {
    const Tensor& zv = gr.value_of(self);
    const Tensor& gz = gr.grad_of(self);
    const Tensor& pv = gr.value_of(pi);
    Tensor& gp = gr.grad_buffer(pi);
    for (std::size_t r = 0; r < zv.rows(); ++r) {
      auto z = zv.row(r);
      auto gzr = gz.row(r);
      auto p = pv.row(r);
      auto gpr = gp.row(r);
      double dot = 0.0;
      for (std::size_t i = 0; i < z.size(); ++i) dot += gzr[i] * z[i];
      for (std::size_t i = 0; i < z.size(); ++i) {
        if (p[i] < kProbabilityFloor) continue;
        gpr[i] += z[i] * (gzr[i] - dot) / (theta * p[i]);
      }
    }
  });
}

Var cross_entropy(Var probabilities, std::span<const std::size_t> labels) {
  Graph& g = probabilities.graph();
  const Tensor& p = probabilities.value();
  if (labels.size() != p.rows()) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(p.rows()) + " rows");
  }
  double total = 0.0;
  std::size_t clamps = 0;
  for (std::size_t r = 0; r < p.rows(); ++r) {
    if (labels[r] >= p.cols()) {
      throw DimensionError("cross_entropy: label " + std::to_string(labels[r]) + " out of range for " +
                           std::to_string(p.cols()) + " classes");
    }
    double v = p.at(r, labels[r]);
    if (v < kProbabilityFloor) {
      v = kProbabilityFloor;
      ++clamps;
    }
    total -= std::log(v);
  }
  g.note_clamps(clamps);
  const double inv_rows = 1.0 / static_cast<double>(p.rows());
  std::vector<std::size_t> y(labels.begin(), labels.end());
  const std::size_t pi = probabilities.index();
  return g.record(scalar(total * inv_rows), {pi},
                  [pi, y = std::move(y), inv_rows](Graph& gr, std::size_t self) {
                    const double up = upstream(gr, self) * inv_rows;
                    const Tensor& pv = gr.value_of(pi);
                    Tensor& gp = gr.grad_buffer(pi);
                    for (std::size_t r = 0; r < y.size(); ++r) {
                      const double v = pv.at(r, y[r]);
                      if (v < kProbabilityFloor) continue;
                      gp.at(r, y[r]) -= up / v;
                    }
                  });
}

Var soft_cross_entropy(Var probabilities, const Tensor& targets) {
  Graph& g = probabilities.graph();
  const Tensor& p = probabilities.value();
  require_same_shape("soft_cross_entropy", p, targets);
  double total = 0.0;
  std::size_t clamps = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    double v = p[i];
    if (v < kProbabilityFloor) {
      v = kProbabilityFloor;
      if (targets[i] != 0.0) ++clamps;
    }
    total -= targets[i] * std::log(v);
  }
  g.note_clamps(clamps);
  const double inv_rows = 1.0 / static_cast<double>(p.rows());
  const std::size_t pi = probabilities.index();
  return g.record(scalar(total * inv_rows), {pi}, [pi, targets, inv_rows](Graph& gr, std::size_t self) {
    const double up = upstream(gr, self) * inv_rows;
    const Tensor& pv = gr.value_of(pi);
    Tensor& gp = gr.grad_buffer(pi);
    for (std::size_t i = 0; i < pv.size(); ++i) {
      if (pv[i] < kProbabilityFloor) continue;
      gp[i] -= up * targets[i] / pv[i];
    }
  });
}

Var distillation_loss(Var current, Var recorded, double theta) {
  require_theta(theta);
  Graph& g = current.graph();
  const Tensor& p = current.value();
  const Tensor& q = recorded.value();
  require_same_shape("distillation_loss", p, q);
  require_probability_rows("distillation_loss", "p_current", p);
  require_probability_rows("distillation_loss", "p_recorded", q);

  std::size_t clamps = 0;
  Tensor z_hat = temper_rows(p, theta, &clamps);
  Tensor z_star = temper_rows(q, theta, &clamps);
  g.note_clamps(clamps);

  double total = 0.0;
  for (std::size_t i = 0; i < z_hat.size(); ++i) total -= z_star[i] * std::log(z_hat[i]);
  const double inv_rows = 1.0 / static_cast<double>(p.rows());

  // d/dp_k of -<Z*, log Z> is (Z_k - Z*_k) / (theta p_k); Z* is held constant.
  const std::size_t pi = current.index();
  return g.record(scalar(total * inv_rows), {pi},
                  [pi, theta, inv_rows, z_hat = std::move(z_hat), z_star = std::move(z_star)](
                      Graph& gr, std::size_t self) {
                    const double up = upstream(gr, self) * inv_rows;
                    const Tensor& pv = gr.value_of(pi);
                    Tensor& gp = gr.grad_buffer(pi);
                    for (std::size_t i = 0; i < pv.size(); ++i) {
                      if (pv[i] < kProbabilityFloor) continue;
                      gp[i] += up * (z_hat[i] - z_star[i]) / (theta * pv[i]);
                    }
                  });
}

Var squared_l2_half(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_same_shape("squared_l2_half", av, bv);
  double total = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double d = av[i] - bv[i];
    total += d * d;
  }
  const double inv_rows = 1.0 / static_cast<double>(av.rows());
  const std::size_t ai = a.index(), bi = b.index();
  return a.graph().record(scalar(0.5 * total * inv_rows), {ai, bi},
                          [ai, bi, inv_rows](Graph& gr, std::size_t self) {
                            const double up = upstream(gr, self) * inv_rows;
                            const auto& x = gr.value_of(ai).data();
                            const auto& y = gr.value_of(bi).data();
                            if (gr.needs_grad(ai)) {
                              auto& ga = gr.grad_buffer(ai).data();
                              for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += up * (x[i] - y[i]);
                            }
                            if (gr.needs_grad(bi)) {
                              auto& gb = gr.grad_buffer(bi).data();
                              for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= up * (x[i] - y[i]);
                            }
                          });
}

Var l2_distance(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_same_shape("l2_distance", av, bv);
  std::vector<double> norms(av.rows());
  double total = 0.0;
  for (std::size_t r = 0; r < av.rows(); ++r) {
    double s = 0.0;
    auto x = av.row(r);
    auto y = bv.row(r);
    for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
    norms[r] = std::sqrt(s);
    total += norms[r];
  }
  const double inv_rows = 1.0 / static_cast<double>(av.rows());
  const std::size_t ai = a.index(), bi = b.index();
  return a.graph().record(
      scalar(total * inv_rows), {ai, bi},
      [ai, bi, inv_rows, norms = std::move(norms)](Graph& gr, std::size_t self) {
        const double up = upstream(gr, self) * inv_rows;
        const Tensor& x = gr.value_of(ai);
        const Tensor& y = gr.value_of(bi);
        for (std::size_t r = 0; r < x.rows(); ++r) {
          if (norms[r] == 0.0) continue;
          const double k = up / norms[r];
          auto xr = x.row(r);
          auto yr = y.row(r);
          if (gr.needs_grad(ai)) {
            auto ga = gr.grad_buffer(ai).row(r);
            for (std::size_t i = 0; i < xr.size(); ++i) ga[i] += k * (xr[i] - yr[i]);
          }
          if (gr.needs_grad(bi)) {
            auto gb = gr.grad_buffer(bi).row(r);
            for (std::size_t i = 0; i < xr.size(); ++i) gb[i] -= k * (xr[i] - yr[i]);
          }
        }
      });
}

Var add(Var a, Var b) {
  require_same_shape("add", a.value(), b.value());
  Tensor y = a.value();
  const auto& bv = b.value().data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
  const std::size_t ai = a.index(), bi = b.index();
  return a.graph().record(std::move(y), {ai, bi}, [ai, bi](Graph& gr, std::size_t self) {
    const auto& gy = gr.grad_of(self).data();
    for (std::size_t in : {ai, bi}) {
      if (!gr.needs_grad(in)) continue;
      auto& gx = gr.grad_buffer(in).data();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i];
    }
  });
}

Var scale(Var a, double factor) {
  Tensor y = a.value();
  for (double& v : y.data()) v *= factor;
  const std::size_t ai = a.index();
  return a.graph().record(std::move(y), {ai}, [ai, factor](Graph& gr, std::size_t self) {
    const auto& gy = gr.grad_of(self).data();
    auto& gx = gr.grad_buffer(ai).data();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += factor * gy[i];
  });
}

}  // namespace ebll::nn
