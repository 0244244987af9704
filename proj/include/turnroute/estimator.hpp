#pragma once

/**
 * Outcome estimator: score(h, a) = f([z_x; z_a]).
 *
 * f is a stack of dense layers with ReLU (and inverted dropout during
 * training) ending in a linear scalar head. z_a comes from the model encoder
 * whose parameters train jointly with f; the history embedding z_x is frozen
 * input.
 *
 * Loss over a batch: mean squared error + lambda * sum_a ||e_a||^2 over all
 * residual embeddings. Gradients are computed by hand and checked against
 * central finite differences in grad_check().
 *
 * Training: AdamW (decoupled weight decay on weight matrices only), cosine
 * learning rate per epoch decaying to `lr_floor` * lr, seeded per-epoch
 * shuffling, early stopping on validation MSE with best-checkpoint restore.
 */

#include "common.hpp"
#include "encoding.hpp"
#include "model_pool.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace turnroute {

struct TrainConfig {
  double learning_rate = 1e-3;
  double weight_decay = 0.01;
  size_t batch_size = 64;
  size_t max_epochs = 100;
  size_t patience = 3;
  double residual_l2 = 0.001;
  uint64_t seed = 0;
  double dropout = 0.1;
  std::vector<size_t> hidden{256, 64};
  double lr_floor = 0.01;  // fraction of learning_rate reached at the last epoch
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const {
    if (!(learning_rate > 0.0)) throw ValidationError("train: learning_rate must be positive");
    if (!(weight_decay >= 0.0)) throw ValidationError("train: weight_decay must be >= 0");
    if (batch_size == 0) throw ValidationError("train: batch_size must be positive");
    if (!(residual_l2 >= 0.0)) throw ValidationError("train: residual_l2 must be >= 0");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ValidationError("train: dropout must be in [0, 1)");
    if (!(lr_floor >= 0.0 && lr_floor <= 1.0)) throw ValidationError("train: lr_floor must be in [0, 1]");
    for (size_t h : hidden) {
      if (h == 0) throw ValidationError("train: hidden layer sizes must be positive");
    }
  }
};

struct DenseLayer {
  Matrix w;  // out x in
  Vector b;  // out
};

struct RouterNet {
  size_t input_dim = 0;  // history embedding dimension D
  ModelEncoderParams encoder;
  std::vector<DenseLayer> layers;  // hidden layers then the 1-output head
  double dropout = 0.0;

  [[nodiscard]] size_t model_dim() const { return encoder.dims.out; }
  [[nodiscard]] size_t joint_dim() const { return input_dim + model_dim(); }

  [[nodiscard]] bool all_finite() const {
    if (!encoder.all_finite()) return false;
    for (const auto& l : layers) {
      if (!l.w.allFinite() || !l.b.allFinite()) return false;
    }
    return true;
  }
};

// ============================================================================
// Parameter views
// ============================================================================

struct ParamView {
  std::string name;
  double* data = nullptr;
  Eigen::Index size = 0;
  bool decay = false;  // receives decoupled weight decay

  [[nodiscard]] Eigen::Map<Vector> map() const { return {data, size}; }
};

/// Trainable tensors in a fixed order. Frozen tensors (hardcoded encoder) are omitted.
inline std::vector<ParamView> parameters(RouterNet& net) {
  std::vector<ParamView> out;
  auto add = [&](std::string name, auto& t, bool decay) {
    out.push_back({std::move(name), t.data(), t.size(), decay});
  };
  if (!net.encoder.hardcoded) {
    add("encoder.attr_w", net.encoder.attr_w, true);
    add("encoder.attr_b", net.encoder.attr_b, false);
    add("encoder.residuals", net.encoder.residuals, false);
  }
  add("encoder.proj_w", net.encoder.proj_w, true);
  add("encoder.proj_b", net.encoder.proj_b, false);
  for (size_t i = 0; i < net.layers.size(); ++i) {
    add("fusion." + std::to_string(i) + ".w", net.layers[i].w, true);
    add("fusion." + std::to_string(i) + ".b", net.layers[i].b, false);
  }
  return out;
}

/// A net of identical shape with every parameter zero (gradient storage).
inline RouterNet zeros_like(const RouterNet& net) {
  RouterNet z = net;
  z.encoder.attr_w.setZero();
  z.encoder.attr_b.setZero();
  z.encoder.residuals.setZero();
  z.encoder.proj_w.setZero();
  z.encoder.proj_b.setZero();
  for (auto& l : z.layers) {
    l.w.setZero();
    l.b.setZero();
  }
  return z;
}

// ============================================================================
// Construction
// ============================================================================

namespace detail {
inline void fill_uniform(Matrix& m, double limit, Rng& rng) {
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = rng.uniform(-limit, limit);
  }
}
}  // namespace detail

/// Fan-in scaled uniform init: sqrt(6/fan_in) ahead of a ReLU, sqrt(3/fan_in)
/// for linear maps. Biases and residual embeddings start at zero.
inline RouterNet init_router_net(const std::vector<std::string>& model_ids, size_t input_dim,
                                 const std::vector<size_t>& hidden, uint64_t seed, double dropout = 0.0,
                                 EncoderDims dims = {}, bool hardcoded_encoder = false) {
  if (input_dim == 0) throw ValidationError("init_router_net: input dimension must be positive");
  if (model_ids.empty()) throw ValidationError("init_router_net: pool must be non-empty");
  Rng rng(derive_seed(seed, "init"));
  RouterNet net;
  net.input_dim = input_dim;
  net.dropout = dropout;
  net.encoder = ModelEncoderParams::zeros(model_ids, dims);
  net.encoder.hardcoded = hardcoded_encoder;
  if (!hardcoded_encoder) {
    detail::fill_uniform(net.encoder.attr_w, std::sqrt(6.0 / kAttrDim), rng);
  }
  detail::fill_uniform(net.encoder.proj_w, std::sqrt(3.0 / static_cast<double>(dims.attr_hidden + dims.residual)), rng);

  size_t fan_in = input_dim + dims.out;
  for (size_t h : hidden) {
    DenseLayer l{Matrix(static_cast<Eigen::Index>(h), static_cast<Eigen::Index>(fan_in)),
                 Vector::Zero(static_cast<Eigen::Index>(h))};
    detail::fill_uniform(l.w, std::sqrt(6.0 / static_cast<double>(fan_in)), rng);
    net.layers.push_back(std::move(l));
    fan_in = h;
  }
  DenseLayer head{Matrix(1, static_cast<Eigen::Index>(fan_in)), Vector::Zero(1)};
  detail::fill_uniform(head.w, std::sqrt(3.0 / static_cast<double>(fan_in)), rng);
  net.layers.push_back(std::move(head));
  return net;
}

// ============================================================================
// Model embeddings for the whole pool
// ============================================================================

struct EncoderActivations {
  Matrix attr_raw;  // 8 x M
  Matrix attr_pre;  // attr_hidden x M (MLP mode only)
  Matrix input;     // (attr_hidden + residual) x M
  Matrix z;         // out x M
};

inline EncoderActivations encode_pool(const ModelEncoderParams& p, const ModelPool& pool) {
  const auto M = static_cast<Eigen::Index>(p.ids.size());
  const auto H = static_cast<Eigen::Index>(p.dims.attr_hidden);
  const auto R = static_cast<Eigen::Index>(p.dims.residual);
  EncoderActivations a;
  a.attr_raw.resize(kAttrDim, M);
  for (Eigen::Index m = 0; m < M; ++m) {
    const AttrVector f = attr_features(pool.at(p.ids[static_cast<size_t>(m)]));
    for (size_t k = 0; k < kAttrDim; ++k) a.attr_raw(static_cast<Eigen::Index>(k), m) = f[k];
  }
  a.input.resize(H + R, M);
  if (p.hardcoded) {
    a.input.setZero();
    const auto n = std::min<Eigen::Index>(H, kAttrDim);
    a.input.topRows(n) = a.attr_raw.topRows(n);
  } else {
    a.attr_pre = (p.attr_w * a.attr_raw).colwise() + p.attr_b;
    a.input.topRows(H) = a.attr_pre.cwiseMax(0.0);
    a.input.bottomRows(R) = p.residuals;
  }
  a.z = (p.proj_w * a.input).colwise() + p.proj_b;
  return a;
}

// ============================================================================
// Inference
// ============================================================================

namespace detail {
inline void require_finite(const Vector& v, const std::string& layer) {
  if (!v.allFinite()) throw NumericError("non-finite activation in " + layer);
}
}  // namespace detail

/// Scores one history against several candidate model embeddings. Every
/// candidate is evaluated with the same matrix-vector sequence, so a batched
/// call agrees bit-exactly with single-candidate calls.
inline std::vector<double> score_candidates(const RouterNet& net, const Vector& z_x,
                                            const std::vector<Vector>& candidate_z) {
  if (static_cast<size_t>(z_x.size()) != net.input_dim) {
    throw ContractError("predict: history embedding has dimension " + std::to_string(z_x.size()) +
                        ", network expects " + std::to_string(net.input_dim));
  }
  if (net.layers.empty()) throw InvariantError("predict: network has no layers");
  const auto D = static_cast<Eigen::Index>(net.input_dim);
  const auto& first = net.layers.front();
  // The history half of the first layer is shared by every candidate.
  const Vector shared = first.w.leftCols(D) * z_x + first.b;
  detail::require_finite(shared, "fusion.0");
  std::vector<double> out;
  out.reserve(candidate_z.size());
  for (const auto& z_a : candidate_z) {
    if (static_cast<size_t>(z_a.size()) != net.model_dim()) {
      throw ContractError("predict: model embedding has wrong dimension");
    }
    Vector h = shared + first.w.rightCols(z_a.size()) * z_a;
    for (size_t l = 1; l < net.layers.size(); ++l) {
      h = h.cwiseMax(0.0);
      h = net.layers[l].w * h + net.layers[l].b;
      detail::require_finite(h, "fusion." + std::to_string(l));
    }
    if (net.layers.size() == 1) detail::require_finite(h, "fusion.0");
    out.push_back(h[0]);
  }
  return out;
}

/// Model embeddings for `candidates`, in order.
inline std::vector<Vector> candidate_embeddings(const RouterNet& net, std::span<const ModelDescriptor> candidates) {
  std::vector<Vector> out;
  out.reserve(candidates.size());
  for (const auto& d : candidates) out.push_back(encode_model(net.encoder, d));
  return out;
}

inline double predict(const RouterNet& net, const Vector& z_x, const ModelDescriptor& descriptor) {
  return score_candidates(net, z_x, {encode_model(net.encoder, descriptor)}).front();
}

inline std::vector<double> predict_all(const RouterNet& net, const Vector& z_x,
                                       std::span<const ModelDescriptor> candidates) {
  return score_candidates(net, z_x, candidate_embeddings(net, candidates));
}

// ============================================================================
// Dataset
// ============================================================================

struct TrainExample {
  size_t history = 0;  // column in Dataset::histories
  size_t model = 0;    // index into RouterNet::encoder.ids
  double target = 0.0;
};

struct Dataset {
  Matrix histories;  // D x U, unique history embeddings
  std::vector<TrainExample> examples;

  [[nodiscard]] size_t size() const noexcept { return examples.size(); }
  [[nodiscard]] bool empty() const noexcept { return examples.empty(); }

  [[nodiscard]] double target_mean() const {
    double s = 0.0;
    for (const auto& e : examples) s += e.target;
    return examples.empty() ? 0.0 : s / static_cast<double>(examples.size());
  }

  [[nodiscard]] double target_variance() const {
    const double mu = target_mean();
    double s = 0.0;
    for (const auto& e : examples) s += (e.target - mu) * (e.target - mu);
    return examples.empty() ? 0.0 : s / static_cast<double>(examples.size());
  }
};

// ============================================================================
// Batched forward / backward
// ============================================================================

/// Forward activations for one mini-batch, kept for the backward pass.
struct BatchPass {
  EncoderActivations enc;
  std::vector<size_t> model_of;  // per column
  Matrix x;                      // joint input (D + out) x B
  std::vector<Matrix> pre;       // pre-activations per layer
  std::vector<Matrix> act;       // post-ReLU (and dropout) per hidden layer
  std::vector<Matrix> mask;      // dropout masks (empty when inactive)
  Matrix y;                      // 1 x B
};

struct DropoutSpec {
  double rate = 0.0;
  Rng* rng = nullptr;
  [[nodiscard]] bool active() const { return rate > 0.0 && rng != nullptr; }
};

inline BatchPass forward_batch(const RouterNet& net, const ModelPool& pool, const Dataset& data,
                               std::span<const size_t> batch, DropoutSpec dropout = {}) {
  BatchPass p;
  const auto B = static_cast<Eigen::Index>(batch.size());
  const auto D = static_cast<Eigen::Index>(net.input_dim);
  const auto A = static_cast<Eigen::Index>(net.model_dim());
  if (data.histories.rows() != D) {
    throw ContractError("dataset embeddings have dimension " + std::to_string(data.histories.rows()) +
                        ", network expects " + std::to_string(D));
  }
  p.enc = encode_pool(net.encoder, pool);
  p.x.resize(D + A, B);
  p.model_of.resize(batch.size());
  for (Eigen::Index j = 0; j < B; ++j) {
    const TrainExample& ex = data.examples[batch[static_cast<size_t>(j)]];
    p.x.col(j).head(D) = data.histories.col(static_cast<Eigen::Index>(ex.history));
    p.x.col(j).tail(A) = p.enc.z.col(static_cast<Eigen::Index>(ex.model));
    p.model_of[static_cast<size_t>(j)] = ex.model;
  }
  const Matrix* h = &p.x;
  const size_t L = net.layers.size();
  p.pre.resize(L);
  p.act.resize(L - 1);
  p.mask.resize(L - 1);
  for (size_t l = 0; l < L; ++l) {
    p.pre[l].noalias() = net.layers[l].w * (*h);
    p.pre[l].colwise() += net.layers[l].b;
    if (!p.pre[l].allFinite()) throw NumericError("non-finite activation in fusion." + std::to_string(l));
    if (l + 1 == L) break;
    p.act[l] = p.pre[l].cwiseMax(0.0);
    if (dropout.active()) {
      const double keep = 1.0 - dropout.rate;
      p.mask[l].resize(p.act[l].rows(), p.act[l].cols());
      for (Eigen::Index j = 0; j < p.mask[l].cols(); ++j) {
        for (Eigen::Index i = 0; i < p.mask[l].rows(); ++i) {
          p.mask[l](i, j) = dropout.rng->uniform() < keep ? 1.0 / keep : 0.0;
        }
      }
      p.act[l].array() *= p.mask[l].array();
    }
    h = &p.act[l];
  }
  p.y = p.pre.back();
  return p;
}

inline double residual_penalty(const RouterNet& net, double lambda) {
  if (net.encoder.hardcoded || lambda == 0.0) return 0.0;
  return lambda * net.encoder.residuals.squaredNorm();
}

inline Vector batch_targets(const Dataset& data, std::span<const size_t> batch) {
  Vector t(static_cast<Eigen::Index>(batch.size()));
  for (size_t j = 0; j < batch.size(); ++j) t[static_cast<Eigen::Index>(j)] = data.examples[batch[j]].target;
  return t;
}

/// Backpropagates the batch loss into `grad` (overwritten). Returns the loss.
inline double backward_batch(const RouterNet& net, const BatchPass& p, const Vector& targets, double lambda,
                             RouterNet& grad) {
  const auto B = p.y.cols();
  const auto A = static_cast<Eigen::Index>(net.model_dim());
  const auto H = static_cast<Eigen::Index>(net.encoder.dims.attr_hidden);
  const auto R = static_cast<Eigen::Index>(net.encoder.dims.residual);
  const size_t L = net.layers.size();

  const Vector diff = p.y.row(0).transpose() - targets;
  const double loss = diff.squaredNorm() / static_cast<double>(B) + residual_penalty(net, lambda);

  Matrix delta = (2.0 / static_cast<double>(B)) * diff.transpose();  // 1 x B
  Matrix d_model;  // A x B, gradient w.r.t. the z_a half of the joint input
  for (size_t l = L; l-- > 0;) {
    const Matrix& input = l == 0 ? p.x : p.act[l - 1];
    grad.layers[l].w.noalias() = delta * input.transpose();
    grad.layers[l].b = delta.rowwise().sum();
    if (l == 0) {
      d_model.noalias() = net.layers[0].w.rightCols(A).transpose() * delta;
      break;
    }
    Matrix back = net.layers[l].w.transpose() * delta;
    if (p.mask[l - 1].size() != 0) back.array() *= p.mask[l - 1].array();
    back.array() *= (p.pre[l - 1].array() > 0.0).cast<double>();
    delta = std::move(back);
  }

  // Scatter per-example model gradients onto pool columns.
  Matrix d_z = Matrix::Zero(A, static_cast<Eigen::Index>(net.encoder.ids.size()));
  for (Eigen::Index j = 0; j < B; ++j) d_z.col(static_cast<Eigen::Index>(p.model_of[static_cast<size_t>(j)])) += d_model.col(j);

  grad.encoder.proj_w.noalias() = d_z * p.enc.input.transpose();
  grad.encoder.proj_b = d_z.rowwise().sum();
  if (net.encoder.hardcoded) {
    grad.encoder.attr_w.setZero();
    grad.encoder.attr_b.setZero();
    grad.encoder.residuals.setZero();
  } else {
    const Matrix d_input = net.encoder.proj_w.transpose() * d_z;
    Matrix d_pre = d_input.topRows(H).array() * (p.enc.attr_pre.array() > 0.0).cast<double>();
    grad.encoder.attr_w.noalias() = d_pre * p.enc.attr_raw.transpose();
    grad.encoder.attr_b = d_pre.rowwise().sum();
    grad.encoder.residuals = d_input.bottomRows(R) + 2.0 * lambda * net.encoder.residuals;
  }
  return loss;
}

/// Mean squared error plus the residual penalty. Dropout applies when `dropout` is active.
inline double loss(const RouterNet& net, const ModelPool& pool, const Dataset& data, std::span<const size_t> batch,
                   double lambda, DropoutSpec dropout = {}) {
  if (batch.empty()) throw ValidationError("loss: batch must be non-empty");
  const BatchPass p = forward_batch(net, pool, data, batch, dropout);
  const Vector diff = p.y.row(0).transpose() - batch_targets(data, batch);
  return diff.squaredNorm() / static_cast<double>(batch.size()) + residual_penalty(net, lambda);
}

inline double loss_and_grad(const RouterNet& net, const ModelPool& pool, const Dataset& data,
                            std::span<const size_t> batch, double lambda, RouterNet& grad, DropoutSpec dropout = {}) {
  if (batch.empty()) throw ValidationError("loss: batch must be non-empty");
  const BatchPass p = forward_batch(net, pool, data, batch, dropout);
  return backward_batch(net, p, batch_targets(data, batch), lambda, grad);
}

/// Mean squared error over the whole dataset, no dropout, evaluated in chunks.
inline double dataset_mse(const RouterNet& net, const ModelPool& pool, const Dataset& data, size_t chunk = 512) {
  if (data.empty()) throw ValidationError("dataset_mse: empty dataset");
  double sum = 0.0;
  std::vector<size_t> idx;
  for (size_t start = 0; start < data.size(); start += chunk) {
    idx.clear();
    for (size_t i = start; i < std::min(data.size(), start + chunk); ++i) idx.push_back(i);
    const BatchPass p = forward_batch(net, pool, data, idx);
    sum += (p.y.row(0).transpose() - batch_targets(data, idx)).squaredNorm();
  }
  return sum / static_cast<double>(data.size());
}

// ============================================================================
// Optimization pieces
// ============================================================================

/// Cosine annealing from `base` at epoch 0 towards `base * floor_fraction`.
inline double cosine_lr(double base, size_t epoch, size_t max_epochs, double floor_fraction) {
  if (max_epochs <= 1) return base;
  const double floor = base * floor_fraction;
  const double progress = static_cast<double>(epoch) / static_cast<double>(max_epochs - 1);
  return floor + 0.5 * (base - floor) * (1.0 + std::cos(std::numbers::pi * progress));
}

class EarlyStopper {
 public:
  explicit EarlyStopper(size_t patience) : patience_(patience) {}

  /// Records one validation loss; returns true when it is a new best.
  bool update(double val_loss) {
    if (val_loss < best_) {
      best_ = val_loss;
      stale_ = 0;
      return true;
    }
    ++stale_;
    return false;
  }

  [[nodiscard]] bool should_stop() const noexcept { return stale_ >= patience_; }
  [[nodiscard]] double best() const noexcept { return best_; }
  [[nodiscard]] size_t stale_epochs() const noexcept { return stale_; }

 private:
  size_t patience_;
  size_t stale_ = 0;
  double best_ = std::numeric_limits<double>::infinity();
};

class AdamW {
 public:
  AdamW(const RouterNet& net, const TrainConfig& cfg) : cfg_(cfg), m_(zeros_like(net)), v_(zeros_like(net)) {}

  void step(RouterNet& net, RouterNet& grad, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    auto params = parameters(net);
    auto grads = parameters(grad);
    auto ms = parameters(m_);
    auto vs = parameters(v_);
    for (size_t k = 0; k < params.size(); ++k) {
      auto p = params[k].map();
      auto g = grads[k].map();
      auto m = ms[k].map();
      auto v = vs[k].map();
      if (params[k].decay && cfg_.weight_decay > 0.0) p *= (1.0 - lr * cfg_.weight_decay);
      m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
      v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g.cwiseAbs2();
      p.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + cfg_.adam_eps);
    }
  }

 private:
  TrainConfig cfg_;
  RouterNet m_;
  RouterNet v_;
  uint64_t t_ = 0;
};

// ============================================================================
// Training loop
// ============================================================================

struct EpochRecord {
  size_t epoch = 0;
  double learning_rate = 0.0;
  double train_loss = 0.0;  // mean batch loss (with dropout and penalty)
  double val_loss = 0.0;    // validation MSE
};

struct TrainResult {
  RouterNet net;  // best-validation checkpoint
  std::vector<EpochRecord> history;
  size_t best_epoch = 0;
  double best_val_loss = std::numeric_limits<double>::infinity();
  bool early_stopped = false;
};

struct TrainHooks {
  /// Replaces the validation-set MSE (used to plant validation curves in tests).
  std::function<double(const RouterNet&, size_t epoch)> validation;
};

inline TrainResult train(RouterNet net, const ModelPool& pool, const Dataset& train_set, const Dataset& val_set,
                         const TrainConfig& cfg, const TrainHooks& hooks = {}) {
  cfg.validate();
  if (train_set.empty()) throw DataError("train: training split is empty");
  if (val_set.empty() && !hooks.validation) throw DataError("train: validation split is empty");
  for (const auto& id : net.encoder.ids) {
    if (!pool.contains(id)) throw ValidationError("train: model '" + id + "' not in pool");
  }
  const size_t n_models = net.encoder.ids.size();
  for (const auto* ds : {&train_set, &val_set}) {
    for (const auto& e : ds->examples) {
      if (e.model >= n_models) throw ValidationError("train: example references unknown model index");
    }
  }

  TrainResult result;
  result.net = net;
  AdamW opt(net, cfg);
  RouterNet grad = zeros_like(net);
  EarlyStopper stopper(cfg.patience);
  std::vector<size_t> order(train_set.size());

  for (size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const double lr = cosine_lr(cfg.learning_rate, epoch, cfg.max_epochs, cfg.lr_floor);
    std::iota(order.begin(), order.end(), size_t{0});
    Rng shuffle_rng(derive_seed(derive_seed(cfg.seed, "shuffle"), epoch));
    for (size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.below(i)]);
    Rng dropout_rng(derive_seed(derive_seed(cfg.seed, "dropout"), epoch));
    const DropoutSpec dropout{net.dropout, &dropout_rng};

    double loss_sum = 0.0;
    size_t batches = 0;
    for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::span<const size_t> batch(order.data() + start, std::min(cfg.batch_size, order.size() - start));
      const double l = loss_and_grad(net, pool, train_set, batch, cfg.residual_l2, grad, dropout);
      if (!std::isfinite(l)) {
        throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batches));
      }
      opt.step(net, grad, lr);
      if (!net.all_finite()) {
        throw NumericError("train: non-finite parameters after epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batches));
      }
      loss_sum += l;
      ++batches;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.learning_rate = lr;
    rec.train_loss = loss_sum / static_cast<double>(batches);
    rec.val_loss = hooks.validation ? hooks.validation(net, epoch) : dataset_mse(net, pool, val_set);
    if (!std::isfinite(rec.val_loss)) {
      throw NumericError("train: non-finite validation loss at epoch " + std::to_string(epoch));
    }
    result.history.push_back(rec);
    if (stopper.update(rec.val_loss)) {
      result.net = net;
      result.best_epoch = epoch;
      result.best_val_loss = rec.val_loss;
    }
    if (stopper.should_stop()) {
      result.early_stopped = true;
      break;
    }
  }
  return result;
}

// ============================================================================
// Closed-form linear head (ridge ablation)
// ============================================================================

/// Replaces the fusion stack with a single linear head fitted by ridge
/// regression on [z_x; z_a] (intercept unpenalized). The model encoder is used
/// as-is.
inline void fit_ridge(RouterNet& net, const ModelPool& pool, const Dataset& data, double alpha = 1.0) {
  if (data.empty()) throw DataError("fit_ridge: empty dataset");
  const EncoderActivations enc = encode_pool(net.encoder, pool);
  const auto D = static_cast<Eigen::Index>(net.input_dim);
  const auto A = static_cast<Eigen::Index>(net.model_dim());
  const Eigen::Index F = D + A + 1;
  Matrix gram = Matrix::Zero(F, F);
  Vector rhs = Vector::Zero(F);
  const size_t chunk = 256;
  Matrix phi(F, static_cast<Eigen::Index>(chunk));
  for (size_t start = 0; start < data.size(); start += chunk) {
    const size_t n = std::min(chunk, data.size() - start);
    phi.resize(F, static_cast<Eigen::Index>(n));
    Vector y(static_cast<Eigen::Index>(n));
    for (size_t j = 0; j < n; ++j) {
      const TrainExample& ex = data.examples[start + j];
      const auto c = static_cast<Eigen::Index>(j);
      phi.col(c).head(D) = data.histories.col(static_cast<Eigen::Index>(ex.history));
      phi.col(c).segment(D, A) = enc.z.col(static_cast<Eigen::Index>(ex.model));
      phi(F - 1, c) = 1.0;
      y[c] = ex.target;
    }
    gram.selfadjointView<Eigen::Lower>().rankUpdate(phi);
    rhs.noalias() += phi * y;
  }
  gram.triangularView<Eigen::StrictlyUpper>() = gram.transpose();
  gram.diagonal().head(D + A).array() += alpha;
  const Vector w = gram.ldlt().solve(rhs);
  if (!w.allFinite()) throw NumericError("fit_ridge: solve produced non-finite weights");
  DenseLayer head{w.head(D + A).transpose(), Vector::Constant(1, w[F - 1])};
  net.layers.clear();
  net.layers.push_back(std::move(head));
}

// ============================================================================
// Gradient check
// ============================================================================

struct GradCheckReport {
  double max_relative_error = 0.0;
  double max_abs_analytic = 0.0;
  double max_abs_numeric = 0.0;
  std::vector<std::pair<std::string, double>> per_group;  // relative error per tensor
};

/// Compares analytic gradients with central differences for every trainable
/// tensor. Relative error per tensor is ||a - n|| / (||a|| + ||n||), zero when
/// both norms vanish; the report carries the maximum over tensors.
inline GradCheckReport grad_check(RouterNet net, const ModelPool& pool, const Dataset& data,
                                  std::span<const size_t> batch, double lambda, double epsilon = 1e-5) {
  RouterNet grad = zeros_like(net);
  loss_and_grad(net, pool, data, batch, lambda, grad);
  GradCheckReport report;
  auto params = parameters(net);
  auto grads = parameters(grad);
  for (size_t k = 0; k < params.size(); ++k) {
    auto p = params[k].map();
    const Vector analytic = grads[k].map();
    Vector numeric(p.size());
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      const double orig = p[i];
      p[i] = orig + epsilon;
      const double up = loss(net, pool, data, batch, lambda);
      p[i] = orig - epsilon;
      const double down = loss(net, pool, data, batch, lambda);
      p[i] = orig;
      numeric[i] = (up - down) / (2.0 * epsilon);
    }
    const double denom = analytic.norm() + numeric.norm();
    const double rel = denom > 0.0 ? (analytic - numeric).norm() / denom : 0.0;
    report.per_group.emplace_back(params[k].name, rel);
    report.max_relative_error = std::max(report.max_relative_error, rel);
    if (analytic.size() > 0) {
      report.max_abs_analytic = std::max(report.max_abs_analytic, analytic.cwiseAbs().maxCoeff());
      report.max_abs_numeric = std::max(report.max_abs_numeric, numeric.cwiseAbs().maxCoeff());
    }
  }
  return report;
}

}  // namespace turnroute
