#pragma once

/**
 * History serialization, embedding providers and the model encoder.
 *
 * Serialized history layout (literal):
 *
 *   TASK:\n{task}\n
 *   TURN {t}:\nACTION: {action}\nOBS: {observation}\n      (per retained turn)
 *
 * Turns are retained newest-first while the running token count fits the
 * budget; the task block is never dropped and turn blocks are never split.
 *
 * Hash provider: character 3-grams of the text framed by \x02 ... \x03,
 * each hashed with FNV-1a 64 followed by the splitmix64 finalizer. The
 * bucket is h mod D and the sign is the top bit of h (set = -1). The bucket
 * vector is then L2-normalized. Empty text maps to the zero vector.
 */

#include "common.hpp"
#include "model_pool.hpp"
#include "trajectory.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <functional>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace turnroute {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline constexpr size_t kDefaultEmbeddingDim = 1024;
inline constexpr size_t kDefaultHistoryBudget = 8192;

// ============================================================================
// History serialization
// ============================================================================

struct HistoryText {
  std::string text;
  size_t token_count = 0;
  size_t first_turn = 0;      // index of the oldest retained turn
  size_t retained_turns = 0;
};

/// Counts tokens for a batch of strings.
using TokenCounter = std::function<std::vector<size_t>(std::span<const std::string>)>;

inline size_t count_whitespace_tokens(std::string_view s) {
  size_t n = 0;
  bool in_token = false;
  for (char c : s) {
    const bool ws = c == ' ' || c == '\n' || c == '\t' || c == '\r' || c == '\f' || c == '\v';
    if (!ws && !in_token) ++n;
    in_token = !ws;
  }
  return n;
}

inline TokenCounter whitespace_counter() {
  return [](std::span<const std::string> texts) {
    std::vector<size_t> out;
    out.reserve(texts.size());
    for (const auto& t : texts) out.push_back(count_whitespace_tokens(t));
    return out;
  };
}

inline std::string task_block(std::string_view task) {
  std::string s = "TASK:\n";
  s.append(task);
  s.push_back('\n');
  return s;
}

inline std::string turn_block(const Turn& turn) {
  std::string s = "TURN " + std::to_string(turn.t) + ":\nACTION: ";
  s.append(turn.action);
  s.append("\nOBS: ");
  s.append(turn.observation);
  s.push_back('\n');
  return s;
}

inline HistoryText serialize_history(std::string_view task_text, std::span<const Turn> turns,
                                     size_t token_budget, const TokenCounter& counter) {
  std::vector<std::string> blocks;
  blocks.reserve(turns.size() + 1);
  blocks.push_back(task_block(task_text));
  for (const auto& t : turns) blocks.push_back(turn_block(t));
  const std::vector<size_t> counts = counter(blocks);
  if (counts.size() != blocks.size()) throw ContractError("token counter returned wrong batch size");

  if (counts[0] > token_budget) {
    throw RangeError("serialize_history: task block needs " + std::to_string(counts[0]) +
                     " tokens, budget is " + std::to_string(token_budget));
  }
  size_t used = counts[0];
  size_t keep = 0;  // number of newest turns retained
  for (size_t k = turns.size(); k-- > 0;) {
    if (used + counts[k + 1] > token_budget) break;
    used += counts[k + 1];
    ++keep;
  }
  HistoryText h;
  h.first_turn = turns.size() - keep;
  h.retained_turns = keep;
  h.token_count = used;
  h.text = std::move(blocks[0]);
  for (size_t k = h.first_turn; k < turns.size(); ++k) h.text += blocks[k + 1];
  return h;
}

// ============================================================================
// Embedding providers
// ============================================================================

/// Read-only text encoder. Public calls are serialized when the concrete
/// provider declares single-flight semantics.
class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;

  [[nodiscard]] virtual size_t dim() const = 0;
  [[nodiscard]] virtual std::string describe() const = 0;
  [[nodiscard]] virtual bool single_flight() const { return false; }

  std::vector<Vector> embed(std::span<const std::string> texts) {
    auto out = [&] {
      auto lock = maybe_lock();
      return do_embed(texts);
    }();
    if (out.size() != texts.size()) throw ContractError(describe() + ": embed returned wrong batch size");
    for (const auto& v : out) {
      if (static_cast<size_t>(v.size()) != dim()) {
        throw ContractError(describe() + ": embedding has dimension " + std::to_string(v.size()) +
                            ", expected " + std::to_string(dim()));
      }
      if (!v.allFinite()) throw ContractError(describe() + ": embedding contains non-finite values");
    }
    return out;
  }

  std::vector<size_t> count(std::span<const std::string> texts) {
    auto out = [&] {
      auto lock = maybe_lock();
      return do_count(texts);
    }();
    if (out.size() != texts.size()) throw ContractError(describe() + ": count returned wrong batch size");
    return out;
  }

  TokenCounter counter() {
    return [this](std::span<const std::string> texts) { return count(texts); };
  }

 protected:
  virtual std::vector<Vector> do_embed(std::span<const std::string> texts) = 0;
  virtual std::vector<size_t> do_count(std::span<const std::string> texts) = 0;

 private:
  std::unique_lock<std::mutex> maybe_lock() {
    return single_flight() ? std::unique_lock(mutex_) : std::unique_lock<std::mutex>();
  }
  std::mutex mutex_;
};

inline Vector hash_embed(std::string_view text, size_t dim = kDefaultEmbeddingDim) {
  Vector v = Vector::Zero(static_cast<Eigen::Index>(dim));
  if (text.empty()) return v;
  std::string framed;
  framed.reserve(text.size() + 2);
  framed.push_back('\x02');
  framed.append(text);
  framed.push_back('\x03');
  for (size_t i = 0; i + 3 <= framed.size(); ++i) {
    const uint64_t h = splitmix64(fnv1a64(std::string_view(framed).substr(i, 3)));
    const auto bucket = static_cast<Eigen::Index>(h % dim);
    v[bucket] += (h >> 63) ? -1.0 : 1.0;
  }
  const double norm = v.norm();
  // All buckets can cancel for adversarial inputs; leave the zero vector then.
  if (norm > 0.0) v /= norm;
  return v;
}

class HashProvider final : public EmbeddingProvider {
 public:
  explicit HashProvider(size_t dim = kDefaultEmbeddingDim) : dim_(dim) {
    if (dim == 0) throw ValidationError("hash provider dimension must be positive");
  }
  [[nodiscard]] size_t dim() const override { return dim_; }
  [[nodiscard]] std::string describe() const override { return "hash(" + std::to_string(dim_) + ")"; }

 protected:
  std::vector<Vector> do_embed(std::span<const std::string> texts) override {
    std::vector<Vector> out;
    out.reserve(texts.size());
    for (const auto& t : texts) out.push_back(hash_embed(t, dim_));
    return out;
  }
  std::vector<size_t> do_count(std::span<const std::string> texts) override {
    return whitespace_counter()(texts);
  }

 private:
  size_t dim_;
};

inline Vector embed_history(EmbeddingProvider& provider, const HistoryText& history) {
  std::vector<std::string> batch{history.text};
  return std::move(provider.embed(batch).front());
}

// ============================================================================
// Model encoder
// ============================================================================

struct EncoderDims {
  size_t attr_hidden = 32;
  size_t residual = 16;
  size_t out = 64;
  friend bool operator==(const EncoderDims&, const EncoderDims&) = default;
};

/**
 * z_a = W_proj [relu(W_attr attr_a + b_attr); e_a] + b_proj
 *
 * In hardcoded mode the attribute MLP is bypassed (raw attributes, zero
 * padded to attr_hidden) and residuals stay at zero.
 */
struct ModelEncoderParams {
  EncoderDims dims;
  Matrix attr_w;   // attr_hidden x 8
  Vector attr_b;   // attr_hidden
  std::vector<std::string> ids;
  Matrix residuals;  // residual x n_models, column per id
  Matrix proj_w;     // out x (attr_hidden + residual)
  Vector proj_b;     // out
  bool hardcoded = false;

  static ModelEncoderParams zeros(const std::vector<std::string>& ids, EncoderDims dims = {}) {
    ModelEncoderParams p;
    p.dims = dims;
    p.attr_w = Matrix::Zero(static_cast<Eigen::Index>(dims.attr_hidden), kAttrDim);
    p.attr_b = Vector::Zero(static_cast<Eigen::Index>(dims.attr_hidden));
    p.ids = ids;
    p.residuals = Matrix::Zero(static_cast<Eigen::Index>(dims.residual), static_cast<Eigen::Index>(ids.size()));
    p.proj_w = Matrix::Zero(static_cast<Eigen::Index>(dims.out),
                            static_cast<Eigen::Index>(dims.attr_hidden + dims.residual));
    p.proj_b = Vector::Zero(static_cast<Eigen::Index>(dims.out));
    return p;
  }

  [[nodiscard]] std::optional<size_t> index_of(const std::string& id) const {
    for (size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] == id) return i;
    }
    return std::nullopt;
  }

  [[nodiscard]] bool all_finite() const {
    return attr_w.allFinite() && attr_b.allFinite() && residuals.allFinite() && proj_w.allFinite() &&
           proj_b.allFinite();
  }
};

/// Attribute embedding (pre-projection), either MLP output or padded raw attributes.
inline Vector attr_embedding(const ModelEncoderParams& p, const ModelDescriptor& d) {
  const AttrVector raw = attr_features(d);
  const Eigen::Map<const Vector> x(raw.data(), kAttrDim);
  if (p.hardcoded) {
    Vector out = Vector::Zero(static_cast<Eigen::Index>(p.dims.attr_hidden));
    const auto n = static_cast<Eigen::Index>(std::min(p.dims.attr_hidden, kAttrDim));
    out.head(n) = x.head(n);
    return out;
  }
  return (p.attr_w * x + p.attr_b).cwiseMax(0.0);
}

inline Vector encode_model(const ModelEncoderParams& p, const ModelDescriptor& d) {
  auto idx = p.index_of(d.id);
  if (!idx) throw ValidationError("encode_model: no residual embedding for model '" + d.id + "'");
  Vector input(static_cast<Eigen::Index>(p.dims.attr_hidden + p.dims.residual));
  input.head(static_cast<Eigen::Index>(p.dims.attr_hidden)) = attr_embedding(p, d);
  if (p.hardcoded) {
    input.tail(static_cast<Eigen::Index>(p.dims.residual)).setZero();
  } else {
    input.tail(static_cast<Eigen::Index>(p.dims.residual)) = p.residuals.col(static_cast<Eigen::Index>(*idx));
  }
  return p.proj_w * input + p.proj_b;
}

inline Vector joint_features(const Vector& z_x, const Vector& z_a, size_t expected_dim, size_t model_dim = 64) {
  if (static_cast<size_t>(z_x.size()) != expected_dim) {
    throw ContractError("joint_features: history embedding has dimension " + std::to_string(z_x.size()) +
                        ", expected " + std::to_string(expected_dim));
  }
  if (static_cast<size_t>(z_a.size()) != model_dim) {
    throw ContractError("joint_features: model embedding has dimension " + std::to_string(z_a.size()) +
                        ", expected " + std::to_string(model_dim));
  }
  Vector out(z_x.size() + z_a.size());
  out << z_x, z_a;
  return out;
}

}  // namespace turnroute
