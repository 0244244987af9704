#pragma once

// Candidate model pool: descriptors, pricing, attribute features and the
// per-episode cost ledger.

#include "common.hpp"
#include "log.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace turnroute {

struct YearMonth {
  int year = 2024;
  int month = 1;
  friend bool operator==(const YearMonth&, const YearMonth&) = default;
};

inline YearMonth parse_year_month(const std::string& s) {
  // "YYYY-MM"
  if (s.size() != 7 || s[4] != '-') {
    throw ConfigError("cutoff must be formatted YYYY-MM, got '" + s + "'");
  }
  YearMonth ym;
  try {
    ym.year = std::stoi(s.substr(0, 4));
    ym.month = std::stoi(s.substr(5, 2));
  } catch (const std::exception&) {
    throw ConfigError("cutoff must be formatted YYYY-MM, got '" + s + "'");
  }
  if (ym.month < 1 || ym.month > 12) {
    throw ConfigError("cutoff month out of range in '" + s + "'");
  }
  return ym;
}

struct ModelDescriptor {
  std::string id;
  uint64_t context_limit = 0;  // tokens
  YearMonth cutoff;
  double price_in = 0.0;   // USD per 1e6 input tokens
  double price_out = 0.0;  // USD per 1e6 output tokens
  bool open_weights = false;

  [[nodiscard]] double blended_price() const noexcept { return price_in + price_out; }

  void validate() const {
    if (id.empty()) throw ValidationError("model id must be non-empty");
    if (!(price_in > 0.0) || !std::isfinite(price_in)) {
      throw ValidationError("model '" + id + "': price_in must be positive");
    }
    if (!(price_out > 0.0) || !std::isfinite(price_out)) {
      throw ValidationError("model '" + id + "': price_out must be positive");
    }
    if (context_limit == 0) {
      throw ValidationError("model '" + id + "': context_limit must be positive");
    }
  }

  friend bool operator==(const ModelDescriptor&, const ModelDescriptor&) = default;
};

/// USD cost of one invocation.
inline double turn_cost(const ModelDescriptor& d, uint64_t tokens_in, uint64_t tokens_out) {
  return static_cast<double>(tokens_in) * d.price_in / 1e6 +
         static_cast<double>(tokens_out) * d.price_out / 1e6;
}

inline constexpr size_t kAttrDim = 8;
using AttrVector = std::array<double, kAttrDim>;

/// Fixed 8-d metadata featurization. Heavy-tailed quantities are log-scaled;
/// slot 7 is reserved and always zero.
inline AttrVector attr_features(const ModelDescriptor& d) {
  const double blended = d.price_in + d.price_out;
  return {
      std::log10(static_cast<double>(d.context_limit) / 1000.0),
      (d.cutoff.year - 2020) / 10.0 + d.cutoff.month / 120.0,
      std::log10(d.price_in),
      std::log10(d.price_out),
      std::log10(blended),
      d.price_out / blended,
      d.open_weights ? 1.0 : 0.0,
      0.0,
  };
}

/// Immutable, ordered set of candidates with id lookup.
class ModelPool {
 public:
  ModelPool() = default;

  explicit ModelPool(std::vector<ModelDescriptor> models) : models_(std::move(models)) {
    if (models_.empty()) throw ValidationError("model pool must be non-empty");
    for (size_t i = 0; i < models_.size(); ++i) {
      models_[i].validate();
      auto [it, inserted] = index_.emplace(models_[i].id, i);
      if (!inserted) throw ValidationError("duplicate model id '" + models_[i].id + "'");
    }
  }

  [[nodiscard]] size_t size() const noexcept { return models_.size(); }
  [[nodiscard]] bool empty() const noexcept { return models_.empty(); }
  [[nodiscard]] std::span<const ModelDescriptor> models() const noexcept { return models_; }
  [[nodiscard]] const ModelDescriptor& operator[](size_t i) const { return models_.at(i); }

  [[nodiscard]] std::optional<size_t> find(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  [[nodiscard]] const ModelDescriptor& at(const std::string& id) const {
    auto idx = find(id);
    if (!idx) throw ValidationError("unknown model id '" + id + "'");
    return models_[*idx];
  }

  [[nodiscard]] bool contains(const std::string& id) const { return index_.count(id) > 0; }

  [[nodiscard]] std::vector<std::string> ids() const {
    std::vector<std::string> out;
    out.reserve(models_.size());
    for (const auto& m : models_) out.push_back(m.id);
    return out;
  }

  /// Restrict to the first `k` models (pool-size sweeps).
  [[nodiscard]] ModelPool prefix(size_t k) const {
    if (k == 0 || k > models_.size()) throw RangeError("pool prefix size out of range");
    return ModelPool(std::vector<ModelDescriptor>(models_.begin(), models_.begin() + static_cast<long>(k)));
  }

  /// Digest over every descriptor field, order-sensitive.
  [[nodiscard]] uint64_t digest() const {
    uint64_t h = kFnvOffset;
    for (const auto& m : models_) {
      h = fnv1a64(m.id, h);
      h = fnv1a64(std::to_string(m.context_limit), h);
      h = fnv1a64(std::to_string(m.cutoff.year * 100 + m.cutoff.month), h);
      h = fnv1a64(format_double(m.price_in), h);
      h = fnv1a64(format_double(m.price_out), h);
      h = fnv1a64(m.open_weights ? "1" : "0", h);
    }
    return h;
  }

 private:
  std::vector<ModelDescriptor> models_;
  std::unordered_map<std::string, size_t> index_;
};

// ============================================================================
// Cost ledger
// ============================================================================

struct LedgerEntry {
  size_t t = 0;
  std::string model_id;
  uint64_t tokens_in = 0;
  uint64_t tokens_out = 0;
  double cost = 0.0;
};

class CostLedger {
 public:
  void append(LedgerEntry e) {
    if (!entries_.empty() && e.t <= entries_.back().t) {
      throw InvariantError("ledger entries must have strictly increasing turn index");
    }
    total_ += e.cost;
    entries_.push_back(std::move(e));
  }

  [[nodiscard]] double total() const noexcept { return total_; }
  [[nodiscard]] std::span<const LedgerEntry> entries() const noexcept { return entries_; }

  /// Sum of the first `n` entries, accumulated in entry order.
  [[nodiscard]] double prefix_total(size_t n) const {
    double s = 0.0;
    for (size_t i = 0; i < std::min(n, entries_.size()); ++i) s += entries_[i].cost;
    return s;
  }

 private:
  std::vector<LedgerEntry> entries_;
  double total_ = 0.0;
};

// ============================================================================
// Manifest loading
// ============================================================================

namespace detail {

inline std::string yaml_where(const std::filesystem::path& path, const YAML::Mark& mark) {
  if (mark.is_null()) return path.string();
  return path.string() + ":" + std::to_string(mark.line + 1);
}

inline YAML::Node load_yaml_file(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw ConfigError("file not found: " + path.string());
  }
  try {
    return YAML::LoadFile(path.string());
  } catch (const YAML::Exception& e) {
    throw ConfigError(yaml_where(path, e.mark) + ": " + e.msg);
  }
}

template <typename T>
T yaml_get(const YAML::Node& node, const char* key, const std::filesystem::path& path) {
  const YAML::Node v = node[key];
  if (!v) {
    throw ConfigError(yaml_where(path, node.Mark()) + ": missing field '" + key + "'");
  }
  try {
    return v.as<T>();
  } catch (const YAML::Exception& e) {
    throw ConfigError(yaml_where(path, v.Mark()) + ": field '" + key + "': " + e.msg);
  }
}

}  // namespace detail

/// Load a pool manifest:
///
///   models:
///     - id: gpt-5
///       context_limit: 400000
///       cutoff: "2024-09"
///       price_in: 1.25
///       price_out: 10.0
///       open_weights: false
inline ModelPool load_pool(const std::filesystem::path& manifest) {
  const YAML::Node root = detail::load_yaml_file(manifest);
  const YAML::Node list = root["models"];
  if (!list || !list.IsSequence()) {
    throw ConfigError(detail::yaml_where(manifest, root.Mark()) +
                      ": expected a 'models' list");
  }
  std::vector<ModelDescriptor> models;
  for (const auto& node : list) {
    ModelDescriptor d;
    d.id = detail::yaml_get<std::string>(node, "id", manifest);
    d.context_limit = detail::yaml_get<uint64_t>(node, "context_limit", manifest);
    d.price_in = detail::yaml_get<double>(node, "price_in", manifest);
    d.price_out = detail::yaml_get<double>(node, "price_out", manifest);
    d.open_weights = node["open_weights"] ? detail::yaml_get<bool>(node, "open_weights", manifest) : false;
    if (node["cutoff"]) {
      try {
        d.cutoff = parse_year_month(detail::yaml_get<std::string>(node, "cutoff", manifest));
      } catch (const ConfigError& e) {
        throw ConfigError(detail::yaml_where(manifest, node["cutoff"].Mark()) + ": " + e.what());
      }
    } else {
      log_warning("model '" + d.id + "' has no cutoff; defaulting to 2024-01");
      d.cutoff = YearMonth{2024, 1};
    }
    models.push_back(std::move(d));
  }
  for (size_t i = 0; i < models.size(); ++i) {
    for (size_t j = 0; j < i; ++j) {
      if (models[i].id == models[j].id) {
        throw ValidationError(manifest.string() + ": duplicate model id '" + models[i].id + "'");
      }
    }
  }
  return ModelPool(std::move(models));
}

}  // namespace turnroute
