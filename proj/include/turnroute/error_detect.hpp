#pragma once

/**
 * Rule-based error detection and error-penalized outcome targets.
 *
 * A ruleset is data: each rule carries literal substrings and/or regular
 * expressions (prefixed "re:") matched case-insensitively against an
 * observation. Regexes are compiled when the ruleset is built, so detect()
 * never fails.
 *
 * Targets: the terminal score is normalized to [0,1], then for every turn
 *
 *   target_t = score_norm - sum_{i >= t} penalty_i
 *   penalty_i = [errors at i] * base * beta(max severity at i) * w((i+1)/t_max)
 *
 * where w is a flat-linear-flat warmup from w_min to w_max between p0 and p1.
 */

#include "common.hpp"
#include "model_pool.hpp"
#include "trajectory.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <array>
#include <filesystem>
#include <memory>
#include <regex>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace turnroute {

namespace detail {
inline std::string lowercase(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}
}  // namespace detail

class ErrorPattern {
 public:
  explicit ErrorPattern(std::string source) : source_(std::move(source)) {
    if (source_.rfind("re:", 0) == 0) {
      try {
        regex_ = std::make_shared<const std::regex>(
            source_.substr(3), std::regex::ECMAScript | std::regex::icase | std::regex::optimize);
      } catch (const std::regex_error& e) {
        throw ValidationError("invalid regular expression '" + source_.substr(3) + "': " + e.what());
      }
    } else {
      if (source_.empty()) throw ValidationError("empty literal pattern");
      needle_ = detail::lowercase(source_);
    }
  }

  [[nodiscard]] const std::string& source() const noexcept { return source_; }
  [[nodiscard]] bool is_regex() const noexcept { return regex_ != nullptr; }

  /// `lowered` must be the lower-cased observation; `original` the raw text.
  [[nodiscard]] bool matches(std::string_view original, std::string_view lowered) const {
    if (regex_) return std::regex_search(original.begin(), original.end(), *regex_);
    return lowered.find(needle_) != std::string_view::npos;
  }

 private:
  std::string source_;
  std::string needle_;
  std::shared_ptr<const std::regex> regex_;
};

struct ErrorRule {
  std::string name;
  std::string category;
  Severity severity = Severity::high;
  std::vector<ErrorPattern> patterns;
};

/// Validated, immutable rule list. Rule order is detection order.
class Ruleset {
 public:
  Ruleset() = default;

  Ruleset(std::string name, std::vector<ErrorRule> rules) : name_(std::move(name)), rules_(std::move(rules)) {
    std::set<std::string> seen;
    for (const auto& r : rules_) {
      if (r.name.empty()) throw ValidationError("rule name must be non-empty");
      if (!seen.insert(r.name).second) throw ValidationError("duplicate rule name '" + r.name + "'");
      if (r.patterns.empty()) throw ValidationError("rule '" + r.name + "' has no patterns");
    }
  }

  [[nodiscard]] const std::string& name() const noexcept { return name_; }
  [[nodiscard]] const std::vector<ErrorRule>& rules() const noexcept { return rules_; }
  [[nodiscard]] size_t size() const noexcept { return rules_.size(); }

  [[nodiscard]] const ErrorRule* find(std::string_view rule_name) const {
    for (const auto& r : rules_) {
      if (r.name == rule_name) return &r;
    }
    return nullptr;
  }

 private:
  std::string name_;
  std::vector<ErrorRule> rules_;
};

/// Every rule with at least one matching pattern, in ruleset order.
inline std::vector<ErrorEvent> detect(std::string_view observation, const Ruleset& ruleset) {
  std::vector<ErrorEvent> events;
  const std::string lowered = detail::lowercase(observation);
  for (const auto& rule : ruleset.rules()) {
    for (const auto& p : rule.patterns) {
      if (p.matches(observation, lowered)) {
        events.push_back({rule.name, rule.category, rule.severity});
        break;
      }
    }
  }
  return events;
}

/// Ruleset file:
///
///   name: hle
///   rules:
///     - name: python_name_error
///       category: python
///       severity: high
///       patterns: ["NameError", "re:name '.*' is not defined"]
inline Ruleset load_ruleset(const std::filesystem::path& path) {
  const YAML::Node root = detail::load_yaml_file(path);
  const YAML::Node list = root["rules"];
  if (!list || !list.IsSequence()) {
    throw ConfigError(detail::yaml_where(path, root.Mark()) + ": expected a 'rules' list");
  }
  std::string name = root["name"] ? root["name"].as<std::string>() : path.stem().string();
  std::vector<ErrorRule> rules;
  for (const auto& node : list) {
    ErrorRule rule;
    rule.name = detail::yaml_get<std::string>(node, "name", path);
    rule.category = detail::yaml_get<std::string>(node, "category", path);
    const std::string sev = detail::yaml_get<std::string>(node, "severity", path);
    auto parsed = parse_severity(sev);
    if (!parsed) {
      throw ConfigError(detail::yaml_where(path, node["severity"].Mark()) + ": unknown severity '" + sev + "'");
    }
    rule.severity = *parsed;
    const YAML::Node pats = node["patterns"];
    if (!pats || !pats.IsSequence()) {
      throw ConfigError(detail::yaml_where(path, node.Mark()) + ": rule '" + rule.name + "' needs a 'patterns' list");
    }
    for (const auto& p : pats) {
      try {
        rule.patterns.emplace_back(p.as<std::string>());
      } catch (const ValidationError& e) {
        throw ValidationError(detail::yaml_where(path, p.Mark()) + ": rule '" + rule.name + "': " + e.what());
      }
    }
    rules.push_back(std::move(rule));
  }
  try {
    return Ruleset(std::move(name), std::move(rules));
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

// ============================================================================
// Penalties
// ============================================================================

struct PenaltyConfig {
  std::array<double, 3> betas{0.2, 0.8, 1.0};  // indexed by Severity: low, medium, high
  double p0 = 0.3;
  double p1 = 0.7;
  double w_min = 0.3;
  double w_max = 1.0;
  double base = 1.0 / 50.0;
  size_t t_max = 50;

  /// Defaults with base = 1/t_max.
  static PenaltyConfig with_horizon(size_t t_max) {
    PenaltyConfig c;
    c.t_max = t_max;
    c.base = 1.0 / static_cast<double>(t_max);
    return c;
  }

  [[nodiscard]] double beta(Severity s) const { return betas[static_cast<size_t>(s)]; }

  void validate() const {
    auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
    if (!unit(p0) || !unit(p1) || !(p0 < p1)) throw ValidationError("penalty: need 0 <= p0 < p1 <= 1");
    if (!unit(w_min) || !unit(w_max) || !(w_min <= w_max)) {
      throw ValidationError("penalty: need 0 <= w_min <= w_max <= 1");
    }
    if (t_max == 0) throw ValidationError("penalty: t_max must be positive");
    if (!(base >= 0.0) || !std::isfinite(base)) throw ValidationError("penalty: base must be finite and >= 0");
    for (double b : betas) {
      if (!(b >= 0.0) || !std::isfinite(b)) throw ValidationError("penalty: severity coefficients must be >= 0");
    }
  }
};

inline double progress_weight(double p, const PenaltyConfig& cfg) {
  if (!(p >= 0.0 && p <= 1.0)) throw RangeError("progress_weight: p = " + format_double(p) + " outside [0, 1]");
  if (p <= cfg.p0) return cfg.w_min;
  if (p >= cfg.p1) return cfg.w_max;
  return cfg.w_min + (p - cfg.p0) / (cfg.p1 - cfg.p0) * (cfg.w_max - cfg.w_min);
}

inline double turn_penalty(std::span<const ErrorEvent> events, size_t i, const PenaltyConfig& cfg) {
  if (events.empty()) return 0.0;
  if (i >= cfg.t_max) {
    throw RangeError("turn_penalty: turn " + std::to_string(i) + " >= t_max " + std::to_string(cfg.t_max));
  }
  Severity worst = Severity::low;
  for (const auto& e : events) worst = std::max(worst, e.severity);
  const double progress = static_cast<double>(i + 1) / static_cast<double>(cfg.t_max);
  return cfg.base * cfg.beta(worst) * progress_weight(progress, cfg);
}

struct ScoreRange {
  double lo = 0.0;
  double hi = 1.0;

  [[nodiscard]] double normalize(double score) const { return (score - lo) / (hi - lo); }
  [[nodiscard]] double denormalize(double unit) const { return lo + unit * (hi - lo); }
  [[nodiscard]] bool contains(double score) const { return score >= lo && score <= hi; }
  friend bool operator==(const ScoreRange&, const ScoreRange&) = default;
};

/// Per-turn regression targets, computed with the backward recurrence
/// target_t = target_{t+1} - penalty_t starting from the normalized score.
inline std::vector<double> outcome_targets(const Trajectory& traj, const PenaltyConfig& cfg, ScoreRange range) {
  if (!(range.lo < range.hi)) throw ValidationError("outcome_targets: score range must satisfy lo < hi");
  if (!range.contains(traj.terminal_score)) {
    throw ValidationError("outcome_targets: terminal score " + format_double(traj.terminal_score) +
                          " outside [" + format_double(range.lo) + ", " + format_double(range.hi) + "]");
  }
  const size_t T = traj.turns.size();
  std::vector<double> targets(T);
  double running = range.normalize(traj.terminal_score);
  for (size_t k = T; k-- > 0;) {
    running -= turn_penalty(traj.turns[k].errors, k, cfg);
    targets[k] = running;
  }
  return targets;
}

/// Copy of `traj` with every turn's errors recomputed under `ruleset`.
inline Trajectory redetect(Trajectory traj, const Ruleset& ruleset) {
  for (auto& turn : traj.turns) turn.errors = detect(turn.observation, ruleset);
  return traj;
}

}  // namespace turnroute
