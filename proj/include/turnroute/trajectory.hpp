#pragma once

// Logged-episode data model: turns, trajectories, replay.

#include "common.hpp"
#include "model_pool.hpp"

#include <cctype>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace turnroute {

enum class Severity { low = 0, medium = 1, high = 2 };

inline const char* to_string(Severity s) {
  switch (s) {
    case Severity::low: return "low";
    case Severity::medium: return "medium";
    case Severity::high: return "high";
  }
  return "low";
}

inline std::optional<Severity> parse_severity(std::string_view s) {
  if (s == "low") return Severity::low;
  if (s == "medium") return Severity::medium;
  if (s == "high") return Severity::high;
  return std::nullopt;
}

struct ErrorEvent {
  std::string rule;
  std::string category;
  Severity severity = Severity::low;
  friend bool operator==(const ErrorEvent&, const ErrorEvent&) = default;
};

struct Turn {
  size_t t = 0;
  std::string model_id;
  std::string raw_output;   // y_t
  std::string action;       // u_t, parsed from raw_output
  std::string observation;  // o_{t+1}
  uint64_t tokens_in = 0;
  uint64_t tokens_out = 0;
  double cost = 0.0;
  std::vector<ErrorEvent> errors;
  friend bool operator==(const Turn&, const Turn&) = default;
};

enum class Termination { completed, turn_limit, budget_exhausted, aborted };

inline const char* to_string(Termination t) {
  switch (t) {
    case Termination::completed: return "completed";
    case Termination::turn_limit: return "turn_limit";
    case Termination::budget_exhausted: return "budget_exhausted";
    case Termination::aborted: return "aborted";
  }
  return "aborted";
}

inline std::optional<Termination> parse_termination(std::string_view s) {
  if (s == "completed") return Termination::completed;
  if (s == "turn_limit") return Termination::turn_limit;
  if (s == "budget_exhausted") return Termination::budget_exhausted;
  if (s == "aborted") return Termination::aborted;
  return std::nullopt;
}

struct Trajectory {
  std::string task_id;
  std::string task_text;
  uint64_t seed = 0;
  Termination termination = Termination::turn_limit;
  double terminal_score = 0.0;
  std::vector<Turn> turns;
  /// Diagnostic for aborted episodes; empty otherwise.
  std::string abort_reason;

  [[nodiscard]] size_t length() const noexcept { return turns.size(); }

  [[nodiscard]] double total_cost() const noexcept {
    double s = 0.0;
    for (const auto& t : turns) s += t.cost;
    return s;
  }

  friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

/// Extend by one turn. The turn index must equal the current length.
inline Trajectory& append_turn(Trajectory& traj, Turn turn) {
  if (turn.t != traj.turns.size()) {
    throw InvariantError("append_turn: turn index " + std::to_string(turn.t) +
                         " does not match trajectory length " + std::to_string(traj.turns.size()));
  }
  traj.turns.push_back(std::move(turn));
  return traj;
}

inline CostLedger ledger_of(const Trajectory& traj) {
  CostLedger ledger;
  for (const auto& turn : traj.turns) {
    ledger.append({turn.t, turn.model_id, turn.tokens_in, turn.tokens_out, turn.cost});
  }
  return ledger;
}

/// What the router may see before turn t: the task text and turns [0, t).
struct ReplayView {
  std::string_view task_text;
  std::span<const Turn> turns;

  [[nodiscard]] double cumulative_cost() const noexcept {
    double s = 0.0;
    for (const auto& t : turns) s += t.cost;
    return s;
  }
};

inline ReplayView replay(const Trajectory& traj, size_t t) {
  if (t > traj.turns.size()) {
    throw RangeError("replay: turn " + std::to_string(t) + " outside [0, " +
                     std::to_string(traj.turns.size()) + "]");
  }
  return ReplayView{traj.task_text, std::span<const Turn>(traj.turns.data(), t)};
}

/// Check the stored record against the pool and limits. Throws ValidationError.
inline void validate_trajectory(const Trajectory& traj, const ModelPool& pool, size_t t_max,
                                std::optional<std::pair<double, double>> score_range = std::nullopt) {
  const std::string where = "trajectory '" + traj.task_id + "'";
  if (traj.turns.size() > t_max) {
    throw ValidationError(where + ": length " + std::to_string(traj.turns.size()) +
                          " exceeds t_max " + std::to_string(t_max));
  }
  for (size_t i = 0; i < traj.turns.size(); ++i) {
    const Turn& turn = traj.turns[i];
    if (turn.t != i) throw ValidationError(where + ": turn " + std::to_string(i) + " has index " + std::to_string(turn.t));
    const auto& d = pool.at(turn.model_id);
    if (turn.cost != turn_cost(d, turn.tokens_in, turn.tokens_out)) {
      throw ValidationError(where + ": turn " + std::to_string(i) + " cost does not match pricing");
    }
  }
  if (score_range) {
    auto [lo, hi] = *score_range;
    if (traj.terminal_score < lo || traj.terminal_score > hi) {
      throw ValidationError(where + ": terminal score " + format_double(traj.terminal_score) +
                            " outside [" + format_double(lo) + ", " + format_double(hi) + "]");
    }
  }
}

/// Coarse action category: the text before the first ':' (or the first
/// word), lower-cased. "search: foo" -> "search", "navigate: door" -> "navigate".
inline std::string action_type_of(std::string_view action) {
  size_t start = action.find_first_not_of(" \t\n");
  if (start == std::string_view::npos) return "";
  action.remove_prefix(start);
  size_t end = action.find_first_of(": \t\n(");
  std::string out(action.substr(0, end));
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace turnroute
