#pragma once

#include "common.hpp"
#include "encoding.hpp"
#include "trajectory.hpp"

#include <cstddef>
#include <optional>

namespace turnroute {

struct EpisodeConfig {
  double budget = 2.0;  // USD per episode
  size_t t_max = 50;
  size_t history_token_budget = kDefaultHistoryBudget;
  /// When false the router sees only the task block (ablation).
  bool route_history = true;

  void validate() const {
    if (!(budget > 0.0)) throw ValidationError("episode: budget must be positive");
    if (t_max < 1) throw ValidationError("episode: t_max must be >= 1");
    if (history_token_budget == 0) throw ValidationError("episode: history token budget must be positive");
  }
};

/// Post-turn termination check, run after turn index `t` has been appended
/// with cumulative cost `spent`. Completion wins over the limits.
inline std::optional<Termination> termination_after_turn(size_t t, double spent, bool env_done,
                                                         const EpisodeConfig& cfg) {
  if (env_done) return Termination::completed;
  if (spent >= cfg.budget) return Termination::budget_exhausted;
  if (t + 1 >= cfg.t_max) return Termination::turn_limit;
  return std::nullopt;
}

}  // namespace turnroute
