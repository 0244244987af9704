#pragma once

/**
 * Aggregate metrics and trajectory diagnostics over evaluation logs, plus the
 * CSV report bundle.
 */

#include "common.hpp"
#include "error_detect.hpp"
#include "trajectory.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace turnroute {

using Run = std::vector<Trajectory>;

inline size_t count_switches(const Trajectory& traj) {
  size_t n = 0;
  for (size_t t = 1; t < traj.turns.size(); ++t) n += traj.turns[t].model_id != traj.turns[t - 1].model_id;
  return n;
}

/// Successful: completed, or normalized score >= 0.99.
inline bool is_success(const Trajectory& traj, ScoreRange range) {
  return traj.termination == Termination::completed || range.normalize(traj.terminal_score) >= 0.99;
}

// ============================================================================
// Summary
// ============================================================================

struct EvalSummary {
  double mean_score = 0.0;  // mean of run-level mean normalized scores
  double score_std = 0.0;   // sample std of run-level means (0 for a single run)
  double total_cost = 0.0;
  size_t episodes = 0;
  size_t runs = 0;
  double mean_turns = 0.0;
  double mean_switches = 0.0;
  double success_rate = 0.0;
};

inline EvalSummary summarize(const std::vector<Run>& runs, ScoreRange range = {}) {
  if (runs.empty()) throw ValidationError("summarize: need at least one run");
  EvalSummary s;
  s.runs = runs.size();
  std::vector<double> run_means;
  double turns = 0.0;
  double switches = 0.0;
  double successes = 0.0;
  for (const auto& run : runs) {
    if (run.empty()) throw ValidationError("summarize: empty run");
    double sum = 0.0;
    for (const auto& t : run) {
      sum += range.normalize(t.terminal_score);
      s.total_cost += t.total_cost();
      turns += static_cast<double>(t.length());
      switches += static_cast<double>(count_switches(t));
      successes += is_success(t, range) ? 1.0 : 0.0;
      ++s.episodes;
    }
    run_means.push_back(sum / static_cast<double>(run.size()));
  }
  double total = 0.0;
  for (double m : run_means) total += m;
  s.mean_score = total / static_cast<double>(run_means.size());
  if (run_means.size() > 1) {
    double ss = 0.0;
    for (double m : run_means) ss += (m - s.mean_score) * (m - s.mean_score);
    s.score_std = std::sqrt(ss / static_cast<double>(run_means.size() - 1));
  }
  const auto n = static_cast<double>(s.episodes);
  s.mean_turns = turns / n;
  s.mean_switches = switches / n;
  s.success_rate = successes / n;
  return s;
}

// ============================================================================
// Switch vs cost curves
// ============================================================================

struct CurvePoint {
  size_t switches = 0;
  double cost = 0.0;
};

/// Cumulative (switches, cost) after each turn.
inline std::vector<CurvePoint> switch_curve(const Trajectory& traj) {
  std::vector<CurvePoint> out;
  CurvePoint p;
  for (size_t t = 0; t < traj.turns.size(); ++t) {
    if (t > 0 && traj.turns[t].model_id != traj.turns[t - 1].model_id) ++p.switches;
    p.cost += traj.turns[t].cost;
    out.push_back(p);
  }
  return out;
}

struct PooledPoint {
  size_t turn = 0;
  size_t episodes = 0;  // successful episodes that reached this turn
  double mean_switches = 0.0;
  double mean_cost = 0.0;
};

struct SwitchCurves {
  std::vector<std::vector<CurvePoint>> episodes;  // successful episodes, log order
  std::vector<PooledPoint> pooled;
};

inline SwitchCurves switch_curves(const std::vector<Trajectory>& logs, ScoreRange range) {
  SwitchCurves out;
  for (const auto& t : logs) {
    if (is_success(t, range)) out.episodes.push_back(switch_curve(t));
  }
  size_t longest = 0;
  for (const auto& c : out.episodes) longest = std::max(longest, c.size());
  for (size_t k = 0; k < longest; ++k) {
    PooledPoint p;
    p.turn = k;
    double sw = 0.0;
    double cost = 0.0;
    for (const auto& c : out.episodes) {
      if (k < c.size()) {
        ++p.episodes;
        sw += static_cast<double>(c[k].switches);
        cost += c[k].cost;
      }
    }
    p.mean_switches = sw / static_cast<double>(p.episodes);
    p.mean_cost = cost / static_cast<double>(p.episodes);
    out.pooled.push_back(p);
  }
  return out;
}

// ============================================================================
// Error-triggered switching and recovery
// ============================================================================

struct ErrorSwitchStats {
  size_t error_turns = 0;   // turns with an error that have a successor turn
  size_t switches = 0;      // of those, followed by a model change
  size_t recoveries = 0;    // of those, followed by an error-free turn
  bool defined = false;     // false when error_turns == 0
  double p_switch = 0.0;
  double p_recover = 0.0;
  double p_stay = 0.0;
};

inline ErrorSwitchStats error_switch_recovery(const std::vector<Trajectory>& logs) {
  ErrorSwitchStats s;
  for (const auto& traj : logs) {
    for (size_t t = 0; t + 1 < traj.turns.size(); ++t) {
      if (traj.turns[t].errors.empty()) continue;
      ++s.error_turns;
      s.switches += traj.turns[t + 1].model_id != traj.turns[t].model_id;
      s.recoveries += traj.turns[t + 1].errors.empty();
    }
  }
  if (s.error_turns > 0) {
    const auto n = static_cast<double>(s.error_turns);
    s.defined = true;
    s.p_switch = static_cast<double>(s.switches) / n;
    s.p_recover = static_cast<double>(s.recoveries) / n;
    s.p_stay = 1.0 - s.p_switch;
  }
  return s;
}

// ============================================================================
// Usage by phase
// ============================================================================

struct PhaseUsage {
  size_t n_phases = 0;
  std::vector<size_t> turns;                            // per phase
  std::vector<std::map<std::string, size_t>> counts;    // per phase
  [[nodiscard]] double frequency(size_t phase, const std::string& model) const {
    auto it = counts.at(phase).find(model);
    if (it == counts[phase].end() || turns[phase] == 0) return 0.0;
    return static_cast<double>(it->second) / static_cast<double>(turns[phase]);
  }
};

inline size_t phase_of(size_t t, size_t length, size_t n_phases) { return t * n_phases / length; }

inline PhaseUsage usage_by_phase(const std::vector<Trajectory>& logs, size_t n_phases = 3) {
  if (n_phases == 0) throw ValidationError("usage_by_phase: n_phases must be >= 1");
  PhaseUsage u;
  u.n_phases = n_phases;
  u.turns.assign(n_phases, 0);
  u.counts.resize(n_phases);
  for (const auto& traj : logs) {
    const size_t T = traj.turns.size();
    for (size_t t = 0; t < T; ++t) {
      const size_t ph = phase_of(t, T, n_phases);
      ++u.turns[ph];
      ++u.counts[ph][traj.turns[t].model_id];
    }
  }
  return u;
}

// ============================================================================
// Lift
// ============================================================================

struct LiftCell {
  size_t count = 0;
  double p_model = 0.0;
  double p_model_given_action = 0.0;
  std::optional<double> lift;  // empty when a marginal is zero
};

struct LiftTable {
  std::vector<std::string> models;   // sorted
  std::vector<std::string> actions;  // sorted
  std::map<std::string, size_t> model_counts;
  std::map<std::string, size_t> action_counts;
  size_t total = 0;
  std::map<std::pair<std::string, std::string>, LiftCell> cells;  // (model, action)

  [[nodiscard]] const LiftCell& cell(const std::string& model, const std::string& action) const {
    return cells.at({model, action});
  }
};

/// `extra_models` lists pool models that should appear even if unused.
inline LiftTable lift_table(const std::vector<Trajectory>& logs, const std::vector<std::string>& extra_models = {}) {
  LiftTable lt;
  std::map<std::pair<std::string, std::string>, size_t> joint;
  std::set<std::string> models(extra_models.begin(), extra_models.end());
  std::set<std::string> actions;
  for (const auto& traj : logs) {
    for (const auto& turn : traj.turns) {
      const std::string a = action_type_of(turn.action);
      models.insert(turn.model_id);
      actions.insert(a);
      ++joint[{turn.model_id, a}];
      ++lt.model_counts[turn.model_id];
      ++lt.action_counts[a];
      ++lt.total;
    }
  }
  lt.models.assign(models.begin(), models.end());
  lt.actions.assign(actions.begin(), actions.end());
  for (const auto& m : lt.models) {
    const size_t cm = lt.model_counts.count(m) ? lt.model_counts.at(m) : 0;
    for (const auto& a : lt.actions) {
      LiftCell c;
      const size_t ca = lt.action_counts.at(a);
      auto it = joint.find({m, a});
      c.count = it == joint.end() ? 0 : it->second;
      c.p_model = lt.total ? static_cast<double>(cm) / static_cast<double>(lt.total) : 0.0;
      c.p_model_given_action = ca ? static_cast<double>(c.count) / static_cast<double>(ca) : 0.0;
      if (c.p_model > 0.0 && ca > 0) c.lift = c.p_model_given_action / c.p_model;
      lt.cells[{m, a}] = c;
    }
  }
  return lt;
}

// ============================================================================
// Report bundle
// ============================================================================

/// One evaluated configuration: a policy under one sweep setting.
struct EvalGroup {
  std::string policy;
  double budget_scale = 1.0;
  size_t history_budget = 0;
  size_t pool_size = 0;
  std::vector<Run> runs;

  [[nodiscard]] std::vector<Trajectory> pooled() const {
    std::vector<Trajectory> all;
    for (const auto& r : runs) all.insert(all.end(), r.begin(), r.end());
    return all;
  }
};

struct ReportOptions {
  ScoreRange score_range;
  size_t n_phases = 3;
  std::vector<std::string> pool_ids;
};

namespace detail {

inline std::string group_key(const EvalGroup& g) {
  return g.policy + "," + format_double(g.budget_scale) + "," + std::to_string(g.history_budget) + "," +
         std::to_string(g.pool_size);
}

inline const char* kGroupHeader = "policy,budget_scale,history_budget,pool_size";

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw IoError("write failed on '" + path.string() + "'");
}

}  // namespace detail

inline std::string summary_csv(const std::vector<EvalGroup>& groups, const ReportOptions& opt) {
  std::string s = std::string(detail::kGroupHeader) +
                  ",runs,episodes,mean_score,score_std,total_cost,mean_turns,mean_switches,success_rate\n";
  for (const auto& g : groups) {
    const EvalSummary e = summarize(g.runs, opt.score_range);
    s += detail::group_key(g) + "," + std::to_string(e.runs) + "," + std::to_string(e.episodes) + "," +
         format_double(e.mean_score) + "," + format_double(e.score_std) + "," + format_double(e.total_cost) + "," +
         format_double(e.mean_turns) + "," + format_double(e.mean_switches) + "," + format_double(e.success_rate) +
         "\n";
  }
  return s;
}

inline std::string switch_curve_csv(const std::vector<EvalGroup>& groups, const ReportOptions& opt) {
  std::string s = std::string(detail::kGroupHeader) + ",turn,episodes,mean_switches,mean_cost\n";
  for (const auto& g : groups) {
    for (const auto& p : switch_curves(g.pooled(), opt.score_range).pooled) {
      s += detail::group_key(g) + "," + std::to_string(p.turn) + "," + std::to_string(p.episodes) + "," +
           format_double(p.mean_switches) + "," + format_double(p.mean_cost) + "\n";
    }
  }
  return s;
}

inline std::string error_stats_csv(const std::vector<EvalGroup>& groups) {
  std::string s = std::string(detail::kGroupHeader) + ",error_turns,switches,recoveries,defined,p_switch,p_recover,p_stay\n";
  for (const auto& g : groups) {
    const ErrorSwitchStats e = error_switch_recovery(g.pooled());
    auto val = [&](double v) { return e.defined ? format_double(v) : std::string(); };
    s += detail::group_key(g) + "," + std::to_string(e.error_turns) + "," + std::to_string(e.switches) + "," +
         std::to_string(e.recoveries) + "," + (e.defined ? "1" : "0") + "," + val(e.p_switch) + "," +
         val(e.p_recover) + "," + val(e.p_stay) + "\n";
  }
  return s;
}

inline std::string phase_usage_csv(const std::vector<EvalGroup>& groups, const ReportOptions& opt) {
  std::string s = std::string(detail::kGroupHeader) + ",phase,model_id,count,frequency\n";
  for (const auto& g : groups) {
    const PhaseUsage u = usage_by_phase(g.pooled(), opt.n_phases);
    std::set<std::string> ids(opt.pool_ids.begin(), opt.pool_ids.end());
    for (const auto& c : u.counts) {
      for (const auto& [m, n] : c) ids.insert(m);
    }
    for (size_t ph = 0; ph < u.n_phases; ++ph) {
      for (const auto& m : ids) {
        auto it = u.counts[ph].find(m);
        const size_t n = it == u.counts[ph].end() ? 0 : it->second;
        s += detail::group_key(g) + "," + std::to_string(ph) + "," + m + "," + std::to_string(n) + "," +
             format_double(u.frequency(ph, m)) + "\n";
      }
    }
  }
  return s;
}

inline std::string lift_csv(const std::vector<EvalGroup>& groups, const ReportOptions& opt) {
  std::string s = std::string(detail::kGroupHeader) + ",model_id,action_type,count,p_model,p_model_given_action,lift\n";
  for (const auto& g : groups) {
    const LiftTable lt = lift_table(g.pooled(), opt.pool_ids);
    for (const auto& m : lt.models) {
      for (const auto& a : lt.actions) {
        const LiftCell& c = lt.cell(m, a);
        s += detail::group_key(g) + "," + m + "," + a + "," + std::to_string(c.count) + "," +
             format_double(c.p_model) + "," + format_double(c.p_model_given_action) + "," +
             (c.lift ? format_double(*c.lift) : std::string()) + "\n";
      }
    }
  }
  return s;
}

/// Writes summary.csv, switch_curve.csv, error_stats.csv, phase_usage.csv,
/// lift.csv and run_meta.json into `dir`. `meta` is written verbatim.
inline void write_report(const std::filesystem::path& dir, const std::vector<EvalGroup>& groups,
                         const ReportOptions& opt, const std::string& meta_json) {
  std::filesystem::create_directories(dir);
  detail::write_text(dir / "summary.csv", summary_csv(groups, opt));
  detail::write_text(dir / "switch_curve.csv", switch_curve_csv(groups, opt));
  detail::write_text(dir / "error_stats.csv", error_stats_csv(groups));
  detail::write_text(dir / "phase_usage.csv", phase_usage_csv(groups, opt));
  detail::write_text(dir / "lift.csv", lift_csv(groups, opt));
  detail::write_text(dir / "run_meta.json", meta_json);
}

}  // namespace turnroute
