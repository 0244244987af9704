#include "support.hpp"

#include <gtest/gtest.h>

using namespace turnroute;
using namespace turnroute::testing;

namespace {

PenaltyConfig base_one(size_t t_max) {
  PenaltyConfig c = PenaltyConfig::with_horizon(t_max);
  c.base = 1.0;
  return c;
}

/// S~_t = S_norm - sum_{i >= t} rho_i, evaluated directly per t.
std::vector<double> direct_targets(const Trajectory& traj, const PenaltyConfig& cfg, ScoreRange range) {
  std::vector<double> out;
  const double s = range.normalize(traj.terminal_score);
  for (size_t t = 0; t < traj.turns.size(); ++t) {
    double sum = 0.0;
    for (size_t i = t; i < traj.turns.size(); ++i) sum += turn_penalty(traj.turns[i].errors, i, cfg);
    out.push_back(s - sum);
  }
  return out;
}

}  // namespace

TEST(Detect, HleNameError) {
  const auto events = detect("NameError: name 'x' is not defined", hle_rules());
  ASSERT_EQ(events.size(), 1u);
  EXPECT_EQ(events[0].rule, "python_name_error");
  EXPECT_EQ(events[0].severity, Severity::high);
}

TEST(Detect, CleanObservation) {
  EXPECT_TRUE(detect("The experiment completed successfully.", hle_rules()).empty());
  EXPECT_TRUE(detect("The experiment completed successfully.", scienceworld_rules()).empty());
}

TEST(Detect, ScienceWorldUnknownAction) {
  const auto events = detect("No known action matches that input.", scienceworld_rules());
  ASSERT_EQ(events.size(), 1u);
  EXPECT_EQ(events[0].rule, "no_known_action");
  EXPECT_EQ(events[0].severity, Severity::high);
}

TEST(Detect, CaseInsensitiveAndIdempotent) {
  const auto rules = hle_rules();
  const std::string obs = "403 FORBIDDEN while fetching; also nameerror: name 'y' is not defined";
  const auto a = detect(obs, rules);
  EXPECT_EQ(a, detect(obs, rules));
  std::vector<std::string> names;
  for (const auto& e : a) names.push_back(e.rule);
  EXPECT_NE(std::find(names.begin(), names.end(), "browse_403"), names.end());
  EXPECT_NE(std::find(names.begin(), names.end(), "python_name_error"), names.end());
}

TEST(Ruleset, InvalidRegexRejectedAtLoad) {
  TempDir dir("rules");
  write_file(dir / "r.yaml",
             "name: x\nrules:\n  - name: a\n    category: c\n    severity: high\n    patterns: [\"re:([unclosed\"]\n");
  EXPECT_THROW(load_ruleset(dir / "r.yaml"), ValidationError);
}

TEST(Ruleset, UnknownSeverityRejected) {
  TempDir dir("rules");
  write_file(dir / "r.yaml", "rules:\n  - { name: a, category: c, severity: fatal, patterns: [x] }\n");
  EXPECT_THROW(load_ruleset(dir / "r.yaml"), ConfigError);
}

TEST(Ruleset, HleShipsEveryAppendixRuleName) {
  const auto rules = hle_rules();
  for (const char* name : {"python_name_error", "search_no_results", "browse_403", "format_error"}) {
    EXPECT_NE(rules.find(name), nullptr) << name;
  }
}

TEST(ProgressWeight, SpecPoints) {
  const PenaltyConfig c;
  EXPECT_NEAR(progress_weight(0.3, c), 0.3, 1e-12);
  EXPECT_NEAR(progress_weight(0.5, c), 0.65, 1e-12);
  EXPECT_NEAR(progress_weight(0.9, c), 1.0, 1e-12);
  EXPECT_THROW(progress_weight(1.1, c), RangeError);
  EXPECT_THROW(progress_weight(-0.1, c), RangeError);
}

TEST(TurnPenalty, SpecPoints) {
  const auto c = base_one(30);
  EXPECT_EQ(turn_penalty({}, 7, c), 0.0);
  const std::vector<ErrorEvent> high{event(Severity::high)};
  EXPECT_NEAR(turn_penalty(high, 14, c), 0.65, 1e-12);
  const std::vector<ErrorEvent> mixed{event(Severity::low, "browse_403"), event(Severity::medium, "format_error")};
  EXPECT_NEAR(turn_penalty(mixed, 29, c), 0.8, 1e-12);
  EXPECT_THROW(turn_penalty(high, 30, c), RangeError);
}

TEST(TurnPenalty, DefaultBaseIsReciprocalHorizon) {
  const auto c = PenaltyConfig::with_horizon(50);
  const std::vector<ErrorEvent> high{event(Severity::high)};
  EXPECT_NEAR(turn_penalty(high, 49, c), 1.0 / 50.0, 1e-15);
}

TEST(TurnPenalty, NonDecreasingInTurnIndex) {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const size_t t_max = 1 + rng.below(60);
    const auto c = PenaltyConfig::with_horizon(t_max);
    const std::vector<ErrorEvent> ev{event(static_cast<Severity>(rng.below(3)))};
    double prev = -1.0;
    for (size_t i = 0; i < t_max; ++i) {
      const double r = turn_penalty(ev, i, c);
      EXPECT_GE(r, prev);
      prev = r;
    }
  }
}

TEST(OutcomeTargets, ErrorFreeEqualsNormalizedScore) {
  Trajectory t;
  t.terminal_score = 40.0;
  for (size_t i = 0; i < 5; ++i) t.turns.push_back(Turn{i, "m", "", "", "", 0, 0, 0.0, {}});
  const auto targets = outcome_targets(t, PenaltyConfig::with_horizon(10), {-100.0, 100.0});
  for (double v : targets) EXPECT_DOUBLE_EQ(v, 0.7);
}

TEST(OutcomeTargets, FinalHighErrorAtHorizon) {
  const size_t t_max = 6;
  Trajectory t;
  t.terminal_score = 1.0;
  for (size_t i = 0; i < t_max; ++i) t.turns.push_back(Turn{i, "m", "", "", "", 0, 0, 0.0, {}});
  t.turns.back().errors.push_back(event(Severity::high));
  for (double v : outcome_targets(t, base_one(t_max), {0.0, 1.0})) EXPECT_NEAR(v, 0.0, 1e-15);
}

TEST(OutcomeTargets, ScoreOutsideRangeRejected) {
  Trajectory t;
  t.terminal_score = 2.0;
  EXPECT_THROW(outcome_targets(t, PenaltyConfig{}, {0.0, 1.0}), ValidationError);
}

TEST(OutcomeTargets, RecurrenceMatchesDirectSum) {
  const auto pool = table2_pool();
  Rng rng(21);
  for (int i = 0; i < 300; ++i) {
    const Trajectory t = random_trajectory(rng, pool, 20);
    const auto c = PenaltyConfig::with_horizon(20 + rng.below(10));
    const auto rec = outcome_targets(t, c, {0.0, 1.0});
    const auto dir = direct_targets(t, c, {0.0, 1.0});
    ASSERT_EQ(rec.size(), dir.size());
    for (size_t k = 0; k < rec.size(); ++k) EXPECT_NEAR(rec[k], dir[k], 1e-12);
  }
}

TEST(OutcomeTargets, RemovingAnErrorNeverLowersTargets) {
  const auto pool = table2_pool();
  Rng rng(22);
  for (int i = 0; i < 200; ++i) {
    Trajectory t = random_trajectory(rng, pool, 15);
    const auto c = PenaltyConfig::with_horizon(15);
    const auto before = outcome_targets(t, c, {0.0, 1.0});
    std::vector<std::pair<size_t, size_t>> slots;
    for (size_t k = 0; k < t.turns.size(); ++k) {
      for (size_t e = 0; e < t.turns[k].errors.size(); ++e) slots.emplace_back(k, e);
    }
    if (slots.empty()) continue;
    const auto [k, e] = slots[rng.below(slots.size())];
    t.turns[k].errors.erase(t.turns[k].errors.begin() + static_cast<long>(e));
    const auto after = outcome_targets(t, c, {0.0, 1.0});
    for (size_t j = 0; j < after.size(); ++j) EXPECT_GE(after[j], before[j]);
  }
}

TEST(Redetect, RecomputesEvents) {
  Trajectory t;
  Turn turn;
  turn.observation = "403 Forbidden.";
  turn.errors.push_back(event(Severity::high, "stale"));
  t.turns.push_back(turn);
  const auto r = redetect(t, hle_rules());
  ASSERT_EQ(r.turns[0].errors.size(), 1u);
  EXPECT_EQ(r.turns[0].errors[0].rule, "browse_403");
}
