#include "support.hpp"

#include <gtest/gtest.h>

using namespace turnroute;
using namespace turnroute::testing;
using sim::ActionType;

namespace {

sim::World constant_world(const ModelPool& pool, double p, double error_prob, std::map<std::string, std::string> msgs) {
  sim::World w;
  w.spec.name = "const";
  w.spec.task_text = "Finish the constant task.";
  w.spec.subgoals = {{ActionType::navigate, "walk to the shed"},
                     {ActionType::manipulate, "lift the crate"},
                     {ActionType::compute, "sum the weights"}};
  for (const auto& [rule, text] : msgs) {
    w.spec.error_rules.push_back(rule);
    w.spec.error_messages[rule] = text;
  }
  w.spec.error_prob_on_failure = error_prob;
  for (const auto& d : pool.models()) {
    w.skills.success[d.id].fill(p);
    w.skills.tokens[d.id] = sim::TokenModel{};
  }
  return w;
}

EpisodeConfig unlimited(size_t t_max) {
  EpisodeConfig c;
  c.budget = 1e9;
  c.t_max = t_max;
  return c;
}

}  // namespace

TEST(Step, CertainSuccessCompletesEverySubgoal) {
  const auto pool = table2_pool();
  const auto w = constant_world(pool, 1.0, 0.0, {});
  sim::Environment env(w.spec, w.skills);
  env.reset(1);
  for (size_t k = 0; k < 3; ++k) {
    const auto r = env.step("gpt-5");
    EXPECT_TRUE(r.success);
    EXPECT_EQ(env.state().completed, k + 1);
    EXPECT_EQ(r.done, k == 2);
  }
  EXPECT_EQ(env.terminal_score(), 1.0);
  EXPECT_THROW(env.step("gpt-5"), ProtocolError);
}

TEST(Step, CertainFailureAlwaysEmitsDetectableError) {
  const auto pool = table2_pool();
  const auto rules = scienceworld_rules();
  const auto w = constant_world(pool, 0.0, 1.0, {{"no_known_action", "No known action matches that input."}});
  sim::Environment env(w.spec, w.skills);
  env.reset(2);
  for (int k = 0; k < 20; ++k) {
    const auto r = env.step("kimi-k2");
    EXPECT_FALSE(r.success);
    ASSERT_TRUE(r.emitted_rule);
    const auto events = detect(r.observation, rules);
    ASSERT_EQ(events.size(), 1u) << r.observation;
    EXPECT_EQ(events[0].rule, "no_known_action");
  }
}

TEST(Step, StepBeforeResetIsProtocolError) {
  const auto pool = table2_pool();
  const auto w = constant_world(pool, 0.5, 0.0, {});
  sim::Environment env(w.spec, w.skills);
  EXPECT_THROW(env.step("gpt-5"), ProtocolError);
}

TEST(Step, SeededSequencesRepeat) {
  const auto pool = table2_pool();
  const auto world = sim::load_world(data_path("worlds/tradeoff-6.yaml"));
  auto trace = [&](uint64_t seed) {
    sim::Environment env(world.spec, world.skills);
    env.reset(seed);
    std::string out;
    for (size_t t = 0; t < 15 && !env.state().done; ++t) {
      const auto r = env.step(pool[t % pool.size()].id);
      out += r.observation + "|" + std::to_string(r.tokens_in) + "|" + std::to_string(r.tokens_out) + "\n";
    }
    return out;
  };
  EXPECT_EQ(trace(5), trace(5));
  EXPECT_NE(trace(5), trace(6));
}

TEST(Step, TokensFollowTheTokenModel) {
  const auto pool = table2_pool();
  auto w = constant_world(pool, 0.0, 0.0, {});
  w.skills.tokens["gpt-5"] = sim::TokenModel{1000, 250, 100};
  sim::Environment env(w.spec, w.skills);
  env.reset(3);
  for (size_t t = 0; t < 10; ++t) {
    const auto r = env.step("gpt-5");
    EXPECT_EQ(r.tokens_in, 1000 + 250 * t);
    EXPECT_GE(r.tokens_out, 50u);
    EXPECT_LE(r.tokens_out, 150u);
  }
}

TEST(TerminalScore, AffineEndpoints) {
  EXPECT_EQ(sim::terminal_score({4, 9, true}, 4, {0.0, 1.0}), 1.0);
  EXPECT_EQ(sim::terminal_score({0, 9, false}, 4, {-100.0, 100.0}), -100.0);
  EXPECT_EQ(sim::terminal_score({3, 9, false}, 4, {0.0, 1.0}), 0.75);
}

TEST(Oracle, TwoByTwoAssignsArgmaxRows) {
  const ModelPool pool({descriptor("m0", 1.0, 1.0), descriptor("m1", 1.0, 1.0)});
  sim::World w;
  w.spec.name = "two";
  w.spec.task_text = "t";
  w.spec.subgoals = {{ActionType::navigate, "a"}, {ActionType::manipulate, "b"}, {ActionType::navigate, "c"}};
  w.skills.success["m0"] = {0.9, 0.1, 0.5, 0.5};
  w.skills.success["m1"] = {0.1, 0.9, 0.5, 0.5};
  w.skills.tokens["m0"] = w.skills.tokens["m1"] = sim::TokenModel{};
  const auto o = sim::oracle(w.spec, w.skills, pool, unlimited(10), 200, 1);
  EXPECT_EQ(o.best_model, (std::vector<std::string>{"m0", "m1", "m0"}));
  EXPECT_EQ(sim::best_model_for(ActionType::query, w.skills, pool), "m0");  // tie -> same price -> smaller id
}

TEST(Oracle, TiesPreferCheaperModel) {
  const ModelPool pool({descriptor("dear", 2.0, 8.0), descriptor("cheap", 0.1, 0.2)});
  sim::SkillMatrix s;
  s.success["dear"].fill(0.7);
  s.success["cheap"].fill(0.7);
  EXPECT_EQ(sim::best_model_for(ActionType::compute, s, pool), "cheap");
}

TEST(Oracle, SingleModelWorldMatchesThatModel) {
  const ModelPool pool({descriptor("solo", 0.5, 1.0)});
  const auto w = constant_world(pool, 0.4, 0.0, {});
  const auto o = sim::oracle(w.spec, w.skills, pool, unlimited(8), 2000, 9);
  const auto s = sim::single_model_score(w.spec, w.skills, pool, unlimited(8), "solo", 2000, 9);
  EXPECT_EQ(o.expected_score, s.mean);
  EXPECT_EQ(o.standard_error, s.standard_error);
}

TEST(Oracle, DominatesSingleModelsOnGeneratedWorlds) {
  const auto pool = table2_pool();
  const auto rules = hle_rules();
  const std::map<std::string, std::string> msgs{{"python_name_error", "NameError: name 'result' is not defined."},
                                                {"browse_403", "403 Forbidden."}};
  for (uint64_t seed = 0; seed < 12; ++seed) {
    const auto w = sim::generate_world(seed, pool, msgs);
    const auto cfg = unlimited(2 * w.spec.subgoals.size() + 2);
    const auto o = sim::oracle(w.spec, w.skills, pool, cfg, 1500, seed);
    for (const auto& d : pool.models()) {
      const auto s = sim::single_model_score(w.spec, w.skills, pool, cfg, d.id, 1500, seed);
      EXPECT_GE(o.expected_score, s.mean - 2.0 * std::hypot(o.standard_error, s.standard_error))
          << "world " << seed << ", model " << d.id;
    }
  }
}

TEST(Worlds, EmittedObservationsFireExactlyTheIntendedRule) {
  struct Case {
    const char* world;
    const char* pool;
    Ruleset rules;
  };
  for (const auto& c : {Case{"worlds/tradeoff-6.yaml", "pools/table2.yaml", hle_rules()},
                        Case{"worlds/specialist-4.yaml", "pools/specialist-4.yaml", scienceworld_rules()}}) {
    const auto pool = load_pool(data_path(c.pool));
    auto world = sim::load_world(data_path(c.world));
    world.skills.validate(pool);
    size_t emitted = 0;
    for (uint64_t seed = 0; seed < 200; ++seed) {
      sim::Environment env(world.spec, world.skills);
      env.reset(seed);
      for (size_t t = 0; t < 12 && !env.state().done; ++t) {
        const auto r = env.step(pool[(seed + t) % pool.size()].id);
        const auto events = detect(r.observation, c.rules);
        if (r.emitted_rule) {
          ++emitted;
          ASSERT_EQ(events.size(), 1u) << r.observation;
          EXPECT_EQ(events[0].rule, *r.emitted_rule);
        } else {
          EXPECT_TRUE(events.empty()) << r.observation;
        }
      }
    }
    EXPECT_GT(emitted, 0u) << c.world;
  }
}

TEST(Worlds, GeneratedWorldIsSeedDeterministic) {
  const auto pool = table2_pool();
  const auto a = sim::generate_world(4, pool, {});
  const auto b = sim::generate_world(4, pool, {});
  ASSERT_EQ(a.spec.subgoals.size(), b.spec.subgoals.size());
  for (size_t i = 0; i < a.spec.subgoals.size(); ++i) {
    EXPECT_EQ(a.spec.subgoals[i].description, b.spec.subgoals[i].description);
  }
  EXPECT_EQ(a.skills.success, b.skills.success);
  EXPECT_NO_THROW(a.skills.validate(pool));
}

TEST(Worlds, LoadRejectsUnknownActionType) {
  TempDir dir("world");
  write_file(dir / "w.yaml",
             "name: w\ntask: t\nsubgoals:\n  - { type: fly, description: up }\nmodels:\n"
             "  a: { skills: { navigate: 1, manipulate: 1, query: 1, compute: 1 } }\n");
  EXPECT_THROW(sim::load_world(dir / "w.yaml"), ConfigError);
}

TEST(Worlds, SpecialistOracleIsNearPerfect) {
  const auto pool = load_pool(data_path("pools/specialist-4.yaml"));
  const auto world = sim::load_world(data_path("worlds/specialist-4.yaml"));
  EpisodeConfig cfg;
  cfg.budget = 2.0;
  cfg.t_max = 12;
  const auto o = sim::oracle(world.spec, world.skills, pool, cfg, 2000, 1);
  for (size_t i = 0; i < world.spec.subgoals.size(); ++i) {
    EXPECT_DOUBLE_EQ(world.skills.p(o.best_model[i], world.spec.subgoals[i].type), 0.9);
  }
  EXPECT_GT(o.expected_score, 0.95);
}
