#include "support.hpp"

#include <gtest/gtest.h>

using namespace turnroute;
using namespace turnroute::testing;

namespace {

/// Uniform world: every model succeeds with probability p on every subgoal.
sim::World flat_world(const ModelPool& pool, double p, size_t n_subgoals = 4) {
  sim::World w;
  w.spec.name = "flat";
  w.spec.task_text = "Do the flat task.";
  for (size_t i = 0; i < n_subgoals; ++i) {
    w.spec.subgoals.push_back({static_cast<sim::ActionType>(i % sim::kActionTypes), "step " + std::to_string(i)});
  }
  w.spec.error_rules = {"no_known_action"};
  w.spec.error_messages["no_known_action"] = "No known action matches that input.";
  w.spec.error_prob_on_failure = 0.5;
  for (const auto& d : pool.models()) {
    w.skills.success[d.id].fill(p);
    w.skills.tokens[d.id] = sim::TokenModel{2000, 500, 300};
  }
  return w;
}

class FailingProvider final : public EmbeddingProvider {
 public:
  [[nodiscard]] size_t dim() const override { return 8; }
  [[nodiscard]] std::string describe() const override { return "failing"; }

 protected:
  std::vector<Vector> do_embed(std::span<const std::string>) override {
    throw TransportError("sidecar unreachable after 3 attempts");
  }
  std::vector<size_t> do_count(std::span<const std::string> texts) override { return whitespace_counter()(texts); }
};

EpisodeConfig episode_config(double budget, size_t t_max) {
  EpisodeConfig c;
  c.budget = budget;
  c.t_max = t_max;
  return c;
}

}  // namespace

TEST(Select, ArgmaxOfScores) {
  const auto pool = table2_pool().prefix(2);
  const std::vector<double> s{0.7, 0.2};
  EXPECT_EQ(select_from_scores(s, pool.models()), 0u);
}

TEST(Select, TiesGoToCheaperThenSmallerId) {
  const ModelPool pool({descriptor("b-dear", 1.0, 5.0), descriptor("z-cheap", 0.1, 0.2), descriptor("a-cheap", 0.2, 0.1)});
  const std::vector<double> tie{0.5, 0.5, 0.5};
  EXPECT_EQ(pool[select_from_scores(tie, pool.models())].id, "a-cheap");
  const std::vector<double> two{0.5, 0.5, 0.1};
  EXPECT_EQ(pool[select_from_scores(two, pool.models())].id, "z-cheap");
  EXPECT_THROW(select_from_scores(std::vector<double>{1.0}, pool.models()), ContractError);
}

TEST(Select, InvariantUnderIncreasingTransforms) {
  const auto pool = table2_pool();
  Rng rng(77);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> s(pool.size());
    for (auto& v : s) v = rng.uniform(-1.0, 1.0);
    const size_t base = select_from_scores(s, pool.models());
    const double a = rng.uniform(0.1, 10.0), b = rng.uniform(-5.0, 5.0);
    std::vector<double> affine = s, ex = s, cube = s, scaled = s;
    for (size_t i = 0; i < s.size(); ++i) {
      affine[i] = a * s[i] + b;
      ex[i] = std::exp(s[i]);
      cube[i] = s[i] * s[i] * s[i];
      scaled[i] = a * s[i];
    }
    EXPECT_EQ(select_from_scores(affine, pool.models()), base);
    EXPECT_EQ(select_from_scores(ex, pool.models()), base);
    EXPECT_EQ(select_from_scores(cube, pool.models()), base);
    EXPECT_EQ(select_from_scores(scaled, pool.models()), base);
  }
}

TEST(Router, SingletonPoolAlwaysChosen) {
  const ModelPool pool({descriptor("only", 0.5, 1.0)});
  HashProvider provider(16);
  const RouterNet net = init_router_net(pool.ids(), 16, {8}, 1);
  const HistoryText h{"TASK:\nq\n", 2, 0, 0};
  for (const Policy& p : {Policy::random(3), Policy::single_model("only"), Policy::learned(net, provider),
                          Policy::episode_level(net, provider)}) {
    Router r(p, pool, 5);
    EXPECT_EQ(r.select(&h), "only") << p.label();
  }
}

TEST(Router, PolicyValidationNamesProblem) {
  const auto pool = table2_pool();
  EXPECT_THROW(Router(Policy::single_model("nope"), pool, 1), ValidationError);
  HashProvider provider(32);
  const RouterNet net = init_router_net(pool.ids(), 16, {8}, 1);
  EXPECT_THROW(Router(Policy::learned(net, provider), pool, 1), ValidationError);
}

TEST(RunEpisode, TurnLimitWhenNeverCompleting) {
  const auto pool = table2_pool();
  const auto w = flat_world(pool, 0.0);
  const auto t = run_episode(w.spec, w.skills, Policy::random(1), pool, scienceworld_rules(), episode_config(1e9, 5), 3);
  EXPECT_EQ(t.length(), 5u);
  EXPECT_EQ(t.termination, Termination::turn_limit);
}

TEST(RunEpisode, TinyBudgetStopsAfterOneTurn) {
  const auto pool = table2_pool();
  const auto w = flat_world(pool, 0.0);
  const auto t = run_episode(w.spec, w.skills, Policy::random(1), pool, scienceworld_rules(), episode_config(1e-6, 50), 3);
  EXPECT_EQ(t.length(), 1u);
  EXPECT_EQ(t.termination, Termination::budget_exhausted);
}

TEST(RunEpisode, CompletesWhenSkillsCertain) {
  const auto pool = table2_pool();
  const auto w = flat_world(pool, 1.0, 3);
  const auto t = run_episode(w.spec, w.skills, Policy::single_model("gpt-5"), pool, scienceworld_rules(),
                             episode_config(10.0, 50), 3);
  EXPECT_EQ(t.length(), 3u);
  EXPECT_EQ(t.termination, Termination::completed);
  EXPECT_EQ(t.terminal_score, 1.0);
  for (const auto& turn : t.turns) {
    EXPECT_EQ(turn.cost, turn_cost(pool.at("gpt-5"), turn.tokens_in, turn.tokens_out));
    EXPECT_TRUE(turn.errors.empty());
  }
}

TEST(RunEpisode, ProviderFailureAborts) {
  const auto pool = table2_pool();
  const auto w = flat_world(pool, 0.5);
  FailingProvider provider;
  const RouterNet net = init_router_net(pool.ids(), 8, {4}, 1);
  const auto t = run_episode(w.spec, w.skills, Policy::learned(net, provider), pool, scienceworld_rules(),
                             episode_config(1.0, 10), 3);
  EXPECT_EQ(t.termination, Termination::aborted);
  EXPECT_TRUE(t.turns.empty());
  EXPECT_NE(t.abort_reason.find("routing failed at turn 0"), std::string::npos) << t.abort_reason;
}

TEST(RunEpisode, BudgetAndTurnInvariantsHold) {
  const auto pool = table2_pool();
  const auto world = sim::load_world(data_path("worlds/tradeoff-6.yaml"));
  const auto rules = hle_rules();
  Rng rng(1);
  for (int i = 0; i < 300; ++i) {
    const auto cfg = episode_config(rng.uniform(0.001, 0.2), 1 + rng.below(15));
    const auto t = run_episode(world.spec, world.skills, Policy::random(i), pool, rules, cfg, rng.next_u64());
    EXPECT_EQ(budget_violation(t, cfg), "") << "episode " << i;
  }
}

TEST(RunEpisode, EpisodeLevelKeepsFirstChoice) {
  const auto pool = table2_pool();
  const auto w = flat_world(pool, 0.2);
  HashProvider provider(32);
  const RouterNet net = init_router_net(pool.ids(), 32, {16}, 4);
  const auto t = run_episode(w.spec, w.skills, Policy::episode_level(net, provider), pool, scienceworld_rules(),
                             episode_config(100.0, 8), 9);
  ASSERT_FALSE(t.turns.empty());
  for (const auto& turn : t.turns) EXPECT_EQ(turn.model_id, t.turns[0].model_id);
}

TEST(RunEpisode, LearnedChoicesReplayFromLoggedHistory) {
  const auto pool = table2_pool();
  const auto world = sim::load_world(data_path("worlds/tradeoff-6.yaml"));
  HashProvider provider(64);
  const RouterNet net = init_router_net(pool.ids(), 64, {16}, 12);
  const auto cfg = episode_config(1.0, 10);
  const auto t = run_episode(world.spec, world.skills, Policy::learned(net, provider), pool, hle_rules(), cfg, 31);
  ASSERT_FALSE(t.turns.empty());
  Router replayer(Policy::learned(net, provider), pool, 0);
  Trajectory prefix;
  prefix.task_text = t.task_text;
  for (const auto& turn : t.turns) {
    const HistoryText h = routing_history(prefix, cfg, provider.counter());
    EXPECT_EQ(replayer.select(&h), turn.model_id);
    prefix.turns.push_back(turn);
  }
}

TEST(Collect, RandomPolicyDrawsFromPool) {
  const auto pool = table2_pool();
  const auto w = flat_world(pool, 0.3);
  std::set<std::string> seen;
  collect(w.spec, w.skills, Policy::random(2), 10, pool, scienceworld_rules(), episode_config(5.0, 10), 1,
          [&](const Trajectory& t) {
            for (const auto& turn : t.turns) {
              EXPECT_TRUE(pool.contains(turn.model_id));
              seen.insert(turn.model_id);
            }
          });
  EXPECT_GT(seen.size(), 1u);
}

TEST(Collect, SingleModelUsesOnlyThatModel) {
  const auto pool = table2_pool();
  const auto w = flat_world(pool, 0.3);
  const auto s = collect(w.spec, w.skills, Policy::single_model("kimi-k2"), 10, pool, scienceworld_rules(),
                         episode_config(5.0, 10), 1, [&](const Trajectory& t) {
                           for (const auto& turn : t.turns) EXPECT_EQ(turn.model_id, "kimi-k2");
                         });
  EXPECT_EQ(s.episodes, 10u);
}

TEST(Collect, DeterministicAcrossRunsAndJobCounts) {
  const auto pool = table2_pool();
  const auto world = sim::load_world(data_path("worlds/tradeoff-6.yaml"));
  auto run = [&](size_t jobs) {
    std::string out;
    collect(world.spec, world.skills, Policy::random(5), 40, pool, hle_rules(), episode_config(0.5, 10), 17,
            [&](const Trajectory& t) { out += to_jsonl_line(t) + "\n"; }, jobs);
    return out;
  };
  const std::string a = run(1);
  EXPECT_EQ(a, run(1));
  EXPECT_EQ(a, run(3));
}
