#pragma once

/**
 * Turn-level routing policies, budget/turn-limited episode execution and the
 * offline collection driver.
 */

#include "common.hpp"
#include "encoding.hpp"
#include "episode.hpp"
#include "error_detect.hpp"
#include "estimator.hpp"
#include "jsonl.hpp"
#include "model_pool.hpp"
#include "simenv.hpp"
#include "trajectory.hpp"

#include <algorithm>
#include <exception>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

namespace turnroute {

enum class PolicyKind { learned, random, single_model, episode_level };

inline const char* to_string(PolicyKind k) {
  switch (k) {
    case PolicyKind::learned: return "learned";
    case PolicyKind::random: return "random";
    case PolicyKind::single_model: return "single";
    case PolicyKind::episode_level: return "episode";
  }
  return "learned";
}

/// Routing policy. Learned variants borrow the net and provider, which must
/// outlive the policy and stay unmodified while episodes run.
struct Policy {
  PolicyKind kind = PolicyKind::random;
  std::string model_id;  // single_model
  uint64_t seed = 0;     // random
  const RouterNet* net = nullptr;
  EmbeddingProvider* provider = nullptr;

  static Policy learned(const RouterNet& net, EmbeddingProvider& provider) {
    return {PolicyKind::learned, {}, 0, &net, &provider};
  }
  static Policy episode_level(const RouterNet& net, EmbeddingProvider& provider) {
    return {PolicyKind::episode_level, {}, 0, &net, &provider};
  }
  static Policy random(uint64_t seed) { return {PolicyKind::random, {}, seed, nullptr, nullptr}; }
  static Policy single_model(std::string id) { return {PolicyKind::single_model, std::move(id), 0, nullptr, nullptr}; }

  [[nodiscard]] bool uses_estimator() const {
    return kind == PolicyKind::learned || kind == PolicyKind::episode_level;
  }

  /// Stable label used in reports: "learned", "random", "single:<id>", "episode".
  [[nodiscard]] std::string label() const {
    return kind == PolicyKind::single_model ? "single:" + model_id : to_string(kind);
  }

  void validate(const ModelPool& pool) const {
    if (pool.size() == 0) throw ValidationError("policy: pool is empty");
    if (kind == PolicyKind::single_model && !pool.contains(model_id)) {
      throw ValidationError("policy: model '" + model_id + "' not in pool");
    }
    if (uses_estimator()) {
      if (!net || !provider) throw ValidationError("policy: learned policy needs a net and a provider");
      if (net->input_dim != provider->dim()) {
        throw ValidationError("policy: net expects embedding dimension " + std::to_string(net->input_dim) +
                              ", provider '" + provider->describe() + "' has " + std::to_string(provider->dim()));
      }
      for (const auto& d : pool.models()) {
        if (!net->encoder.index_of(d.id)) {
          throw ValidationError("policy: checkpoint has no embedding for pool model '" + d.id + "'");
        }
      }
    }
  }
};

/// Index of the best score; ties go to the lower blended price, then the
/// lexicographically smaller id.
inline size_t select_from_scores(std::span<const double> scores, std::span<const ModelDescriptor> candidates) {
  if (candidates.empty()) throw ValidationError("select: no candidates");
  if (scores.size() != candidates.size()) throw ContractError("select: score count does not match candidates");
  size_t best = 0;
  for (size_t i = 1; i < scores.size(); ++i) {
    const double a = scores[i];
    const double b = scores[best];
    if (a > b) {
      best = i;
    } else if (a == b) {
      const double pa = candidates[i].blended_price();
      const double pb = candidates[best].blended_price();
      if (pa < pb || (pa == pb && candidates[i].id < candidates[best].id)) best = i;
    }
  }
  return best;
}

/// Per-episode routing state: the random stream and the episode-level cache.
class Router {
 public:
  Router(const Policy& policy, const ModelPool& pool, uint64_t episode_seed)
      : policy_(policy), pool_(&pool), rng_(derive_seed(derive_seed(policy.seed, "router"), episode_seed)) {
    policy.validate(pool);
    if (policy.uses_estimator()) {
      candidate_z_ = candidate_embeddings(*policy.net, pool.models());
    }
  }

  [[nodiscard]] const Policy& policy() const noexcept { return policy_; }

  /// Needs a serialized history only for estimator-backed policies.
  [[nodiscard]] bool needs_history(size_t t) const {
    return policy_.kind == PolicyKind::learned || (policy_.kind == PolicyKind::episode_level && t == 0);
  }

  std::string select(const HistoryText* history) {
    const auto& models = pool_->models();
    switch (policy_.kind) {
      case PolicyKind::random: return models[rng_.below(models.size())].id;
      case PolicyKind::single_model: return policy_.model_id;
      case PolicyKind::episode_level:
        if (cached_) return *cached_;
        cached_ = select_learned(history);
        return *cached_;
      case PolicyKind::learned: return select_learned(history);
    }
    throw InvariantError("select: unknown policy kind");
  }

  /// Predicted outcome for every pool model, in pool order.
  std::vector<double> scores(const HistoryText& history) {
    if (!policy_.uses_estimator()) throw ValidationError("scores: policy has no estimator");
    const Vector z_x = embed_history(*policy_.provider, history);
    return score_candidates(*policy_.net, z_x, candidate_z_);
  }

 private:
  std::string select_learned(const HistoryText* history) {
    if (!history) throw InvariantError("select: learned policy needs a history");
    const auto s = scores(*history);
    return pool_->models()[select_from_scores(s, pool_->models())].id;
  }

  Policy policy_;
  const ModelPool* pool_;
  Rng rng_;
  std::vector<Vector> candidate_z_;
  std::optional<std::string> cached_;
};

/// What the router serializes before turn t.
inline HistoryText routing_history(const Trajectory& traj, const EpisodeConfig& cfg, const TokenCounter& counter) {
  const std::span<const Turn> turns = cfg.route_history ? std::span<const Turn>(traj.turns) : std::span<const Turn>();
  return serialize_history(traj.task_text, turns, cfg.history_token_budget, counter);
}

/// Runs one episode. Routing and environment failures end the episode with
/// termination = aborted and the diagnostic in abort_reason.
inline Trajectory run_episode(const sim::WorldSpec& world, const sim::SkillMatrix& skills, const Policy& policy,
                              const ModelPool& pool, const Ruleset& ruleset, const EpisodeConfig& cfg,
                              uint64_t seed) {
  cfg.validate();
  sim::Environment env(world, skills);
  env.reset(seed);
  Router router(policy, pool, seed);
  TokenCounter counter = policy.uses_estimator() ? policy.provider->counter() : whitespace_counter();

  Trajectory traj;
  traj.task_id = world.name;
  traj.task_text = env.task_text();
  traj.seed = seed;
  double spent = 0.0;
  for (size_t t = 0;; ++t) {
    std::string model;
    try {
      std::optional<HistoryText> history;
      if (router.needs_history(t)) history = routing_history(traj, cfg, counter);
      model = router.select(history ? &*history : nullptr);
    } catch (const Error& e) {
      traj.termination = Termination::aborted;
      traj.abort_reason = std::string("routing failed at turn ") + std::to_string(t) + ": " + e.what();
      break;
    }
    sim::StepResult r;
    try {
      r = env.step(model);
    } catch (const Error& e) {
      traj.termination = Termination::aborted;
      traj.abort_reason = std::string("environment failed at turn ") + std::to_string(t) + ": " + e.what();
      break;
    }
    Turn turn;
    turn.t = t;
    turn.model_id = model;
    turn.raw_output = std::move(r.raw_output);
    turn.action = std::move(r.action);
    turn.observation = std::move(r.observation);
    turn.tokens_in = r.tokens_in;
    turn.tokens_out = r.tokens_out;
    turn.cost = turn_cost(pool.at(model), r.tokens_in, r.tokens_out);
    turn.errors = detect(turn.observation, ruleset);
    spent += turn.cost;
    append_turn(traj, std::move(turn));
    if (auto term = termination_after_turn(t, spent, r.done, cfg)) {
      traj.termination = *term;
      break;
    }
  }
  traj.terminal_score = env.terminal_score();
  return traj;
}

struct CollectSummary {
  size_t episodes = 0;
  size_t turns = 0;
  double total_cost = 0.0;

  void add(const Trajectory& t) {
    ++episodes;
    turns += t.length();
    total_cost += t.total_cost();
  }
};

inline uint64_t episode_seed(uint64_t seed, size_t index) { return derive_seed(seed, static_cast<uint64_t>(index)); }

/// Runs n episodes with seeds derived from (seed, index). Up to `jobs`
/// episodes run concurrently; `sink` always receives them in index order.
inline CollectSummary collect(const sim::WorldSpec& world, const sim::SkillMatrix& skills, const Policy& policy,
                              size_t n_episodes, const ModelPool& pool, const Ruleset& ruleset,
                              const EpisodeConfig& cfg, uint64_t seed,
                              const std::function<void(const Trajectory&)>& sink, size_t jobs = 1) {
  if (n_episodes == 0) throw ValidationError("collect: need at least one episode");
  policy.validate(pool);
  jobs = std::max<size_t>(1, jobs);
  CollectSummary summary;
  const size_t window = jobs * 8;
  std::vector<Trajectory> slot(window);
  for (size_t start = 0; start < n_episodes; start += window) {
    const size_t n = std::min(window, n_episodes - start);
    auto run = [&](size_t i) {
      slot[i] = run_episode(world, skills, policy, pool, ruleset, cfg, episode_seed(seed, start + i));
    };
    if (jobs == 1) {
      for (size_t i = 0; i < n; ++i) run(i);
    } else {
      std::vector<std::exception_ptr> failures(jobs);
      std::vector<std::thread> workers;
      for (size_t w = 0; w < jobs; ++w) {
        workers.emplace_back([&, w] {
          try {
            for (size_t i = w; i < n; i += jobs) run(i);
          } catch (...) {
            failures[w] = std::current_exception();
          }
        });
      }
      for (auto& th : workers) th.join();
      for (auto& f : failures) {
        if (f) std::rethrow_exception(f);
      }
    }
    for (size_t i = 0; i < n; ++i) {
      sink(slot[i]);
      summary.add(slot[i]);
    }
  }
  return summary;
}

inline CollectSummary collect_to_file(const sim::WorldSpec& world, const sim::SkillMatrix& skills,
                                      const Policy& policy, size_t n_episodes, const ModelPool& pool,
                                      const Ruleset& ruleset, const EpisodeConfig& cfg, uint64_t seed,
                                      const std::filesystem::path& out, bool append = false, size_t jobs = 1) {
  JsonlWriter writer(out, append);
  return collect(world, skills, policy, n_episodes, pool, ruleset, cfg, seed,
                 [&](const Trajectory& t) { writer.write(t); }, jobs);
}

}  // namespace turnroute
