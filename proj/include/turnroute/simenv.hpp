#pragma once

/**
 * Seeded synthetic multi-turn environment.
 *
 * A world is an ordered list of subgoals, each tagged with an action type.
 * Invoking model m on the current subgoal succeeds with probability
 * P[m][type]; a failure emits an error observation (firing one named rule)
 * with probability `error_prob_on_failure`, otherwise a neutral failure
 * narration. The terminal score maps completed/total affinely into the
 * declared score range.
 *
 * Every step draws the same number of variates in the same order
 * (success, error, rule choice, output tokens), so (world, skills, seed)
 * determines a rollout completely.
 */

#include "common.hpp"
#include "episode.hpp"
#include "error_detect.hpp"
#include "model_pool.hpp"

#include <yaml-cpp/yaml.h>

#include <array>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace turnroute::sim {

enum class ActionType { navigate = 0, manipulate = 1, query = 2, compute = 3 };
inline constexpr size_t kActionTypes = 4;

inline const char* to_string(ActionType a) {
  switch (a) {
    case ActionType::navigate: return "navigate";
    case ActionType::manipulate: return "manipulate";
    case ActionType::query: return "query";
    case ActionType::compute: return "compute";
  }
  return "navigate";
}

inline std::optional<ActionType> parse_action_type(std::string_view s) {
  for (size_t i = 0; i < kActionTypes; ++i) {
    if (s == to_string(static_cast<ActionType>(i))) return static_cast<ActionType>(i);
  }
  return std::nullopt;
}

struct Subgoal {
  ActionType type = ActionType::navigate;
  std::string description;  // imperative phrase, e.g. "open the greenhouse door"
};

struct WorldSpec {
  std::string name;
  std::string task_text;
  std::vector<Subgoal> subgoals;
  double error_prob_on_failure = 0.0;
  std::vector<std::string> error_rules;               // rule names emitted on failure
  std::map<std::string, std::string> error_messages;  // rule name -> observation text
  ScoreRange score_range{0.0, 1.0};

  void validate() const {
    if (subgoals.empty()) throw ValidationError("world '" + name + "': needs at least one subgoal");
    if (!(error_prob_on_failure >= 0.0 && error_prob_on_failure <= 1.0)) {
      throw ValidationError("world '" + name + "': error_prob_on_failure must be in [0, 1]");
    }
    if (error_prob_on_failure > 0.0 && error_rules.empty()) {
      throw ValidationError("world '" + name + "': error probability set but no error rules listed");
    }
    for (const auto& r : error_rules) {
      if (!error_messages.count(r)) throw ValidationError("world '" + name + "': no message for rule '" + r + "'");
    }
    if (!(score_range.lo < score_range.hi)) throw ValidationError("world '" + name + "': score range needs lo < hi");
  }
};

struct TokenModel {
  double base = 1000.0;    // input tokens at turn 0
  double growth = 200.0;   // extra input tokens per elapsed turn
  double out_mean = 200.0; // output tokens drawn uniformly in [0.5, 1.5] x mean

  [[nodiscard]] uint64_t tokens_in(size_t turn) const {
    return static_cast<uint64_t>(std::llround(base + growth * static_cast<double>(turn)));
  }
};

struct SkillMatrix {
  std::map<std::string, std::array<double, kActionTypes>> success;
  std::map<std::string, TokenModel> tokens;

  [[nodiscard]] double p(const std::string& model, ActionType a) const {
    auto it = success.find(model);
    if (it == success.end()) throw ValidationError("skill matrix has no entry for model '" + model + "'");
    return it->second[static_cast<size_t>(a)];
  }

  [[nodiscard]] const TokenModel& token_model(const std::string& model) const {
    auto it = tokens.find(model);
    if (it == tokens.end()) throw ValidationError("skill matrix has no token model for '" + model + "'");
    return it->second;
  }

  void validate(const ModelPool& pool) const {
    for (const auto& d : pool.models()) {
      auto it = success.find(d.id);
      if (it == success.end()) throw ValidationError("skill matrix missing model '" + d.id + "'");
      for (double v : it->second) {
        if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("skill for '" + d.id + "' outside [0, 1]");
      }
      const TokenModel& tm = token_model(d.id);
      if (!(tm.base > 0.0) || !(tm.growth >= 0.0) || !(tm.out_mean > 0.0)) {
        throw ValidationError("token model for '" + d.id + "' must have positive parameters");
      }
    }
  }
};

struct StepResult {
  std::string raw_output;
  std::string action;
  std::string observation;
  uint64_t tokens_in = 0;
  uint64_t tokens_out = 0;
  bool done = false;
  bool success = false;
  std::optional<std::string> emitted_rule;  // rule the observation was built to fire
};

struct WorldState {
  size_t completed = 0;
  size_t turn = 0;
  bool done = false;
};

inline double terminal_score(const WorldState& state, size_t total_subgoals, ScoreRange range) {
  const double frac = static_cast<double>(state.completed) / static_cast<double>(total_subgoals);
  return range.denormalize(frac);
}

/// One episode of a world. Exclusively owned by its runner.
class Environment {
 public:
  Environment(const WorldSpec& world, const SkillMatrix& skills) : world_(&world), skills_(&skills) {
    world.validate();
  }

  void reset(uint64_t seed) {
    state_ = {};
    rng_.emplace(derive_seed(seed, "env"));
  }

  [[nodiscard]] const WorldState& state() const noexcept { return state_; }
  [[nodiscard]] const WorldSpec& world() const noexcept { return *world_; }
  [[nodiscard]] std::string task_text() const { return world_->task_text; }

  [[nodiscard]] const Subgoal& current_subgoal() const { return world_->subgoals.at(state_.completed); }

  StepResult step(const std::string& model_id) {
    if (!rng_) throw ProtocolError("step before reset");
    if (state_.done) throw ProtocolError("step after episode completion");
    const Subgoal& goal = current_subgoal();
    const std::string verb = to_string(goal.type);
    const double p = skills_->p(model_id, goal.type);
    const TokenModel& tm = skills_->token_model(model_id);

    const double u_success = rng_->uniform();
    const double u_error = rng_->uniform();
    const size_t n_rules = world_->error_rules.size();
    const uint64_t rule_pick = n_rules > 0 ? rng_->below(n_rules) : rng_->next_u64() * 0;
    const auto lo = static_cast<int64_t>(std::llround(0.5 * tm.out_mean));
    const auto hi = static_cast<int64_t>(std::llround(1.5 * tm.out_mean));
    const int64_t out_tokens = rng_->between(std::max<int64_t>(1, lo), std::max<int64_t>(1, hi));

    StepResult r;
    r.action = verb + ": " + goal.description;
    r.raw_output = "I will " + verb + " next.\nAction: " + r.action;
    r.tokens_in = tm.tokens_in(state_.turn);
    r.tokens_out = static_cast<uint64_t>(out_tokens);
    const size_t N = world_->subgoals.size();
    if (u_success < p) {
      r.success = true;
      ++state_.completed;
      if (state_.completed == N) {
        r.observation = "You " + goal.description + ". All " + std::to_string(N) + " steps complete.";
        state_.done = true;
      } else {
        const Subgoal& next = world_->subgoals[state_.completed];
        r.observation = "You " + goal.description + ". Step " + std::to_string(state_.completed) + " of " +
                        std::to_string(N) + " complete. Next: " + to_string(next.type) + ": " +
                        next.description + ".";
      }
    } else if (n_rules > 0 && u_error < world_->error_prob_on_failure) {
      const std::string& rule = world_->error_rules[rule_pick];
      r.emitted_rule = rule;
      r.observation = world_->error_messages.at(rule) + " You still need to " + verb + ": " + goal.description + ".";
    } else {
      r.observation = "Nothing happens. You still need to " + verb + ": " + goal.description + ".";
    }
    ++state_.turn;
    r.done = state_.done;
    return r;
  }

  [[nodiscard]] double terminal_score() const {
    return sim::terminal_score(state_, world_->subgoals.size(), world_->score_range);
  }

 private:
  const WorldSpec* world_;
  const SkillMatrix* skills_;
  WorldState state_;
  std::optional<Rng> rng_;
};

// ============================================================================
// Oracle
// ============================================================================

struct OracleResult {
  std::vector<std::string> best_model;  // per subgoal
  double expected_score = 0.0;          // normalized to [0, 1]
  double standard_error = 0.0;
  size_t rollouts = 0;
};

/// Best model for an action type: highest success probability, ties to the
/// lower blended price, then the lexicographically smaller id.
inline std::string best_model_for(ActionType type, const SkillMatrix& skills, const ModelPool& pool) {
  const ModelDescriptor* best = nullptr;
  double best_p = -1.0;
  for (const auto& d : pool.models()) {
    const double p = skills.p(d.id, type);
    const bool better = p > best_p ||
                        (p == best_p && (d.blended_price() < best->blended_price() ||
                                         (d.blended_price() == best->blended_price() && d.id < best->id)));
    if (better) {
      best = &d;
      best_p = p;
    }
  }
  return best->id;
}

/// Normalized score of one rollout where `choose(state)` picks the model.
template <typename Chooser>
double rollout_score(const WorldSpec& world, const SkillMatrix& skills, const ModelPool& pool,
                     const EpisodeConfig& cfg, uint64_t seed, Chooser&& choose) {
  Environment env(world, skills);
  env.reset(seed);
  double spent = 0.0;
  for (size_t t = 0;; ++t) {
    const std::string model = choose(env.state());
    const StepResult r = env.step(model);
    spent += turn_cost(pool.at(model), r.tokens_in, r.tokens_out);
    if (termination_after_turn(t, spent, r.done, cfg)) break;
  }
  return world.score_range.normalize(env.terminal_score());
}

struct MonteCarloEstimate {
  double mean = 0.0;
  double standard_error = 0.0;
};

template <typename Chooser>
MonteCarloEstimate monte_carlo(const WorldSpec& world, const SkillMatrix& skills, const ModelPool& pool,
                               const EpisodeConfig& cfg, size_t n_rollouts, uint64_t seed, Chooser&& choose) {
  if (n_rollouts == 0) throw RangeError("monte carlo: need at least one rollout");
  double sum = 0.0;
  double sum_sq = 0.0;
  for (size_t i = 0; i < n_rollouts; ++i) {
    const double s = rollout_score(world, skills, pool, cfg, derive_seed(seed, i), choose);
    sum += s;
    sum_sq += s * s;
  }
  const double n = static_cast<double>(n_rollouts);
  const double mean = sum / n;
  const double var = n > 1 ? std::max(0.0, (sum_sq - n * mean * mean) / (n - 1)) : 0.0;
  return {mean, std::sqrt(var / n)};
}

inline OracleResult oracle(const WorldSpec& world, const SkillMatrix& skills, const ModelPool& pool,
                           const EpisodeConfig& cfg, size_t n_rollouts, uint64_t seed) {
  world.validate();
  skills.validate(pool);
  OracleResult out;
  for (const auto& g : world.subgoals) out.best_model.push_back(best_model_for(g.type, skills, pool));
  const auto est = monte_carlo(world, skills, pool, cfg, n_rollouts, seed,
                               [&](const WorldState& s) { return out.best_model[s.completed]; });
  out.expected_score = est.mean;
  out.standard_error = est.standard_error;
  out.rollouts = n_rollouts;
  return out;
}

/// Monte Carlo score of always using `model_id`.
inline MonteCarloEstimate single_model_score(const WorldSpec& world, const SkillMatrix& skills,
                                             const ModelPool& pool, const EpisodeConfig& cfg,
                                             const std::string& model_id, size_t n_rollouts, uint64_t seed) {
  return monte_carlo(world, skills, pool, cfg, n_rollouts, seed, [&](const WorldState&) { return model_id; });
}

// ============================================================================
// Loading and generation
// ============================================================================

struct World {
  WorldSpec spec;
  SkillMatrix skills;
};

/// World file:
///
///   name: specialist-4
///   task: "..."
///   score_range: [-100, 100]
///   error_prob_on_failure: 0.5
///   error_messages: { no_known_action: "No known action matches that input." }
///   subgoals:
///     - { type: navigate, description: "walk to the greenhouse" }
///   models:
///     model-id:
///       skills: { navigate: 0.9, manipulate: 0.2, query: 0.2, compute: 0.2 }
///       tokens: { base: 1500, growth: 400, out_mean: 250 }
///
/// Emitted rules are the keys of error_messages, in file order.
inline World load_world(const std::filesystem::path& path) {
  const YAML::Node root = detail::load_yaml_file(path);
  World w;
  WorldSpec& s = w.spec;
  s.name = detail::yaml_get<std::string>(root, "name", path);
  s.task_text = detail::yaml_get<std::string>(root, "task", path);
  s.error_prob_on_failure = root["error_prob_on_failure"]
                                ? detail::yaml_get<double>(root, "error_prob_on_failure", path)
                                : 0.0;
  if (root["score_range"]) {
    const auto r = detail::yaml_get<std::vector<double>>(root, "score_range", path);
    if (r.size() != 2) throw ConfigError(detail::yaml_where(path, root["score_range"].Mark()) + ": score_range needs two values");
    s.score_range = {r[0], r[1]};
  }
  if (const YAML::Node msgs = root["error_messages"]) {
    for (const auto& kv : msgs) {
      const auto rule = kv.first.as<std::string>();
      s.error_rules.push_back(rule);
      s.error_messages[rule] = kv.second.as<std::string>();
    }
  }
  const YAML::Node goals = root["subgoals"];
  if (!goals || !goals.IsSequence()) throw ConfigError(detail::yaml_where(path, root.Mark()) + ": expected a 'subgoals' list");
  for (const auto& g : goals) {
    const auto type = detail::yaml_get<std::string>(g, "type", path);
    auto parsed = parse_action_type(type);
    if (!parsed) throw ConfigError(detail::yaml_where(path, g["type"].Mark()) + ": unknown action type '" + type + "'");
    s.subgoals.push_back({*parsed, detail::yaml_get<std::string>(g, "description", path)});
  }
  const YAML::Node models = root["models"];
  if (!models || !models.IsMap()) throw ConfigError(detail::yaml_where(path, root.Mark()) + ": expected a 'models' map");
  for (const auto& kv : models) {
    const auto id = kv.first.as<std::string>();
    const YAML::Node m = kv.second;
    std::array<double, kActionTypes> probs{};
    const YAML::Node sk = m["skills"];
    if (!sk) throw ConfigError(detail::yaml_where(path, m.Mark()) + ": model '" + id + "' needs 'skills'");
    for (size_t a = 0; a < kActionTypes; ++a) {
      probs[a] = detail::yaml_get<double>(sk, to_string(static_cast<ActionType>(a)), path);
    }
    w.skills.success[id] = probs;
    TokenModel tm;
    if (const YAML::Node tk = m["tokens"]) {
      tm.base = detail::yaml_get<double>(tk, "base", path);
      tm.growth = detail::yaml_get<double>(tk, "growth", path);
      tm.out_mean = detail::yaml_get<double>(tk, "out_mean", path);
    }
    w.skills.tokens[id] = tm;
  }
  try {
    s.validate();
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  return w;
}

/// Random world for property tests. Error messages are taken from `messages`
/// (rule name -> text); success probabilities are uniform in [0.05, 0.95].
inline World generate_world(uint64_t seed, const ModelPool& pool,
                            const std::map<std::string, std::string>& messages) {
  static constexpr std::array<const char*, 12> kObjects = {
      "the red beaker", "the brass key", "the seed tray", "the north door", "the thermometer", "the notebook",
      "the copper wire", "the lab scale", "the water jug", "the old map", "the bunsen burner", "the glass prism"};
  Rng rng(derive_seed(seed, "world"));
  World w;
  WorldSpec& s = w.spec;
  s.name = "generated-" + std::to_string(seed);
  s.task_text = "Complete the generated procedure " + std::to_string(seed % 1000) + ".";
  const size_t n = 2 + rng.below(7);
  for (size_t i = 0; i < n; ++i) {
    const auto type = static_cast<ActionType>(rng.below(kActionTypes));
    s.subgoals.push_back({type, std::string("handle ") + kObjects[rng.below(kObjects.size())] + " (part " +
                                    std::to_string(i + 1) + ")"});
  }
  for (const auto& [rule, text] : messages) {
    s.error_rules.push_back(rule);
    s.error_messages[rule] = text;
  }
  s.error_prob_on_failure = s.error_rules.empty() ? 0.0 : rng.uniform(0.0, 1.0);
  s.score_range = rng.bernoulli(0.5) ? ScoreRange{0.0, 1.0} : ScoreRange{-100.0, 100.0};
  for (const auto& d : pool.models()) {
    std::array<double, kActionTypes> probs{};
    for (auto& p : probs) p = rng.uniform(0.05, 0.95);
    w.skills.success[d.id] = probs;
    w.skills.tokens[d.id] = TokenModel{rng.uniform(500, 4000), rng.uniform(0, 800), rng.uniform(50, 800)};
  }
  return w;
}

}  // namespace turnroute::sim
