#pragma once

/**
 * Run configuration: one YAML file naming the pool, ruleset, world and
 * provider plus episode, penalty, training, collection and evaluation
 * settings. Relative paths resolve against the config file's directory.
 *
 *   pool: ../data/pools/specialist-4.yaml
 *   ruleset: ../data/rulesets/scienceworld.yaml
 *   world: ../data/worlds/specialist-4.yaml
 *   provider: hash              # or http://host:port for an embedding sidecar
 *   embedding_dim: 1024         # hash provider only
 *   output_dir: ../runs/specialist-4
 *   seed: 7
 *   episode:  { budget: 2.0, t_max: 12, history_token_budget: 8192 }
 *   penalty:  { base: auto, p0: 0.3, p1: 0.7, w_min: 0.3, w_max: 1.0,
 *               betas: { low: 0.2, medium: 0.8, high: 1.0 } }
 *   train:    { learning_rate: 0.001, max_epochs: 100, patience: 3, ... }
 *   collect:  { episodes: 2000, single_fraction: 0.03 }
 *   evaluate: { episodes: 500, runs: 3, policies: [learned, random, "single:*"] }
 */

#include "common.hpp"
#include "encoding.hpp"
#include "episode.hpp"
#include "error_detect.hpp"
#include "estimator.hpp"
#include "model_pool.hpp"
#include "sidecar_provider.hpp"

#include <yaml-cpp/yaml.h>

#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

namespace turnroute {

struct CollectSettings {
  size_t episodes = 2000;
  /// Share of episodes run by single-model policies, split evenly over the pool.
  double single_fraction = 0.03;
};

struct EvalSettings {
  size_t episodes = 100;
  size_t runs = 3;
  std::vector<std::string> policies{"learned", "random", "single:*"};
  size_t n_phases = 3;
};

struct RunConfig {
  std::filesystem::path source;  // config file, empty when built in code
  std::filesystem::path pool;
  std::filesystem::path ruleset;
  std::filesystem::path world;
  std::filesystem::path output_dir = "runs";
  std::string provider = "hash";
  size_t embedding_dim = kDefaultEmbeddingDim;
  uint64_t seed = 0;
  EpisodeConfig episode;
  PenaltyConfig penalty;
  bool penalty_base_auto = true;  // base = 1 / t_max
  TrainConfig train;
  double val_fraction = 0.2;
  CollectSettings collect;
  EvalSettings evaluate;
  std::string digest_source;  // raw config text, folded into digest()

  /// Penalty settings with the horizon (and automatic base) applied.
  [[nodiscard]] PenaltyConfig resolved_penalty() const {
    PenaltyConfig p = penalty;
    p.t_max = episode.t_max;
    if (penalty_base_auto) p.base = 1.0 / static_cast<double>(episode.t_max);
    return p;
  }

  [[nodiscard]] uint64_t digest() const {
    uint64_t h = fnv1a64(digest_source);
    return fnv1a64(std::to_string(seed), h);
  }

  void validate() const {
    for (const auto* p : {&pool, &ruleset, &world}) {
      if (p->empty()) throw ConfigError("config: pool, ruleset and world paths are required");
      if (!std::filesystem::exists(*p)) throw ConfigError("config: file not found: " + p->string());
    }
    episode.validate();
    resolved_penalty().validate();
    train.validate();
    if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ConfigError("config: val_fraction must be in (0, 1)");
    if (collect.episodes == 0) throw ConfigError("config: collect.episodes must be positive");
    if (!(collect.single_fraction >= 0.0 && collect.single_fraction <= 1.0)) {
      throw ConfigError("config: collect.single_fraction must be in [0, 1]");
    }
    if (evaluate.episodes == 0 || evaluate.runs == 0) throw ConfigError("config: evaluate episodes and runs must be positive");
    if (evaluate.n_phases == 0) throw ConfigError("config: evaluate.n_phases must be positive");
    if (provider != "hash" && provider.rfind("http://", 0) != 0 && provider.rfind("https://", 0) != 0) {
      throw ConfigError("config: provider must be 'hash' or an http(s) URL, got '" + provider + "'");
    }
  }
};

namespace detail {

template <typename T>
void read_opt(const YAML::Node& node, const char* key, T& out, const std::filesystem::path& path) {
  if (node && node[key]) out = yaml_get<T>(node, key, path);
}

inline void reject_unknown(const YAML::Node& node, std::initializer_list<const char*> known,
                           const std::filesystem::path& path, const std::string& section) {
  if (!node) return;
  if (!node.IsMap()) throw ConfigError(yaml_where(path, node.Mark()) + ": '" + section + "' must be a map");
  for (const auto& kv : node) {
    const auto key = kv.first.as<std::string>();
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) {
      throw ConfigError(yaml_where(path, kv.first.Mark()) + ": unknown key '" + key + "'" +
                        (section.empty() ? "" : " in '" + section + "'"));
    }
  }
}

}  // namespace detail

inline RunConfig load_run_config(const std::filesystem::path& path) {
  const YAML::Node root = detail::load_yaml_file(path);
  using detail::read_opt;
  detail::reject_unknown(root,
                         {"pool", "ruleset", "world", "provider", "embedding_dim", "output_dir", "seed", "episode",
                          "penalty", "train", "collect", "evaluate"},
                         path, "");
  RunConfig c;
  c.source = path;
  {
    std::ifstream in(path);
    std::stringstream buf;
    buf << in.rdbuf();
    c.digest_source = buf.str();
  }
  const auto base = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
  auto resolve = [&](const char* key, std::filesystem::path& out) {
    if (root[key]) out = base / detail::yaml_get<std::string>(root, key, path);
  };
  resolve("pool", c.pool);
  resolve("ruleset", c.ruleset);
  resolve("world", c.world);
  resolve("output_dir", c.output_dir);
  read_opt(root, "provider", c.provider, path);
  read_opt(root, "embedding_dim", c.embedding_dim, path);
  read_opt(root, "seed", c.seed, path);

  const YAML::Node ep = root["episode"];
  detail::reject_unknown(ep, {"budget", "t_max", "history_token_budget"}, path, "episode");
  read_opt(ep, "budget", c.episode.budget, path);
  read_opt(ep, "t_max", c.episode.t_max, path);
  read_opt(ep, "history_token_budget", c.episode.history_token_budget, path);

  const YAML::Node pen = root["penalty"];
  detail::reject_unknown(pen, {"base", "p0", "p1", "w_min", "w_max", "betas"}, path, "penalty");
  if (pen && pen["base"] && pen["base"].as<std::string>() != "auto") {
    c.penalty.base = detail::yaml_get<double>(pen, "base", path);
    c.penalty_base_auto = false;
  }
  read_opt(pen, "p0", c.penalty.p0, path);
  read_opt(pen, "p1", c.penalty.p1, path);
  read_opt(pen, "w_min", c.penalty.w_min, path);
  read_opt(pen, "w_max", c.penalty.w_max, path);
  if (pen && pen["betas"]) {
    const YAML::Node b = pen["betas"];
    detail::reject_unknown(b, {"low", "medium", "high"}, path, "penalty.betas");
    read_opt(b, "low", c.penalty.betas[0], path);
    read_opt(b, "medium", c.penalty.betas[1], path);
    read_opt(b, "high", c.penalty.betas[2], path);
  }

  const YAML::Node tr = root["train"];
  detail::reject_unknown(tr,
                         {"learning_rate", "weight_decay", "batch_size", "max_epochs", "patience", "residual_l2",
                          "dropout", "hidden", "lr_floor", "val_fraction"},
                         path, "train");
  read_opt(tr, "learning_rate", c.train.learning_rate, path);
  read_opt(tr, "weight_decay", c.train.weight_decay, path);
  read_opt(tr, "batch_size", c.train.batch_size, path);
  read_opt(tr, "max_epochs", c.train.max_epochs, path);
  read_opt(tr, "patience", c.train.patience, path);
  read_opt(tr, "residual_l2", c.train.residual_l2, path);
  read_opt(tr, "dropout", c.train.dropout, path);
  read_opt(tr, "hidden", c.train.hidden, path);
  read_opt(tr, "lr_floor", c.train.lr_floor, path);
  read_opt(tr, "val_fraction", c.val_fraction, path);

  const YAML::Node co = root["collect"];
  detail::reject_unknown(co, {"episodes", "single_fraction"}, path, "collect");
  read_opt(co, "episodes", c.collect.episodes, path);
  read_opt(co, "single_fraction", c.collect.single_fraction, path);

  const YAML::Node ev = root["evaluate"];
  detail::reject_unknown(ev, {"episodes", "runs", "policies", "n_phases"}, path, "evaluate");
  read_opt(ev, "episodes", c.evaluate.episodes, path);
  read_opt(ev, "runs", c.evaluate.runs, path);
  read_opt(ev, "policies", c.evaluate.policies, path);
  read_opt(ev, "n_phases", c.evaluate.n_phases, path);

  try {
    c.validate();
  } catch (const Error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return c;
}

inline std::unique_ptr<EmbeddingProvider> make_provider(const RunConfig& cfg) {
  if (cfg.provider == "hash") return std::make_unique<HashProvider>(cfg.embedding_dim);
  return std::make_unique<SidecarProvider>(cfg.provider);
}

}  // namespace turnroute
