#pragma once

/**
 * Subcommand implementations behind the command-line tool: collect, train,
 * evaluate, analyze and export-embeddings. Each takes a resolved RunConfig
 * plus per-command options and writes human-readable progress to `out`.
 */

#include "analyze.hpp"
#include "checkpoint.hpp"
#include "common.hpp"
#include "dataset.hpp"
#include "jsonl.hpp"
#include "router.hpp"
#include "run_config.hpp"
#include "simenv.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace turnroute {

/// Process exit codes.
enum ExitCode : int {
  kExitOk = 0,
  kExitConfig = 2,   // config / validation
  kExitData = 3,     // data, contract, range, protocol, invariant
  kExitNumeric = 4,  // non-finite values
  kExitIo = 5,       // filesystem or provider transport
  kExitUsage = 64,   // bad command line
};

inline int exit_code_for(ErrorKind k) {
  switch (k) {
    case ErrorKind::config:
    case ErrorKind::validation: return kExitConfig;
    case ErrorKind::numeric: return kExitNumeric;
    case ErrorKind::io:
    case ErrorKind::transport: return kExitIo;
    case ErrorKind::data:
    case ErrorKind::contract:
    case ErrorKind::range:
    case ErrorKind::protocol:
    case ErrorKind::invariant: return kExitData;
  }
  return kExitData;
}

/// Display rendering for USD amounts (6 decimals); logs and CSVs keep full precision.
inline std::string format_usd(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "$%.6f", v);
  return buf;
}

inline std::string fixed4(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

inline std::string display_path(const std::filesystem::path& p) { return p.lexically_normal().string(); }

/// Everything loaded from the files a RunConfig names.
struct Workspace {
  RunConfig cfg;
  ModelPool pool;
  Ruleset ruleset;
  sim::World world;

  explicit Workspace(RunConfig c)
      : cfg(std::move(c)), pool(load_pool(cfg.pool)), ruleset(load_ruleset(cfg.ruleset)), world(sim::load_world(cfg.world)) {
    cfg.validate();
    world.skills.validate(pool);
    for (const auto& rule : world.spec.error_rules) {
      if (!ruleset.find(rule)) {
        throw ConfigError(cfg.world.string() + ": error rule '" + rule + "' is not in ruleset '" + ruleset.name() + "'");
      }
    }
  }
};

// ============================================================================
// collect
// ============================================================================

struct CollectOptions {
  /// "mix" (random plus single-model share), "random", or "single:<id>".
  std::string policy = "mix";
  std::optional<size_t> episodes;
  std::optional<std::filesystem::path> out;
  bool append = false;
  size_t jobs = 1;
};

struct CollectPlanItem {
  Policy policy;
  size_t episodes = 0;
  uint64_t seed = 0;
};

inline std::vector<CollectPlanItem> collect_plan(const Workspace& ws, const CollectOptions& opt) {
  const size_t n = opt.episodes.value_or(ws.cfg.collect.episodes);
  if (n == 0) throw ValidationError("collect: need at least one episode");
  const uint64_t seed = ws.cfg.seed;
  std::vector<CollectPlanItem> plan;
  if (opt.policy == "random") {
    plan.push_back({Policy::random(derive_seed(seed, "random-policy")), n, derive_seed(seed, "collect:random")});
  } else if (opt.policy.rfind("single:", 0) == 0) {
    const std::string id = opt.policy.substr(7);
    if (!ws.pool.contains(id)) throw ConfigError("collect: model '" + id + "' not in pool");
    plan.push_back({Policy::single_model(id), n, derive_seed(seed, "collect:single:" + id)});
  } else if (opt.policy == "mix") {
    const size_t m = ws.pool.size();
    const auto per_model =
        static_cast<size_t>(std::llround(static_cast<double>(n) * ws.cfg.collect.single_fraction / static_cast<double>(m)));
    const size_t n_single = std::min(n, per_model * m);
    if (n > n_single) {
      plan.push_back({Policy::random(derive_seed(seed, "random-policy")), n - n_single, derive_seed(seed, "collect:random")});
    }
    for (const auto& d : ws.pool.models()) {
      if (per_model > 0 && n_single > 0) {
        plan.push_back({Policy::single_model(d.id), n_single / m, derive_seed(seed, "collect:single:" + d.id)});
      }
    }
  } else {
    throw ConfigError("collect: unknown policy '" + opt.policy + "' (expected mix, random or single:<id>)");
  }
  return plan;
}

inline CollectSummary run_collect(const Workspace& ws, const CollectOptions& opt, std::ostream& out) {
  const auto path = opt.out.value_or(ws.cfg.output_dir / "logs" / "collect.jsonl");
  JsonlWriter writer(path, opt.append);
  CollectSummary total;
  for (const auto& item : collect_plan(ws, opt)) {
    const auto s = collect(ws.world.spec, ws.world.skills, item.policy, item.episodes, ws.pool, ws.ruleset,
                           ws.cfg.episode, item.seed, [&](const Trajectory& t) { writer.write(t); }, opt.jobs);
    out << "collect " << item.policy.label() << ": episodes " << s.episodes << ", turns " << s.turns << ", cost "
        << format_usd(s.total_cost) << "\n";
    total.episodes += s.episodes;
    total.turns += s.turns;
    total.total_cost += s.total_cost;
  }
  out << "collected " << total.episodes << " episodes, " << total.turns << " turns, total cost "
      << format_usd(total.total_cost) << " -> " << display_path(path) << "\n";
  return total;
}

// ============================================================================
// train
// ============================================================================

struct TrainOptions {
  std::vector<std::filesystem::path> logs;  // default: output_dir/logs/collect.jsonl
  std::optional<std::filesystem::path> out;  // checkpoint path
  std::optional<std::filesystem::path> resume;
  bool dry_run = false;
  bool no_error_penalty = false;
  bool no_history = false;
  bool hardcoded_encoder = false;
  bool ridge = false;
};

struct TrainOutcome {
  std::filesystem::path checkpoint;
  DatasetStats stats;
  size_t train_examples = 0;
  size_t val_examples = 0;
  std::vector<EpochRecord> history;
  size_t best_epoch = 0;
  double best_val_loss = 0.0;
  bool early_stopped = false;
};

inline std::string loss_history_csv(const std::vector<EpochRecord>& history) {
  std::string s = "epoch,learning_rate,train_loss,val_loss\n";
  for (const auto& r : history) {
    s += std::to_string(r.epoch) + "," + format_double(r.learning_rate) + "," + format_double(r.train_loss) + "," +
         format_double(r.val_loss) + "\n";
  }
  return s;
}

inline TrainOutcome run_train(const Workspace& ws, const TrainOptions& opt, std::ostream& out) {
  std::vector<std::filesystem::path> files = opt.logs;
  if (files.empty()) files.push_back(ws.cfg.output_dir / "logs" / "collect.jsonl");
  std::vector<Trajectory> logs;
  for (const auto& f : files) {
    auto part = read_jsonl(f);
    logs.insert(logs.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  if (logs.empty()) throw DataError("train: no trajectories in the given logs");

  auto provider = make_provider(ws.cfg);
  FeatureOptions features;
  features.route_history = !opt.no_history;
  features.history_token_budget = ws.cfg.episode.history_token_budget;
  features.hardcoded_encoder = opt.hardcoded_encoder;
  features.ridge = opt.ridge;
  features.error_penalty = !opt.no_error_penalty;

  TrainConfig tc = ws.cfg.train;
  tc.seed = ws.cfg.seed;
  std::optional<Checkpoint> resumed;
  if (opt.resume) {
    resumed = load_checkpoint(*opt.resume);
    check_compatible(*resumed, ws.pool, *provider);
    if (!(resumed->features == features)) {
      throw ValidationError("train: checkpoint field 'features' differs from the requested ablation flags");
    }
  }

  DatasetOptions dopt;
  dopt.penalty = ws.cfg.resolved_penalty();
  if (opt.no_error_penalty) dopt.penalty.base = 0.0;
  dopt.score_range = ws.world.spec.score_range;
  dopt.history_token_budget = features.history_token_budget;
  dopt.route_history = features.route_history;
  dopt.val_fraction = ws.cfg.val_fraction;
  dopt.split_seed = ws.cfg.seed;
  const std::vector<std::string> ids = resumed ? resumed->net.encoder.ids : ws.pool.ids();
  SplitDataset data = build_dataset(logs, ids, ws.ruleset, *provider, dopt);
  if (data.train.empty()) throw DataError("train: no usable training examples after filtering");
  if (data.val.empty()) throw DataError("train: validation split is empty; collect more episodes");

  TrainOutcome result;
  result.stats = data.stats;
  result.train_examples = data.train.size();
  result.val_examples = data.val.size();
  out << "dataset: " << data.stats.trajectories << " trajectories (" << data.stats.skipped << " skipped), "
      << result.train_examples << " train / " << result.val_examples << " val examples, "
      << data.stats.unique_histories << " unique histories, D = " << provider->dim() << "\n";

  RouterNet net = resumed ? resumed->net
                          : init_router_net(ids, provider->dim(), tc.hidden, tc.seed, tc.dropout, EncoderDims{},
                                            features.hardcoded_encoder);
  if (opt.dry_run) {
    const double v = dataset_mse(net, ws.pool, data.val);
    out << "dry run: " << parameters(net).size() << " parameter tensors, initial validation MSE "
        << format_double(v) << "; 0 epochs trained, nothing written\n";
    result.best_val_loss = v;
    return result;
  }

  if (features.ridge) {
    fit_ridge(net, ws.pool, data.train);
    const double v = dataset_mse(net, ws.pool, data.val);
    result.history.push_back({0, 0.0, dataset_mse(net, ws.pool, data.train), v});
    result.best_val_loss = v;
  } else {
    TrainResult tr = train(net, ws.pool, data.train, data.val, tc);
    net = std::move(tr.net);
    result.history = std::move(tr.history);
    result.best_epoch = tr.best_epoch;
    result.best_val_loss = tr.best_val_loss;
    result.early_stopped = tr.early_stopped;
  }

  Checkpoint ck{net, provider->describe(), features, tc, result.history};
  result.checkpoint = opt.out.value_or(ws.cfg.output_dir / "model" / "checkpoint.json");
  save_checkpoint(ck, result.checkpoint);
  detail::write_text(result.checkpoint.parent_path() / "loss_history.csv", loss_history_csv(result.history));
  const size_t last = result.history.empty() ? 0 : result.history.back().epoch;
  out << "best validation loss " << fixed4(result.best_val_loss) << " at epoch " << result.best_epoch
      << "; stopped after epoch " << last << (result.early_stopped ? " (early stop)" : "") << " -> "
      << display_path(result.checkpoint) << "\n";
  return result;
}

// ============================================================================
// evaluate
// ============================================================================

struct EvaluateOptions {
  std::optional<std::filesystem::path> checkpoint;
  std::optional<std::vector<std::string>> policies;
  std::optional<size_t> episodes;
  std::optional<size_t> runs;
  std::vector<double> budget_scales{1.0};
  std::vector<size_t> history_budgets;  // empty: the checkpoint's (or config's) budget
  std::vector<size_t> pool_sizes;       // empty: the full pool
  std::optional<std::filesystem::path> out;
  size_t jobs = 1;
};

inline uint64_t run_seed(uint64_t seed, size_t run) { return derive_seed(derive_seed(seed, "eval"), run); }

inline std::string group_slug(const EvalGroup& g) {
  std::string p = g.policy;
  for (auto& c : p) {
    if (c == ':' || c == '/' || c == '*') c = '_';
  }
  return p + "_b" + format_double(g.budget_scale) + "_h" + std::to_string(g.history_budget) + "_p" +
         std::to_string(g.pool_size);
}

inline std::vector<EvalGroup> run_evaluate(const Workspace& ws, const EvaluateOptions& opt, std::ostream& out) {
  const auto policies = opt.policies.value_or(ws.cfg.evaluate.policies);
  const size_t episodes = opt.episodes.value_or(ws.cfg.evaluate.episodes);
  const size_t runs = opt.runs.value_or(ws.cfg.evaluate.runs);
  if (episodes == 0 || runs == 0) throw ValidationError("evaluate: episodes and runs must be positive");
  if (opt.budget_scales.empty()) throw ValidationError("evaluate: need at least one budget scale");

  auto provider = make_provider(ws.cfg);
  std::optional<Checkpoint> ck;
  bool needs_net = false;
  for (const auto& p : policies) needs_net = needs_net || p == "learned" || p == "episode";
  if (needs_net) {
    if (!opt.checkpoint) throw ConfigError("evaluate: learned policies need --checkpoint");
    ck = load_checkpoint(*opt.checkpoint);
    check_compatible(*ck, ws.pool, *provider);
  }
  const size_t default_hb = ck ? ck->features.history_token_budget : ws.cfg.episode.history_token_budget;
  const std::vector<size_t> hbs = opt.history_budgets.empty() ? std::vector<size_t>{default_hb} : opt.history_budgets;
  const std::vector<size_t> sizes = opt.pool_sizes.empty() ? std::vector<size_t>{ws.pool.size()} : opt.pool_sizes;

  const auto dir = opt.out.value_or(ws.cfg.output_dir / "report");
  std::vector<EvalGroup> groups;
  for (size_t k : sizes) {
    const ModelPool pool = ws.pool.prefix(k);
    std::vector<std::string> expanded;
    for (const auto& p : policies) {
      if (p == "single:*") {
        for (const auto& d : pool.models()) expanded.push_back("single:" + d.id);
      } else {
        expanded.push_back(p);
      }
    }
    for (double scale : opt.budget_scales) {
      if (!(scale > 0.0)) throw ValidationError("evaluate: budget scales must be positive");
      for (size_t hb : hbs) {
        EpisodeConfig ec = ws.cfg.episode;
        ec.budget *= scale;
        ec.history_token_budget = hb;
        if (ck) ec.route_history = ck->features.route_history;
        for (const auto& label : expanded) {
          Policy policy;
          if (label == "learned") {
            policy = Policy::learned(ck->net, *provider);
          } else if (label == "episode") {
            policy = Policy::episode_level(ck->net, *provider);
          } else if (label == "random") {
            policy = Policy::random(derive_seed(ws.cfg.seed, "eval-random-policy"));
          } else if (label.rfind("single:", 0) == 0) {
            policy = Policy::single_model(label.substr(7));
          } else {
            throw ConfigError("evaluate: unknown policy '" + label + "'");
          }
          EvalGroup g{label, scale, hb, k, {}};
          for (size_t r = 0; r < runs; ++r) {
            Run run;
            JsonlWriter writer(dir / "logs" / (group_slug(g) + ".run" + std::to_string(r) + ".jsonl"));
            collect(ws.world.spec, ws.world.skills, policy, episodes, pool, ws.ruleset, ec, run_seed(ws.cfg.seed, r),
                    [&](const Trajectory& t) {
                      writer.write(t);
                      run.push_back(t);
                    },
                    opt.jobs);
            g.runs.push_back(std::move(run));
          }
          const EvalSummary s = summarize(g.runs, ws.world.spec.score_range);
          out << label << " (budget x" << format_double(scale) << ", history " << hb << ", pool " << k
              << "): score " << fixed4(s.mean_score) << " +- " << fixed4(s.score_std) << ", cost "
              << format_usd(s.total_cost) << ", turns " << fixed4(s.mean_turns) << "\n";
          groups.push_back(std::move(g));
        }
      }
    }
  }

  ReportOptions ropt{ws.world.spec.score_range, ws.cfg.evaluate.n_phases, ws.pool.ids()};
  ojson meta{{"config_digest", hex64(ws.cfg.digest())},
             {"seed", ws.cfg.seed},
             {"run_seeds", ojson::array()},
             {"pool_digest", hex64(ws.pool.digest())},
             {"provider", provider->describe()},
             {"episodes_per_run", episodes},
             {"runs", runs},
             {"reference", {{"stay_after_error", 0.902}, {"top_action_lift", 1.66}}}};
  for (size_t r = 0; r < runs; ++r) meta["run_seeds"].push_back(run_seed(ws.cfg.seed, r));
  if (ck) meta["checkpoint_features"] = checkpoint_payload(*ck)["features"];
  write_report(dir, groups, ropt, meta.dump(2) + "\n");
  out << "report -> " << display_path(dir) << "\n";
  return groups;
}

// ============================================================================
// analyze
// ============================================================================

struct AnalyzeOptions {
  /// Log files; "<slug>.run<r>.jsonl" files sharing a slug form one group.
  std::vector<std::filesystem::path> logs;
  std::filesystem::path out;
};

inline std::vector<EvalGroup> run_analyze(const Workspace& ws, const AnalyzeOptions& opt, std::ostream& out) {
  if (opt.logs.empty()) throw ValidationError("analyze: no log files given");
  std::vector<EvalGroup> groups;
  for (const auto& f : opt.logs) {
    std::string stem = f.stem().string();
    const auto pos = stem.rfind(".run");
    const std::string label = pos == std::string::npos ? stem : stem.substr(0, pos);
    auto it = std::find_if(groups.begin(), groups.end(), [&](const EvalGroup& g) { return g.policy == label; });
    if (it == groups.end()) {
      groups.push_back(EvalGroup{label, 1.0, ws.cfg.episode.history_token_budget, ws.pool.size(), {}});
      it = groups.end() - 1;
    }
    Run run = read_jsonl(f);
    if (run.empty()) throw ValidationError("analyze: log '" + f.string() + "' is empty");
    it->runs.push_back(std::move(run));
  }
  ReportOptions ropt{ws.world.spec.score_range, ws.cfg.evaluate.n_phases, ws.pool.ids()};
  ojson meta{{"config_digest", hex64(ws.cfg.digest())}, {"seed", ws.cfg.seed}, {"pool_digest", hex64(ws.pool.digest())}};
  meta["inputs"] = ojson::array();
  for (const auto& f : opt.logs) meta["inputs"].push_back(f.filename().string());
  write_report(opt.out, groups, ropt, meta.dump(2) + "\n");
  for (const auto& g : groups) {
    const auto s = summarize(g.runs, ws.world.spec.score_range);
    out << g.policy << ": score " << fixed4(s.mean_score) << ", cost " << format_usd(s.total_cost)
        << ", episodes " << s.episodes << "\n";
  }
  out << "report -> " << display_path(opt.out) << "\n";
  return groups;
}

// ============================================================================
// export-embeddings
// ============================================================================

inline void run_export_embeddings(const Workspace& ws, const std::filesystem::path& checkpoint,
                                  const std::filesystem::path& out_csv, std::ostream& out) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  for (const auto& d : ws.pool.models()) {
    if (!ck.net.encoder.index_of(d.id)) {
      throw ValidationError("checkpoint field 'model_ids' has no entry for pool model '" + d.id + "'");
    }
  }
  if (out_csv.has_parent_path()) std::filesystem::create_directories(out_csv.parent_path());
  detail::write_text(out_csv, model_embeddings_csv(ck.net, ws.pool));
  out << "wrote " << ws.pool.size() << " x " << ck.net.encoder.dims.out << " model embeddings -> " << display_path(out_csv)
      << "\n";
}

}  // namespace turnroute
