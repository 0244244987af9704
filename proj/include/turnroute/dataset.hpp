#pragma once

/**
 * Training-set construction from trajectory logs: re-detect errors, build
 * penalized per-turn targets, serialize and embed every routing history.
 * Identical history texts share one embedding column.
 */

#include "common.hpp"
#include "encoding.hpp"
#include "episode.hpp"
#include "error_detect.hpp"
#include "estimator.hpp"
#include "log.hpp"
#include "router.hpp"
#include "trajectory.hpp"

#include <string>
#include <unordered_map>
#include <vector>

namespace turnroute {

struct DatasetOptions {
  PenaltyConfig penalty;
  ScoreRange score_range;
  size_t history_token_budget = kDefaultHistoryBudget;
  bool route_history = true;
  double val_fraction = 0.2;
  uint64_t split_seed = 0;
  size_t embed_batch = 64;
};

struct DatasetStats {
  size_t trajectories = 0;
  size_t skipped = 0;  // aborted or outside the pool
  size_t train_trajectories = 0;
  size_t val_trajectories = 0;
  size_t unique_histories = 0;
};

struct SplitDataset {
  Dataset train;
  Dataset val;
  DatasetStats stats;
};

/// Whole trajectories go to validation when a hash of their seed falls below
/// val_fraction, so the split does not depend on log order.
inline bool in_validation(uint64_t traj_seed, const DatasetOptions& opt) {
  const uint64_t h = splitmix64(traj_seed ^ derive_seed(opt.split_seed, "split"));
  return static_cast<double>(h >> 11) * 0x1.0p-53 < opt.val_fraction;
}

namespace detail {

class DatasetBuilder {
 public:
  DatasetBuilder(EmbeddingProvider& provider, size_t batch) : provider_(&provider), batch_(batch) {}

  size_t intern(std::string text) {
    auto [it, inserted] = index_.emplace(text, texts_.size());
    if (inserted) texts_.push_back(std::move(text));
    return it->second;
  }

  void add(size_t history, size_t model, double target) { examples_.push_back({history, model, target}); }

  Dataset finish() {
    Dataset d;
    d.histories.resize(static_cast<Eigen::Index>(provider_->dim()), static_cast<Eigen::Index>(texts_.size()));
    for (size_t start = 0; start < texts_.size(); start += batch_) {
      const size_t n = std::min(batch_, texts_.size() - start);
      const auto vecs = provider_->embed(std::span<const std::string>(texts_.data() + start, n));
      for (size_t j = 0; j < n; ++j) d.histories.col(static_cast<Eigen::Index>(start + j)) = vecs[j];
    }
    d.examples = std::move(examples_);
    return d;
  }

  [[nodiscard]] size_t unique() const { return texts_.size(); }

 private:
  EmbeddingProvider* provider_;
  size_t batch_;
  std::unordered_map<std::string, size_t> index_;
  std::vector<std::string> texts_;
  std::vector<TrainExample> examples_;
};

}  // namespace detail

inline SplitDataset build_dataset(const std::vector<Trajectory>& logs, const std::vector<std::string>& model_ids,
                                  const Ruleset& ruleset, EmbeddingProvider& provider, const DatasetOptions& opt) {
  opt.penalty.validate();
  if (opt.embed_batch == 0) throw ValidationError("dataset: embed batch must be positive");
  if (!(opt.val_fraction >= 0.0 && opt.val_fraction < 1.0)) {
    throw ValidationError("dataset: val_fraction must be in [0, 1)");
  }
  std::unordered_map<std::string, size_t> model_index;
  for (size_t i = 0; i < model_ids.size(); ++i) model_index.emplace(model_ids[i], i);

  detail::DatasetBuilder train(provider, opt.embed_batch);
  detail::DatasetBuilder val(provider, opt.embed_batch);
  SplitDataset out;
  const TokenCounter counter = provider.counter();
  EpisodeConfig hist_cfg;
  hist_cfg.history_token_budget = opt.history_token_budget;
  hist_cfg.route_history = opt.route_history;

  for (const auto& raw : logs) {
    ++out.stats.trajectories;
    bool usable = raw.termination != Termination::aborted && !raw.turns.empty();
    for (const auto& turn : raw.turns) usable = usable && model_index.count(turn.model_id);
    if (!usable) {
      ++out.stats.skipped;
      continue;
    }
    const Trajectory traj = redetect(raw, ruleset);
    const std::vector<double> targets = outcome_targets(traj, opt.penalty, opt.score_range);
    const bool to_val = in_validation(traj.seed, opt);
    auto& builder = to_val ? val : train;
    ++(to_val ? out.stats.val_trajectories : out.stats.train_trajectories);
    Trajectory prefix;
    prefix.task_text = traj.task_text;
    for (size_t t = 0; t < traj.turns.size(); ++t) {
      const HistoryText h = routing_history(prefix, hist_cfg, counter);
      builder.add(builder.intern(h.text), model_index.at(traj.turns[t].model_id), targets[t]);
      prefix.turns.push_back(traj.turns[t]);
    }
  }
  if (out.stats.skipped > 0) {
    log_warning("dataset: skipped " + std::to_string(out.stats.skipped) + " aborted or out-of-pool trajectories");
  }
  out.stats.unique_histories = train.unique() + val.unique();
  out.train = train.finish();
  out.val = val.finish();
  return out;
}

}  // namespace turnroute
