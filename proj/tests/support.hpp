#pragma once

// Fixtures shared by the unit tests and the acceptance binary.

#include "turnroute/commands.hpp"

#include <unistd.h>

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#ifndef TURNROUTE_SOURCE_DIR
#error "TURNROUTE_SOURCE_DIR must be defined by the build"
#endif

namespace turnroute::testing {

inline std::filesystem::path source_dir() { return TURNROUTE_SOURCE_DIR; }
inline std::filesystem::path data_path(const std::string& rel) { return source_dir() / "data" / rel; }
inline std::filesystem::path config_path(const std::string& rel) { return source_dir() / "configs" / rel; }

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t") {
    static std::atomic<unsigned> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("turnroute-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  [[nodiscard]] const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

inline void write_file(const std::filesystem::path& p, const std::string& text) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << text;
}

inline ModelDescriptor descriptor(std::string id, double price_in, double price_out, uint64_t ctx = 128000,
                                  YearMonth cutoff = {2024, 6}, bool open = false) {
  ModelDescriptor d;
  d.id = std::move(id);
  d.context_limit = ctx;
  d.cutoff = cutoff;
  d.price_in = price_in;
  d.price_out = price_out;
  d.open_weights = open;
  return d;
}

inline ModelPool table2_pool() { return load_pool(data_path("pools/table2.yaml")); }
inline Ruleset hle_rules() { return load_ruleset(data_path("rulesets/hle.yaml")); }
inline Ruleset scienceworld_rules() { return load_ruleset(data_path("rulesets/scienceworld.yaml")); }

inline ErrorEvent event(Severity s, std::string rule = "r") { return {std::move(rule), "test", s}; }

/// Random trajectory over `pool` with awkward strings and arbitrary doubles,
/// for round-trip and target-recurrence properties.
inline Trajectory random_trajectory(Rng& rng, const ModelPool& pool, size_t max_turns = 12) {
  static const std::vector<std::string> kTexts = {
      "", "plain", "quote \" and backslash \\", "newline\nand\ttab", "unicode: caf\xc3\xa9 \xe2\x9c\x93",
      "NameError: name 'x' is not defined", "navigate: door", "control \x01 char", "{\"json\": [1, 2]}"};
  static const std::vector<std::string> kRules = {"python_name_error", "browse_403", "format_error"};
  Trajectory t;
  t.task_id = "task-" + std::to_string(rng.below(1000));
  t.task_text = kTexts[rng.below(kTexts.size())] + " task";
  t.seed = rng.next_u64();
  t.termination = static_cast<Termination>(rng.below(4));
  if (t.termination == Termination::aborted) t.abort_reason = "routing failed: " + kTexts[rng.below(kTexts.size())];
  t.terminal_score = rng.uniform();
  const size_t n = rng.below(max_turns + 1);
  for (size_t i = 0; i < n; ++i) {
    Turn turn;
    turn.t = i;
    turn.model_id = pool[rng.below(pool.size())].id;
    turn.raw_output = kTexts[rng.below(kTexts.size())];
    turn.action = kTexts[rng.below(kTexts.size())];
    turn.observation = kTexts[rng.below(kTexts.size())];
    turn.tokens_in = rng.below(2'000'000);
    turn.tokens_out = rng.below(100'000);
    // Arbitrary doubles exercise shortest round-trip rendering.
    turn.cost = rng.bernoulli(0.5) ? turn_cost(pool.at(turn.model_id), turn.tokens_in, turn.tokens_out)
                                   : rng.uniform() * std::pow(10.0, static_cast<double>(rng.between(-12, 3)));
    const size_t n_err = rng.below(3);
    for (size_t e = 0; e < n_err; ++e) {
      turn.errors.push_back({kRules[rng.below(kRules.size())], "cat", static_cast<Severity>(rng.below(3))});
    }
    t.turns.push_back(std::move(turn));
  }
  return t;
}

/// Budget and turn-limit invariants for one trajectory; empty when clean.
inline std::string budget_violation(const Trajectory& t, const EpisodeConfig& cfg) {
  if (t.turns.size() > cfg.t_max) return "T > t_max";
  if (t.turns.empty()) return "";
  double before_last = 0.0;
  for (size_t i = 0; i + 1 < t.turns.size(); ++i) before_last += t.turns[i].cost;
  if (!(before_last < cfg.budget)) return "cost before the final turn >= budget";
  const double overshoot = t.total_cost() - cfg.budget;
  if (overshoot > t.turns.back().cost) return "overshoot exceeds one turn's cost";
  return "";
}

/// Trajectory with the given model per turn. `errors[t]` marks an error turn;
/// `actions[t]` defaults to "navigate: x".
inline Trajectory scripted(const std::vector<std::string>& models, const std::vector<bool>& errors = {},
                           const std::vector<std::string>& actions = {}) {
  Trajectory t;
  t.task_text = "scripted";
  for (size_t i = 0; i < models.size(); ++i) {
    Turn turn;
    turn.t = i;
    turn.model_id = models[i];
    turn.action = i < actions.size() ? actions[i] : "navigate: x";
    turn.cost = 0.001 * static_cast<double>(i + 1);
    if (i < errors.size() && errors[i]) turn.errors.push_back(event(Severity::high, "no_known_action"));
    t.turns.push_back(std::move(turn));
  }
  return t;
}

// Brute-force recounts, written independently of analyze.hpp.

/// Switches as the number of maximal same-model runs minus one.
inline size_t brute_switches(const Trajectory& t) {
  if (t.turns.empty()) return 0;
  size_t segments = 0;
  size_t i = 0;
  while (i < t.turns.size()) {
    size_t j = i;
    while (j < t.turns.size() && t.turns[j].model_id == t.turns[i].model_id) ++j;
    ++segments;
    i = j;
  }
  return segments - 1;
}

/// Phase k holds turn t of T when k*T <= t*n < (k+1)*T.
inline size_t brute_phase(size_t t, size_t T, size_t n) {
  for (size_t k = 0; k < n; ++k) {
    if (k * T <= t * n && t * n < (k + 1) * T) return k;
  }
  return n;
}

struct BruteCounts {
  size_t error_turns = 0, switches = 0, recoveries = 0;
  std::map<std::pair<size_t, std::string>, size_t> phase;  // (phase, model)
  std::vector<size_t> phase_turns;
  std::map<std::pair<std::string, std::string>, size_t> joint;  // (model, action type)
  std::map<std::string, size_t> model, action;
  size_t total = 0;
};

inline BruteCounts brute_counts(const std::vector<Trajectory>& logs, size_t n_phases) {
  BruteCounts b;
  b.phase_turns.assign(n_phases, 0);
  for (const auto& tr : logs) {
    const size_t T = tr.turns.size();
    for (size_t t = 0; t < T; ++t) {
      const Turn& cur = tr.turns[t];
      if (t + 1 < T && !cur.errors.empty()) {
        ++b.error_turns;
        if (tr.turns[t + 1].model_id != cur.model_id) ++b.switches;
        if (tr.turns[t + 1].errors.empty()) ++b.recoveries;
      }
      const size_t k = brute_phase(t, T, n_phases);
      ++b.phase[{k, cur.model_id}];
      ++b.phase_turns[k];
      // Action type: leading word, lowercased, cut at ':', '(' or whitespace.
      std::string a;
      bool started = false;
      for (char c : cur.action) {
        const bool ws = c == ' ' || c == '\t' || c == '\n';
        if (!started && ws) continue;
        if (started && (ws || c == ':' || c == '(')) break;
        if (!started && (c == ':' || c == '(')) break;
        started = true;
        a += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      }
      ++b.joint[{cur.model_id, a}];
      ++b.model[cur.model_id];
      ++b.action[a];
      ++b.total;
    }
  }
  return b;
}

/// A run configuration over a shipped preset, rooted in `out_dir`.
inline RunConfig preset_config(const std::string& name, const std::filesystem::path& out_dir) {
  RunConfig cfg = load_run_config(config_path(name + ".yaml"));
  cfg.output_dir = out_dir;
  return cfg;
}

}  // namespace turnroute::testing
