// Command-line driver: collect, train, evaluate, analyze, export-embeddings.

#include "turnroute/commands.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <sstream>

namespace {

using namespace turnroute;

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename T, typename Parse>
std::vector<T> parse_list(const std::string& s, const char* flag, Parse parse) {
  std::vector<T> out;
  for (const auto& item : split_list(s)) {
    try {
      out.push_back(parse(item));
    } catch (const std::exception&) {
      throw ConfigError(std::string(flag) + ": cannot parse '" + item + "'");
    }
  }
  return out;
}

struct Globals {
  std::string config;
  std::optional<uint64_t> seed;
  std::optional<std::string> output_dir;
  std::optional<std::string> provider;
  size_t jobs = 1;
};

Workspace workspace(const Globals& g) {
  RunConfig cfg = load_run_config(g.config);
  if (g.seed) cfg.seed = *g.seed;
  if (g.output_dir) cfg.output_dir = *g.output_dir;
  if (g.provider) cfg.provider = *g.provider;
  return Workspace(std::move(cfg));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cost-aware turn-level model router"};
  app.require_subcommand(1);
  Globals g;
  auto add_globals = [&](CLI::App* sub) {
    sub->add_option("-c,--config", g.config, "Run configuration (YAML)")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", g.seed, "Override the config seed");
    sub->add_option("--output-dir", g.output_dir, "Override the config output directory");
    sub->add_option("--provider", g.provider, "Embedding provider: hash or an http(s) URL");
    sub->add_option("-j,--jobs", g.jobs, "Concurrent episodes")->check(CLI::PositiveNumber);
  };

  // collect
  auto* collect_cmd = app.add_subcommand("collect", "Run episodes and write a JSONL trajectory log");
  add_globals(collect_cmd);
  CollectOptions copt;
  std::optional<std::string> collect_out;
  collect_cmd->add_option("--policy", copt.policy, "mix | random | single:<model-id>");
  collect_cmd->add_option("--episodes", copt.episodes, "Episode count (default from config)");
  collect_cmd->add_option("-o,--out", collect_out, "Output JSONL path");
  collect_cmd->add_flag("--append", copt.append, "Append to an existing log");

  // train
  auto* train_cmd = app.add_subcommand("train", "Fit the outcome estimator on trajectory logs");
  add_globals(train_cmd);
  TrainOptions topt;
  std::vector<std::string> train_logs;
  std::optional<std::string> train_out;
  std::optional<std::string> resume;
  train_cmd->add_option("--logs", train_logs, "JSONL logs (default: <output_dir>/logs/collect.jsonl)");
  train_cmd->add_option("-o,--out", train_out, "Checkpoint path");
  train_cmd->add_option("--resume", resume, "Start from this checkpoint")->check(CLI::ExistingFile);
  train_cmd->add_flag("--dry-run", topt.dry_run, "Build the dataset and check shapes; train 0 epochs");
  train_cmd->add_flag("--no-error-penalty", topt.no_error_penalty, "Ablation: penalty base = 0");
  train_cmd->add_flag("--no-history", topt.no_history, "Ablation: route on the task block only");
  train_cmd->add_flag("--hardcoded-model-encoder", topt.hardcoded_encoder,
                      "Ablation: raw attributes, residuals frozen at zero");
  train_cmd->add_flag("--ridge", topt.ridge, "Ablation: closed-form linear head instead of the MLP");

  // evaluate
  auto* eval_cmd = app.add_subcommand("evaluate", "Run policies and write a report bundle");
  add_globals(eval_cmd);
  EvaluateOptions eopt;
  std::optional<std::string> checkpoint;
  std::optional<std::string> eval_policies;
  std::string budget_scales = "1";
  std::optional<std::string> history_budgets;
  std::optional<std::string> pool_sizes;
  std::optional<std::string> eval_out;
  eval_cmd->add_option("--checkpoint", checkpoint, "Trained checkpoint")->check(CLI::ExistingFile);
  eval_cmd->add_option("--policies", eval_policies, "Comma list: learned,episode,random,single:<id>,single:*");
  eval_cmd->add_option("--episodes", eopt.episodes, "Episodes per run");
  eval_cmd->add_option("--runs", eopt.runs, "Independent runs");
  eval_cmd->add_option("--budget-scale", budget_scales, "Comma list of budget multipliers");
  eval_cmd->add_option("--history-budget", history_budgets, "Comma list of history token budgets");
  eval_cmd->add_option("--pool-size", pool_sizes, "Comma list of pool prefix sizes");
  eval_cmd->add_option("-o,--out", eval_out, "Report directory (default: <output_dir>/report)");

  // analyze
  auto* analyze_cmd = app.add_subcommand("analyze", "Build a report bundle from existing logs");
  add_globals(analyze_cmd);
  AnalyzeOptions aopt;
  std::vector<std::string> analyze_logs;
  std::string analyze_out;
  analyze_cmd->add_option("--logs", analyze_logs, "JSONL logs")->required();
  analyze_cmd->add_option("-o,--out", analyze_out, "Report directory")->required();

  // export-embeddings
  auto* export_cmd = app.add_subcommand("export-embeddings", "Write one 64-d embedding row per pool model");
  add_globals(export_cmd);
  std::string export_ckpt;
  std::string export_out;
  export_cmd->add_option("--checkpoint", export_ckpt, "Trained checkpoint")->required()->check(CLI::ExistingFile);
  export_cmd->add_option("-o,--out", export_out, "Output CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    Workspace ws = workspace(g);
    if (collect_cmd->parsed()) {
      if (collect_out) copt.out = *collect_out;
      copt.jobs = g.jobs;
      run_collect(ws, copt, std::cout);
    } else if (train_cmd->parsed()) {
      for (const auto& f : train_logs) topt.logs.emplace_back(f);
      if (train_out) topt.out = *train_out;
      if (resume) topt.resume = *resume;
      run_train(ws, topt, std::cout);
    } else if (eval_cmd->parsed()) {
      if (checkpoint) eopt.checkpoint = *checkpoint;
      if (eval_policies) eopt.policies = split_list(*eval_policies);
      eopt.budget_scales = parse_list<double>(budget_scales, "--budget-scale", [](const std::string& s) { return std::stod(s); });
      if (history_budgets) {
        eopt.history_budgets =
            parse_list<size_t>(*history_budgets, "--history-budget", [](const std::string& s) { return std::stoul(s); });
      }
      if (pool_sizes) {
        eopt.pool_sizes = parse_list<size_t>(*pool_sizes, "--pool-size", [](const std::string& s) { return std::stoul(s); });
      }
      if (eval_out) eopt.out = *eval_out;
      eopt.jobs = g.jobs;
      run_evaluate(ws, eopt, std::cout);
    } else if (analyze_cmd->parsed()) {
      for (const auto& f : analyze_logs) aopt.logs.emplace_back(f);
      aopt.out = analyze_out;
      run_analyze(ws, aopt, std::cout);
    } else if (export_cmd->parsed()) {
      run_export_embeddings(ws, export_ckpt, export_out, std::cout);
    }
  } catch (const Error& e) {
    std::cerr << "error (" << to_string(e.kind()) << "): " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const YAML::Exception& e) {
    std::cerr << "error (config): " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error (io): " << e.what() << "\n";
    return kExitIo;
  }
  return kExitOk;
}
