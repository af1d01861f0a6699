#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "flexjudge/cli.hpp"

namespace {

using flexjudge::cli::RunConfig;

// Flags shared by every subcommand. Values given on the command line
// override the config file.
struct Flags {
  std::string config;
  std::optional<std::string> backend_url, template_id, order_mode, strategy, input, output, raw, gold, request_log,
      report_dir, drops, summary, model;
  std::optional<int> repeats, vote_k, budget_trials, trials;
  std::optional<std::size_t> n;
  std::optional<std::uint64_t> seed;
  std::optional<double> rescale_fraction, temperature;
  bool plot = false;
  bool no_continuation = false;
};

void add_flags(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "JSON run config");
  cmd->add_option("--backend-url", f.backend_url, "chat-completions base url, or mock:<script.json>");
  cmd->add_option("--template", f.template_id, "template id for tasks of its format");
  cmd->add_option("--repeats", f.repeats, "samples per task");
  cmd->add_option("--order-mode", f.order_mode, "fixed | random | reverse_both");
  cmd->add_option("--strategy", f.strategy, "repeat | vote | budget");
  cmd->add_option("--vote-k", f.vote_k, "samples per majority vote");
  cmd->add_option("--budget-trials", f.budget_trials, "budget forcing rounds");
  cmd->add_option("--n", f.n, "candidates per prompt for selection");
  cmd->add_option("--trials", f.trials, "selection trials");
  cmd->add_option("--seed", f.seed, "rng seed");
  cmd->add_option("--rescale-fraction", f.rescale_fraction, "share of seed records moved to the 1-5 scale");
  cmd->add_option("--model", f.model, "model name sent to the backend");
  cmd->add_option("--temperature", f.temperature, "judge sampling temperature");
  cmd->add_option("-i,--input", f.input, "input file");
  cmd->add_option("-o,--output", f.output, "output file");
  cmd->add_option("--raw", f.raw, "per-trial judgments file");
  cmd->add_option("--gold", f.gold, "tasks with human labels");
  cmd->add_option("--request-log", f.request_log, "request log (JSONL, appended)");
  cmd->add_option("--report-dir", f.report_dir, "report directory");
  cmd->add_option("--drops", f.drops, "DPO drop log");
  cmd->add_option("--summary", f.summary, "curation summary file");
  cmd->add_flag("--plot", f.plot, "write SVG plots");
  cmd->add_flag("--no-continuation", f.no_continuation, "backend cannot continue an assistant turn");
}

template <typename T, typename U>
void set(const std::optional<T>& v, U& field) {
  if (v) field = *v;
}

RunConfig resolve(const Flags& f) {
  RunConfig cfg;
  if (!f.config.empty()) flexjudge::cli::load_config(cfg, f.config);
  set(f.backend_url, cfg.backend_url);
  set(f.template_id, cfg.template_id);
  set(f.repeats, cfg.protocol.k);
  if (f.order_mode) cfg.protocol.order_mode = flexjudge::order_mode_from_string(*f.order_mode);
  set(f.strategy, cfg.strategy);
  set(f.vote_k, cfg.scaling.vote_k);
  set(f.budget_trials, cfg.scaling.budget_trials);
  set(f.n, cfg.selector.n);
  set(f.trials, cfg.selector.trials);
  if (f.seed) {
    cfg.protocol.rng_seed = *f.seed;
    cfg.selector.rng_seed = *f.seed;
    cfg.curation.rng_seed = *f.seed;
  }
  set(f.rescale_fraction, cfg.curation.rescale_fraction);
  set(f.model, cfg.model);
  set(f.temperature, cfg.temperature);
  set(f.input, cfg.paths.input);
  set(f.output, cfg.paths.output);
  set(f.raw, cfg.paths.raw);
  set(f.gold, cfg.paths.gold);
  set(f.request_log, cfg.paths.request_log);
  set(f.report_dir, cfg.paths.report_dir);
  set(f.drops, cfg.paths.drops);
  set(f.summary, cfg.paths.summary);
  if (f.plot) cfg.plot = true;
  if (f.no_continuation) cfg.continuation = false;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"flexjudge: reasoning-judge evaluation, curation and reward tooling"};
  app.require_subcommand(1);
  Flags flags;
  using Cmd = int (*)(const RunConfig&);
  const std::pair<const char*, Cmd> commands[] = {
      {"curate", flexjudge::cli::cmd_curate}, {"judge", flexjudge::cli::cmd_judge},
      {"evaluate", flexjudge::cli::cmd_evaluate}, {"report", flexjudge::cli::cmd_report},
      {"select", flexjudge::cli::cmd_select}, {"dpo", flexjudge::cli::cmd_dpo}};
  const char* help[] = {"build the seed dataset from a judged pool", "judge tasks and aggregate samples",
                        "score aggregated judgments against gold labels", "position and length bias report",
                        "best-of-N selection", "build DPO preference triplets"};
  std::map<std::string, CLI::App*> subs;
  for (std::size_t i = 0; i < std::size(commands); ++i) {
    auto* sub = app.add_subcommand(commands[i].first, help[i]);
    add_flags(sub, flags);
    subs[commands[i].first] = sub;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : flexjudge::cli::kConfigError;
  }
  for (const auto& [name, fn] : commands) {
    if (!subs[name]->parsed()) continue;
    RunConfig cfg;
    try {
      cfg = resolve(flags);
    } catch (const flexjudge::Error& e) {
      std::cerr << "config error: " << e.what() << '\n';
      return flexjudge::cli::kConfigError;
    }
    return flexjudge::cli::run_guarded(cfg, fn);
  }
  return flexjudge::cli::kConfigError;
}
