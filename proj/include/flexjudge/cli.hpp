#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "flexjudge/backend.hpp"
#include "flexjudge/core.hpp"
#include "flexjudge/curation.hpp"
#include "flexjudge/http.hpp"
#include "flexjudge/metrics.hpp"
#include "flexjudge/prompting.hpp"
#include "flexjudge/strategies.hpp"
#include "flexjudge/svg.hpp"

namespace flexjudge::cli {

enum ExitCode : int { kOk = 0, kPartialFailure = 1, kConfigError = 2 };

struct Paths {
  std::string input;
  std::string output;
  std::string raw;          // per-trial judgments; default <output>.raw.jsonl
  std::string gold;         // tasks with human labels
  std::string request_log;  // JSONL, appended
  std::string report_dir;
  std::string drops;    // DPO drop log; default <output>.drops.jsonl
  std::string summary;  // curation summary; default <output>.summary.json
};

struct RunConfig {
  std::string backend_url;
  std::string api_key;
  std::string model = "judge";
  double temperature = 0.7;
  int max_tokens = 4096;
  std::size_t max_in_flight = 8;
  bool continuation = true;

  std::string template_id;  // applies to tasks whose format the template answers
  std::map<FormatKind, std::string> template_overrides;
  std::vector<std::string> template_files;

  std::string strategy = "repeat";  // repeat | vote | budget
  ProtocolConfig protocol;
  ScalingConfig scaling;
  SelectorConfig selector;
  curation::CurationConfig curation;

  Paths paths;
  bool plot = false;
  json training = json::object();  // recorded with runs, never executed

  std::shared_ptr<Backend> backend;  // injected backend; skips url resolution
  std::ostream* out = &std::cout;
  std::ostream* err = &std::cerr;
};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Expands ${VAR} and ${VAR:-fallback}. Unset variables without a fallback
/// expand to the empty string.
inline std::string interpolate_env(const std::string& s) {
  std::string out;
  std::size_t i = 0;
  while (i < s.size()) {
    if (s.compare(i, 2, "${") != 0) {
      out.push_back(s[i++]);
      continue;
    }
    auto end = s.find('}', i + 2);
    if (end == std::string::npos) throw ConfigError("unterminated ${ in '" + s + "'");
    std::string name = s.substr(i + 2, end - i - 2), fallback;
    if (auto d = name.find(":-"); d != std::string::npos) {
      fallback = name.substr(d + 2);
      name = name.substr(0, d);
    }
    out += env_or(name.c_str(), fallback);
    i = end + 1;
  }
  return out;
}

inline json interpolate_json(json j) {
  if (j.is_string()) return interpolate_env(j.get<std::string>());
  if (j.is_structured())
    for (auto& v : j) v = interpolate_json(v);
  return j;
}

namespace detail {

template <typename T>
void take(const json& j, const char* key, T& field) {
  if (!j.contains(key) || j.at(key).is_null()) return;
  try {
    field = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config field '") + key + "': " + e.what());
  }
}

}  // namespace detail

/// Applies a parsed config document on top of `cfg`.
inline void apply_config(RunConfig& cfg, const json& raw) {
  if (!raw.is_object()) throw ConfigError("config must be a JSON object");
  const json j = interpolate_json(raw);
  using detail::take;
  if (auto b = j.value("backend", json::object()); b.is_object()) {
    take(b, "url", cfg.backend_url);
    take(b, "api_key", cfg.api_key);
    take(b, "model", cfg.model);
    take(b, "temperature", cfg.temperature);
    take(b, "max_tokens", cfg.max_tokens);
    take(b, "max_in_flight", cfg.max_in_flight);
    take(b, "continuation", cfg.continuation);
  }
  take(j, "template", cfg.template_id);
  if (auto t = j.value("templates", json::object()); t.is_object()) {
    take(t, "files", cfg.template_files);
    for (auto& [k, v] : t.value("overrides", json::object()).items())
      cfg.template_overrides[format_kind_from_string(k)] = v.get<std::string>();
  }
  if (auto p = j.value("protocol", json::object()); p.is_object()) {
    take(p, "repeats", cfg.protocol.k);
    if (p.contains("order_mode")) cfg.protocol.order_mode = order_mode_from_string(p.at("order_mode").get<std::string>());
    take(p, "seed", cfg.protocol.rng_seed);
    take(p, "tie_margin", cfg.protocol.tie_margin);
    if (p.contains("aggregation")) {
      auto a = p.at("aggregation").get<std::string>();
      if (a != "mean" && a != "vote") throw ConfigError("aggregation must be mean or vote");
      cfg.protocol.aggregation = a == "vote" ? Aggregation::vote : Aggregation::mean;
    }
  }
  if (auto s = j.value("scaling", json::object()); s.is_object()) {
    take(s, "strategy", cfg.strategy);
    take(s, "vote_k", cfg.scaling.vote_k);
    if (s.contains("aggregator")) {
      auto a = s.at("aggregator").get<std::string>();
      if (a != "median" && a != "mean") throw ConfigError("aggregator must be median or mean");
      cfg.scaling.score_aggregator = a == "mean" ? ScoreAggregator::mean : ScoreAggregator::median;
    }
    take(s, "budget_trials", cfg.scaling.budget_trials);
    take(s, "keyword", cfg.scaling.budget_keyword);
  }
  if (auto s = j.value("selector", json::object()); s.is_object()) {
    take(s, "n", cfg.selector.n);
    take(s, "trials", cfg.selector.trials);
    take(s, "seed", cfg.selector.rng_seed);
    take(s, "question", cfg.selector.question);
    take(s, "scale", cfg.selector.scale);
  }
  if (auto c = j.value("curation", json::object()); c.is_object()) {
    take(c, "single_score_count", cfg.curation.single_score_count);
    take(c, "pairwise_count", cfg.curation.pairwise_count);
    take(c, "single_min_tokens", cfg.curation.single_min_tokens);
    take(c, "pair_min_tokens", cfg.curation.pair_min_tokens);
    take(c, "rescale_fraction", cfg.curation.rescale_fraction);
    take(c, "seed", cfg.curation.rng_seed);
    take(c, "direction_only_agreement", cfg.curation.direction_only_agreement);
    if (c.contains("token_counter")) {
      auto t = c.at("token_counter").get<std::string>();
      if (t != "whitespace" && t != "backend_usage") throw ConfigError("token_counter must be whitespace or backend_usage");
      cfg.curation.token_counter =
          t == "whitespace" ? curation::TokenCounter::whitespace : curation::TokenCounter::backend_usage;
    }
  }
  if (auto p = j.value("paths", json::object()); p.is_object()) {
    take(p, "input", cfg.paths.input);
    take(p, "output", cfg.paths.output);
    take(p, "raw", cfg.paths.raw);
    take(p, "gold", cfg.paths.gold);
    take(p, "request_log", cfg.paths.request_log);
    take(p, "report_dir", cfg.paths.report_dir);
    take(p, "drops", cfg.paths.drops);
    take(p, "summary", cfg.paths.summary);
  }
  if (auto r = j.value("report", json::object()); r.is_object()) take(r, "plot", cfg.plot);
  take(j, "training", cfg.training);
}

inline void load_config(RunConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  json j = json::parse(in, nullptr, false, true);
  if (j.is_discarded()) throw ConfigError("config " + path + " is not valid JSON");
  apply_config(cfg, j);
}

inline void check_run_config(const RunConfig& cfg) {
  check_protocol(cfg.protocol);
  check_scaling(cfg.scaling);
  curation::check_config(cfg.curation);
  if (cfg.max_in_flight == 0) throw ConfigError("max_in_flight must be > 0");
  if (cfg.strategy != "repeat" && cfg.strategy != "vote" && cfg.strategy != "budget")
    throw ConfigError("strategy must be repeat, vote or budget");
  std::set<std::string> seen;
  for (const auto* p : {&cfg.paths.input, &cfg.paths.output, &cfg.paths.raw, &cfg.paths.gold, &cfg.paths.request_log,
                        &cfg.paths.drops, &cfg.paths.summary}) {
    if (p->empty()) continue;
    if (!seen.insert(std::filesystem::absolute(*p).lexically_normal().string()).second)
      throw ConfigError("path " + *p + " is used twice");
  }
}

inline std::string require_path(const std::string& p, const char* what) {
  if (p.empty()) throw ConfigError(std::string("missing ") + what + " path");
  return p;
}

inline std::string or_default(const std::string& p, const std::string& fallback) { return p.empty() ? fallback : p; }

// ---------------------------------------------------------------------------
// IO helpers
// ---------------------------------------------------------------------------

template <typename T>
std::vector<T> load_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path);
  try {
    return read_jsonl<T>(in);
  } catch (const JsonlError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

inline std::vector<json> load_jsonl_values(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path);
  try {
    return read_jsonl_values(in);
  } catch (const JsonlError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

/// Writes through a temporary sibling and renames, so readers never see a
/// half-written file.
inline void write_file(const std::string& path, const std::string& content) {
  std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write " + path);
    out << content;
  }
  std::filesystem::rename(tmp, path);
}

inline std::string jsonl(const std::vector<json>& lines) {
  std::string s;
  for (const auto& l : lines) s += l.dump() + "\n";
  return s;
}

// ---------------------------------------------------------------------------
// Backend
// ---------------------------------------------------------------------------

/// Owns the backend and its request log for one command run.
struct BackendHandle {
  std::shared_ptr<Backend> backend;
  std::unique_ptr<std::ofstream> log;
};

inline BackendHandle open_backend(const RunConfig& cfg) {
  BackendHandle h;
  if (cfg.backend) {
    h.backend = cfg.backend;
    return h;
  }
  ClientOptions opts;
  opts.max_in_flight = cfg.max_in_flight;
  opts.continuation = cfg.continuation;
  if (!cfg.paths.request_log.empty()) {
    std::filesystem::path p(cfg.paths.request_log);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    h.log = std::make_unique<std::ofstream>(cfg.paths.request_log, std::ios::app);
    if (!*h.log) throw ConfigError("cannot open request log " + cfg.paths.request_log);
    opts.request_log = h.log.get();
  }
  std::string url = cfg.backend_url.empty() ? env_or("FLEX_BASE_URL") : cfg.backend_url;
  std::string key = cfg.api_key.empty() ? env_or("FLEX_API_KEY") : cfg.api_key;
  if (url.empty()) throw ConfigError("no backend url (set --backend-url or FLEX_BASE_URL)");
  std::shared_ptr<Transport> transport;
  if (url.rfind("mock:", 0) == 0) {
    std::ifstream in(url.substr(5));
    if (!in) throw ConfigError("cannot open mock script " + url.substr(5));
    json script = json::parse(in, nullptr, false);
    if (script.is_discarded()) throw ConfigError("mock script is not valid JSON");
    transport = std::make_shared<MockTransport>(mock_script_from_json(script));
    opts.retry.sleep = [](std::chrono::milliseconds) {};
  } else {
    transport = std::make_shared<HttpTransport>(url, key);
  }
  h.backend = std::make_shared<ChatClient>(transport, opts);
  return h;
}

inline std::shared_ptr<TemplateRegistry> build_registry(const RunConfig& cfg) {
  auto r = std::make_shared<TemplateRegistry>(TemplateRegistry::with_builtins());
  for (const auto& f : cfg.template_files) r->load_file(f);
  return r;
}

inline JudgeConfig judge_config(const RunConfig& cfg, const TemplateRegistry& registry) {
  JudgeConfig jc;
  jc.params.model = cfg.model;
  jc.params.temperature = cfg.temperature;
  jc.params.max_tokens = cfg.max_tokens;
  jc.rng_seed = cfg.protocol.rng_seed;
  jc.templates = cfg.template_overrides;
  for (const auto& [_, id] : jc.templates) registry.get(id);
  if (!cfg.template_id.empty()) jc.templates[registry.get(cfg.template_id).answer_grammar] = cfg.template_id;
  return jc;
}

// ---------------------------------------------------------------------------
// curate
// ---------------------------------------------------------------------------

inline int cmd_curate(const RunConfig& cfg) {
  check_run_config(cfg);
  const auto input = require_path(cfg.paths.input, "input pool");
  const auto output = require_path(cfg.paths.output, "output");
  auto pool = load_jsonl<curation::PoolRecord>(input);
  curation::SeedDataset seed;
  try {
    seed = curation::build_seed(pool, cfg.curation);
  } catch (const InsufficientPool& e) {
    *cfg.err << "error: " << e.what() << '\n';
    return kPartialFailure;
  }
  std::vector<json> lines;
  for (const auto& r : seed.records) lines.push_back(r);
  write_file(output, jsonl(lines));
  write_file(or_default(cfg.paths.summary, output + ".summary.json"), seed.summary.to_json().dump(2) + "\n");
  *cfg.out << "curated " << seed.records.size() << " records (" << seed.summary.single << " single-score, "
           << seed.summary.pairwise << " pairwise; " << seed.summary.scale5 << " on 1-5) from " << pool.size()
           << " pool records, " << seed.summary.agreed << " agreed\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// judge
// ---------------------------------------------------------------------------

inline std::string resume_key(const std::string& task_id, int trial, const std::vector<int>& perm) {
  std::string k = task_id + '\x1f' + std::to_string(trial) + '\x1f';
  for (int p : perm) k += std::to_string(p) + ',';
  return k;
}

inline std::vector<EvalTask> load_tasks(const std::string& path) {
  auto tasks = load_jsonl<EvalTask>(path);
  auto violations = validate_dataset(tasks);
  if (!violations.empty()) {
    std::string msg = path + ": " + std::to_string(violations.size()) + " invalid field(s)";
    for (std::size_t i = 0; i < violations.size() && i < 10; ++i)
      msg += "\n  " + violations[i].field + ": " + violations[i].rule;
    throw ConfigError(msg);
  }
  return tasks;
}

inline int cmd_judge(const RunConfig& cfg) {
  check_run_config(cfg);
  const auto input = require_path(cfg.paths.input, "tasks");
  const auto output = require_path(cfg.paths.output, "output");
  const auto raw_path = or_default(cfg.paths.raw, output + ".raw.jsonl");
  auto registry = build_registry(cfg);
  auto tasks = load_tasks(input);
  auto jc = judge_config(cfg, *registry);

  // Resolve every template before the first request.
  for (const auto& t : tasks) {
    JudgeConfig probe = jc;
    Judge dry(nullptr, registry, probe);
    const auto& tpl = registry->get(dry.template_for(t));
    if (tpl.answer_grammar != t.format.kind)
      throw ConfigError("template " + tpl.id + " cannot judge " + to_string(t.format.kind) + " task " + t.id);
  }

  std::map<std::string, Judgment> done;
  if (std::filesystem::exists(raw_path))
    for (auto& j : load_jsonl<Judgment>(raw_path))
      if (!j.error || j.error->code != "TransportError") done[resume_key(j.task_id, j.trial_index, j.permutation)] = j;

  auto handle = open_backend(cfg);
  Judge judge(handle.backend, registry, jc);

  std::vector<std::vector<Judgment>> samples(tasks.size());
  std::vector<json> aggregated(tasks.size());
  std::atomic<std::size_t> requested{0}, failed{0};

  auto sample = [&](const EvalTask& task, int trial, const Permutation& perm) {
    if (auto it = done.find(resume_key(task.id, trial, perm.order())); it != done.end()) return it->second;
    ++requested;
    return judge.judge(task, perm, trial);
  };

  parallel_for(tasks.size(), cfg.max_in_flight, [&](std::size_t i) {
    const auto& task = tasks[i];
    try {
      Aggregate a;
      if (cfg.strategy == "budget") {
        const auto perm = order_for(task, 0, cfg.protocol);
        bool all = true;
        std::vector<Judgment> chain;
        for (int t = 0; t <= cfg.scaling.budget_trials && all; ++t) {
          auto it = done.find(resume_key(task.id, t, perm.order()));
          if (it == done.end()) all = false;
          else chain.push_back(it->second);
        }
        if (!all) {
          requested += static_cast<std::size_t>(cfg.scaling.budget_trials) + 1;
          chain = budget_force(judge, task, cfg.scaling, perm);
        }
        std::vector<Judgment> last;
        for (auto it = chain.rbegin(); it != chain.rend(); ++it)
          if (it->ok()) {
            last.push_back(*it);
            break;
          }
        samples[i] = chain;
        if (last.empty()) throw AllSamplesFailed("every budget trial of " + task.id + " failed");
        a = aggregate_mean(task, last, cfg.protocol.tie_margin);
        a.method = "budget";
      } else {
        const int k = cfg.strategy == "vote" ? cfg.scaling.vote_k : cfg.protocol.k;
        std::vector<Judgment> s;
        for (int t = 0; t < k; ++t) s.push_back(sample(task, t, order_for(task, t, cfg.protocol)));
        samples[i] = s;
        a = cfg.strategy == "vote" || cfg.protocol.aggregation == Aggregation::vote
                ? aggregate_vote(task, std::move(s), cfg.scaling.score_aggregator, cfg.protocol.rng_seed,
                                 cfg.protocol.tie_margin)
                : aggregate_mean(task, std::move(s), cfg.protocol.tie_margin);
      }
      aggregated[i] = a;
    } catch (const AllSamplesFailed& e) {
      ++failed;
      aggregated[i] = json{{"task_id", task.id}, {"format", to_string(task.format.kind)}, {"error", e.what()}};
    }
  });

  std::vector<json> raw_lines;
  for (const auto& s : samples)
    for (const auto& j : s) raw_lines.push_back(j);
  write_file(raw_path, jsonl(raw_lines));
  write_file(output, jsonl(aggregated));
  *cfg.out << "judged " << tasks.size() << " tasks (" << raw_lines.size() << " samples, " << requested.load()
           << " requested, " << failed.load() << " failed)\n";
  return failed ? kPartialFailure : kOk;
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

namespace detail {

inline void add_metric(metrics::MetricsReport& r, const std::string& group, const std::string& metric, std::size_t n,
                       const std::function<double()>& fn, std::vector<std::string> flags = {}) {
  try {
    r.add(group, metric, fn(), n, std::move(flags));
  } catch (const MetricError& e) {
    flags.push_back(to_string(e.code));
    r.add(group, metric, std::numeric_limits<double>::quiet_NaN(), n, std::move(flags));
  }
}

inline std::optional<double> gold_value(const Verdict& v) {
  if (auto* s = std::get_if<ScoreList>(&v); s && s->values.size() == 1) return s->values[0];
  if (auto* d = std::get_if<DecimalValue>(&v)) return d->value;
  return std::nullopt;
}

}  // namespace detail

inline int cmd_evaluate(const RunConfig& cfg) {
  check_run_config(cfg);
  const auto input = require_path(cfg.paths.input, "judgments");
  const auto gold_path = require_path(cfg.paths.gold, "gold");
  const auto report_dir = or_default(cfg.paths.report_dir, "report");

  std::map<std::string, EvalTask> gold;
  for (auto& t : load_jsonl<EvalTask>(gold_path)) gold.emplace(t.id, std::move(t));

  std::vector<std::pair<Aggregate, const EvalTask*>> rows;
  std::vector<std::string> missing, failed;
  for (const auto& v : load_jsonl_values(input)) {
    const auto id = v.value("task_id", std::string());
    if (v.contains("error")) {
      failed.push_back(id);
      continue;
    }
    auto it = gold.find(id);
    if (it == gold.end() || !it->second.human_label) {
      missing.push_back(id);
      continue;
    }
    rows.emplace_back(v.get<Aggregate>(), &it->second);
  }
  if (!missing.empty()) {
    *cfg.err << "error: " << missing.size() << " judgment(s) without gold labels:";
    for (const auto& m : missing) *cfg.err << ' ' << m;
    *cfg.err << '\n';
    return kConfigError;
  }

  metrics::MetricsReport report;
  std::map<std::string, std::string> plots;
  for (auto kind : {FormatKind::single_score, FormatKind::pairwise, FormatKind::four_way, FormatKind::batch_ranking,
                    FormatKind::decimal_score}) {
    const std::string group = to_string(kind);
    std::vector<const std::pair<Aggregate, const EvalTask*>*> sel;
    for (const auto& r : rows)
      if (r.first.kind == kind) sel.push_back(&r);
    if (sel.empty()) continue;
    const auto n = sel.size();

    if (kind == FormatKind::single_score || kind == FormatKind::decimal_score) {
      std::vector<double> p, g;
      std::vector<metrics::GroupedScore> grouped;
      bool all_grouped = true;
      for (auto* r : sel) {
        auto gv = detail::gold_value(*r->second->human_label);
        if (!gv || r->first.scores.empty()) continue;
        p.push_back(r->first.scores[0]);
        g.push_back(*gv);
        if (r->second->group) grouped.push_back({*r->second->group, p.back(), g.back()});
        else all_grouped = false;
      }
      detail::add_metric(report, group, "pearson", p.size(), [&] { return metrics::pearson(p, g); });
      detail::add_metric(report, group, "spearman", p.size(), [&] { return metrics::spearman(p, g); });
      if (all_grouped && !grouped.empty()) {
        for (auto [name, fn] : {std::pair{"system_pearson", &metrics::pearson},
                                std::pair{"system_spearman", &metrics::spearman}}) {
          try {
            auto s = metrics::system_level(grouped, fn);
            report.add(group, name, s.value, s.groups, s.flags);
          } catch (const MetricError& e) {
            report.add(group, name, std::numeric_limits<double>::quiet_NaN(), 0, {std::string(to_string(e.code))});
          }
        }
      }
      if (cfg.plot) plots[group + "_scatter.svg"] = svg::scatter(group + ": predicted vs human", g, p, "human", "predicted");
    } else if (kind == FormatKind::pairwise || kind == FormatKind::four_way) {
      std::vector<Preference> preds, labels;
      std::size_t label_hits = 0, label_n = 0;
      for (auto* r : sel) {
        auto gp = verdict_preference(*r->second->human_label);
        if (!gp || !r->first.preference) continue;
        preds.push_back(*r->first.preference);
        labels.push_back(*gp);
        if (auto* gl = std::get_if<PairChoice>(&*r->second->human_label); gl && r->first.label) {
          ++label_n;
          label_hits += gl->label == *r->first.label;
        }
      }
      detail::add_metric(report, group, "accuracy_with_tie", preds.size(),
                         [&] { return metrics::accuracy(preds, labels, true); });
      detail::add_metric(report, group, "accuracy_without_tie", preds.size(),
                         [&] { return metrics::accuracy(preds, labels, false); });
      try {
        auto prf = metrics::agreement_prf(preds, labels);
        report.add(group, "agreement", prf.agreement, preds.size());
        report.add(group, "precision", prf.precision, preds.size(), prf.flags);
        report.add(group, "recall", prf.recall, preds.size(), prf.flags);
        report.add(group, "f1", prf.f1, preds.size(), prf.flags);
      } catch (const MetricError& e) {
        report.add(group, "agreement", std::numeric_limits<double>::quiet_NaN(), 0, {std::string(to_string(e.code))});
      }
      if (kind == FormatKind::four_way && label_n)
        report.add(group, "accuracy_fourway", static_cast<double>(label_hits) / static_cast<double>(label_n), label_n);
      if (cfg.plot) {
        double c[3] = {0, 0, 0};
        for (auto p : preds) c[static_cast<int>(p)] += 1;
        plots[group + "_predictions.svg"] = svg::bars(group + ": predicted preference", {"A", "B", "TIE"},
                                                      {c[0], c[1], c[2]}, "count");
      }
    } else {
      double total = 0, exact = 0;
      std::size_t m = 0;
      std::vector<std::string> flags;
      for (auto* r : sel) {
        auto gr = verdict_ranking(*r->second->human_label);
        if (!gr || !r->first.ranking) continue;
        bool both_empty = false;
        total += metrics::normalized_levenshtein(r->first.ranking->letters, gr->letters, &both_empty);
        exact += r->first.ranking->letters == gr->letters;
        ++m;
      }
      if (m == 0) {
        report.add(group, "levenshtein_distance", std::numeric_limits<double>::quiet_NaN(), 0, {"EmptyAfterFilter"});
      } else {
        report.add(group, "levenshtein_distance", total / static_cast<double>(m), m);
        report.add(group, "exact_match", exact / static_cast<double>(m), m);
      }
    }
    report.add(group, "count", static_cast<double>(n), n);
  }
  if (!failed.empty()) report.flags.push_back(std::to_string(failed.size()) + " task(s) had no usable samples");

  write_file(report_dir + "/report.json", report.to_json().dump(2) + "\n");
  write_file(report_dir + "/report.csv", report.to_csv());
  for (const auto& [name, content] : plots) write_file(report_dir + "/" + name, content);
  *cfg.out << report.to_csv();
  return failed.empty() ? kOk : kPartialFailure;
}

// ---------------------------------------------------------------------------
// report (bias)
// ---------------------------------------------------------------------------

inline int cmd_report(const RunConfig& cfg) {
  check_run_config(cfg);
  const auto input = require_path(cfg.paths.input, "raw judgments");
  const auto report_dir = or_default(cfg.paths.report_dir, "report");
  auto judgments = load_jsonl<Judgment>(input);

  metrics::MetricsReport report;
  auto pb = metrics::position_bias_report(judgments, cfg.protocol.tie_margin);
  const std::string g = "position_bias";
  report.add(g, "rendered_first_rate", pb.rendered_first_rate(), pb.rendered_a + pb.rendered_b);
  report.add(g, "canonical_a_rate", pb.canonical_a_rate(), pb.canonical_a + pb.canonical_b);
  report.add(g, "chi_square_rendered", pb.chi_square_rendered, pb.rendered_a + pb.rendered_b);
  report.add(g, "chi_square_canonical", pb.chi_square_canonical, pb.canonical_a + pb.canonical_b);
  report.add(g, "ties", static_cast<double>(pb.rendered_tie), pb.decided());
  report.add(g, "skipped", static_cast<double>(pb.skipped), pb.skipped);

  std::vector<std::string> labels;
  std::vector<double> rates;
  if (!cfg.paths.gold.empty()) {
    std::map<std::string, std::pair<std::size_t, std::size_t>> lengths;
    for (const auto& t : load_jsonl<EvalTask>(cfg.paths.gold))
      if (t.candidates.size() == 2)
        lengths[t.id] = {whitespace_tokens(t.candidates[0].text), whitespace_tokens(t.candidates[1].text)};
    auto lb = metrics::length_bias_report(judgments, lengths, {1, 16, 64, 256}, cfg.protocol.tie_margin);
    for (const auto& b : lb.buckets) {
      std::string name = std::to_string(b.lo) + "-" +
                         (b.hi == std::numeric_limits<std::size_t>::max() ? std::string("inf") : std::to_string(b.hi));
      report.add("length_bias", "longer_win_rate[" + name + ")", b.longer_win_rate(), b.decisive);
      labels.push_back(name);
      rates.push_back(b.longer_win_rate());
    }
    report.add("length_bias", "equal_length", static_cast<double>(lb.equal_length), lb.equal_length);
  }

  write_file(report_dir + "/bias.json", report.to_json().dump(2) + "\n");
  write_file(report_dir + "/bias.csv", report.to_csv());
  if (cfg.plot) {
    write_file(report_dir + "/position_bias.svg",
               svg::bars("Winner by slot", {"rendered first", "rendered second", "canonical A", "canonical B"},
                         {double(pb.rendered_a), double(pb.rendered_b), double(pb.canonical_a), double(pb.canonical_b)},
                         "count"));
    if (!labels.empty())
      write_file(report_dir + "/length_bias.svg",
                 svg::bars("Longer response win rate by length gap", labels, rates, "win rate"));
  }
  *cfg.out << report.to_csv();
  return kOk;
}

// ---------------------------------------------------------------------------
// select (best-of-N)
// ---------------------------------------------------------------------------

inline int cmd_select(const RunConfig& cfg) {
  check_run_config(cfg);
  const auto input = require_path(cfg.paths.input, "candidates");
  const auto output = require_path(cfg.paths.output, "output");
  auto items = load_jsonl_values(input);
  auto registry = build_registry(cfg);
  auto handle = open_backend(cfg);
  Judge judge(handle.backend, registry, judge_config(cfg, *registry));

  std::string picks = "prompt_id,trial,selected_index,selected_score\n";
  std::string table = "prompt_id,candidate,score\n";
  std::size_t failures = 0;
  for (const auto& item : items) {
    const auto id = item.value("id", std::string());
    if (id.empty() || !item.contains("responses")) throw ConfigError(input + ": records need id and responses");
    SelectorConfig sc = cfg.selector;
    if (item.contains("question")) sc.question = item.at("question").get<std::string>();
    try {
      auto sel = best_of_n(id, item.at("responses").get<std::vector<std::string>>(), judge, sc);
      for (std::size_t c = 0; c < sel.scores.size(); ++c)
        table += metrics::MetricsReport::csv_field(id) + "," + std::to_string(c) + "," +
                 (sel.scores[c] ? std::to_string(*sel.scores[c]) : std::string("unscored")) + "\n";
      for (std::size_t t = 0; t < sel.picks.size(); ++t)
        picks += metrics::MetricsReport::csv_field(id) + "," + std::to_string(t) + "," + std::to_string(sel.picks[t]) +
                 "," + std::to_string(*sel.scores[sel.picks[t]]) + "\n";
    } catch (const AllSamplesFailed& e) {
      ++failures;
      *cfg.err << "warning: " << e.what() << '\n';
    }
  }
  write_file(output, picks);
  write_file(output + ".scores.csv", table);
  *cfg.out << "selected over " << items.size() << " prompts, " << failures << " unscored\n";
  return failures ? kPartialFailure : kOk;
}

// ---------------------------------------------------------------------------
// dpo
// ---------------------------------------------------------------------------

/// Replays responses stored with each prompt under "responses", keyed by
/// temperature ("0.8", "1.2").
class FileSampler : public Sampler {
 public:
  explicit FileSampler(std::map<std::string, json> responses) : responses_(std::move(responses)) {}
  std::string sample(const PromptItem& prompt, double temperature) override {
    char key[16];
    std::snprintf(key, sizeof key, "%.1f", temperature);
    auto it = responses_.find(prompt.id);
    if (it == responses_.end() || !it->second.contains(key))
      throw ConfigError("no stored response for " + prompt.id + " at temperature " + key);
    return it->second.at(key).get<std::string>();
  }

 private:
  std::map<std::string, json> responses_;
};

inline int cmd_dpo(const RunConfig& cfg) {
  check_run_config(cfg);
  const auto input = require_path(cfg.paths.input, "prompts");
  const auto output = require_path(cfg.paths.output, "output");
  auto values = load_jsonl_values(input);
  std::vector<PromptItem> prompts;
  std::map<std::string, json> stored;
  for (const auto& v : values) {
    try {
      prompts.push_back(v.get<PromptItem>());
    } catch (const SchemaError& e) {
      throw ConfigError(input + ": " + e.what());
    }
    if (v.contains("responses")) stored[prompts.back().id] = v.at("responses");
  }
  auto registry = build_registry(cfg);
  auto handle = open_backend(cfg);
  Judge judge(handle.backend, registry, judge_config(cfg, *registry));
  std::unique_ptr<Sampler> sampler;
  if (stored.size() == prompts.size()) {
    sampler = std::make_unique<FileSampler>(stored);
  } else {
    GenerationParams gp;
    gp.model = cfg.model;
    gp.max_tokens = cfg.max_tokens;
    sampler = std::make_unique<BackendSampler>(handle.backend, gp);
  }
  auto result = build_dpo_triplets(prompts, *sampler, judge);

  std::vector<json> lines, drops;
  for (const auto& t : result.triplets) lines.push_back(t);
  for (const auto& d : result.drops) drops.push_back(json{{"id", d.id}, {"reason", d.reason}});
  write_file(output, jsonl(lines));
  write_file(or_default(cfg.paths.drops, output + ".drops.jsonl"), jsonl(drops));
  char pct[32];
  std::snprintf(pct, sizeof pct, "%.1f%%", 100.0 * result.retention());
  *cfg.out << "retention: " << result.triplets.size() << "/" << result.prompts << " (" << pct << ")\n";
  return kOk;
}

/// Runs `fn`, mapping configuration errors to exit 2 and other library
/// errors to exit 1.
template <typename F>
int run_guarded(const RunConfig& cfg, F&& fn) {
  try {
    return fn(cfg);
  } catch (const ConfigError& e) {
    *cfg.err << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const PreconditionError& e) {
    *cfg.err << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const Error& e) {
    *cfg.err << "error: " << e.what() << '\n';
    return kPartialFailure;
  } catch (const json::exception& e) {
    *cfg.err << "error: " << e.what() << '\n';
    return kPartialFailure;
  }
}

}  // namespace flexjudge::cli
