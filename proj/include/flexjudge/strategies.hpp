#pragma once

#include <algorithm>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "flexjudge/backend.hpp"
#include "flexjudge/core.hpp"
#include "flexjudge/parsing.hpp"
#include "flexjudge/prompting.hpp"

namespace flexjudge {

// ---------------------------------------------------------------------------
// Single judgment
// ---------------------------------------------------------------------------

struct JudgeConfig {
  GenerationParams params;
  std::map<FormatKind, std::string> templates;  // overrides of the per-format default
  std::uint64_t rng_seed = 0;
};

/// Renders, sends and parses one judgment. Verdicts come back in canonical
/// candidate order; parse and transport failures land in `Judgment::error`.
class Judge {
 public:
  Judge(std::shared_ptr<Backend> backend, std::shared_ptr<const TemplateRegistry> registry, JudgeConfig config = {})
      : backend_(std::move(backend)), registry_(std::move(registry)), config_(std::move(config)) {
    for (const auto& [kind, id] : config_.templates) registry_->get(id);
  }

  /// Template used for `task`: a string "template" field on the task wins,
  /// then the configured override, then the format default.
  std::string template_for(const EvalTask& task) const {
    if (auto it = task.extra.find("template"); it != task.extra.end() && it->is_string()) return it->get<std::string>();
    if (auto it = config_.templates.find(task.format.kind); it != config_.templates.end()) return it->second;
    return TemplateRegistry::default_for(task.format.kind);
  }

  MessageList prompt(const EvalTask& task, const Permutation& perm) const {
    return registry_->render(template_for(task), task, perm);
  }

  GenerationParams params_for(const EvalTask& task, int trial) const {
    GenerationParams p = config_.params;
    p.seed = static_cast<std::int64_t>(mix_seed(config_.rng_seed, task.id, static_cast<std::uint64_t>(trial)) >> 1);
    return p;
  }

  Judgment judge(const EvalTask& task, const Permutation& perm, int trial = 0) {
    const auto messages = prompt(task, perm);
    const auto params = params_for(task, trial);
    const std::string prefill = messages.ends_with_prefill() ? messages.messages.back().text() : std::string();
    Judgment j = blank(task, perm, trial, params);
    try {
      auto c = backend_->complete(messages, params, {task.id, trial});
      if (c.finish_reason == FinishReason::length) j.flags.push_back("truncated");
      const bool echoed = !prefill.empty() && trim(c.text).substr(0, prefill.size()) == prefill;
      return interpret(task, perm, std::move(j), echoed ? c.text : prefill + c.text);
    } catch (const TransportError& e) {
      j.error = JudgmentError{"TransportError", e.what()};
    } catch (const ProtocolError& e) {
      j.error = JudgmentError{"ProtocolError", e.what()};
    }
    return j;
  }

  /// Fills verdict or error of `j` from the full assistant text.
  Judgment interpret(const EvalTask& task, const Permutation& perm, Judgment j, std::string full_text) const {
    j.raw_text = std::move(full_text);
    try {
      auto pv = parse_verdict(j.raw_text, task.format, task.candidates.size(), false);
      j.think = pv.parsed.think;
      j.verdict = perm.to_canonical(pv.verdict);
      for (auto& w : pv.warnings) j.flags.push_back(w.substr(0, w.find(':')));
    } catch (const ParseError& e) {
      j.error = JudgmentError{to_string(e.code), e.what()};
    } catch (const PreconditionError& e) {
      j.error = JudgmentError{"ArityMismatch", e.what()};
    }
    return j;
  }

  Judgment blank(const EvalTask& task, const Permutation& perm, int trial, const GenerationParams& params) const {
    Judgment j;
    j.task_id = task.id;
    j.permutation = perm.order();
    j.gen = params;
    j.trial_index = trial;
    return j;
  }

  Backend& backend() { return *backend_; }
  const TemplateRegistry& registry() const { return *registry_; }
  const JudgeConfig& config() const { return config_; }

 private:
  std::shared_ptr<Backend> backend_;
  std::shared_ptr<const TemplateRegistry> registry_;
  JudgeConfig config_;
};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

enum class OrderMode { fixed, random, reverse_both };
enum class Aggregation { mean, vote };
enum class ScoreAggregator { median, mean };

inline const char* to_string(OrderMode m) {
  switch (m) {
    case OrderMode::fixed: return "fixed";
    case OrderMode::random: return "random";
    case OrderMode::reverse_both: return "reverse_both";
  }
  return "?";
}

inline OrderMode order_mode_from_string(const std::string& s) {
  if (s == "fixed") return OrderMode::fixed;
  if (s == "random") return OrderMode::random;
  if (s == "reverse_both") return OrderMode::reverse_both;
  throw ConfigError("unknown order mode '" + s + "'");
}

struct ProtocolConfig {
  int k = 3;
  OrderMode order_mode = OrderMode::fixed;
  std::uint64_t rng_seed = 0;
  double tie_margin = 0.0;
  Aggregation aggregation = Aggregation::mean;
};

struct ScalingConfig {
  int vote_k = 5;
  ScoreAggregator score_aggregator = ScoreAggregator::median;
  int budget_trials = 1;
  std::string budget_keyword = "Wait";
};

struct SelectorConfig {
  std::size_t n = 0;  // 0: take the candidate count as given
  int trials = 10;
  std::uint64_t rng_seed = 0;
  std::string question;
  int scale = 10;
};

inline void check_protocol(const ProtocolConfig& c) {
  if (c.k < 1) throw ConfigError("repeats must be >= 1");
  if (!(c.tie_margin >= 0.0)) throw ConfigError("tie_margin must be >= 0");
}

inline void check_scaling(const ScalingConfig& c) {
  if (c.vote_k < 1) throw ConfigError("vote_k must be >= 1");
  if (c.budget_trials < 0) throw ConfigError("budget_trials must be >= 0");
  if (c.budget_keyword.empty()) throw ConfigError("budget_keyword must be nonempty");
}

/// Candidate order for sample `trial` of `task`.
inline Permutation order_for(const EvalTask& task, int trial, const ProtocolConfig& config) {
  const auto n = task.candidates.size();
  switch (config.order_mode) {
    case OrderMode::fixed: return Permutation::identity(n);
    case OrderMode::reverse_both: return trial % 2 ? Permutation::reversed(n) : Permutation::identity(n);
    case OrderMode::random: {
      Rng rng(mix_seed(config.rng_seed, task.id, 0x6f72646572ULL + static_cast<std::uint64_t>(trial)));
      return Permutation::random(n, rng);
    }
  }
  return Permutation::identity(n);
}

// ---------------------------------------------------------------------------
// Aggregates
// ---------------------------------------------------------------------------

/// Several judgments of one task folded into one decision, in canonical order.
struct Aggregate {
  std::string task_id;
  FormatKind kind = FormatKind::pairwise;
  std::string method;
  std::vector<double> scores;  // per candidate; decimal formats hold one value
  std::optional<Preference> preference;
  std::optional<PairLabel> label;
  std::optional<RankOrder> ranking;
  std::size_t samples_used = 0;
  std::size_t samples_failed = 0;
  std::vector<std::string> flags;
  std::vector<Judgment> samples;

  bool has_flag(const std::string& f) const { return std::find(flags.begin(), flags.end(), f) != flags.end(); }
};

inline void to_json(json& j, const Aggregate& a) {
  j = json{{"task_id", a.task_id},
           {"format", to_string(a.kind)},
           {"method", a.method},
           {"scores", a.scores},
           {"samples_used", a.samples_used},
           {"samples_failed", a.samples_failed}};
  if (a.preference) j["preference"] = to_string(*a.preference);
  if (a.label) j["label"] = to_string(*a.label);
  if (a.ranking) j["ranking"] = a.ranking->letters;
  if (!a.flags.empty()) j["flags"] = a.flags;
}

inline void from_json(const json& j, Aggregate& a) {
  a = Aggregate{};
  a.task_id = detail::get_required<std::string>(j, "task_id");
  a.kind = format_kind_from_string(detail::get_required<std::string>(j, "format"));
  a.method = j.value("method", std::string());
  a.scores = j.value("scores", std::vector<double>{});
  a.samples_used = j.value("samples_used", std::size_t{0});
  a.samples_failed = j.value("samples_failed", std::size_t{0});
  if (j.contains("preference")) a.preference = preference_from_string(j.at("preference").get<std::string>());
  if (j.contains("label")) a.label = pair_label_from_string(j.at("label").get<std::string>());
  if (j.contains("ranking")) a.ranking = RankOrder{j.at("ranking").get<std::string>()};
  a.flags = j.value("flags", std::vector<std::string>{});
}

namespace detail {

// Numeric reading of a verdict per candidate; rankings become n - position.
inline std::optional<std::vector<double>> numeric(const Verdict& v) {
  if (auto* s = std::get_if<ScoreList>(&v)) return std::vector<double>(s->values.begin(), s->values.end());
  if (auto* d = std::get_if<DecimalValue>(&v)) return std::vector<double>{d->value};
  if (auto* r = std::get_if<RankOrder>(&v)) {
    std::vector<double> out(r->letters.size());
    for (std::size_t pos = 0; pos < r->letters.size(); ++pos)
      out[static_cast<std::size_t>(r->letters[pos] - 'A')] = static_cast<double>(r->letters.size() - pos);
    return out;
  }
  return std::nullopt;
}

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2.0;
}

inline double mean(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline std::vector<Judgment> collect_samples(Judge& judge, const EvalTask& task, int k, const ProtocolConfig& config) {
  std::vector<Judgment> out;
  out.reserve(static_cast<std::size_t>(k));
  for (int t = 0; t < k; ++t) out.push_back(judge.judge(task, order_for(task, t, config), t));
  return out;
}

inline Aggregate start(const EvalTask& task, std::vector<Judgment> samples, std::string method) {
  Aggregate a;
  a.task_id = task.id;
  a.kind = task.format.kind;
  a.method = std::move(method);
  for (const auto& s : samples) (s.ok() ? a.samples_used : a.samples_failed)++;
  a.samples = std::move(samples);
  if (a.samples_used == 0) throw AllSamplesFailed("all " + std::to_string(a.samples.size()) + " samples of " + task.id + " failed");
  if (a.samples_failed) a.flags.push_back("samples_failed");
  return a;
}

inline std::vector<std::vector<double>> per_candidate(const Aggregate& a) {
  std::vector<std::vector<double>> cols;
  for (const auto& s : a.samples) {
    if (!s.ok()) continue;
    auto v = numeric(*s.verdict);
    if (!v) continue;
    if (cols.empty()) cols.resize(v->size());
    if (v->size() != cols.size()) throw PreconditionError("samples of " + a.task_id + " disagree on arity");
    for (std::size_t i = 0; i < v->size(); ++i) cols[i].push_back((*v)[i]);
  }
  return cols;
}

inline void derive(Aggregate& a, const EvalTask& task, double tie_margin) {
  if (a.scores.size() == 2 && !a.preference) a.preference = scores_to_preference(a.scores[0], a.scores[1], tie_margin);
  if (task.format.kind == FormatKind::batch_ranking && !a.scores.empty()) {
    a.ranking = scores_to_ranking(a.scores);
    for (std::size_t i = 0; i < a.scores.size(); ++i)
      for (std::size_t j = i + 1; j < a.scores.size(); ++j)
        if (a.scores[i] == a.scores[j] && !a.has_flag("batch_tie")) a.flags.push_back("batch_tie");
  }
}

template <typename T>
std::vector<T> modal(const std::vector<T>& votes) {
  std::map<T, std::size_t> counts;
  for (const auto& v : votes) ++counts[v];
  std::size_t best = 0;
  for (const auto& [_, c] : counts) best = std::max(best, c);
  std::vector<T> out;
  for (const auto& [v, c] : counts)
    if (c == best) out.push_back(v);
  return out;
}

}  // namespace detail

/// Averages per-candidate scores over the parseable samples; the preference
/// follows from the averaged scores. Label-only formats are voted instead.
inline Aggregate aggregate_mean(const EvalTask& task, std::vector<Judgment> samples, double tie_margin = 0.0);

/// Modal class wins. Even splits go to TIE when the format allows ties,
/// otherwise to a seeded coin among the modal classes. Scores use the
/// aggregator per candidate.
inline Aggregate aggregate_vote(const EvalTask& task, std::vector<Judgment> samples, ScoreAggregator aggregator,
                                std::uint64_t rng_seed, double tie_margin = 0.0) {
  Aggregate a = detail::start(task, std::move(samples), "vote");
  Rng coin(mix_seed(rng_seed, task.id, 0x766f7465ULL));
  if (task.format.kind == FormatKind::four_way) {
    std::vector<PairLabel> votes;
    for (const auto& s : a.samples)
      if (s.ok())
        if (auto* p = std::get_if<PairChoice>(&*s.verdict)) votes.push_back(p->label);
    auto top = detail::modal(votes);
    if (top.size() > 1) {
      a.flags.push_back("vote_tie");
      std::vector<PairLabel> ties;
      for (auto l : top)
        if (l == PairLabel::tie_good || l == PairLabel::tie_bad) ties.push_back(l);
      if (task.format.tie_allowed && ties.size() == 1) top = ties;
    }
    a.label = top[coin.index(top.size())];
    a.preference = to_preference(*a.label);
    return a;
  }

  const auto cols = detail::per_candidate(a);
  for (const auto& c : cols)
    a.scores.push_back(aggregator == ScoreAggregator::median ? detail::median(c) : detail::mean(c));
  if (cols.size() == 2) {
    std::vector<Preference> votes;
    for (const auto& s : a.samples)
      if (s.ok())
        if (auto p = verdict_preference(*s.verdict, tie_margin)) votes.push_back(*p);
    auto top = detail::modal(votes);
    if (top.size() > 1) {
      a.flags.push_back("vote_tie");
      a.preference = task.format.tie_allowed ? Preference::tie : top[coin.index(top.size())];
    } else {
      a.preference = top.front();
    }
  }
  detail::derive(a, task, tie_margin);
  return a;
}

inline Aggregate aggregate_mean(const EvalTask& task, std::vector<Judgment> samples, double tie_margin) {
  if (task.format.kind == FormatKind::four_way) {
    auto a = aggregate_vote(task, std::move(samples), ScoreAggregator::median, 0, tie_margin);
    a.method = "vote";
    return a;
  }
  Aggregate a = detail::start(task, std::move(samples), "mean");
  for (const auto& c : detail::per_candidate(a)) a.scores.push_back(detail::mean(c));
  detail::derive(a, task, tie_margin);
  return a;
}

/// Collects k samples with candidate order per `order_mode`, then folds them.
inline Aggregate repeated_judgment(Judge& judge, const EvalTask& task, const ProtocolConfig& config = {}) {
  check_protocol(config);
  auto samples = detail::collect_samples(judge, task, config.k, config);
  if (config.aggregation == Aggregation::vote)
    return aggregate_vote(task, std::move(samples), ScoreAggregator::median, config.rng_seed, config.tie_margin);
  return aggregate_mean(task, std::move(samples), config.tie_margin);
}

inline Aggregate majority_vote(Judge& judge, const EvalTask& task, const ScalingConfig& scaling,
                               const ProtocolConfig& protocol = {}) {
  check_scaling(scaling);
  auto samples = detail::collect_samples(judge, task, scaling.vote_k, protocol);
  return aggregate_vote(task, std::move(samples), scaling.score_aggregator, protocol.rng_seed, protocol.tie_margin);
}

// ---------------------------------------------------------------------------
// Order reversal
// ---------------------------------------------------------------------------

struct Consistency {
  bool consistent = false;
  std::optional<Preference> winner;
  Judgment forward;
  Judgment flipped;
  std::vector<std::string> flags;
};

/// Judges both candidate orders of a two-candidate task; the canonical winner
/// stands only if both orders name it.
inline Consistency reverse_order_consistent(Judge& judge, const EvalTask& task, double tie_margin = 0.0) {
  if (task.candidates.size() != 2) throw PreconditionError("order reversal needs a two-candidate task");
  Consistency c;
  c.forward = judge.judge(task, Permutation::identity(2), 0);
  c.flipped = judge.judge(task, Permutation::reversed(2), 1);
  if (!c.forward.ok() || !c.flipped.ok()) {
    c.flags.push_back("parse_failure");
    return c;
  }
  auto a = verdict_preference(*c.forward.verdict, tie_margin);
  auto b = verdict_preference(*c.flipped.verdict, tie_margin);
  if (a && b && *a == *b) {
    c.consistent = true;
    c.winner = a;
  }
  return c;
}

// ---------------------------------------------------------------------------
// Budget forcing
// ---------------------------------------------------------------------------

/// Trial 0 is a plain judgment. Each later trial cuts the last good text at
/// its final "</think>", appends the keyword and lets the model continue.
/// Returns T + 1 judgments.
inline std::vector<Judgment> budget_force(Judge& judge, const EvalTask& task, const ScalingConfig& scaling,
                                          const Permutation& perm) {
  check_scaling(scaling);
  std::vector<Judgment> out;
  out.push_back(judge.judge(task, perm, 0));
  if (scaling.budget_trials == 0) return out;
  if (!judge.backend().supports_continuation())
    throw UnsupportedCapability("budget forcing needs a backend that can continue an assistant turn");

  const auto messages = judge.prompt(task, perm);
  std::string good = out.front().raw_text;
  for (int t = 1; t <= scaling.budget_trials; ++t) {
    const auto cut = good.rfind(kThinkClose);
    std::string prefix(trim_right(std::string_view(good).substr(0, cut)));
    prefix += (prefix.empty() ? "" : " ") + scaling.budget_keyword;
    const auto params = judge.params_for(task, t);
    Judgment j = judge.blank(task, perm, t, params);
    try {
      auto c = judge.backend().continue_completion(messages, prefix, params, {task.id, t});
      j = judge.interpret(task, perm, std::move(j), prefix + c.text);
    } catch (const TransportError& e) {
      j.raw_text = prefix;
      j.error = JudgmentError{"TransportError", e.what()};
    } catch (const ProtocolError& e) {
      j.raw_text = prefix;
      j.error = JudgmentError{"ProtocolError", e.what()};
    }
    if (j.ok()) good = j.raw_text;
    out.push_back(std::move(j));
  }
  return out;
}

inline std::vector<Judgment> budget_force(Judge& judge, const EvalTask& task, const ScalingConfig& scaling) {
  return budget_force(judge, task, scaling, Permutation::identity(task.candidates.size()));
}

// ---------------------------------------------------------------------------
// Best-of-N
// ---------------------------------------------------------------------------

struct Selection {
  std::string prompt_id;
  std::vector<std::optional<int>> scores;  // nullopt: unscored
  std::vector<std::size_t> picks;          // one per trial
  std::vector<Judgment> judgments;
};

inline EvalTask single_score_task(const std::string& id, const std::string& question, const std::string& response,
                                  int scale) {
  EvalTask t;
  t.id = id;
  t.format.kind = FormatKind::single_score;
  t.format.scale = scale;
  t.question = question;
  t.candidates = {Candidate{response, {}}};
  return t;
}

/// Scores each response once with the single-score format, then picks the
/// argmax in each of R trials, breaking ties uniformly with a seeded draw.
inline Selection best_of_n(const std::string& prompt_id, const std::vector<std::string>& responses, Judge& judge,
                           const SelectorConfig& config) {
  if (responses.empty()) throw PreconditionError("best-of-n needs at least one response");
  if (config.n && config.n != responses.size())
    throw PreconditionError("expected " + std::to_string(config.n) + " responses for " + prompt_id + ", got " +
                            std::to_string(responses.size()));
  if (config.trials < 1) throw ConfigError("trials must be >= 1");
  Selection sel;
  sel.prompt_id = prompt_id;
  for (std::size_t i = 0; i < responses.size(); ++i) {
    auto task = single_score_task(prompt_id + "#" + std::to_string(i), config.question, responses[i], config.scale);
    auto j = judge.judge(task, Permutation::identity(1), 0);
    std::optional<int> s;
    if (j.ok())
      if (auto* v = std::get_if<ScoreList>(&*j.verdict)) s = v->values.at(0);
    sel.scores.push_back(s);
    sel.judgments.push_back(std::move(j));
  }
  std::vector<std::size_t> best;
  int top = 0;
  for (std::size_t i = 0; i < sel.scores.size(); ++i) {
    if (!sel.scores[i]) continue;
    if (best.empty() || *sel.scores[i] > top) {
      best = {i};
      top = *sel.scores[i];
    } else if (*sel.scores[i] == top) {
      best.push_back(i);
    }
  }
  if (best.empty()) throw AllSamplesFailed("no response for " + prompt_id + " could be scored");
  for (int t = 0; t < config.trials; ++t) {
    Rng rng(mix_seed(config.rng_seed, prompt_id, static_cast<std::uint64_t>(t)));
    sel.picks.push_back(best[rng.index(best.size())]);
  }
  return sel;
}

// ---------------------------------------------------------------------------
// DPO triplets
// ---------------------------------------------------------------------------

struct PromptItem {
  std::string id;
  std::string text;
  std::vector<Attachment> attachments;
};

inline void to_json(json& j, const PromptItem& p) {
  j = json{{"id", p.id}, {"prompt", p.text}};
  if (!p.attachments.empty()) j["attachments"] = p.attachments;
}

inline void from_json(const json& j, PromptItem& p) {
  p.id = detail::get_required<std::string>(j, "id");
  p.text = detail::get_required<std::string>(j, "prompt");
  p.attachments = j.value("attachments", std::vector<Attachment>{});
}

/// Produces one policy response for a prompt at a sampling temperature.
class Sampler {
 public:
  virtual ~Sampler() = default;
  virtual std::string sample(const PromptItem& prompt, double temperature) = 0;
};

/// Samples through a chat backend with a plain user turn.
class BackendSampler : public Sampler {
 public:
  BackendSampler(std::shared_ptr<Backend> backend, GenerationParams params)
      : backend_(std::move(backend)), params_(std::move(params)) {}

  std::string sample(const PromptItem& prompt, double temperature) override {
    MessageList m;
    m.messages.push_back({"system", {ContentPart::of_text("You are a helpful assistant.")}});
    std::vector<ContentPart> user{ContentPart::of_text(prompt.text)};
    for (const auto& a : prompt.attachments) user.push_back(ContentPart::of_attachment(a));
    m.messages.push_back({"user", std::move(user)});
    auto p = params_;
    p.temperature = temperature;
    p.seed = static_cast<std::int64_t>(mix_seed(0, prompt.id, static_cast<std::uint64_t>(temperature * 1000)) >> 1);
    return backend_->complete(m, p, {prompt.id, 0}).text;
  }

 private:
  std::shared_ptr<Backend> backend_;
  GenerationParams params_;
};

struct DpoDrop {
  std::string id;
  std::string reason;
};

struct DpoResult {
  std::vector<PreferenceTriplet> triplets;
  std::vector<DpoDrop> drops;
  std::size_t prompts = 0;
  double retention() const {
    return prompts ? static_cast<double>(triplets.size()) / static_cast<double>(prompts) : 0.0;
  }
};

/// Judges (low-temperature, high-temperature) responses in both orders with
/// the pairwise format and keeps the prompt only when the low-temperature
/// response strictly wins both times. Stored score pairs are canonical:
/// (chosen, rejected).
inline DpoResult build_dpo_triplets(const std::vector<PromptItem>& prompts, Sampler& sampler, Judge& judge,
                                    std::pair<double, double> temps = {0.8, 1.2}, int scale = 10) {
  DpoResult out;
  out.prompts = prompts.size();
  for (const auto& p : prompts) {
    const std::string lo = sampler.sample(p, temps.first);
    const std::string hi = sampler.sample(p, temps.second);
    EvalTask task;
    task.id = p.id;
    task.format.kind = FormatKind::pairwise;
    task.format.scale = scale;
    task.question = p.text;
    task.context_attachments = p.attachments;
    task.candidates = {Candidate{lo, {}}, Candidate{hi, {}}};
    auto fwd = judge.judge(task, Permutation::identity(2), 0);
    auto flp = judge.judge(task, Permutation::reversed(2), 1);
    if (!fwd.ok() || !flp.ok()) {
      out.drops.push_back({p.id, "parse failure"});
      continue;
    }
    const auto& f = std::get<ScoreList>(*fwd.verdict).values;
    const auto& r = std::get<ScoreList>(*flp.verdict).values;
    if (!(f[0] > f[1])) {
      out.drops.push_back({p.id, f[0] == f[1] ? "forward tie" : "high temperature won"});
      continue;
    }
    if (!(r[0] > r[1])) {
      out.drops.push_back({p.id, "inconsistent after flip"});
      continue;
    }
    PreferenceTriplet t;
    t.id = p.id;
    t.prompt = p.text;
    t.prompt_attachments = p.attachments;
    t.chosen = lo;
    t.rejected = hi;
    t.scores_forward = {f[0], f[1]};
    t.scores_flipped = {r[0], r[1]};
    t.source_temps = temps;
    out.triplets.push_back(std::move(t));
  }
  return out;
}

}  // namespace flexjudge
