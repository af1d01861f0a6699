#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "flexjudge/error.hpp"
#include "flexjudge/util.hpp"

namespace flexjudge {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Evaluation formats
// ---------------------------------------------------------------------------

enum class FormatKind { single_score, pairwise, four_way, batch_ranking, decimal_score };

inline const char* to_string(FormatKind k) {
  switch (k) {
    case FormatKind::single_score: return "SingleScore";
    case FormatKind::pairwise: return "Pairwise";
    case FormatKind::four_way: return "FourWay";
    case FormatKind::batch_ranking: return "BatchRanking";
    case FormatKind::decimal_score: return "DecimalScore";
  }
  return "?";
}

inline FormatKind format_kind_from_string(const std::string& s) {
  for (auto k : {FormatKind::single_score, FormatKind::pairwise, FormatKind::four_way,
                 FormatKind::batch_ranking, FormatKind::decimal_score}) {
    if (s == to_string(k)) return k;
  }
  throw SchemaError("unknown format kind '" + s + "'");
}

inline bool is_integer_kind(FormatKind k) {
  return k == FormatKind::single_score || k == FormatKind::pairwise || k == FormatKind::batch_ranking;
}

struct EvalFormat {
  FormatKind kind = FormatKind::pairwise;
  int scale = 10;
  double decimal_min = 1.0;
  double decimal_max = 5.0;
  bool tie_allowed = false;
  int n_candidates = 0;

  std::size_t expected_candidates() const {
    switch (kind) {
      case FormatKind::single_score:
      case FormatKind::decimal_score: return 1;
      case FormatKind::pairwise:
      case FormatKind::four_way: return 2;
      case FormatKind::batch_ranking: return n_candidates < 0 ? 0 : static_cast<std::size_t>(n_candidates);
    }
    return 0;
  }

  friend bool operator==(const EvalFormat&, const EvalFormat&) = default;
};

// ---------------------------------------------------------------------------
// Attachments and tasks
// ---------------------------------------------------------------------------

enum class MediaKind { text, image, video, audio, other };

inline const char* to_string(MediaKind k) {
  switch (k) {
    case MediaKind::text: return "text";
    case MediaKind::image: return "image";
    case MediaKind::video: return "video";
    case MediaKind::audio: return "audio";
    case MediaKind::other: return "other";
  }
  return "other";
}

inline MediaKind media_kind_from_string(const std::string& s) {
  for (auto k : {MediaKind::text, MediaKind::image, MediaKind::video, MediaKind::audio, MediaKind::other}) {
    if (s == to_string(k)) return k;
  }
  throw SchemaError("unknown media kind '" + s + "'");
}

/// Opaque media reference. Exactly one of `uri` and `data` (base64) is set.
struct Attachment {
  MediaKind media_kind = MediaKind::other;
  std::string uri;
  std::string data;
  std::string mime;

  friend bool operator==(const Attachment&, const Attachment&) = default;
};

struct Candidate {
  std::string text;
  std::vector<Attachment> attachments;

  friend bool operator==(const Candidate&, const Candidate&) = default;
};

// ---------------------------------------------------------------------------
// Verdicts
// ---------------------------------------------------------------------------

enum class PairLabel { a_better, b_better, tie_good, tie_bad };

inline const char* to_string(PairLabel l) {
  switch (l) {
    case PairLabel::a_better: return "A_BETTER";
    case PairLabel::b_better: return "B_BETTER";
    case PairLabel::tie_good: return "TIE_GOOD";
    case PairLabel::tie_bad: return "TIE_BAD";
  }
  return "?";
}

inline PairLabel pair_label_from_string(const std::string& s) {
  for (auto l : {PairLabel::a_better, PairLabel::b_better, PairLabel::tie_good, PairLabel::tie_bad}) {
    if (s == to_string(l)) return l;
  }
  throw SchemaError("unknown pair label '" + s + "'");
}

enum class Preference { a, b, tie };

inline const char* to_string(Preference p) {
  switch (p) {
    case Preference::a: return "A";
    case Preference::b: return "B";
    case Preference::tie: return "TIE";
  }
  return "?";
}

inline Preference preference_from_string(const std::string& s) {
  if (s == "A") return Preference::a;
  if (s == "B") return Preference::b;
  if (s == "TIE") return Preference::tie;
  throw SchemaError("unknown preference '" + s + "'");
}

inline Preference to_preference(PairLabel l) {
  switch (l) {
    case PairLabel::a_better: return Preference::a;
    case PairLabel::b_better: return Preference::b;
    default: return Preference::tie;
  }
}

struct ScoreList {
  std::vector<int> values;
  friend bool operator==(const ScoreList&, const ScoreList&) = default;
};

struct PairChoice {
  PairLabel label = PairLabel::tie_good;
  friend bool operator==(const PairChoice&, const PairChoice&) = default;
};

/// Candidate letters best-first, e.g. "CADB".
struct RankOrder {
  std::string letters;
  friend bool operator==(const RankOrder&, const RankOrder&) = default;
};

struct DecimalValue {
  double value = 0.0;
  friend bool operator==(const DecimalValue&, const DecimalValue&) = default;
};

using Verdict = std::variant<ScoreList, PairChoice, RankOrder, DecimalValue>;

inline bool is_letter_permutation(std::string_view letters, std::size_t n) {
  if (letters.size() != n) return false;
  std::vector<bool> seen(n, false);
  for (char c : letters) {
    if (c < 'A' || static_cast<std::size_t>(c - 'A') >= n) return false;
    auto i = static_cast<std::size_t>(c - 'A');
    if (seen[i]) return false;
    seen[i] = true;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Tasks
// ---------------------------------------------------------------------------

struct EvalTask {
  std::string id;
  EvalFormat format;
  std::string question;
  std::vector<Candidate> candidates;
  std::vector<Attachment> context_attachments;
  std::optional<Verdict> human_label;
  std::optional<std::string> group;
  json extra = json::object();

  friend bool operator==(const EvalTask&, const EvalTask&) = default;
};

struct Violation {
  std::string field;
  std::string rule;
  friend bool operator==(const Violation&, const Violation&) = default;
};

namespace detail {

inline bool mime_matches(MediaKind k, const std::string& mime) {
  if (mime.empty()) return true;
  auto prefix = mime.substr(0, mime.find('/'));
  switch (k) {
    case MediaKind::text: return prefix == "text";
    case MediaKind::image: return prefix == "image";
    case MediaKind::video: return prefix == "video";
    case MediaKind::audio: return prefix == "audio";
    case MediaKind::other: return true;
  }
  return true;
}

inline void check_attachment(const Attachment& a, const std::string& field, std::vector<Violation>& out) {
  if (a.uri.empty() == a.data.empty()) out.push_back({field, "exactly one of uri/data must be set"});
  if (!mime_matches(a.media_kind, a.mime))
    out.push_back({field + ".mime", "mime '" + a.mime + "' inconsistent with media kind " + to_string(a.media_kind)});
}

inline bool has_one_decimal(double v) {
  double scaled = v * 10.0;
  return std::abs(scaled - std::round(scaled)) < 1e-9;
}

}  // namespace detail

inline std::vector<Violation> validate_format(const EvalFormat& f, const std::string& field = "format") {
  std::vector<Violation> out;
  if (is_integer_kind(f.kind) && f.scale != 5 && f.scale != 10)
    out.push_back({field + ".scale", "scale must be 5 or 10"});
  if (f.kind == FormatKind::batch_ranking && f.n_candidates < 3)
    out.push_back({field + ".n_candidates", "n_candidates must be >= 3 for BatchRanking"});
  if (f.kind == FormatKind::decimal_score && !(f.decimal_min < f.decimal_max))
    out.push_back({field + ".decimal_range", "decimal_range.min must be < max"});
  if (f.tie_allowed && f.kind != FormatKind::pairwise)
    out.push_back({field + ".tie_allowed", "tie_allowed applies to Pairwise only"});
  return out;
}

/// Checks a verdict against the format it claims to answer. Gold decimals are
/// human means and may carry more than one decimal; `strict_decimal` enforces
/// the one-decimal rule for parsed model output.
inline std::vector<Violation> validate_verdict(const Verdict& v, const EvalFormat& f, std::size_t n_candidates,
                                               const std::string& field, bool strict_decimal) {
  std::vector<Violation> out;
  if (auto* s = std::get_if<ScoreList>(&v)) {
    for (int x : s->values)
      if (x < 1 || x > f.scale) {
        out.push_back({field, "score " + std::to_string(x) + " outside [1, " + std::to_string(f.scale) + "]"});
        break;
      }
  } else if (auto* r = std::get_if<RankOrder>(&v)) {
    if (!is_letter_permutation(r->letters, n_candidates))
      out.push_back({field, "ranking '" + r->letters + "' is not a permutation of the first " +
                                std::to_string(n_candidates) + " letters"});
  } else if (auto* d = std::get_if<DecimalValue>(&v)) {
    if (d->value < f.decimal_min || d->value > f.decimal_max) out.push_back({field, "decimal outside range"});
    if (strict_decimal && !detail::has_one_decimal(d->value)) out.push_back({field, "decimal must have one place"});
  }
  return out;
}

inline std::vector<Violation> validate_task(const EvalTask& task) {
  std::vector<Violation> out;
  if (task.id.empty()) out.push_back({"id", "id must be nonempty"});
  auto fv = validate_format(task.format);
  out.insert(out.end(), fv.begin(), fv.end());
  // n_candidates violations already explain a BatchRanking count mismatch.
  bool batch_bad = task.format.kind == FormatKind::batch_ranking && task.format.n_candidates < 3;
  if (!batch_bad && task.candidates.size() != task.format.expected_candidates())
    out.push_back({"candidates", "expected " + std::to_string(task.format.expected_candidates()) +
                                     " candidates for " + to_string(task.format.kind) + ", got " +
                                     std::to_string(task.candidates.size())});
  for (std::size_t i = 0; i < task.candidates.size(); ++i)
    for (std::size_t j = 0; j < task.candidates[i].attachments.size(); ++j)
      detail::check_attachment(task.candidates[i].attachments[j],
                               "candidates[" + std::to_string(i) + "].attachments[" + std::to_string(j) + "]", out);
  for (std::size_t j = 0; j < task.context_attachments.size(); ++j)
    detail::check_attachment(task.context_attachments[j], "context_attachments[" + std::to_string(j) + "]", out);
  if (task.human_label) {
    auto vv = validate_verdict(*task.human_label, task.format, task.candidates.size(), "human_label", false);
    out.insert(out.end(), vv.begin(), vv.end());
  }
  return out;
}

inline std::vector<Violation> validate_dataset(const std::vector<EvalTask>& tasks) {
  std::vector<Violation> out;
  std::set<std::string> ids;
  for (const auto& t : tasks) {
    for (auto v : validate_task(t)) {
      v.field = t.id + "." + v.field;
      out.push_back(std::move(v));
    }
    if (!ids.insert(t.id).second) out.push_back({t.id + ".id", "duplicate task id"});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Generation snapshot, judgments, triplets
// ---------------------------------------------------------------------------

struct GenerationParams {
  std::string model;
  double temperature = 0.0;
  int max_tokens = 4096;
  std::vector<std::string> stop;
  std::optional<std::int64_t> seed;

  friend bool operator==(const GenerationParams&, const GenerationParams&) = default;
};

inline void check_params(const GenerationParams& p) {
  if (!(p.temperature >= 0.0)) throw PreconditionError("temperature must be >= 0");
  if (p.max_tokens <= 0) throw PreconditionError("max_tokens must be > 0");
}

struct JudgmentError {
  std::string code;
  std::string message;
  friend bool operator==(const JudgmentError&, const JudgmentError&) = default;
};

/// One model output for one (task, trial, permutation). `permutation[i]` is the
/// canonical index of the candidate rendered in slot i; the verdict is always
/// stated in canonical order.
struct Judgment {
  std::string task_id;
  std::vector<int> permutation;
  std::string raw_text;
  std::string think;
  std::optional<Verdict> verdict;
  GenerationParams gen;
  int trial_index = 0;
  std::optional<JudgmentError> error;
  std::vector<std::string> flags;

  bool ok() const { return verdict.has_value(); }
  friend bool operator==(const Judgment&, const Judgment&) = default;
};

struct PreferenceTriplet {
  std::string id;
  std::string prompt;
  std::vector<Attachment> prompt_attachments;
  std::string chosen;
  std::string rejected;
  std::pair<int, int> scores_forward{0, 0};
  std::pair<int, int> scores_flipped{0, 0};
  std::pair<double, double> source_temps{0.8, 1.2};

  bool sound() const {
    return scores_forward.first > scores_forward.second && scores_flipped.first > scores_flipped.second;
  }
  friend bool operator==(const PreferenceTriplet&, const PreferenceTriplet&) = default;
};

struct ChatTurn {
  std::string role;
  std::string content;
  friend bool operator==(const ChatTurn&, const ChatTurn&) = default;
};

/// SFT example in chat-message form.
struct SeedRecord {
  std::string id;
  std::vector<ChatTurn> messages;
  FormatKind format = FormatKind::pairwise;
  int scale = 10;
  json extra = json::object();

  const std::string& assistant_text() const {
    for (auto it = messages.rbegin(); it != messages.rend(); ++it)
      if (it->role == "assistant") return it->content;
    throw SchemaError("seed record " + id + " has no assistant turn");
  }
  std::string& assistant_text() {
    return const_cast<std::string&>(static_cast<const SeedRecord&>(*this).assistant_text());
  }
  friend bool operator==(const SeedRecord&, const SeedRecord&) = default;
};

// ---------------------------------------------------------------------------
// JSON mapping
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
T get_required(const json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) throw SchemaError(std::string("missing field '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw SchemaError(std::string("field '") + key + "': " + e.what());
  }
}

inline json collect_unknown(const json& j, std::initializer_list<const char*> known) {
  json extra = json::object();
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool found = std::any_of(known.begin(), known.end(), [&](const char* k) { return it.key() == k; });
    if (!found) extra[it.key()] = it.value();
  }
  return extra;
}

inline void merge_extra(json& j, const json& extra) {
  for (auto it = extra.begin(); it != extra.end(); ++it)
    if (!j.contains(it.key())) j[it.key()] = it.value();
}

}  // namespace detail

inline void to_json(json& j, const EvalFormat& f) {
  j = json{{"kind", to_string(f.kind)}};
  if (is_integer_kind(f.kind)) j["scale"] = f.scale;
  if (f.kind == FormatKind::decimal_score) j["decimal_range"] = {f.decimal_min, f.decimal_max};
  if (f.kind == FormatKind::pairwise) j["tie_allowed"] = f.tie_allowed;
  if (f.kind == FormatKind::batch_ranking) j["n_candidates"] = f.n_candidates;
}

inline void from_json(const json& j, EvalFormat& f) {
  f = EvalFormat{};
  f.kind = format_kind_from_string(detail::get_required<std::string>(j, "kind"));
  f.scale = j.value("scale", 10);
  if (j.contains("decimal_range")) {
    const auto& r = j.at("decimal_range");
    if (!r.is_array() || r.size() != 2) throw SchemaError("decimal_range must be [min, max]");
    f.decimal_min = r[0].get<double>();
    f.decimal_max = r[1].get<double>();
  }
  f.tie_allowed = j.value("tie_allowed", false);
  f.n_candidates = j.value("n_candidates", 0);
}

inline void to_json(json& j, const Attachment& a) {
  j = json{{"media_kind", to_string(a.media_kind)}};
  if (!a.uri.empty()) j["uri"] = a.uri;
  if (!a.data.empty()) j["data"] = a.data;
  if (!a.mime.empty()) j["mime"] = a.mime;
}

inline void from_json(const json& j, Attachment& a) {
  a.media_kind = media_kind_from_string(j.value("media_kind", std::string("other")));
  a.uri = j.value("uri", std::string());
  a.data = j.value("data", std::string());
  a.mime = j.value("mime", std::string());
}

inline void to_json(json& j, const Candidate& c) {
  j = json{{"text", c.text}};
  if (!c.attachments.empty()) j["attachments"] = c.attachments;
}

inline void from_json(const json& j, Candidate& c) {
  if (j.is_string()) {
    c = Candidate{j.get<std::string>(), {}};
    return;
  }
  c.text = j.value("text", std::string());
  c.attachments = j.value("attachments", std::vector<Attachment>{});
}

inline void to_json(json& j, const Verdict& v) {
  std::visit(
      [&](const auto& x) {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, ScoreList>) {
          j = json{{"kind", "scores"}, {"scores", x.values}};
        } else if constexpr (std::is_same_v<T, PairChoice>) {
          j = json{{"kind", "pair"}, {"label", to_string(x.label)}};
        } else if constexpr (std::is_same_v<T, RankOrder>) {
          j = json{{"kind", "ranking"}, {"ranking", x.letters}};
        } else {
          j = json{{"kind", "decimal"}, {"value", x.value}};
        }
      },
      v);
}

inline void from_json(const json& j, Verdict& v) {
  auto kind = detail::get_required<std::string>(j, "kind");
  if (kind == "scores") {
    v = ScoreList{detail::get_required<std::vector<int>>(j, "scores")};
  } else if (kind == "pair") {
    v = PairChoice{pair_label_from_string(detail::get_required<std::string>(j, "label"))};
  } else if (kind == "ranking") {
    v = RankOrder{detail::get_required<std::string>(j, "ranking")};
  } else if (kind == "decimal") {
    v = DecimalValue{detail::get_required<double>(j, "value")};
  } else {
    throw SchemaError("unknown verdict kind '" + kind + "'");
  }
}

inline void to_json(json& j, const EvalTask& t) {
  j = json{{"id", t.id}, {"format", t.format}, {"question", t.question}, {"candidates", t.candidates}};
  if (!t.context_attachments.empty()) j["context_attachments"] = t.context_attachments;
  if (t.human_label) j["human_label"] = *t.human_label;
  if (t.group) j["group"] = *t.group;
  detail::merge_extra(j, t.extra);
}

inline void from_json(const json& j, EvalTask& t) {
  t.id = detail::get_required<std::string>(j, "id");
  t.format = detail::get_required<EvalFormat>(j, "format");
  t.question = j.value("question", std::string());
  t.candidates = detail::get_required<std::vector<Candidate>>(j, "candidates");
  t.context_attachments = j.value("context_attachments", std::vector<Attachment>{});
  t.human_label.reset();
  if (j.contains("human_label") && !j.at("human_label").is_null()) t.human_label = j.at("human_label").get<Verdict>();
  t.group.reset();
  if (j.contains("group") && j.at("group").is_string()) t.group = j.at("group").get<std::string>();
  t.extra = detail::collect_unknown(
      j, {"id", "format", "question", "candidates", "context_attachments", "human_label", "group"});
}

inline void to_json(json& j, const GenerationParams& p) {
  j = json{{"model", p.model}, {"temperature", p.temperature}, {"max_tokens", p.max_tokens}};
  if (!p.stop.empty()) j["stop"] = p.stop;
  if (p.seed) j["seed"] = *p.seed;
}

inline void from_json(const json& j, GenerationParams& p) {
  p.model = j.value("model", std::string());
  p.temperature = j.value("temperature", 0.0);
  p.max_tokens = j.value("max_tokens", 4096);
  p.stop = j.value("stop", std::vector<std::string>{});
  p.seed.reset();
  if (j.contains("seed") && !j.at("seed").is_null()) p.seed = j.at("seed").get<std::int64_t>();
}

inline void to_json(json& j, const Judgment& x) {
  j = json{{"task_id", x.task_id},   {"permutation", x.permutation}, {"raw_text", x.raw_text},
           {"think", x.think},       {"gen", x.gen},                 {"trial_index", x.trial_index}};
  if (x.verdict) j["verdict"] = *x.verdict;
  if (x.error) j["error"] = json{{"code", x.error->code}, {"message", x.error->message}};
  if (!x.flags.empty()) j["flags"] = x.flags;
}

inline void from_json(const json& j, Judgment& x) {
  x.task_id = detail::get_required<std::string>(j, "task_id");
  x.permutation = j.value("permutation", std::vector<int>{});
  x.raw_text = j.value("raw_text", std::string());
  x.think = j.value("think", std::string());
  x.gen = j.value("gen", GenerationParams{});
  x.trial_index = j.value("trial_index", 0);
  x.verdict.reset();
  x.error.reset();
  if (j.contains("verdict") && !j.at("verdict").is_null()) x.verdict = j.at("verdict").get<Verdict>();
  if (j.contains("error") && !j.at("error").is_null())
    x.error = JudgmentError{j.at("error").value("code", std::string()), j.at("error").value("message", std::string())};
  x.flags = j.value("flags", std::vector<std::string>{});
  if (x.verdict.has_value() == x.error.has_value())
    throw SchemaError("judgment for " + x.task_id + " must carry exactly one of verdict/error");
}

inline void to_json(json& j, const PreferenceTriplet& t) {
  j = json{{"id", t.id},
           {"prompt", t.prompt},
           {"chosen", t.chosen},
           {"rejected", t.rejected},
           {"scores_forward", {t.scores_forward.first, t.scores_forward.second}},
           {"scores_flipped", {t.scores_flipped.first, t.scores_flipped.second}},
           {"source_temps", {t.source_temps.first, t.source_temps.second}}};
  if (!t.prompt_attachments.empty()) j["prompt_attachments"] = t.prompt_attachments;
}

inline void from_json(const json& j, PreferenceTriplet& t) {
  t.id = j.value("id", std::string());
  t.prompt = detail::get_required<std::string>(j, "prompt");
  t.prompt_attachments = j.value("prompt_attachments", std::vector<Attachment>{});
  t.chosen = detail::get_required<std::string>(j, "chosen");
  t.rejected = detail::get_required<std::string>(j, "rejected");
  t.scores_forward = detail::get_required<std::pair<int, int>>(j, "scores_forward");
  t.scores_flipped = detail::get_required<std::pair<int, int>>(j, "scores_flipped");
  t.source_temps = j.value("source_temps", std::pair<double, double>{0.8, 1.2});
}

inline void to_json(json& j, const SeedRecord& r) {
  json msgs = json::array();
  for (const auto& m : r.messages) msgs.push_back({{"role", m.role}, {"content", m.content}});
  j = json{{"id", r.id}, {"messages", msgs}, {"format", to_string(r.format)}, {"scale", r.scale}};
  detail::merge_extra(j, r.extra);
}

inline void from_json(const json& j, SeedRecord& r) {
  r.id = j.value("id", std::string());
  r.messages.clear();
  for (const auto& m : detail::get_required<json>(j, "messages"))
    r.messages.push_back({m.value("role", std::string()), m.value("content", std::string())});
  r.format = format_kind_from_string(detail::get_required<std::string>(j, "format"));
  r.scale = j.value("scale", 10);
  r.extra = detail::collect_unknown(j, {"id", "messages", "format", "scale"});
}

// ---------------------------------------------------------------------------
// JSONL
// ---------------------------------------------------------------------------

/// Reads one JSON object per line. Blank lines are skipped; a trailing CR is
/// tolerated. Errors carry the 1-based line number.
inline std::vector<json> read_jsonl_values(std::istream& in) {
  std::vector<json> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) throw JsonlError(lineno, "malformed JSON");
    if (!j.is_object()) throw JsonlError(lineno, "expected a JSON object");
    out.push_back(std::move(j));
  }
  return out;
}

template <typename T>
std::vector<T> read_jsonl(std::istream& in) {
  std::vector<T> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) throw JsonlError(lineno, "malformed JSON");
    if (!j.is_object()) throw JsonlError(lineno, "expected a JSON object");
    try {
      out.push_back(j.get<T>());
    } catch (const SchemaError& e) {
      throw JsonlError(lineno, std::string("schema mismatch: ") + e.what());
    } catch (const json::exception& e) {
      throw JsonlError(lineno, std::string("schema mismatch: ") + e.what());
    }
  }
  return out;
}

inline void write_jsonl_line(std::ostream& out, const json& j) {
  out << j.dump(-1, ' ', false, json::error_handler_t::replace) << '\n';
}

template <typename T>
void write_jsonl(std::ostream& out, const std::vector<T>& records) {
  for (const auto& r : records) write_jsonl_line(out, json(r));
}

}  // namespace flexjudge
