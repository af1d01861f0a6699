#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "flexjudge/core.hpp"
#include "flexjudge/parsing.hpp"
#include "flexjudge/prompting.hpp"

namespace flexjudge::curation {

/// One judge completion from the generation pool (a pairwise, 1-10 task).
struct PoolRecord {
  EvalTask task;
  std::string raw_completion;
  std::optional<std::pair<int, int>> reference_scores;
  double gen_temperature = 0.1;
  std::optional<int> completion_tokens;  // backend-reported usage, if any
};

inline void to_json(json& j, const PoolRecord& r) {
  j = json{{"task", r.task}, {"raw_completion", r.raw_completion}, {"gen_temperature", r.gen_temperature}};
  if (r.reference_scores) j["reference_scores"] = {r.reference_scores->first, r.reference_scores->second};
  if (r.completion_tokens) j["completion_tokens"] = *r.completion_tokens;
}

inline void from_json(const json& j, PoolRecord& r) {
  r.task = detail::get_required<EvalTask>(j, "task");
  r.raw_completion = detail::get_required<std::string>(j, "raw_completion");
  r.gen_temperature = j.value("gen_temperature", 0.1);
  r.reference_scores.reset();
  if (j.contains("reference_scores") && !j.at("reference_scores").is_null())
    r.reference_scores = j.at("reference_scores").get<std::pair<int, int>>();
  r.completion_tokens.reset();
  if (j.contains("completion_tokens") && !j.at("completion_tokens").is_null())
    r.completion_tokens = j.at("completion_tokens").get<int>();
}

enum class TokenCounter { whitespace, backend_usage };

struct CurationConfig {
  std::size_t single_score_count = 500;
  std::size_t pairwise_count = 500;
  std::size_t single_min_tokens = 375;
  std::size_t pair_min_tokens = 750;
  double rescale_fraction = 0.5;
  std::uint64_t rng_seed = 0;
  TokenCounter token_counter = TokenCounter::whitespace;
  // Off: score pairs must match exactly. On: only the preferred side must match.
  bool direction_only_agreement = false;
};

inline void check_config(const CurationConfig& c) {
  if (c.single_score_count == 0 || c.pairwise_count == 0) throw ConfigError("curation counts must be > 0");
  if (c.single_min_tokens == 0 || c.pair_min_tokens == 0) throw ConfigError("token thresholds must be > 0");
  if (!(c.rescale_fraction >= 0.0 && c.rescale_fraction <= 1.0))
    throw ConfigError("rescale_fraction must lie in [0, 1]");
}

inline std::size_t token_length(std::string_view text, TokenCounter counter,
                                std::optional<int> usage = std::nullopt) {
  if (counter == TokenCounter::whitespace) return whitespace_tokens(text);
  if (!usage) throw PreconditionError("backend_usage token count requested but no usage was recorded");
  return static_cast<std::size_t>(std::max(0, *usage));
}

inline int rescale_score(int s) {
  if (s < 1 || s > 10) throw PreconditionError("score " + std::to_string(s) + " outside [1, 10]");
  return (s + 1) / 2;
}

// ---------------------------------------------------------------------------
// Agreement filter
// ---------------------------------------------------------------------------

struct Drop {
  std::string id;
  std::string reason;
};

inline std::pair<int, int> parsed_pair(const PoolRecord& r) {
  auto scores = to_scores(extract(r.raw_completion, true), 2, 10);
  return {scores.values[0], scores.values[1]};
}

/// Keeps records whose parsed score pair agrees with the reference
/// annotation. Order is preserved; unparseable or unannotated records are
/// dropped with a reason.
inline std::vector<PoolRecord> filter_by_agreement(const std::vector<PoolRecord>& pool, const CurationConfig& config = {},
                                                   std::vector<Drop>* drops = nullptr) {
  std::vector<PoolRecord> kept;
  for (const auto& r : pool) {
    if (!r.reference_scores) {
      if (drops) drops->push_back({r.task.id, "no reference scores"});
      continue;
    }
    std::pair<int, int> got;
    try {
      got = parsed_pair(r);
    } catch (const ParseError& e) {
      if (drops) drops->push_back({r.task.id, std::string("unparseable: ") + e.what()});
      continue;
    }
    const auto ref = *r.reference_scores;
    bool agree = config.direction_only_agreement
                     ? scores_to_preference(got.first, got.second) == scores_to_preference(ref.first, ref.second)
                     : got == ref;
    if (agree) kept.push_back(r);
    else if (drops) drops->push_back({r.task.id, "rating mismatch"});
  }
  return kept;
}

// ---------------------------------------------------------------------------
// Reasoning segmentation and rewriting
// ---------------------------------------------------------------------------

namespace detail {

inline bool is_terminator(char c) { return c == '.' || c == '!' || c == '?'; }

// Sentence/paragraph start offsets in `text`, ascending, starting with 0.
inline std::vector<std::size_t> sentence_starts(std::string_view text) {
  std::vector<std::size_t> out{0};
  for (std::size_t i = 0; i < text.size(); ++i) {
    bool boundary = text[i] == '\n' || (is_terminator(text[i]) && i + 1 < text.size() && is_space(text[i + 1]));
    if (!boundary) continue;
    std::size_t j = i + 1;
    while (j < text.size() && is_space(text[j])) ++j;
    if (j < text.size() && j != out.back()) out.push_back(j);
    i = j == 0 ? i : j - 1;
  }
  return out;
}

inline std::string_view leading_clause(std::string_view text, std::size_t start) {
  std::size_t end = start;
  while (end < text.size()) {
    char c = text[end];
    if (c == ',' || c == ';' || c == ':' || c == '\n') break;
    if (is_terminator(c) && (end + 1 == text.size() || is_space(text[end + 1]))) break;
    ++end;
  }
  return text.substr(start, end - start);
}

inline bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

}  // namespace detail

/// Offset where the reasoning turns to the second assistant: the first
/// sentence or paragraph whose leading clause names "Assistant 2".
inline std::size_t assistant2_boundary(std::string_view think) {
  for (auto start : detail::sentence_starts(think)) {
    if (detail::leading_clause(think, start).find("Assistant 2") == std::string_view::npos) continue;
    if (start == 0 || trim(think.substr(0, start)).empty())
      throw SegmentationFailure("reasoning opens with Assistant 2; no Assistant 1 segment");
    return start;
  }
  throw SegmentationFailure("no sentence leading with \"Assistant 2\"");
}

inline std::string assistant1_segment(std::string_view think) {
  return std::string(trim_right(think.substr(0, assistant2_boundary(think))));
}

/// Rewrites a 1-10 reasoning text onto the 1-5 scale: "N/10" and "N out of 10"
/// scores and "out of 10" / "1-10" / "1 to 10" scale mentions anywhere, and bare mentions
/// of the judged scores inside the final sentence.
inline std::string rescale_reasoning(std::string_view think, const std::vector<int>& scores) {
  const auto body = trim_right(think);
  std::size_t final_start = 0;
  for (std::size_t i = body.empty() ? 0 : body.size() - 1; i-- > 0;) {
    if (body[i] == '\n' || (detail::is_terminator(body[i]) && is_space(body[i + 1]))) {
      final_start = i + 1;
      break;
    }
  }
  const std::set<int> score_set(scores.begin(), scores.end());

  std::string out;
  out.reserve(think.size());
  std::size_t i = 0;
  while (i < think.size()) {
    if (think[i] < '0' || think[i] > '9') {
      out.push_back(think[i++]);
      continue;
    }
    std::size_t j = i;
    while (j < think.size() && think[j] >= '0' && think[j] <= '9') ++j;
    const auto digits = think.substr(i, j - i);
    const int v = digits.size() <= 3 ? std::stoi(std::string(digits)) : -1;
    const std::string_view prev = std::string_view(out);
    const bool glued = (i > 0 && (think[i - 1] == '.' || std::isalnum(static_cast<unsigned char>(think[i - 1])))) ||
                       (j < think.size() && think[j] == '.' && j + 1 < think.size() && think[j + 1] >= '0' &&
                        think[j + 1] <= '9');

    // "N/10" or "N / 10"
    std::size_t k = j;
    while (k < think.size() && think[k] == ' ') ++k;
    if (!glued && v >= 1 && v <= 10 && k < think.size() && think[k] == '/') {
      std::size_t m = k + 1;
      while (m < think.size() && think[m] == ' ') ++m;
      if (think.substr(m, 2) == "10" && (m + 2 == think.size() || !std::isdigit(static_cast<unsigned char>(think[m + 2])))) {
        out += std::to_string(rescale_score(v)) + "/5";
        i = m + 2;
        continue;
      }
    }
    // "N out of 10"
    constexpr std::string_view kOutOf10 = " out of 10";
    if (!glued && v >= 1 && v <= 10 && think.substr(j, kOutOf10.size()) == kOutOf10 &&
        (j + kOutOf10.size() == think.size() || !std::isdigit(static_cast<unsigned char>(think[j + kOutOf10.size()])))) {
      out += std::to_string(rescale_score(v)) + " out of 5";
      i = j + kOutOf10.size();
      continue;
    }
    if (!glued && v == 10 &&
        (detail::ends_with(prev, "out of ") || detail::ends_with(prev, "1-") || detail::ends_with(prev, "1 to "))) {
      out += "5";
    } else if (!glued && i >= final_start && score_set.count(v) && !detail::ends_with(prev, "Assistant ") &&
               !detail::ends_with(prev, "assistant ")) {
      out += std::to_string(rescale_score(v));
    } else {
      out += digits;
    }
    i = j;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Seed records
// ---------------------------------------------------------------------------

inline std::string assistant_turn(std::string_view think, const std::vector<int>& scores) {
  std::string out = "<think>" + std::string(think) + "</think>";
  for (int s : scores) out += "<answer>" + std::to_string(s) + "</answer>";
  return out;
}

namespace detail {

inline const TemplateRegistry& seed_templates() {
  static const TemplateRegistry r = TemplateRegistry::with_builtins();
  return r;
}

inline SeedRecord chat_record(const std::string& id, const std::string& template_id, const EvalTask& task,
                              std::string assistant, FormatKind kind, std::vector<int> source_scores,
                              std::size_t reasoning_tokens) {
  auto rendered = seed_templates().render(template_id, task, Permutation::identity(task.candidates.size()));
  SeedRecord rec;
  rec.id = id;
  rec.format = kind;
  rec.scale = 10;
  rec.messages.push_back({"system", rendered.messages[0].text()});
  rec.messages.push_back({"user", rendered.messages[1].text()});
  rec.messages.push_back({"assistant", std::move(assistant)});
  rec.extra = json{{"source_scores", source_scores}, {"reasoning_tokens", reasoning_tokens}};
  return rec;
}

// Apportions a whole-completion token count to a segment by whitespace share.
inline std::size_t segment_tokens(std::string_view segment, std::string_view think, const PoolRecord& r,
                                  TokenCounter counter) {
  if (counter == TokenCounter::whitespace) return whitespace_tokens(segment);
  const auto total = token_length(think, counter, r.completion_tokens);
  const auto whole = whitespace_tokens(think);
  return whole ? total * whitespace_tokens(segment) / whole : 0;
}

}  // namespace detail

/// Single-score example from a pairwise completion: the Assistant 2 reasoning
/// and answer are cut, and only Assistant 1's answer is shown to the judge.
inline SeedRecord make_single_score_record(const PoolRecord& record, const CurationConfig& config = {}) {
  auto parsed = extract(record.raw_completion, true);
  auto scores = to_scores(parsed, 2, 10);
  auto segment = assistant1_segment(parsed.think);
  auto length = detail::segment_tokens(segment, parsed.think, record, config.token_counter);
  if (length <= config.single_min_tokens)
    throw PreconditionError("assistant-1 reasoning has " + std::to_string(length) + " tokens, needs more than " +
                            std::to_string(config.single_min_tokens));
  if (record.task.candidates.empty()) throw SchemaError("pool record " + record.task.id + " has no candidates");
  EvalTask single;
  single.id = record.task.id;
  single.format.kind = FormatKind::single_score;
  single.format.scale = 10;
  single.question = record.task.question;
  single.candidates = {record.task.candidates[0]};
  return detail::chat_record(record.task.id + "-single", "single", single,
                             assistant_turn(segment, {scores.values[0]}), FormatKind::single_score,
                             {scores.values[0]}, length);
}

inline SeedRecord make_pairwise_record(const PoolRecord& record, const CurationConfig& config = {}) {
  auto parsed = extract(record.raw_completion, true);
  auto scores = to_scores(parsed, 2, 10);
  EvalTask pair = record.task;
  pair.format = EvalFormat{};
  pair.format.kind = FormatKind::pairwise;
  pair.context_attachments.clear();
  auto length = token_length(parsed.think, config.token_counter, record.completion_tokens);
  return detail::chat_record(record.task.id + "-pair", "pairwise", pair, assistant_turn(parsed.think, scores.values),
                             FormatKind::pairwise, scores.values, length);
}

/// Longest `pairwise_count` records whose whole reasoning exceeds
/// `pair_min_tokens`; ties broken by record id.
inline std::vector<std::size_t> pick_pairwise(const std::vector<PoolRecord>& pool, const CurationConfig& config) {
  std::vector<std::pair<std::size_t, std::size_t>> qualifying;  // (length, index)
  for (std::size_t i = 0; i < pool.size(); ++i) {
    std::size_t len = 0;
    try {
      len = token_length(extract(pool[i].raw_completion, true).think, config.token_counter, pool[i].completion_tokens);
    } catch (const ParseError&) {
      continue;
    }
    if (len > config.pair_min_tokens) qualifying.push_back({len, i});
  }
  if (qualifying.size() < config.pairwise_count)
    throw InsufficientPool("pairwise selection", qualifying.size(), config.pairwise_count);
  std::stable_sort(qualifying.begin(), qualifying.end(), [&](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return pool[a.second].task.id < pool[b.second].task.id;
  });
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < config.pairwise_count; ++i) out.push_back(qualifying[i].second);
  return out;
}

inline std::vector<SeedRecord> select_pairwise(const std::vector<PoolRecord>& pool, const CurationConfig& config = {}) {
  std::vector<SeedRecord> out;
  for (auto i : pick_pairwise(pool, config)) out.push_back(make_pairwise_record(pool[i], config));
  return out;
}

// ---------------------------------------------------------------------------
// Scale diversification
// ---------------------------------------------------------------------------

/// Maps one 1-10 record onto 1-5: system prompt scale, answers, and score
/// mentions in the reasoning.
inline SeedRecord rescale_record(const SeedRecord& record) {
  if (record.scale != 10) return record;
  SeedRecord out = record;
  out.scale = 5;
  for (auto& m : out.messages) {
    if (m.role == "system") m.content = replace_all(m.content, "1-10 (higher=better)", "1-5 (higher=better)");
  }
  auto parsed = extract(record.assistant_text(), true);
  const std::size_t arity = record.format == FormatKind::single_score ? 1 : 2;
  auto scores = to_scores(parsed, arity, 10).values;
  std::vector<int> rescaled;
  for (int s : scores) rescaled.push_back(rescale_score(s));
  out.assistant_text() = assistant_turn(rescale_reasoning(parsed.think, scores), rescaled);
  return out;
}

/// Independently rescales each record with probability `rescale_fraction`.
/// One draw is consumed per record so output depends only on the seed.
inline std::vector<SeedRecord> diversify_formats(std::vector<SeedRecord> records, const CurationConfig& config,
                                                 Rng& rng) {
  for (auto& r : records)
    if (rng.bernoulli(config.rescale_fraction)) r = rescale_record(r);
  return records;
}

// ---------------------------------------------------------------------------
// Non-reasoning variant
// ---------------------------------------------------------------------------

/// Swaps the think block and the answer blocks: reasoning-first becomes
/// answer-first and back. Applying it twice restores the input.
inline SeedRecord reverse_reasoning_order(const SeedRecord& record) {
  SeedRecord out = record;
  const std::string& text = record.assistant_text();
  const auto open = text.find(kThinkOpen);
  const auto close = open == std::string::npos ? std::string::npos : text.find(kThinkClose, open);
  if (close == std::string::npos) throw PreconditionError("record " + record.id + " has no think segment");
  const auto end = close + kThinkClose.size();
  const std::string before = text.substr(0, open);
  const std::string block = text.substr(open, end - open);
  const std::string after = text.substr(end);
  if (before.find(kAnswerOpen) == std::string::npos && after.find(kAnswerOpen) == std::string::npos)
    throw PreconditionError("record " + record.id + " has no answer segment");
  out.assistant_text() = after + block + before;
  return out;
}

// ---------------------------------------------------------------------------
// End to end
// ---------------------------------------------------------------------------

struct CurationSummary {
  std::size_t pool = 0;
  std::size_t agreed = 0;
  std::size_t single = 0;
  std::size_t pairwise = 0;
  std::size_t scale5 = 0;
  std::size_t scale10 = 0;
  std::vector<Drop> drops;
  // reasoning-token histogram per format, 100-token bins keyed by bin floor
  std::map<std::string, std::map<std::size_t, std::size_t>> length_histogram;

  json to_json() const {
    json hist = json::object();
    for (const auto& [fmt, bins] : length_histogram) {
      json b = json::object();
      for (const auto& [lo, n] : bins) b[std::to_string(lo)] = n;
      hist[fmt] = b;
    }
    json dropped = json::object();
    for (const auto& d : drops) dropped[d.reason.substr(0, d.reason.find(':'))] =
                                    dropped.value(d.reason.substr(0, d.reason.find(':')), 0) + 1;
    return json{{"pool", pool},           {"agreed", agreed},   {"single_score", single},
                {"pairwise", pairwise},   {"scale_5", scale5},  {"scale_10", scale10},
                {"dropped", dropped},     {"length_histogram", hist}};
  }
};

struct SeedDataset {
  std::vector<SeedRecord> records;
  CurationSummary summary;
};

/// Agreement filter, then the longest pairwise examples, then single-score
/// examples from the remaining records (longest Assistant 1 reasoning
/// first), then seeded scale diversification. Single-score records come
/// first in the output.
inline SeedDataset build_seed(const std::vector<PoolRecord>& pool, const CurationConfig& config = {}) {
  check_config(config);
  if (pool.empty()) throw PreconditionError("curation pool is empty");
  SeedDataset out;
  out.summary.pool = pool.size();
  auto agreed = filter_by_agreement(pool, config, &out.summary.drops);
  out.summary.agreed = agreed.size();

  auto pair_idx = pick_pairwise(agreed, config);
  std::vector<bool> taken(agreed.size(), false);
  for (auto i : pair_idx) taken[i] = true;

  std::vector<std::pair<std::size_t, std::size_t>> single_candidates;  // (segment length, index)
  for (std::size_t i = 0; i < agreed.size(); ++i) {
    if (taken[i]) continue;
    try {
      auto think = extract(agreed[i].raw_completion, true).think;
      auto seg = assistant1_segment(think);
      auto len = detail::segment_tokens(seg, think, agreed[i], config.token_counter);
      if (len > config.single_min_tokens) single_candidates.push_back({len, i});
    } catch (const SegmentationFailure& e) {
      out.summary.drops.push_back({agreed[i].task.id, std::string("segmentation: ") + e.what()});
    }
  }
  if (single_candidates.size() < config.single_score_count)
    throw InsufficientPool("single-score selection", single_candidates.size(), config.single_score_count);
  std::stable_sort(single_candidates.begin(), single_candidates.end(), [&](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return agreed[a.second].task.id < agreed[b.second].task.id;
  });

  std::vector<SeedRecord> records;
  for (std::size_t k = 0; k < config.single_score_count; ++k)
    records.push_back(make_single_score_record(agreed[single_candidates[k].second], config));
  for (auto i : pair_idx) records.push_back(make_pairwise_record(agreed[i], config));

  Rng rng(config.rng_seed);
  out.records = diversify_formats(std::move(records), config, rng);
  for (const auto& r : out.records) {
    const bool single = r.format == FormatKind::single_score;
    ++(single ? out.summary.single : out.summary.pairwise);
    ++(r.scale == 5 ? out.summary.scale5 : out.summary.scale10);
    const std::size_t len = r.extra.value("reasoning_tokens", std::size_t{0});
    ++out.summary.length_histogram[single ? "SingleScore" : "Pairwise"][len / 100 * 100];
  }
  return out;
}

/// Expected scores of a seed record after any rescaling.
inline std::vector<int> expected_scores(const SeedRecord& r) {
  auto src = r.extra.value("source_scores", std::vector<int>{});
  if (r.scale == 5)
    for (auto& s : src) s = rescale_score(s);
  return src;
}

}  // namespace flexjudge::curation
