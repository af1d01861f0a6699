#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

#include "flexjudge/core.hpp"

namespace flexjudge {

inline constexpr std::string_view kThinkOpen = "<think>";
inline constexpr std::string_view kThinkClose = "</think>";
inline constexpr std::string_view kAnswerOpen = "<answer>";
inline constexpr std::string_view kAnswerClose = "</answer>";

struct Parsed {
  std::string think;
  std::vector<std::string> answers;
  std::string trailing;
  std::vector<std::string> warnings;
};

/// Splits a completion into its reasoning block and answer spans.
///
/// In prefill mode the prompt already opened the think block, so a completion
/// with no `<think>` is read as starting inside it and ends at the first
/// `</think>`. Only the first think block counts as reasoning; anything after it
/// (including re-opened think blocks) is searched for answers.
inline Parsed extract(std::string_view text, bool prefill_mode) {
  Parsed out;
  std::string_view rest;
  std::string_view before;  // text ahead of an explicit think block
  const auto open = text.find(kThinkOpen);
  const auto close = text.find(kThinkClose);
  if (open != std::string_view::npos && (close == std::string_view::npos || open < close)) {
    const auto body = open + kThinkOpen.size();
    const auto end = text.find(kThinkClose, body);
    if (end == std::string_view::npos) throw ParseError(ParseErrorCode::unbalanced_tags, "<think> without </think>");
    out.think = std::string(text.substr(body, end - body));
    before = text.substr(0, open);
    rest = text.substr(end + kThinkClose.size());
  } else if (close != std::string_view::npos) {
    if (!prefill_mode) throw ParseError(ParseErrorCode::unbalanced_tags, "</think> without <think>");
    out.think = std::string(text.substr(0, close));
    rest = text.substr(close + kThinkClose.size());
  } else {
    rest = text;
  }

  // Answer-first completions carry their answers ahead of the think block.
  auto collect = [&](std::string_view region, bool is_rest) {
    std::size_t pos = 0;
    std::size_t last_end = 0;
    while (true) {
      const auto a = region.find(kAnswerOpen, pos);
      if (a == std::string_view::npos) break;
      const auto body = a + kAnswerOpen.size();
      const auto b = region.find(kAnswerClose, body);
      if (b == std::string_view::npos) {
        if (out.answers.empty() && is_rest)
          throw ParseError(ParseErrorCode::unbalanced_tags, "<answer> without </answer>");
        out.warnings.push_back("unclosed <answer> ignored");
        break;
      }
      out.answers.emplace_back(region.substr(body, b - body));
      pos = last_end = b + kAnswerClose.size();
    }
    return last_end;
  };
  collect(before, false);
  const auto last_end = collect(rest, true);
  if (out.answers.empty()) throw ParseError(ParseErrorCode::missing_answer, "no <answer> span");
  out.trailing = std::string(rest.substr(last_end));
  return out;
}

namespace detail {

inline bool parse_int(std::string_view s, long long& value) {
  s = trim(s);
  if (s.empty()) return false;
  bool neg = false;
  std::size_t i = 0;
  if (s[0] == '+' || s[0] == '-') {
    neg = s[0] == '-';
    i = 1;
  }
  if (i == s.size()) return false;
  long long v = 0;
  for (; i < s.size(); ++i) {
    if (s[i] < '0' || s[i] > '9') return false;
    if (v > 100000000000LL) return false;
    v = v * 10 + (s[i] - '0');
  }
  value = neg ? -v : v;
  return true;
}

// Parses "D+[.D*]" and rounds half-up to tenths using the decimal digits
// themselves, so "3.85" becomes 3.9 regardless of binary representation.
inline bool parse_tenths(std::string_view s, long long& tenths) {
  s = trim(s);
  if (s.empty()) return false;
  bool neg = false;
  std::size_t i = 0;
  if (s[0] == '+' || s[0] == '-') {
    neg = s[0] == '-';
    i = 1;
  }
  long long whole = 0;
  std::size_t digits = 0;
  for (; i < s.size() && s[i] >= '0' && s[i] <= '9'; ++i, ++digits) {
    if (whole > 1000000000LL) return false;
    whole = whole * 10 + (s[i] - '0');
  }
  int first = 0, second = 0;
  if (i < s.size() && s[i] == '.') {
    ++i;
    std::size_t frac = 0;
    for (; i < s.size() && s[i] >= '0' && s[i] <= '9'; ++i, ++frac) {
      if (frac == 0) first = s[i] - '0';
      else if (frac == 1) second = s[i] - '0';
    }
    digits += frac;
  }
  if (digits == 0 || i != s.size()) return false;
  long long t = whole * 10 + first + (second >= 5 ? 1 : 0);
  tenths = neg ? -t : t;
  return true;
}

}  // namespace detail

inline ScoreList to_scores(const Parsed& parsed, std::size_t expected_arity, int scale,
                           std::vector<std::string>* warnings = nullptr) {
  if (expected_arity < 1) throw PreconditionError("expected_arity must be >= 1");
  if (parsed.answers.size() < expected_arity)
    throw ParseError(ParseErrorCode::arity_mismatch, "expected " + std::to_string(expected_arity) + " answers, got " +
                                                         std::to_string(parsed.answers.size()));
  if (parsed.answers.size() > expected_arity && warnings)
    warnings->push_back("extra answers: kept first " + std::to_string(expected_arity) + " of " +
                        std::to_string(parsed.answers.size()));
  ScoreList out;
  for (std::size_t i = 0; i < expected_arity; ++i) {
    long long v = 0;
    if (!detail::parse_int(parsed.answers[i], v))
      throw ParseError(ParseErrorCode::non_integer, "answer '" + std::string(trim(parsed.answers[i])) + "'");
    if (v < 1 || v > scale)
      throw ParseError(ParseErrorCode::out_of_range,
                       "score " + std::to_string(v) + " outside [1, " + std::to_string(scale) + "]");
    out.values.push_back(static_cast<int>(v));
  }
  return out;
}

inline PairLabel to_pair_label(const Parsed& parsed, std::vector<std::string>* warnings = nullptr) {
  if (parsed.answers.empty()) throw ParseError(ParseErrorCode::missing_answer, "no answer span");
  if (parsed.answers.size() > 1 && warnings) warnings->push_back("extra answers: kept first of " +
                                                                   std::to_string(parsed.answers.size()));
  const auto s = trim(parsed.answers.front());
  if (s == "[[A>B]]") return PairLabel::a_better;
  if (s == "[[B>A]]") return PairLabel::b_better;
  if (s == "[[A=B=Good]]") return PairLabel::tie_good;
  if (s == "[[A=B=Bad]]") return PairLabel::tie_bad;
  throw ParseError(ParseErrorCode::unknown_label, "'" + std::string(s) + "'");
}

inline double to_decimal(const Parsed& parsed, double range_min, double range_max,
                         std::vector<std::string>* warnings = nullptr) {
  if (parsed.answers.empty()) throw ParseError(ParseErrorCode::missing_answer, "no answer span");
  if (parsed.answers.size() > 1 && warnings) warnings->push_back("extra answers: kept first of " +
                                                                   std::to_string(parsed.answers.size()));
  long long tenths = 0;
  if (!detail::parse_tenths(parsed.answers.front(), tenths))
    throw ParseError(ParseErrorCode::non_numeric, "'" + std::string(trim(parsed.answers.front())) + "'");
  const double v = static_cast<double>(tenths) / 10.0;
  if (v < range_min - 1e-9 || v > range_max + 1e-9)
    throw ParseError(ParseErrorCode::out_of_range, std::to_string(v) + " outside [" + std::to_string(range_min) +
                                                       ", " + std::to_string(range_max) + "]");
  return v;
}

/// Reads a single answer span as a ranking such as "CADB" or "C > A > D > B".
inline RankOrder to_ranking(const Parsed& parsed, std::size_t n) {
  if (parsed.answers.empty()) throw ParseError(ParseErrorCode::missing_answer, "no answer span");
  std::string letters;
  for (char c : parsed.answers.front()) {
    if (c >= 'A' && c <= 'Z') letters.push_back(c);
    else if (!(is_space(c) || c == '>' || c == ',' || c == '-')) letters.push_back('?');
  }
  if (!is_letter_permutation(letters, n))
    throw ParseError(ParseErrorCode::unknown_label, "'" + parsed.answers.front() + "' is not a ranking");
  return RankOrder{letters};
}

inline Preference scores_to_preference(double s1, double s2, double tie_margin = 0.0) {
  if (s1 - s2 > tie_margin) return Preference::a;
  if (s2 - s1 > tie_margin) return Preference::b;
  return Preference::tie;
}

struct TieBreak {
  enum class Kind { by_index, seeded } kind = Kind::by_index;
  std::uint64_t seed = 0;
};

/// Candidates best-first as letters. Equal scores keep input order unless a
/// seeded tie-break is requested.
inline RankOrder scores_to_ranking(const std::vector<double>& scores, TieBreak tie_break = {}) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<std::uint64_t> keys(scores.size(), 0);
  if (tie_break.kind == TieBreak::Kind::seeded) {
    Rng rng(tie_break.seed);
    for (auto& k : keys) k = rng.next();
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return keys[a] < keys[b];
  });
  RankOrder out;
  for (auto i : order) out.letters.push_back(candidate_letter(i));
  return out;
}

inline RankOrder scores_to_ranking(const std::vector<int>& scores, TieBreak tie_break = {}) {
  return scores_to_ranking(std::vector<double>(scores.begin(), scores.end()), tie_break);
}

inline bool has_duplicate_scores(const std::vector<int>& scores) {
  std::vector<int> s = scores;
  std::sort(s.begin(), s.end());
  return std::adjacent_find(s.begin(), s.end()) != s.end();
}

struct ParsedVerdict {
  Parsed parsed;
  Verdict verdict;
  std::vector<std::string> warnings;
};

/// Parses a completion under the answer grammar implied by `format`.
/// BatchRanking accepts either one score per candidate or a single ranking span.
inline ParsedVerdict parse_verdict(std::string_view text, const EvalFormat& format, std::size_t n_candidates,
                                   bool prefill_mode) {
  ParsedVerdict out{extract(text, prefill_mode), ScoreList{}, {}};
  out.warnings = out.parsed.warnings;
  switch (format.kind) {
    case FormatKind::single_score:
      out.verdict = to_scores(out.parsed, 1, format.scale, &out.warnings);
      break;
    case FormatKind::pairwise:
      out.verdict = to_scores(out.parsed, 2, format.scale, &out.warnings);
      break;
    case FormatKind::batch_ranking:
      if (out.parsed.answers.size() == 1 && n_candidates > 1) {
        out.verdict = to_ranking(out.parsed, n_candidates);
      } else {
        auto scores = to_scores(out.parsed, n_candidates, format.scale, &out.warnings);
        if (has_duplicate_scores(scores.values)) out.warnings.push_back("batch_tie: duplicate scores");
        out.verdict = std::move(scores);
      }
      break;
    case FormatKind::four_way:
      out.verdict = PairChoice{to_pair_label(out.parsed, &out.warnings)};
      break;
    case FormatKind::decimal_score:
      out.verdict = DecimalValue{to_decimal(out.parsed, format.decimal_min, format.decimal_max, &out.warnings)};
      break;
  }
  return out;
}

/// Preference implied by a two-candidate verdict.
inline std::optional<Preference> verdict_preference(const Verdict& v, double tie_margin = 0.0) {
  if (auto* s = std::get_if<ScoreList>(&v); s && s->values.size() == 2)
    return scores_to_preference(s->values[0], s->values[1], tie_margin);
  if (auto* p = std::get_if<PairChoice>(&v)) return to_preference(p->label);
  return std::nullopt;
}

/// Ranking implied by a batch verdict (scores are ranked with index tie-break).
inline std::optional<RankOrder> verdict_ranking(const Verdict& v) {
  if (auto* r = std::get_if<RankOrder>(&v)) return *r;
  if (auto* s = std::get_if<ScoreList>(&v)) return scores_to_ranking(s->values);
  return std::nullopt;
}

}  // namespace flexjudge
