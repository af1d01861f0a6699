#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "flexjudge/core.hpp"
#include "flexjudge/parsing.hpp"
#include "flexjudge/prompting.hpp"

namespace flexjudge::metrics {

// ---------------------------------------------------------------------------
// Correlation
// ---------------------------------------------------------------------------

inline void check_pair(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size())
    throw MetricError(MetricErrorCode::length_mismatch,
                      "length mismatch: " + std::to_string(x.size()) + " vs " + std::to_string(y.size()));
  if (x.size() < 2) throw MetricError(MetricErrorCode::degenerate_variance, "need at least 2 points");
}

/// Product-moment correlation, computed on mean-centred values.
inline double pearson(std::span<const double> x, std::span<const double> y) {
  check_pair(x, y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw MetricError(MetricErrorCode::degenerate_variance, "constant input");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

/// 1-based ranks; tied values share the mean of their positions.
inline std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

inline double spearman(std::span<const double> x, std::span<const double> y) {
  check_pair(x, y);
  auto rx = average_ranks(x);
  auto ry = average_ranks(y);
  return pearson(rx, ry);
}

// ---------------------------------------------------------------------------
// Classification
// ---------------------------------------------------------------------------

/// With ties: exact match over all items. Without ties: items whose label is
/// TIE are dropped first.
inline double accuracy(std::span<const Preference> preds, std::span<const Preference> labels, bool include_tie) {
  if (preds.size() != labels.size()) throw MetricError(MetricErrorCode::length_mismatch, "length mismatch");
  std::size_t n = 0, hit = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (!include_tie && labels[i] == Preference::tie) continue;
    ++n;
    hit += preds[i] == labels[i];
  }
  if (n == 0) throw MetricError(MetricErrorCode::empty_after_filter, "no items after filtering");
  return static_cast<double>(hit) / static_cast<double>(n);
}

struct Prf {
  double agreement = 0, precision = 0, recall = 0, f1 = 0;
  std::vector<std::string> flags;
};

/// Agreement plus macro-averaged precision/recall/F1 over {A, B, TIE}.
/// Macro F1 is the mean of per-class F1.
inline Prf agreement_prf(std::span<const Preference> preds, std::span<const Preference> labels) {
  if (preds.size() != labels.size()) throw MetricError(MetricErrorCode::length_mismatch, "length mismatch");
  if (preds.empty()) throw MetricError(MetricErrorCode::empty_after_filter, "no items");
  constexpr std::size_t K = 3;
  std::size_t conf[K][K] = {};  // [label][pred]
  for (std::size_t i = 0; i < preds.size(); ++i)
    ++conf[static_cast<std::size_t>(labels[i])][static_cast<std::size_t>(preds[i])];
  Prf out;
  std::size_t hits = 0;
  for (std::size_t c = 0; c < K; ++c) hits += conf[c][c];
  out.agreement = static_cast<double>(hits) / static_cast<double>(preds.size());
  const Preference classes[K] = {Preference::a, Preference::b, Preference::tie};
  for (std::size_t c = 0; c < K; ++c) {
    std::size_t tp = conf[c][c], label_n = 0, pred_n = 0;
    for (std::size_t k = 0; k < K; ++k) {
      label_n += conf[c][k];
      pred_n += conf[k][c];
    }
    const double p = pred_n ? static_cast<double>(tp) / static_cast<double>(pred_n) : 0.0;
    const double r = label_n ? static_cast<double>(tp) / static_cast<double>(label_n) : 0.0;
    if (!label_n) out.flags.push_back(std::string("class ") + to_string(classes[c]) + " absent from labels");
    if (!pred_n) out.flags.push_back(std::string("class ") + to_string(classes[c]) + " never predicted");
    out.precision += p;
    out.recall += r;
    out.f1 += p + r > 0 ? 2 * p * r / (p + r) : 0.0;
  }
  out.precision /= K;
  out.recall /= K;
  out.f1 /= K;
  return out;
}

// ---------------------------------------------------------------------------
// Rankings
// ---------------------------------------------------------------------------

/// Unit-cost insert/delete/substitute distance, two-row DP.
inline std::size_t levenshtein(std::string_view a, std::string_view b) {
  if (a.size() < b.size()) std::swap(a, b);
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  std::iota(prev.begin(), prev.end(), 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

/// Distance divided by the longer length. Two empty rankings give 0 and set
/// `*both_empty` when provided.
inline double normalized_levenshtein(std::string_view a, std::string_view b, bool* both_empty = nullptr) {
  const std::size_t m = std::max(a.size(), b.size());
  if (both_empty) *both_empty = m == 0;
  if (m == 0) return 0.0;
  return static_cast<double>(levenshtein(a, b)) / static_cast<double>(m);
}

// ---------------------------------------------------------------------------
// System-level aggregation
// ---------------------------------------------------------------------------

struct GroupedScore {
  std::string group;
  double predicted = 0;
  double gold = 0;
};

struct SystemLevel {
  double value = 0;
  std::size_t groups = 0;
  std::vector<std::string> flags;
};

using CorrelationFn = double (*)(std::span<const double>, std::span<const double>);

/// Averages predictions and golds within each group, then correlates the
/// group means. Groups keep first-appearance order, so all-singleton input
/// reproduces the utterance-level vectors exactly.
inline SystemLevel system_level(std::span<const GroupedScore> records, CorrelationFn metric) {
  std::map<std::string, std::size_t> slot;
  std::vector<double> psum, gsum, count;
  for (const auto& r : records) {
    auto [it, fresh] = slot.try_emplace(r.group, psum.size());
    if (fresh) {
      psum.push_back(0);
      gsum.push_back(0);
      count.push_back(0);
    }
    psum[it->second] += r.predicted;
    gsum[it->second] += r.gold;
    count[it->second] += 1;
  }
  if (psum.size() < 2)
    throw MetricError(MetricErrorCode::degenerate_variance, "system-level metric needs at least 2 groups");
  std::vector<double> p, g;
  for (std::size_t i = 0; i < psum.size(); ++i) {
    p.push_back(psum[i] / count[i]);
    g.push_back(gsum[i] / count[i]);
  }
  SystemLevel out;
  out.groups = p.size();
  out.value = metric(p, g);
  if (p.size() == 2) out.flags.push_back("degenerate: correlation over 2 group means");
  return out;
}

// ---------------------------------------------------------------------------
// Bias reports
// ---------------------------------------------------------------------------

struct PositionBias {
  std::size_t rendered_a = 0, rendered_b = 0, rendered_tie = 0;
  std::size_t canonical_a = 0, canonical_b = 0, canonical_tie = 0;
  std::size_t skipped = 0;
  // (a - b)^2 / (a + b) over decisive verdicts, chi-square with one dof
  // against an even split.
  double chi_square_rendered = 0;
  double chi_square_canonical = 0;

  std::size_t decided() const { return rendered_a + rendered_b + rendered_tie; }
  double rendered_first_rate() const {
    auto n = rendered_a + rendered_b;
    return n ? static_cast<double>(rendered_a) / static_cast<double>(n) : 0.0;
  }
  double canonical_a_rate() const {
    auto n = canonical_a + canonical_b;
    return n ? static_cast<double>(canonical_a) / static_cast<double>(n) : 0.0;
  }
};

inline double imbalance(std::size_t a, std::size_t b) {
  if (a + b == 0) return 0.0;
  const double d = static_cast<double>(a) - static_cast<double>(b);
  return d * d / static_cast<double>(a + b);
}

inline PositionBias position_bias_report(std::span<const Judgment> judgments, double tie_margin = 0.0) {
  PositionBias out;
  auto bump = [](Preference p, std::size_t& a, std::size_t& b, std::size_t& t) {
    (p == Preference::a ? a : p == Preference::b ? b : t)++;
  };
  for (const auto& j : judgments) {
    if (!j.verdict || j.permutation.size() != 2) {
      ++out.skipped;
      continue;
    }
    auto canonical = verdict_preference(*j.verdict, tie_margin);
    if (!canonical) {
      ++out.skipped;
      continue;
    }
    auto rendered = verdict_preference(Permutation(j.permutation).to_rendered(*j.verdict), tie_margin);
    bump(*canonical, out.canonical_a, out.canonical_b, out.canonical_tie);
    bump(*rendered, out.rendered_a, out.rendered_b, out.rendered_tie);
  }
  out.chi_square_rendered = imbalance(out.rendered_a, out.rendered_b);
  out.chi_square_canonical = imbalance(out.canonical_a, out.canonical_b);
  return out;
}

struct LengthBucket {
  std::size_t lo = 0;
  std::size_t hi = 0;  // exclusive; max() for the open bucket
  std::size_t decisive = 0;
  std::size_t longer_wins = 0;
  std::size_t ties = 0;
  double longer_win_rate() const {
    return decisive ? static_cast<double>(longer_wins) / static_cast<double>(decisive) : 0.0;
  }
};

struct LengthBias {
  std::vector<LengthBucket> buckets;
  std::size_t equal_length = 0;  // excluded: "longer" is undefined
  std::size_t skipped = 0;
};

/// Buckets pairwise verdicts by |len(A) - len(B)| using `edges` as lower
/// bounds (the first edge must be >= 1) and reports how often the longer
/// candidate wins. `lengths` maps task id to canonical (len A, len B).
inline LengthBias length_bias_report(std::span<const Judgment> judgments,
                                     const std::map<std::string, std::pair<std::size_t, std::size_t>>& lengths,
                                     std::vector<std::size_t> edges = {1, 16, 64, 256}, double tie_margin = 0.0) {
  LengthBias out;
  for (std::size_t i = 0; i < edges.size(); ++i)
    out.buckets.push_back({edges[i], i + 1 < edges.size() ? edges[i + 1] : std::numeric_limits<std::size_t>::max()});
  for (const auto& j : judgments) {
    auto it = lengths.find(j.task_id);
    std::optional<Preference> pref;
    if (j.verdict) pref = verdict_preference(*j.verdict, tie_margin);
    if (it == lengths.end() || !pref) {
      ++out.skipped;
      continue;
    }
    auto [la, lb] = it->second;
    if (la == lb) {
      ++out.equal_length;
      continue;
    }
    const std::size_t diff = la > lb ? la - lb : lb - la;
    for (auto& b : out.buckets) {
      if (diff < b.lo || diff >= b.hi) continue;
      if (*pref == Preference::tie) {
        ++b.ties;
      } else {
        ++b.decisive;
        b.longer_wins += (*pref == Preference::a) == (la > lb);
      }
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct ReportRow {
  std::string group;
  std::string metric;
  double value = 0;
  std::size_t n = 0;
  std::vector<std::string> flags;
};

struct MetricsReport {
  std::vector<ReportRow> rows;
  std::vector<std::string> flags;

  void add(std::string group, std::string metric, double value, std::size_t n, std::vector<std::string> f = {}) {
    rows.push_back({std::move(group), std::move(metric), value, n, std::move(f)});
  }

  const ReportRow* find(std::string_view group, std::string_view metric) const {
    for (const auto& r : rows)
      if (r.group == group && r.metric == metric) return &r;
    return nullptr;
  }

  json to_json() const {
    json groups = json::object();
    for (const auto& r : rows) {
      json entry{{"value", r.value}, {"n", r.n}};
      if (!r.flags.empty()) entry["flags"] = r.flags;
      groups[r.group][r.metric] = entry;
    }
    return json{{"groups", groups}, {"flags", flags}};
  }

  std::string to_csv() const {
    std::ostringstream out;
    out << "group,metric,value,n,flags\n";
    for (const auto& r : rows) {
      std::string f;
      for (std::size_t i = 0; i < r.flags.size(); ++i) f += (i ? ";" : "") + r.flags[i];
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.12g", r.value);
      out << csv_field(r.group) << ',' << csv_field(r.metric) << ',' << buf << ',' << r.n << ',' << csv_field(f)
          << '\n';
    }
    return out.str();
  }

  static std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    return "\"" + replace_all(s, "\"", "\"\"") + "\"";
  }
};

}  // namespace flexjudge::metrics
