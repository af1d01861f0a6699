#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "../support.hpp"

using namespace flexjudge;

// ---------------------------------------------------------------------------
// Independent oracles
// ---------------------------------------------------------------------------

namespace oracle {

// Textbook single-pass sums form.
double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    syy += y[i] * y[i];
    sxy += x[i] * y[i];
  }
  return (n * sxy - sx * sy) / std::sqrt((n * sxx - sx * sx) * (n * syy - sy * sy));
}

// Ranks by counting: 1 + #smaller + (#equal - 1) / 2.
std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    double less = 0, equal = 0;
    for (double w : v) {
      less += w < v[i];
      equal += w == v[i];
    }
    r[i] = 1 + less + (equal - 1) / 2;
  }
  return r;
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) { return pearson(ranks(x), ranks(y)); }

// 1 - 6 sum d^2 / (n (n^2 - 1)), valid without ties.
double spearman_no_ties(const std::vector<double>& x, const std::vector<double>& y) {
  auto rx = ranks(x), ry = ranks(y);
  double d2 = 0;
  for (std::size_t i = 0; i < x.size(); ++i) d2 += (rx[i] - ry[i]) * (rx[i] - ry[i]);
  const double n = static_cast<double>(x.size());
  return 1 - 6 * d2 / (n * (n * n - 1));
}

// Full-matrix recursion with memo.
std::size_t levenshtein(const std::string& a, const std::string& b) {
  std::vector<std::vector<long>> memo(a.size() + 1, std::vector<long>(b.size() + 1, -1));
  std::function<long(std::size_t, std::size_t)> d = [&](std::size_t i, std::size_t j) -> long {
    if (i == 0) return static_cast<long>(j);
    if (j == 0) return static_cast<long>(i);
    if (memo[i][j] >= 0) return memo[i][j];
    long best = std::min(d(i - 1, j) + 1, d(i, j - 1) + 1);
    best = std::min(best, d(i - 1, j - 1) + (a[i - 1] != b[j - 1]));
    return memo[i][j] = best;
  };
  return static_cast<std::size_t>(d(a.size(), b.size()));
}

}  // namespace oracle

static std::vector<double> random_vector(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform01() * 10.0;
  return v;
}

TEST(Metrics, PearsonMatchesClosedForm) {
  Rng rng(3);
  for (int t = 0; t < 200; ++t) {
    auto x = random_vector(rng, 5 + rng.index(60));
    auto y = random_vector(rng, x.size());
    EXPECT_NEAR(metrics::pearson(x, y), oracle::pearson(x, y), 1e-12);
    EXPECT_NEAR(metrics::spearman(x, y), oracle::spearman_no_ties(x, y), 1e-12);
  }
}

TEST(Metrics, SpearmanWithTiesUsesAverageRanks) {
  Rng rng(4);
  for (int t = 0; t < 200; ++t) {
    std::size_t n = 5 + rng.index(30);
    std::vector<double> x(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = static_cast<double>(1 + rng.index(5));
      y[i] = static_cast<double>(1 + rng.index(5));
    }
    try {
      EXPECT_NEAR(metrics::spearman(x, y), oracle::spearman(x, y), 1e-12);
    } catch (const MetricError& e) {
      EXPECT_EQ(e.code, MetricErrorCode::degenerate_variance);
    }
  }
  EXPECT_EQ(metrics::average_ranks(std::vector<double>{10, 20, 20, 30}), (std::vector<double>{1, 2.5, 2.5, 4}));
}

TEST(Metrics, CorrelationErrors) {
  std::vector<double> a{1, 2, 3}, c{2, 2, 2}, shorter{1, 2};
  EXPECT_THROW(metrics::pearson(a, c), MetricError);
  EXPECT_THROW(metrics::pearson(a, shorter), MetricError);
  EXPECT_DOUBLE_EQ(metrics::pearson(a, a), 1.0);
  try {
    metrics::pearson(std::vector<double>{1}, std::vector<double>{2});
    ADD_FAILURE() << "single point accepted";
  } catch (const MetricError& e) {
    EXPECT_EQ(e.code, MetricErrorCode::degenerate_variance);
  }
}

TEST(Metrics, LevenshteinMatchesRecursiveOracle) {
  Rng rng(6);
  EXPECT_EQ(metrics::normalized_levenshtein("ABCD", "CDAB"), 1.0);
  EXPECT_EQ(metrics::normalized_levenshtein("ABCD", "ABCD"), 0.0);
  bool both_empty = false;
  EXPECT_EQ(metrics::normalized_levenshtein("", "", &both_empty), 0.0);
  EXPECT_TRUE(both_empty);
  for (int t = 0; t < 500; ++t) {
    std::size_t n = 1 + rng.index(7);
    std::string a, b;
    for (std::size_t i = 0; i < n; ++i) a.push_back(static_cast<char>('A' + i));
    b = a;
    std::vector<char> va(a.begin(), a.end()), vb(b.begin(), b.end());
    rng.shuffle(va);
    rng.shuffle(vb);
    a.assign(va.begin(), va.end());
    b.assign(vb.begin(), vb.end());
    EXPECT_EQ(metrics::levenshtein(a, b), oracle::levenshtein(a, b));
    EXPECT_EQ(metrics::normalized_levenshtein(a, b),
              static_cast<double>(oracle::levenshtein(a, b)) / static_cast<double>(n));
  }
}

TEST(Metrics, AccuracyWithAndWithoutTie) {
  using P = Preference;
  std::vector<P> pred{P::a, P::b, P::tie, P::a}, gold{P::a, P::a, P::tie, P::tie};
  EXPECT_DOUBLE_EQ(metrics::accuracy(pred, gold, true), 0.5);
  EXPECT_DOUBLE_EQ(metrics::accuracy(pred, gold, false), 0.5);
  std::vector<P> ties{P::tie, P::tie};
  EXPECT_THROW(metrics::accuracy(ties, ties, false), MetricError);
}

TEST(Metrics, PrfMatchesConfusionOracle) {
  Rng rng(8);
  for (int t = 0; t < 100; ++t) {
    std::size_t n = 1 + rng.index(50);
    std::vector<Preference> p(n), g(n);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = static_cast<Preference>(rng.index(3));
      g[i] = static_cast<Preference>(rng.index(3));
    }
    double ps = 0, rs = 0, fs = 0, hits = 0;
    for (int c = 0; c < 3; ++c) {
      double tp = 0, fp = 0, fn = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const bool pc = static_cast<int>(p[i]) == c, gc = static_cast<int>(g[i]) == c;
        tp += pc && gc;
        fp += pc && !gc;
        fn += !pc && gc;
      }
      const double prec = tp + fp > 0 ? tp / (tp + fp) : 0.0;
      const double rec = tp + fn > 0 ? tp / (tp + fn) : 0.0;
      ps += prec;
      rs += rec;
      fs += prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
      hits += tp;
    }
    auto prf = metrics::agreement_prf(p, g);
    EXPECT_EQ(prf.agreement, hits / static_cast<double>(n));
    EXPECT_EQ(prf.precision, ps / 3);
    EXPECT_EQ(prf.recall, rs / 3);
    EXPECT_EQ(prf.f1, fs / 3);
  }
}

TEST(Metrics, SystemLevelTwoStageAndSingletons) {
  Rng rng(9);
  std::vector<metrics::GroupedScore> recs;
  for (int s = 0; s < 5; ++s)
    for (int u = 0; u < 10; ++u) recs.push_back({"sys" + std::to_string(s), rng.uniform01() * 5, rng.uniform01() * 5});
  std::vector<double> pm(5, 0), gm(5, 0);
  for (std::size_t i = 0; i < recs.size(); ++i) {
    pm[i / 10] += recs[i].predicted / 10;
    gm[i / 10] += recs[i].gold / 10;
  }
  EXPECT_NEAR(metrics::system_level(recs, metrics::pearson).value, oracle::pearson(pm, gm), 1e-12);

  std::vector<double> p, g;
  for (std::size_t i = 0; i < recs.size(); ++i) {
    recs[i].group = "u" + std::to_string(i);
    p.push_back(recs[i].predicted);
    g.push_back(recs[i].gold);
  }
  EXPECT_EQ(metrics::system_level(recs, metrics::pearson).value, metrics::pearson(p, g));
  EXPECT_THROW(metrics::system_level(std::vector<metrics::GroupedScore>{{"a", 1, 2}}, metrics::pearson), MetricError);
}

TEST(Metrics, ReportCsvAndJson) {
  metrics::MetricsReport r;
  r.add("Pairwise", "accuracy", 0.75, 4, {"x,y"});
  EXPECT_EQ(r.to_csv(), "group,metric,value,n,flags\nPairwise,accuracy,0.75,4,\"x,y\"\n");
  EXPECT_EQ(r.to_json()["groups"]["Pairwise"]["accuracy"]["n"], 4);
  EXPECT_NE(r.find("Pairwise", "accuracy"), nullptr);
}

static Judgment pair_judgment(std::vector<int> perm, std::vector<int> canonical_scores, std::string id = "t") {
  Judgment j;
  j.task_id = std::move(id);
  j.permutation = std::move(perm);
  j.verdict = ScoreList{std::move(canonical_scores)};
  return j;
}

TEST(Metrics, PositionBiasFrames) {
  std::vector<Judgment> js{pair_judgment({0, 1}, {8, 2}), pair_judgment({1, 0}, {2, 8}), pair_judgment({1, 0}, {8, 2})};
  auto r = metrics::position_bias_report(js);
  EXPECT_EQ(r.rendered_a, 2u);
  EXPECT_EQ(r.rendered_b, 1u);
  EXPECT_EQ(r.canonical_a, 2u);
  EXPECT_EQ(r.canonical_b, 1u);
  EXPECT_DOUBLE_EQ(r.chi_square_rendered, 1.0 / 3.0);
}

TEST(Metrics, LengthBiasBuckets) {
  std::vector<Judgment> js{pair_judgment({0, 1}, {8, 2}, "long-a"), pair_judgment({0, 1}, {2, 8}, "long-a2"),
                           pair_judgment({0, 1}, {8, 2}, "same")};
  std::map<std::string, std::pair<std::size_t, std::size_t>> len{
      {"long-a", {100, 10}}, {"long-a2", {100, 10}}, {"same", {5, 5}}};
  auto r = metrics::length_bias_report(js, len);
  EXPECT_EQ(r.equal_length, 1u);
  EXPECT_EQ(r.buckets[2].decisive, 2u);
  EXPECT_DOUBLE_EQ(r.buckets[2].longer_win_rate(), 0.5);
}

// ---------------------------------------------------------------------------
// strategies
// ---------------------------------------------------------------------------

namespace {

EvalTask pair_task(const std::string& id = "p") {
  EvalTask t;
  t.id = id;
  t.format.kind = FormatKind::pairwise;
  t.question = "Which answer is better?";
  t.candidates = {Candidate{"first answer", {}}, Candidate{"second answer", {}}};
  return t;
}

std::string scores_reply(int a, int b) {
  return "reasoning</think><answer>" + std::to_string(a) + "</answer><answer>" + std::to_string(b) + "</answer>";
}

struct Rig {
  std::shared_ptr<ChatClient> client;
  std::shared_ptr<MockTransport> transport;
  Judge judge;
  Rig(MockScript s, bool continuation = true)
      : Rig(make_mock_backend(std::move(s), continuation)) {}

 private:
  explicit Rig(std::pair<std::shared_ptr<ChatClient>, std::shared_ptr<MockTransport>> p)
      : client(p.first),
        transport(p.second),
        judge(client, std::make_shared<TemplateRegistry>(TemplateRegistry::with_builtins())) {}
};

}  // namespace

TEST(Strategies, JudgeDepermutesVerdict) {
  MockScript s;
  s.fallback = MockReply::ok(scores_reply(9, 2));
  Rig rig(s);
  auto j = rig.judge.judge(pair_task(), Permutation::reversed(2), 0);
  ASSERT_TRUE(j.ok());
  EXPECT_EQ(std::get<ScoreList>(*j.verdict).values, (std::vector<int>{2, 9}));
  EXPECT_EQ(j.permutation, (std::vector<int>{1, 0}));
  EXPECT_EQ(j.think, "reasoning");
  EXPECT_EQ(j.raw_text.rfind("<think>", 0), 0u);
}

TEST(Strategies, JudgeRecordsErrors) {
  MockScript s;
  s.sequence = {MockReply::ok("reasoning only</think>"), MockReply::failure(400)};
  Rig rig(s);
  auto a = rig.judge.judge(pair_task(), Permutation::identity(2), 0);
  EXPECT_EQ(a.error->code, "MissingAnswer");
  auto b = rig.judge.judge(pair_task(), Permutation::identity(2), 1);
  EXPECT_EQ(b.error->code, "TransportError");
}

TEST(Strategies, TrialSeedsDifferAndRepeat) {
  Rig rig(MockScript{});
  auto t = pair_task();
  EXPECT_NE(rig.judge.params_for(t, 0).seed, rig.judge.params_for(t, 1).seed);
  EXPECT_EQ(rig.judge.params_for(t, 2).seed, rig.judge.params_for(t, 2).seed);
}

TEST(Strategies, RepeatedJudgmentAveragesScores) {
  MockScript s;
  s.sequence = {MockReply::ok(scores_reply(8, 6)), MockReply::ok(scores_reply(7, 6)), MockReply::ok(scores_reply(6, 6))};
  Rig rig(s);
  auto a = repeated_judgment(rig.judge, pair_task(), ProtocolConfig{});
  EXPECT_EQ(a.scores, (std::vector<double>{7, 6}));
  EXPECT_EQ(a.preference, Preference::a);
  EXPECT_EQ(a.samples_used, 3u);
}

TEST(Strategies, RepeatedJudgmentCountsFailures) {
  MockScript s;
  s.sequence = {MockReply::ok("junk"), MockReply::ok(scores_reply(7, 6)), MockReply::ok("junk")};
  Rig rig(s);
  auto a = repeated_judgment(rig.judge, pair_task(), ProtocolConfig{});
  EXPECT_EQ(a.samples_failed, 2u);
  EXPECT_EQ(a.scores, (std::vector<double>{7, 6}));
  MockScript bad;
  bad.fallback = MockReply::ok("junk");
  Rig rig2(bad);
  EXPECT_THROW(repeated_judgment(rig2.judge, pair_task(), ProtocolConfig{}), AllSamplesFailed);
}

TEST(Strategies, KEqualsOneFixedIsASingleJudgment) {
  MockScript s;
  s.fallback = MockReply::ok(scores_reply(4, 9));
  Rig rig(s);
  ProtocolConfig c;
  c.k = 1;
  auto a = repeated_judgment(rig.judge, pair_task(), c);
  auto j = rig.judge.judge(pair_task(), Permutation::identity(2), 0);
  EXPECT_EQ(a.samples.front(), j);
  EXPECT_EQ(a.preference, Preference::b);
}

TEST(Strategies, ReverseBothAlternatesOrder) {
  MockScript s;
  s.fallback = MockReply::ok(scores_reply(9, 1));  // always prefers the first slot
  Rig rig(s);
  ProtocolConfig c;
  c.k = 2;
  c.order_mode = OrderMode::reverse_both;
  auto a = repeated_judgment(rig.judge, pair_task(), c);
  EXPECT_EQ(a.samples[1].permutation, (std::vector<int>{1, 0}));
  EXPECT_EQ(a.scores, (std::vector<double>{5, 5}));
  EXPECT_EQ(a.preference, Preference::tie);
}

TEST(Strategies, ReverseOrderConsistency) {
  MockScript biased;
  biased.fallback = MockReply::ok(scores_reply(9, 1));
  Rig b(biased);
  EXPECT_FALSE(reverse_order_consistent(b.judge, pair_task()).consistent);

  MockScript fair;
  fair.responder = [](const MockRequest& r) {
    bool first_is_a = r.prompt_text.find("first answer") < r.prompt_text.find("second answer");
    return MockReply::ok(first_is_a ? scores_reply(8, 3) : scores_reply(3, 8));
  };
  Rig f(fair);
  auto c = reverse_order_consistent(f.judge, pair_task());
  EXPECT_TRUE(c.consistent);
  EXPECT_EQ(c.winner, Preference::a);

  MockScript mixed;
  mixed.sequence = {MockReply::ok(scores_reply(5, 5)), MockReply::ok(scores_reply(3, 8))};
  Rig m(mixed);
  EXPECT_FALSE(reverse_order_consistent(m.judge, pair_task()).consistent);
}

TEST(Strategies, MajorityVoteModalAndTieBreak) {
  auto run = [](std::vector<std::pair<int, int>> votes, bool tie_allowed) {
    MockScript s;
    for (auto [a, b] : votes) s.sequence.push_back(MockReply::ok(scores_reply(a, b)));
    Rig rig(s);
    auto t = pair_task();
    t.format.tie_allowed = tie_allowed;
    ScalingConfig sc;
    sc.vote_k = static_cast<int>(votes.size());
    return majority_vote(rig.judge, t, sc);
  };
  auto aab = run({{8, 2}, {7, 3}, {2, 9}}, false);
  EXPECT_EQ(aab.preference, Preference::a);
  EXPECT_EQ(aab.scores, (std::vector<double>{7, 3}));  // medians
  auto ab = run({{8, 2}, {2, 9}}, true);
  EXPECT_EQ(ab.preference, Preference::tie);
  auto coin = run({{8, 2}, {2, 9}}, false);
  EXPECT_NE(coin.preference, Preference::tie);
  EXPECT_TRUE(coin.has_flag("vote_tie"));
  EXPECT_EQ(run({{8, 2}, {2, 9}}, false).preference, coin.preference);  // seeded
}

TEST(Strategies, BudgetForceZeroTrials) {
  MockScript s;
  s.fallback = MockReply::ok(scores_reply(3, 5));
  Rig rig(s);
  ScalingConfig sc;
  sc.budget_trials = 0;
  auto out = budget_force(rig.judge, pair_task(), sc);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].trial_index, 0);
}

TEST(Strategies, BudgetForceNeedsContinuation) {
  MockScript s;
  s.fallback = MockReply::ok(scores_reply(3, 5));
  Rig rig(s, false);
  ScalingConfig sc;
  sc.budget_trials = 1;
  EXPECT_THROW(budget_force(rig.judge, pair_task(), sc), UnsupportedCapability);
}

TEST(Strategies, BudgetForceContinuesFromLastGoodText) {
  int calls = 0;
  // Trial 1 breaks, trial 2 recovers; the prefix after a failure still
  // starts from the trial-0 reasoning.
  MockScript chain;
  chain.responder = [&calls](const MockRequest& r) {
    if (r.partial.find("Wait") == std::string::npos) return MockReply::ok("first pass</think><answer>3</answer><answer>5</answer>");
    ++calls;
    if (calls == 1) return MockReply::ok(" garbage");
    return MockReply::ok(" fine</think><answer>6</answer><answer>2</answer>");
  };
  Rig rig2(chain);
  ScalingConfig sc;
  sc.budget_trials = 2;
  auto out = budget_force(rig2.judge, pair_task(), sc);
  ASSERT_EQ(out.size(), 3u);
  EXPECT_FALSE(out[1].ok());
  ASSERT_TRUE(out[2].ok());
  auto log = rig2.transport->log();
  EXPECT_EQ(log[1].partial, "<think>first pass Wait");
  EXPECT_EQ(log[2].partial, "<think>first pass Wait");
  EXPECT_EQ(std::get<ScoreList>(*out[2].verdict).values, (std::vector<int>{6, 2}));
}

TEST(Strategies, BestOfNSelection) {
  MockScript s;
  s.responder = [](const MockRequest& r) {
    auto q = fjtest::qualities(r.prompt_text);
    return MockReply::ok("x</think><answer>" + std::to_string(static_cast<int>(q.at(0))) + "</answer>");
  };
  Rig rig(s);
  SelectorConfig sc;
  sc.trials = 10;
  auto one = best_of_n("p", {"only quality=4"}, rig.judge, sc);
  EXPECT_EQ(one.picks, std::vector<std::size_t>(10, 0));
  auto inc = best_of_n("p", {"quality=2", "quality=5", "quality=9"}, rig.judge, sc);
  EXPECT_EQ(inc.picks, std::vector<std::size_t>(10, 2));
  auto tie = best_of_n("p", {"quality=7", "quality=9", "quality=9"}, rig.judge, sc);
  for (auto p : tie.picks) EXPECT_TRUE(p == 1 || p == 2);
  sc.n = 4;
  EXPECT_THROW(best_of_n("p", {"quality=1"}, rig.judge, sc), PreconditionError);
}

TEST(Strategies, BestOfNUnscored) {
  MockScript s;
  s.responder = [](const MockRequest& r) {
    if (r.prompt_text.find("broken") != std::string::npos) return MockReply::ok("nothing");
    return MockReply::ok("x</think><answer>1</answer>");
  };
  Rig rig(s);
  SelectorConfig sc;
  auto sel = best_of_n("p", {"broken", "ok"}, rig.judge, sc);
  EXPECT_FALSE(sel.scores[0].has_value());
  EXPECT_EQ(sel.picks.front(), 1u);
  EXPECT_THROW(best_of_n("p", {"broken", "broken too"}, rig.judge, sc), AllSamplesFailed);
}

namespace {

class MapSampler : public Sampler {
 public:
  std::string sample(const PromptItem& p, double temperature) override {
    return (temperature < 1.0 ? "LOW " : "HIGH ") + p.id;
  }
};

MockScript dpo_judge(std::function<std::pair<int, int>(bool low_first)> scores) {
  MockScript s;
  s.responder = [scores](const MockRequest& r) {
    const bool low_first = r.prompt_text.find("LOW ") < r.prompt_text.find("HIGH ");
    auto [a, b] = scores(low_first);
    return MockReply::ok(scores_reply(a, b));
  };
  return s;
}

}  // namespace

TEST(Strategies, DpoTripletExamples) {
  MapSampler sampler;
  std::vector<PromptItem> prompts{{"q1", "Describe the molecule.", {}}};
  // fwd (9,4), flipped rendered (4,9): consistent winner
  Rig fair(dpo_judge([](bool low_first) { return low_first ? std::pair{9, 4} : std::pair{4, 9}; }));
  auto r = build_dpo_triplets(prompts, sampler, fair.judge);
  ASSERT_EQ(r.triplets.size(), 1u);
  EXPECT_EQ(r.triplets[0].chosen, "LOW q1");
  EXPECT_EQ(r.triplets[0].scores_forward, (std::pair{9, 4}));
  EXPECT_EQ(r.triplets[0].scores_flipped, (std::pair{9, 4}));
  EXPECT_TRUE(r.triplets[0].sound());

  // fwd (9,4), flipped rendered (9,4): slot one wins twice
  Rig biased(dpo_judge([](bool) { return std::pair{9, 4}; }));
  auto b = build_dpo_triplets(prompts, sampler, biased.judge);
  EXPECT_TRUE(b.triplets.empty());
  EXPECT_EQ(b.drops.at(0).reason, "inconsistent after flip");

  // temp 1.2 wins both orders
  Rig high(dpo_judge([](bool low_first) { return low_first ? std::pair{3, 8} : std::pair{8, 3}; }));
  auto h = build_dpo_triplets(prompts, sampler, high.judge);
  EXPECT_TRUE(h.triplets.empty());
  EXPECT_EQ(h.drops.at(0).reason, "high temperature won");

  // equal scores are not a win
  Rig tie(dpo_judge([](bool) { return std::pair{6, 6}; }));
  EXPECT_TRUE(build_dpo_triplets(prompts, sampler, tie.judge).triplets.empty());
}
