#pragma once

// Synthetic pools, tasks and scripted judges shared by the unit and
// acceptance suites.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "flexjudge/flexjudge.hpp"

namespace fjtest {

using namespace flexjudge;

inline const std::vector<std::string>& vocabulary() {
  static const std::vector<std::string> v{
      "the", "response", "explains", "clearly", "covers", "details", "misses", "context", "offers", "examples",
      "accurate", "helpful", "concise", "structure", "reasoning", "answer", "question", "relevant", "facts",
      "tone", "style", "depth", "careful", "summary", "claims", "support", "evidence", "overall", "quality",
      "minor", "errors", "user", "needs", "addresses", "partially", "fully", "steps", "logic", "consistent"};
  return v;
}

/// `n` digit-free words grouped into sentences of 6 to 14 words.
inline std::string words(Rng& rng, std::size_t n) {
  const auto& v = vocabulary();
  std::string out;
  std::size_t in_sentence = 0, target = 6 + rng.index(9);
  for (std::size_t i = 0; i < n; ++i) {
    if (!out.empty()) out += ' ';
    std::string w = v[rng.index(v.size())];
    if (in_sentence == 0) w[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(w[0])));
    out += w;
    if (++in_sentence == target || i + 1 == n) {
      out += '.';
      in_sentence = 0;
      target = 6 + rng.index(9);
    }
  }
  return out;
}

/// Pairwise 1-10 reasoning in the pool style: Assistant 1 paragraph,
/// Assistant 2 paragraph, closing summary.
inline std::string pool_reasoning(Rng& rng, int s1, int s2, std::size_t len1, std::size_t len2) {
  return "Assistant 1 answers the question directly. " + words(rng, len1) + " Overall it merits " +
         std::to_string(s1) + "/10.\n\nAssistant 2 takes a different approach. " + words(rng, len2) +
         " Overall it merits " + std::to_string(s2) + "/10.\n\nIn summary, Assistant 1 earns " + std::to_string(s1) +
         " while Assistant 2 earns " + std::to_string(s2) + " on a scale of 1-10.";
}

inline curation::PoolRecord pool_record(std::size_t i, Rng& rng) {
  char id[32];
  std::snprintf(id, sizeof id, "pool-%05zu", i);
  curation::PoolRecord r;
  r.task.id = id;
  r.task.format.kind = FormatKind::pairwise;
  r.task.question = "Question " + std::to_string(i) + ": " + words(rng, 12);
  r.task.candidates = {Candidate{words(rng, 30), {}}, Candidate{words(rng, 30), {}}};
  const int s1 = 1 + static_cast<int>(rng.index(10));
  const int s2 = 1 + static_cast<int>(rng.index(10));
  const std::size_t len1 = 200 + rng.index(500), len2 = 200 + rng.index(500);
  std::string think = pool_reasoning(rng, s1, s2, len1, len2);
  const double roll = rng.uniform01();
  if (roll < 0.03) {
    r.raw_completion = think + "</think>\nNo verdict given.";
  } else {
    r.raw_completion = think + "</think>\n<answer>" + std::to_string(s1) + "</answer><answer>" +
                       std::to_string(s2) + "</answer>";
  }
  if (roll >= 0.03 && roll < 0.05) return r;  // unannotated
  r.reference_scores = std::pair{s1, s2};
  if (roll >= 0.05 && roll < 0.15) r.reference_scores = std::pair{s1 % 10 + 1, s2};  // disagreement
  return r;
}

inline std::vector<curation::PoolRecord> make_pool(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<curation::PoolRecord> pool;
  pool.reserve(n);
  for (std::size_t i = 0; i < n; ++i) pool.push_back(pool_record(i, rng));
  return pool;
}

// ---------------------------------------------------------------------------
// Evaluation tasks with a "quality=<q>" marker in every candidate
// ---------------------------------------------------------------------------

inline Attachment media(MediaKind k, const std::string& uri, const std::string& mime) {
  Attachment a;
  a.media_kind = k;
  a.uri = uri;
  a.mime = mime;
  return a;
}

inline std::string fmt1(double v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%.1f", v);
  return buf;
}

/// `per_format` tasks of each of the five formats; gold labels agree with
/// the quality markers.
inline std::vector<EvalTask> make_tasks(std::size_t per_format, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<EvalTask> out;
  auto text = [&](int q) { return words(rng, 20) + " quality=" + std::to_string(q); };
  for (std::size_t i = 0; i < per_format; ++i) {
    EvalTask t;
    t.id = "single-" + std::to_string(i);
    t.format.kind = FormatKind::single_score;
    t.question = words(rng, 10);
    int q = 1 + static_cast<int>(rng.index(10));
    t.candidates = {Candidate{text(q), {}}};
    t.human_label = ScoreList{{q}};
    t.group = "sys-" + std::to_string(i % 2);
    out.push_back(t);
  }
  for (std::size_t i = 0; i < per_format; ++i) {
    EvalTask t;
    t.id = "pair-" + std::to_string(i);
    t.format.kind = FormatKind::pairwise;
    t.question = words(rng, 10);
    int a = 1 + static_cast<int>(rng.index(10)), b = 1 + static_cast<int>(rng.index(10));
    if (a == b) b = a % 10 + 1;
    t.candidates = {Candidate{text(a), {}}, Candidate{text(b), {}}};
    t.human_label = PairChoice{a > b ? PairLabel::a_better : PairLabel::b_better};
    out.push_back(t);
  }
  for (std::size_t i = 0; i < per_format; ++i) {
    EvalTask t;
    t.id = "edit-" + std::to_string(i);
    t.format.kind = FormatKind::four_way;
    t.question = "Edit the image: " + words(rng, 6);
    int a = 1 + static_cast<int>(rng.index(5)), b = 1 + static_cast<int>(rng.index(5));
    auto vid = [&](int q, char slot) {
      return Candidate{"", {media(MediaKind::video, "https://media.example/" + t.id + slot +
                                                          "/quality=" + std::to_string(q) + ".mp4",
                                  "video/mp4")}};
    };
    t.candidates = {vid(a, 'a'), vid(b, 'b')};
    PairLabel l = a > b ? PairLabel::a_better : a < b ? PairLabel::b_better
                  : a >= 3                        ? PairLabel::tie_good
                                                  : PairLabel::tie_bad;
    t.human_label = PairChoice{l};
    out.push_back(t);
  }
  for (std::size_t i = 0; i < per_format; ++i) {
    EvalTask t;
    t.id = "batch-" + std::to_string(i);
    t.format.kind = FormatKind::batch_ranking;
    t.format.n_candidates = 3;
    t.question = words(rng, 10);
    std::vector<int> qs{3, 6, 9};
    rng.shuffle(qs);
    for (int q : qs) t.candidates.push_back(Candidate{text(q), {}});
    t.human_label = scores_to_ranking(qs);
    out.push_back(t);
  }
  for (std::size_t i = 0; i < per_format; ++i) {
    EvalTask t;
    t.id = "mos-" + std::to_string(i);
    t.format.kind = FormatKind::decimal_score;
    double q = 1.0 + static_cast<double>(rng.index(41)) / 10.0;
    t.candidates = {Candidate{"", {media(MediaKind::audio, "https://media.example/" + t.id + "/quality=" + fmt1(q) +
                                                               ".wav", "audio/wav")}}};
    t.human_label = DecimalValue{q};
    t.group = "tts-" + std::to_string(i % 2);
    out.push_back(t);
  }
  return out;
}

/// All "quality=<number>" markers in order of appearance.
inline std::vector<double> qualities(const std::string& s) {
  std::vector<double> out;
  std::size_t pos = 0;
  while ((pos = s.find("quality=", pos)) != std::string::npos) {
    pos += 8;
    std::size_t end = pos;
    while (end < s.size() && (std::isdigit(static_cast<unsigned char>(s[end])) || s[end] == '.')) ++end;
    if (end > pos && s[end - 1] == '.') --end;
    if (end > pos) out.push_back(std::stod(s.substr(pos, end - pos)));
    pos = end;
  }
  return out;
}

/// Order-independent judge that reads the quality markers off the request.
inline MockReply quality_reply(const MockRequest& req) {
  const std::string body = req.body.dump();
  const auto q = qualities(body);
  std::string answer;
  if (req.prompt_text.find("FOUR Option") != std::string::npos && q.size() == 2) {
    answer = q[0] > q[1] ? "[[A>B]]" : q[0] < q[1] ? "[[B>A]]" : q[0] >= 3 ? "[[A=B=Good]]" : "[[A=B=Bad]]";
    answer = "<answer>" + answer + "</answer>";
  } else if (req.prompt_text.find("FIRST DECIMAL") != std::string::npos && q.size() == 1) {
    answer = "<answer>" + fmt1(q[0]) + "</answer>";
  } else {
    for (double v : q) answer += "<answer>" + std::to_string(static_cast<int>(std::lround(v))) + "</answer>";
  }
  return MockReply::ok("I compare each answer against the question.</think>" + answer);
}

inline MockScript quality_script() {
  MockScript s;
  s.responder = quality_reply;
  return s;
}

}  // namespace fjtest

namespace fjtest {

struct GoldenCase {
  std::string name;  // file stem under tests/golden
  std::string template_id;
  EvalTask task;
};

inline std::vector<GoldenCase> golden_cases() {
  std::vector<GoldenCase> out;
  EvalTask pair;
  pair.id = "golden-pair";
  pair.format.kind = FormatKind::pairwise;
  pair.question = "What is the capital of France?";
  pair.candidates = {Candidate{"Paris.", {}},
                     Candidate{"The capital of France is Paris, which sits on the Seine.", {}}};
  out.push_back({"pairwise", "pairwise", pair});

  EvalTask single = pair;
  single.id = "golden-single";
  single.format.kind = FormatKind::single_score;
  single.candidates = {pair.candidates[1]};
  out.push_back({"single", "single", single});

  EvalTask batch = pair;
  batch.id = "golden-batch";
  batch.format.kind = FormatKind::batch_ranking;
  batch.format.n_candidates = 3;
  batch.candidates.push_back(Candidate{"Lyon.", {}});
  out.push_back({"batch", "batch", batch});

  EvalTask edit;
  edit.id = "golden-edit";
  edit.format.kind = FormatKind::four_way;
  edit.question = "Remove the red car from the street.";
  edit.candidates = {Candidate{"", {media(MediaKind::video, "https://media.example/edit/a.mp4", "video/mp4")}},
                     Candidate{"", {media(MediaKind::video, "https://media.example/edit/b.mp4", "video/mp4")}}};
  out.push_back({"fourway_edit", "fourway_edit", edit});

  EvalTask mos;
  mos.id = "golden-mos";
  mos.format.kind = FormatKind::decimal_score;
  mos.candidates = {Candidate{"", {media(MediaKind::audio, "https://media.example/tts/0001.wav", "audio/wav")}}};
  out.push_back({"audio_mos", "audio_mos", mos});
  return out;
}

inline std::string render_golden(const GoldenCase& c) {
  auto reg = TemplateRegistry::with_builtins();
  return to_transcript(reg.render(c.template_id, c.task, Permutation::identity(c.task.candidates.size())));
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace fjtest
