#pragma once

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "flexjudge/core.hpp"

namespace flexjudge {

// ---------------------------------------------------------------------------
// Messages
// ---------------------------------------------------------------------------

struct ContentPart {
  enum class Kind { text, attachment } kind = Kind::text;
  std::string text;
  Attachment attachment;

  static ContentPart of_text(std::string t) { return {Kind::text, std::move(t), {}}; }
  static ContentPart of_attachment(Attachment a) { return {Kind::attachment, {}, std::move(a)}; }
  friend bool operator==(const ContentPart&, const ContentPart&) = default;
};

struct Message {
  std::string role;  // system | user | assistant
  std::vector<ContentPart> content;

  std::string text() const {
    std::string out;
    for (const auto& p : content)
      if (p.kind == ContentPart::Kind::text) out += p.text;
    return out;
  }
  bool text_only() const {
    return std::all_of(content.begin(), content.end(),
                       [](const ContentPart& p) { return p.kind == ContentPart::Kind::text; });
  }
  friend bool operator==(const Message&, const Message&) = default;
};

struct MessageList {
  std::vector<Message> messages;

  bool ends_with_prefill() const { return !messages.empty() && messages.back().role == "assistant"; }
  friend bool operator==(const MessageList&, const MessageList&) = default;
};

/// Human-readable, byte-stable dump used for golden files.
inline std::string to_transcript(const MessageList& list) {
  std::string out;
  for (const auto& m : list.messages) {
    out += "=== " + m.role + " ===\n";
    for (const auto& p : m.content) {
      if (p.kind == ContentPart::Kind::text) {
        out += p.text;
      } else {
        out += "{{attachment ";
        out += to_string(p.attachment.media_kind);
        if (!p.attachment.mime.empty()) out += " " + p.attachment.mime;
        out += p.attachment.uri.empty() ? " inline:" + std::to_string(p.attachment.data.size()) + "B"
                                        : " " + p.attachment.uri;
        out += "}}";
      }
    }
    out += "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Permutations
// ---------------------------------------------------------------------------

/// `order[i]` is the canonical index of the candidate shown in rendered slot i.
class Permutation {
 public:
  Permutation() = default;
  explicit Permutation(std::vector<int> order) : order_(std::move(order)) {
    std::vector<bool> seen(order_.size(), false);
    for (int v : order_) {
      if (v < 0 || static_cast<std::size_t>(v) >= order_.size() || seen[static_cast<std::size_t>(v)])
        throw PreconditionError("permutation is not a bijection");
      seen[static_cast<std::size_t>(v)] = true;
    }
  }

  static Permutation identity(std::size_t n) {
    std::vector<int> o(n);
    std::iota(o.begin(), o.end(), 0);
    return Permutation(std::move(o));
  }
  static Permutation reversed(std::size_t n) {
    std::vector<int> o(n);
    for (std::size_t i = 0; i < n; ++i) o[i] = static_cast<int>(n - 1 - i);
    return Permutation(std::move(o));
  }
  static Permutation random(std::size_t n, Rng& rng) {
    auto p = identity(n);
    rng.shuffle(p.order_);
    return p;
  }

  std::size_t size() const { return order_.size(); }
  const std::vector<int>& order() const { return order_; }
  bool is_identity() const {
    for (std::size_t i = 0; i < order_.size(); ++i)
      if (order_[i] != static_cast<int>(i)) return false;
    return true;
  }

  Permutation inverse() const {
    std::vector<int> inv(order_.size());
    for (std::size_t i = 0; i < order_.size(); ++i) inv[static_cast<std::size_t>(order_[i])] = static_cast<int>(i);
    return Permutation(std::move(inv));
  }

  /// Maps a verdict stated over rendered slots back to canonical candidates.
  Verdict to_canonical(const Verdict& rendered) const { return relabel(rendered, *this); }

  /// Maps a canonical verdict into the rendered frame.
  Verdict to_rendered(const Verdict& canonical) const { return relabel(canonical, inverse()); }

  friend bool operator==(const Permutation&, const Permutation&) = default;

 private:
  // Applies slot i -> map.order_[i] to every candidate reference in v.
  static Verdict relabel(const Verdict& v, const Permutation& map) {
    const auto& o = map.order_;
    if (auto* s = std::get_if<ScoreList>(&v)) {
      if (s->values.size() != o.size()) throw PreconditionError("verdict arity does not match permutation");
      ScoreList out{std::vector<int>(o.size())};
      for (std::size_t i = 0; i < o.size(); ++i) out.values[static_cast<std::size_t>(o[i])] = s->values[i];
      return out;
    }
    if (auto* p = std::get_if<PairChoice>(&v)) {
      if (o.size() != 2) throw PreconditionError("pair label needs a two-candidate permutation");
      if (o[0] == 0) return *p;
      if (p->label == PairLabel::a_better) return PairChoice{PairLabel::b_better};
      if (p->label == PairLabel::b_better) return PairChoice{PairLabel::a_better};
      return *p;
    }
    if (auto* r = std::get_if<RankOrder>(&v)) {
      if (!is_letter_permutation(r->letters, o.size())) throw PreconditionError("ranking does not match permutation");
      RankOrder out;
      for (char c : r->letters) out.letters.push_back(candidate_letter(static_cast<std::size_t>(o[c - 'A'])));
      return out;
    }
    return v;
  }

  std::vector<int> order_;
};

/// Reorders candidates so rendered slot i holds canonical candidate
/// `perm.order()[i]`. The returned permutation de-permutes verdicts.
inline std::pair<EvalTask, Permutation> permute(const EvalTask& task, const Permutation& perm) {
  if (perm.size() != task.candidates.size())
    throw PreconditionError("permutation size " + std::to_string(perm.size()) + " != candidate count " +
                            std::to_string(task.candidates.size()));
  EvalTask out = task;
  for (std::size_t i = 0; i < perm.size(); ++i)
    out.candidates[i] = task.candidates[static_cast<std::size_t>(perm.order()[i])];
  return {std::move(out), perm};
}

// ---------------------------------------------------------------------------
// Templates
// ---------------------------------------------------------------------------

struct LayoutBlock {
  enum class Kind { text, candidates } kind = Kind::text;
  std::string text;
  friend bool operator==(const LayoutBlock&, const LayoutBlock&) = default;
};

/// A prompt template. Slots are written `{name}`:
///   system text      {scale} {range_min} {range_max}
///   text blocks      {question} {context}
///   candidate block  {index} {letter} {answer} {attachments}
/// The candidate block is repeated once per candidate. Context attachments
/// without a `{context}` slot follow the block holding `{question}`; candidate
/// attachments without an `{attachments}` slot follow their block's text.
struct Template {
  std::string id;
  FormatKind answer_grammar = FormatKind::pairwise;
  std::string system_text;
  std::vector<LayoutBlock> user_layout;
  std::string assistant_prefill = "<think>";
  std::string separator = "\n\n";
  bool verified = true;
};

namespace detail {

inline std::vector<std::string> slot_names(const std::string& text) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while ((pos = text.find('{', pos)) != std::string::npos) {
    auto end = text.find('}', pos);
    if (end == std::string::npos) break;
    out.push_back(text.substr(pos + 1, end - pos - 1));
    pos = end + 1;
  }
  return out;
}

inline std::string format_tenth(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", v);
  return buf;
}

inline void push_text(std::vector<ContentPart>& parts, const std::string& t) {
  if (t.empty()) return;
  if (!parts.empty() && parts.back().kind == ContentPart::Kind::text) parts.back().text += t;
  else parts.push_back(ContentPart::of_text(t));
}

// Expands `text` with scalar slots; `{attach_slot}` positions receive `attachments`.
inline bool expand_into(std::vector<ContentPart>& parts, const std::string& text,
                        const std::map<std::string, std::string>& scalars, const std::string& attach_slot,
                        const std::vector<Attachment>& attachments) {
  bool placed = false;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto open = text.find('{', pos);
    if (open == std::string::npos) {
      push_text(parts, text.substr(pos));
      break;
    }
    auto close = text.find('}', open);
    if (close == std::string::npos) {
      push_text(parts, text.substr(pos));
      break;
    }
    push_text(parts, text.substr(pos, open - pos));
    const auto name = text.substr(open + 1, close - open - 1);
    if (name == attach_slot) {
      for (const auto& a : attachments) parts.push_back(ContentPart::of_attachment(a));
      placed = true;
    } else if (auto it = scalars.find(name); it != scalars.end()) {
      push_text(parts, it->second);
    } else {
      push_text(parts, text.substr(open, close - open + 1));
    }
    pos = close + 1;
  }
  return placed;
}

}  // namespace detail

/// Rejects templates whose slots do not exist in their position.
inline void check_template(const Template& t) {
  if (t.id.empty()) throw ConfigError("template id must be nonempty");
  for (const auto& s : detail::slot_names(t.system_text))
    if (s != "scale" && s != "range_min" && s != "range_max")
      throw ConfigError("template " + t.id + ": unknown system slot {" + s + "}");
  std::size_t candidate_blocks = 0;
  for (const auto& b : t.user_layout) {
    for (const auto& s : detail::slot_names(b.text)) {
      bool ok = b.kind == LayoutBlock::Kind::text
                    ? (s == "question" || s == "context")
                    : (s == "index" || s == "letter" || s == "answer" || s == "attachments");
      if (!ok) throw ConfigError("template " + t.id + ": slot {" + s + "} not available in this block");
    }
    if (b.kind == LayoutBlock::Kind::candidates) ++candidate_blocks;
  }
  if (candidate_blocks != 1) throw ConfigError("template " + t.id + ": needs exactly one candidates block");
}

inline void to_json(json& j, const Template& t) {
  json layout = json::array();
  for (const auto& b : t.user_layout)
    layout.push_back({{"type", b.kind == LayoutBlock::Kind::text ? "text" : "candidates"}, {"text", b.text}});
  j = json{{"id", t.id},
           {"answer_grammar", to_string(t.answer_grammar)},
           {"system", t.system_text},
           {"user_layout", layout},
           {"assistant_prefill", t.assistant_prefill},
           {"separator", t.separator},
           {"verified", t.verified}};
}

inline void from_json(const json& j, Template& t) {
  t.id = detail::get_required<std::string>(j, "id");
  t.answer_grammar = format_kind_from_string(detail::get_required<std::string>(j, "answer_grammar"));
  t.system_text = detail::get_required<std::string>(j, "system");
  t.user_layout.clear();
  for (const auto& b : detail::get_required<json>(j, "user_layout")) {
    auto type = b.value("type", std::string("text"));
    if (type != "text" && type != "candidates") throw ConfigError("unknown layout block type '" + type + "'");
    t.user_layout.push_back(
        {type == "text" ? LayoutBlock::Kind::text : LayoutBlock::Kind::candidates, b.value("text", std::string())});
  }
  t.assistant_prefill = j.value("assistant_prefill", std::string("<think>"));
  t.separator = j.value("separator", std::string("\n\n"));
  t.verified = j.value("verified", true);
}

namespace builtin {

inline constexpr const char* kPreamble =
    "You are a helpful assistant. The assistant first performs a detailed, step-by-step reasoning process in its "
    "mind and then provides the user with the answer. The reasoning process and answer are enclosed within <think> "
    "</think> and <answer> </answer> tags, respectively, i.e., <think> detailed reasoning process here, explaining "
    "each step of your evaluation for ";

inline constexpr const char* kCriteria =
    "Criteria includes helpfulness, relevance, accuracy, and level of detail. ";

inline constexpr const char* kConclude =
    "After thinking, when you finally reach a conclusion, clearly provide your evaluation scores within <answer> "
    "</answer> tags, i.e., for example, ";

inline Template pairwise() {
  Template t;
  t.id = "pairwise";
  t.answer_grammar = FormatKind::pairwise;
  t.system_text = std::string(kPreamble) +
                  "both assistants </think><answer> answer here </answer>. Now the user asks you to judge the "
                  "performance of two AI assistants in response to the question. Score assistants 1-{scale} "
                  "(higher=better). " +
                  kCriteria + "Avoid order, length, style or other bias. " + kConclude +
                  "<answer>3</answer><answer>5</answer>";
  t.user_layout = {{LayoutBlock::Kind::text, "[Question]\n{question}"},
                   {LayoutBlock::Kind::candidates, "[Assistant {index}’s Answer]\n{answer}"}};
  return t;
}

inline Template single() {
  Template t;
  t.id = "single";
  t.answer_grammar = FormatKind::single_score;
  t.system_text = std::string(kPreamble) +
                  "an assistant </think><answer> answer here </answer>. Now the user asks you to judge the "
                  "performance of an AI assistant in response to the question. Score assistant 1-{scale} "
                  "(higher=better). " +
                  kCriteria + "Avoid order, length, style or other bias. " + kConclude + "<answer>3</answer>";
  t.user_layout = {{LayoutBlock::Kind::text, "[Question]\n{question}"},
                   {LayoutBlock::Kind::candidates, "[Assistant {index}’s Answer]\n{answer}"}};
  return t;
}

inline Template batch() {
  Template t;
  t.id = "batch";
  t.answer_grammar = FormatKind::batch_ranking;
  t.system_text = std::string(kPreamble) +
                  "an assistant </think><answer> answer here </answer>. Now the user asks you to judge the "
                  "performance of multiple AI assistants in response to the question. Score assistant 1-{scale} "
                  "(higher=better). " +
                  kCriteria +
                  "DO NOT assign the same score to multiple assistants. Avoid order, length, style or other bias. " +
                  kConclude + "<answer>3</answer><answer>5</answer><answer>6</answer>";
  t.user_layout = {{LayoutBlock::Kind::text, "[Question]\n{question}"},
                   {LayoutBlock::Kind::candidates, "[Assistant {index}’s Answer]\n{answer}"}};
  return t;
}

inline Template fourway_edit() {
  Template t;
  t.id = "fourway_edit";
  t.answer_grammar = FormatKind::four_way;
  t.system_text = std::string(kPreamble) +
                  "an assistant </think><answer> answer here </answer>. Now the user asks you to judge the "
                  "performance of an AI assistants. You have only FOUR Option:\n\n"
                  "Option 1. Model A is better: [[A>B]]\n"
                  "Option 2. Model B is better: [[B>A]]\n"
                  "Option 3. Tie, relatively the same acceptable quality: [[A=B=Good]]\n"
                  "Option 4. Both are bad: [[A=B=Bad]]\n\n"
                  "Assess the quality of generated videos. Consider inappropriateness the following sub-dimensions: "
                  "Alignment with editing prompt, Overedited, Naturalness, Artifact, and Visual Appealing, are "
                  "correctly represented. Avoid order, length, style or other bias. " +
                  kConclude + "<answer>[[B>A]]</answer>.";
  t.user_layout = {{LayoutBlock::Kind::text, "[Question]\n{question}"},
                   {LayoutBlock::Kind::candidates, "[Assistant {letter}’s Video]\n{attachments}"}};
  return t;
}

inline constexpr const char* kMosRubric =
    "1 - Very Bad: The speech is very unnatural, has poor audio quality, and is nearly impossible to understand.\n"
    "2 - Poor: The speech sounds unnatural and/or noisy. Only a few words are understandable.\n"
    "3 - Fair: The speech is somewhat unnatural or contains noticeable noise, but the overall meaning is "
    "understandable.\n"
    "4 - Good: The speech is generally natural and clear, with most of the content easy to understand.\n"
    "5 - Excellent: The speech is very natural, high in audio quality, and fully intelligible.\n\n";

inline Template audio_mos() {
  Template t;
  t.id = "audio_mos";
  t.answer_grammar = FormatKind::decimal_score;
  t.system_text = std::string(kPreamble) +
                  "an assistant </think><answer> answer here </answer>. Now the user asks you to judge the "
                  "performance of an audio generative AI assistant in response to the question. Listen to the "
                  "generated speech audio, and score this speech on a scale from {range_min} to {range_max} in "
                  "FIRST DECIMAL. Consider the following criteria when scoring:\n\n" +
                  kMosRubric + "Do NOT consider the content of the speech. " + kConclude + "<answer>3.8</answer>.";
  t.user_layout = {
      {LayoutBlock::Kind::text, "[Question]\nGenerate clear, natural, and understandable high-quality speech audio."},
      {LayoutBlock::Kind::candidates, "[Assistant's Answer]\nHere is the speech I generated: {attachments}"}};
  return t;
}

// Speaker similarity: the reference speech travels as a context attachment.
inline Template audio_ss() {
  Template t;
  t.id = "audio_ss";
  t.answer_grammar = FormatKind::decimal_score;
  t.verified = false;
  t.system_text = std::string(kPreamble) +
                  "an assistant </think><answer> answer here </answer>. Now the user asks you to judge the "
                  "performance of an audio generative AI assistant in response to the question. Listen to the "
                  "reference speech and the generated speech, and score how similar the two speakers sound on a "
                  "scale from {range_min} to {range_max} in FIRST DECIMAL, where a higher score means the voices "
                  "are more likely to belong to the same speaker. Do NOT consider the content of the speech. " +
                  kConclude + "<answer>3.8</answer>.";
  t.user_layout = {
      {LayoutBlock::Kind::text, "[Question]\nGenerate speech in the same voice as this reference speech: {context}"},
      {LayoutBlock::Kind::candidates, "[Assistant's Answer]\nHere is the speech I generated: {attachments}"}};
  return t;
}

}  // namespace builtin

/// Immutable-after-setup registry of templates by id.
class TemplateRegistry {
 public:
  static TemplateRegistry with_builtins() {
    TemplateRegistry r;
    for (auto t : {builtin::pairwise(), builtin::single(), builtin::batch(), builtin::fourway_edit(),
                   builtin::audio_mos(), builtin::audio_ss()})
      r.add(std::move(t));
    return r;
  }

  void add(Template t) {
    check_template(t);
    templates_[t.id] = std::move(t);
  }

  void load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open template file " + path);
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw ConfigError("template file " + path + " is not valid JSON");
    try {
      add(j.get<Template>());
    } catch (const SchemaError& e) {
      throw ConfigError("template file " + path + ": " + e.what());
    }
  }

  bool contains(const std::string& id) const { return templates_.count(id) != 0; }

  const Template& get(const std::string& id) const {
    auto it = templates_.find(id);
    if (it == templates_.end()) throw ConfigError("unknown template '" + id + "'");
    return it->second;
  }

  std::vector<std::string> ids() const {
    std::vector<std::string> out;
    for (const auto& [k, _] : templates_) out.push_back(k);
    return out;
  }

  /// Default template id for a format kind.
  static std::string default_for(FormatKind k) {
    switch (k) {
      case FormatKind::single_score: return "single";
      case FormatKind::pairwise: return "pairwise";
      case FormatKind::four_way: return "fourway_edit";
      case FormatKind::batch_ranking: return "batch";
      case FormatKind::decimal_score: return "audio_mos";
    }
    return "pairwise";
  }

  /// Renders `task` with its candidates reordered by `perm`.
  MessageList render(const std::string& template_id, const EvalTask& task, const Permutation& perm) const {
    const auto& t = get(template_id);
    if (t.answer_grammar != task.format.kind)
      throw ConfigError("template " + t.id + " answers " + to_string(t.answer_grammar) + ", task " + task.id +
                        " is " + to_string(task.format.kind));
    if (task.candidates.size() != task.format.expected_candidates())
      throw PreconditionError("task " + task.id + ": slot arity mismatch, " + std::to_string(task.candidates.size()) +
                              " candidates for " + std::to_string(task.format.expected_candidates()) + " slots");
    const auto shown = permute(task, perm).first;

    std::map<std::string, std::string> sys_slots{{"scale", std::to_string(task.format.scale)},
                                                 {"range_min", detail::format_tenth(task.format.decimal_min)},
                                                 {"range_max", detail::format_tenth(task.format.decimal_max)}};
    std::vector<ContentPart> sys;
    detail::expand_into(sys, t.system_text, sys_slots, "", {});

    std::vector<ContentPart> user;
    bool context_placed = false;
    for (std::size_t b = 0; b < t.user_layout.size(); ++b) {
      const auto& block = t.user_layout[b];
      if (block.kind == LayoutBlock::Kind::text) {
        if (b > 0) detail::push_text(user, t.separator);
        context_placed |= detail::expand_into(user, block.text, {{"question", shown.question}}, "context",
                                              shown.context_attachments);
        if (!context_placed && block.text.find("{question}") != std::string::npos) {
          for (const auto& a : shown.context_attachments) user.push_back(ContentPart::of_attachment(a));
          context_placed = true;
        }
      } else {
        for (std::size_t i = 0; i < shown.candidates.size(); ++i) {
          if (b > 0 || i > 0) detail::push_text(user, t.separator);
          const auto& c = shown.candidates[i];
          std::map<std::string, std::string> slots{{"index", std::to_string(i + 1)},
                                                   {"letter", std::string(1, candidate_letter(i))},
                                                   {"answer", c.text}};
          if (!detail::expand_into(user, block.text, slots, "attachments", c.attachments))
            for (const auto& a : c.attachments) user.push_back(ContentPart::of_attachment(a));
        }
      }
    }
    if (!context_placed)
      for (const auto& a : shown.context_attachments) user.push_back(ContentPart::of_attachment(a));

    MessageList out;
    out.messages.push_back({"system", std::move(sys)});
    out.messages.push_back({"user", std::move(user)});
    if (!t.assistant_prefill.empty())
      out.messages.push_back({"assistant", {ContentPart::of_text(t.assistant_prefill)}});
    return out;
  }

  MessageList render_fourway(const EvalTask& task) const {
    if (task.candidates.size() != 2)
      throw PreconditionError("four-way rendering needs exactly 2 candidates, got " +
                              std::to_string(task.candidates.size()));
    return render("fourway_edit", task, Permutation::identity(2));
  }

 private:
  std::map<std::string, Template> templates_;
};

}  // namespace flexjudge
