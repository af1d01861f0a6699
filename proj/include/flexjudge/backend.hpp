#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <ctime>
#include <exception>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "flexjudge/core.hpp"
#include "flexjudge/prompting.hpp"

namespace flexjudge {

// ---------------------------------------------------------------------------
// Completions and the backend interface
// ---------------------------------------------------------------------------

enum class FinishReason { stop, length, error };

inline const char* to_string(FinishReason f) {
  switch (f) {
    case FinishReason::stop: return "stop";
    case FinishReason::length: return "length";
    case FinishReason::error: return "error";
  }
  return "error";
}

struct Usage {
  int prompt_tokens = 0;
  int completion_tokens = 0;
};

struct Completion {
  std::string text;
  FinishReason finish_reason = FinishReason::stop;
  std::optional<Usage> usage;
  int attempts = 1;
};

/// Identifies the judgment a request belongs to, for the request log.
struct RequestTag {
  std::string task_id;
  int trial = 0;
};

class Backend {
 public:
  virtual ~Backend() = default;

  virtual Completion complete(const MessageList& messages, const GenerationParams& params,
                              const RequestTag& tag = {}) = 0;

  /// Resubmits `messages` with the assistant turn pre-filled by `partial`;
  /// returns only the continuation.
  virtual Completion continue_completion(const MessageList& messages, std::string_view partial,
                                         const GenerationParams& params, const RequestTag& tag = {}) = 0;

  virtual bool supports_continuation() const = 0;
};

// ---------------------------------------------------------------------------
// Wire format
// ---------------------------------------------------------------------------

namespace wire {

inline json attachment_part(const Attachment& a) {
  std::string url = a.uri.empty() ? "data:" + (a.mime.empty() ? std::string("application/octet-stream") : a.mime) +
                                        ";base64," + a.data
                                  : a.uri;
  switch (a.media_kind) {
    case MediaKind::image: return {{"type", "image_url"}, {"image_url", {{"url", url}}}};
    case MediaKind::video: return {{"type", "video_url"}, {"video_url", {{"url", url}}}};
    case MediaKind::audio: return {{"type", "audio_url"}, {"audio_url", {{"url", url}}}};
    default: return {{"type", "file"}, {"file", {{"url", url}}}};
  }
}

inline json message(const Message& m) {
  json j{{"role", m.role}};
  if (m.text_only()) {
    j["content"] = m.text();
  } else {
    json parts = json::array();
    for (const auto& p : m.content) {
      if (p.kind == ContentPart::Kind::text) parts.push_back({{"type", "text"}, {"text", p.text}});
      else parts.push_back(attachment_part(p.attachment));
    }
    j["content"] = parts;
  }
  return j;
}

/// Chat-completions request body. `continuation` asks the server to extend
/// the final assistant message instead of opening a new turn.
inline json request_body(const MessageList& messages, const GenerationParams& p, bool continuation) {
  json msgs = json::array();
  for (const auto& m : messages.messages) msgs.push_back(message(m));
  json body{{"model", p.model}, {"messages", msgs}, {"temperature", p.temperature}, {"max_tokens", p.max_tokens}};
  if (!p.stop.empty()) body["stop"] = p.stop;
  if (p.seed) body["seed"] = *p.seed;
  if (continuation) {
    body["continue_final_message"] = true;
    body["add_generation_prompt"] = false;
  }
  return body;
}

inline Completion parse_response(const std::string& body) {
  json j = json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw ProtocolError("response body is not a JSON object");
  if (!j.contains("choices") || !j["choices"].is_array() || j["choices"].empty())
    throw ProtocolError("response has no choices");
  const auto& choice = j["choices"][0];
  if (!choice.contains("message") || !choice["message"].contains("content") ||
      !choice["message"]["content"].is_string())
    throw ProtocolError("response choice has no message content");
  Completion c;
  c.text = choice["message"]["content"].get<std::string>();
  auto reason = choice.value("finish_reason", std::string("stop"));
  c.finish_reason = reason == "length" ? FinishReason::length : FinishReason::stop;
  if (c.text.empty()) throw ProtocolError("response content is empty");
  if (j.contains("usage") && j["usage"].is_object())
    c.usage = Usage{j["usage"].value("prompt_tokens", 0), j["usage"].value("completion_tokens", 0)};
  return c;
}

inline std::string response_body(const std::string& text, const std::string& finish_reason = "stop",
                                 std::optional<Usage> usage = std::nullopt) {
  json j{{"object", "chat.completion"},
         {"choices", json::array({{{"index", 0},
                                   {"message", {{"role", "assistant"}, {"content", text}}},
                                   {"finish_reason", finish_reason}}})}};
  if (usage) j["usage"] = {{"prompt_tokens", usage->prompt_tokens}, {"completion_tokens", usage->completion_tokens}};
  return j.dump();
}

}  // namespace wire

// ---------------------------------------------------------------------------
// Transport
// ---------------------------------------------------------------------------

/// Raw HTTP exchange. status 0 means the request never completed (timeout,
/// connection failure).
struct TransportResponse {
  int status = 0;
  std::string body;
  std::string error;
};

class Transport {
 public:
  virtual ~Transport() = default;
  virtual TransportResponse post(const std::string& body) = 0;
};

struct RetryPolicy {
  int max_attempts = 5;
  std::chrono::milliseconds base{1000};
  std::chrono::milliseconds cap{30000};
  bool jitter = true;
  std::function<void(std::chrono::milliseconds)> sleep = [](std::chrono::milliseconds d) {
    std::this_thread::sleep_for(d);
  };

  static bool retryable(int status) { return status == 0 || status == 408 || status == 429 || status >= 500; }

  std::chrono::milliseconds delay(int attempt, std::uint64_t jitter_seed) const {
    double d = static_cast<double>(base.count());
    for (int i = 1; i < attempt && d < static_cast<double>(cap.count()); ++i) d *= 2.0;
    d = std::min(d, static_cast<double>(cap.count()));
    if (jitter) {
      Rng rng(jitter_seed);
      d = d * (0.5 + 0.5 * rng.uniform01());
    }
    return std::chrono::milliseconds(static_cast<long long>(d));
  }
};

/// Counting gate bounding concurrent requests.
class InFlightLimit {
 public:
  explicit InFlightLimit(std::size_t limit) : limit_(limit == 0 ? 1 : limit) {}

  void acquire() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return used_ < limit_; });
    ++used_;
  }
  void release() {
    {
      std::lock_guard lock(mu_);
      --used_;
    }
    cv_.notify_one();
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::size_t limit_;
  std::size_t used_ = 0;
};

struct ClientOptions {
  RetryPolicy retry;
  std::size_t max_in_flight = 8;
  bool continuation = false;
  std::ostream* request_log = nullptr;
};

inline std::string utc_timestamp() {
  auto now = std::chrono::system_clock::now();
  std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline std::string body_hash(std::string_view body) { return to_hex(fnv1a64(body)); }

/// Thread-safe chat-completions client over any transport: retries transient
/// failures with exponential backoff, bounds in-flight requests, and appends
/// one log line per attempt.
class ChatClient : public Backend {
 public:
  ChatClient(std::shared_ptr<Transport> transport, ClientOptions options = {})
      : transport_(std::move(transport)), options_(std::move(options)), gate_(options_.max_in_flight) {}

  Completion complete(const MessageList& messages, const GenerationParams& params,
                      const RequestTag& tag = {}) override {
    check_messages(messages);
    check_params(params);
    if (messages.ends_with_prefill() && !options_.continuation)
      return send(wire::request_body(fold_prefill(messages), params, false), tag);
    return send(wire::request_body(messages, params, messages.ends_with_prefill()), tag);
  }

  Completion continue_completion(const MessageList& messages, std::string_view partial, const GenerationParams& params,
                                 const RequestTag& tag = {}) override {
    if (!options_.continuation) throw UnsupportedCapability("backend does not support assistant continuation");
    if (partial.empty()) throw PreconditionError("continuation prefix must be nonempty");
    check_messages(messages);
    check_params(params);
    MessageList prefixed = messages;
    if (prefixed.ends_with_prefill()) prefixed.messages.pop_back();
    prefixed.messages.push_back({"assistant", {ContentPart::of_text(std::string(partial))}});
    Completion c = send(wire::request_body(prefixed, params, true), tag);
    if (c.text.size() >= partial.size() && std::string_view(c.text).substr(0, partial.size()) == partial)
      c.text.erase(0, partial.size());
    return c;
  }

  bool supports_continuation() const override { return options_.continuation; }

  /// Without continuation support the assistant prefill travels at the end of
  /// the user turn; the parser then sees a completion that may or may not
  /// repeat the opening tag.
  static MessageList fold_prefill(const MessageList& messages) {
    MessageList out = messages;
    std::string prefill = out.messages.back().text();
    out.messages.pop_back();
    for (auto it = out.messages.rbegin(); it != out.messages.rend(); ++it) {
      if (it->role == "user") {
        detail::push_text(it->content, "\n\n" + prefill);
        break;
      }
    }
    return out;
  }

 private:
  static void check_messages(const MessageList& messages) {
    if (messages.messages.empty()) throw PreconditionError("message list is empty");
    if (messages.messages.front().role != "system") throw PreconditionError("first message must be the system prompt");
  }

  Completion send(const json& body_json, const RequestTag& tag) {
    const std::string body = body_json.dump();
    const std::string hash = body_hash(body);
    std::string last_error;
    for (int attempt = 1; attempt <= options_.retry.max_attempts; ++attempt) {
      TransportResponse resp;
      gate_.acquire();
      try {
        resp = transport_->post(body);
      } catch (...) {
        gate_.release();
        throw;
      }
      gate_.release();
      log(tag, hash, resp.status);
      if (resp.status >= 200 && resp.status < 300) {
        Completion c = wire::parse_response(resp.body);
        c.attempts = attempt;
        return c;
      }
      last_error = resp.status == 0 ? resp.error : "HTTP " + std::to_string(resp.status);
      if (!RetryPolicy::retryable(resp.status)) throw TransportError(last_error, attempt);
      if (attempt < options_.retry.max_attempts)
        options_.retry.sleep(options_.retry.delay(attempt, fnv1a64(hash) + static_cast<std::uint64_t>(attempt)));
    }
    throw TransportError("retries exhausted: " + last_error, options_.retry.max_attempts);
  }

  void log(const RequestTag& tag, const std::string& hash, int status) {
    if (!options_.request_log) return;
    json line{{"timestamp", utc_timestamp()},
              {"task_id", tag.task_id},
              {"trial", tag.trial},
              {"body_hash", hash},
              {"status", status}};
    std::lock_guard lock(log_mu_);
    *options_.request_log << line.dump() << '\n';
    options_.request_log->flush();
  }

  std::shared_ptr<Transport> transport_;
  ClientOptions options_;
  InFlightLimit gate_;
  std::mutex log_mu_;
};

// ---------------------------------------------------------------------------
// Scripted mock
// ---------------------------------------------------------------------------

struct MockReply {
  std::string text;
  int status = 200;
  std::string finish_reason = "stop";
  std::optional<std::string> raw_body;
  std::optional<Usage> usage;

  static MockReply ok(std::string t) {
    MockReply r;
    r.text = std::move(t);
    return r;
  }
  static MockReply failure(int status) {
    MockReply r;
    r.status = status;
    return r;
  }
};

struct MockRequest {
  std::size_t index = 0;
  json body;
  std::string body_hash;
  std::string prompt_text;   // all message text, in order
  bool continuation = false;
  std::string partial;       // assistant prefix when continuing
};

/// `contains` is matched against all prompt text, `prefix_contains` against
/// the assistant prefix of a continuation request.
struct MockRule {
  std::string contains;
  std::string prefix_contains;
  std::optional<bool> continuation;
  MockReply reply;
};

struct MockScript {
  std::vector<MockReply> sequence;
  std::map<std::string, MockReply> by_hash;
  std::vector<MockRule> rules;
  std::function<MockReply(const MockRequest&)> responder;
  std::optional<MockReply> fallback;
};

inline void from_json(const json& j, MockReply& r) {
  r = MockReply{};
  if (j.is_string()) {
    r.text = j.get<std::string>();
    return;
  }
  r.text = j.value("text", std::string());
  r.status = j.value("status", 200);
  r.finish_reason = j.value("finish_reason", std::string("stop"));
  if (j.contains("raw_body")) r.raw_body = j.at("raw_body").get<std::string>();
}

inline MockScript mock_script_from_json(const json& j) {
  MockScript s;
  if (j.contains("sequence")) s.sequence = j.at("sequence").get<std::vector<MockReply>>();
  if (j.contains("by_hash"))
    for (auto it = j.at("by_hash").begin(); it != j.at("by_hash").end(); ++it)
      s.by_hash[it.key()] = it.value().get<MockReply>();
  if (j.contains("rules"))
    for (const auto& r : j.at("rules")) {
      MockRule rule;
      rule.contains = r.value("contains", std::string());
      rule.prefix_contains = r.value("prefix_contains", std::string());
      if (r.contains("continuation")) rule.continuation = r.at("continuation").get<bool>();
      rule.reply = r.at("reply").get<MockReply>();
      s.rules.push_back(std::move(rule));
    }
  if (j.contains("default")) s.fallback = j.at("default").get<MockReply>();
  return s;
}

/// Deterministic in-process transport. Thread-safe; records every request
/// and the peak number of concurrent requests.
class MockTransport : public Transport {
 public:
  explicit MockTransport(MockScript script, std::chrono::microseconds latency = {})
      : script_(std::move(script)), latency_(latency) {}

  TransportResponse post(const std::string& body) override {
    const int now = ++in_flight_;
    int peak = max_in_flight_.load();
    while (now > peak && !max_in_flight_.compare_exchange_weak(peak, now)) {
    }
    struct Leave {
      std::atomic<int>& n;
      ~Leave() { --n; }
    } leave{in_flight_};
    if (latency_.count() > 0) std::this_thread::sleep_for(latency_);

    MockRequest req = describe(body);
    MockReply reply;
    {
      std::lock_guard lock(mu_);
      req.index = count_++;
      reply = resolve(req);
      if (recording_) log_.push_back(std::move(req));
    }
    TransportResponse out;
    out.status = reply.status;
    if (reply.status == 200) out.body = reply.raw_body ? *reply.raw_body : wire::response_body(reply.text, reply.finish_reason, reply.usage);
    else out.error = "scripted status " + std::to_string(reply.status);
    return out;
  }

  std::vector<MockRequest> log() const {
    std::lock_guard lock(mu_);
    return log_;
  }
  std::size_t request_count() const {
    std::lock_guard lock(mu_);
    return count_;
  }
  // Large simulations can skip keeping request bodies; counts still advance.
  void set_recording(bool on) {
    std::lock_guard lock(mu_);
    recording_ = on;
  }
  int max_in_flight() const { return max_in_flight_.load(); }
  void clear_log() {
    std::lock_guard lock(mu_);
    log_.clear();
    count_ = 0;
    next_in_sequence_ = 0;
  }

  static MockRequest describe(const std::string& body) {
    MockRequest req;
    req.body = json::parse(body, nullptr, false);
    req.body_hash = body_hash(body);
    if (req.body.is_object()) {
      req.continuation = req.body.value("continue_final_message", false);
      const auto& msgs = req.body.value("messages", json::array());
      for (std::size_t i = 0; i < msgs.size(); ++i) {
        std::string text;
        const auto& content = msgs[i].value("content", json());
        if (content.is_string()) text = content.get<std::string>();
        else if (content.is_array())
          for (const auto& p : content)
            if (p.value("type", std::string()) == "text") text += p.value("text", std::string());
        if (req.continuation && i + 1 == msgs.size()) req.partial = text;
        else req.prompt_text += text + "\n";
      }
    }
    return req;
  }

 private:
  MockReply resolve(const MockRequest& req) {
    if (auto it = script_.by_hash.find(req.body_hash); it != script_.by_hash.end()) return it->second;
    if (next_in_sequence_ < script_.sequence.size()) return script_.sequence[next_in_sequence_++];
    for (const auto& r : script_.rules) {
      if (r.continuation && *r.continuation != req.continuation) continue;
      if (!r.contains.empty() && req.prompt_text.find(r.contains) == std::string::npos) continue;
      if (!r.prefix_contains.empty() && req.partial.find(r.prefix_contains) == std::string::npos) continue;
      return r.reply;
    }
    if (script_.responder) return script_.responder(req);
    if (script_.fallback) return *script_.fallback;
    throw UnscriptedRequest(req.body_hash);
  }

  MockScript script_;
  std::chrono::microseconds latency_;
  mutable std::mutex mu_;
  std::vector<MockRequest> log_;
  std::size_t count_ = 0;
  bool recording_ = true;
  std::size_t next_in_sequence_ = 0;
  std::atomic<int> in_flight_{0};
  std::atomic<int> max_in_flight_{0};
};

/// A mock-backed client with zero backoff delay, the usual test fixture.
inline std::pair<std::shared_ptr<ChatClient>, std::shared_ptr<MockTransport>> make_mock_backend(
    MockScript script, bool continuation = true, std::size_t max_in_flight = 8) {
  auto transport = std::make_shared<MockTransport>(std::move(script));
  ClientOptions opts;
  opts.continuation = continuation;
  opts.max_in_flight = max_in_flight;
  opts.retry.sleep = [](std::chrono::milliseconds) {};
  return {std::make_shared<ChatClient>(transport, opts), transport};
}

// ---------------------------------------------------------------------------
// Bounded parallel loop
// ---------------------------------------------------------------------------

/// Runs fn(i) for i in [0, n) on at most `workers` threads. The first
/// exception thrown by any call is rethrown after all workers stop.
template <typename F>
void parallel_for(std::size_t n, std::size_t workers, F&& fn) {
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr first_error;
  std::mutex err_mu;
  auto worker = [&] {
    while (!failed.load()) {
      std::size_t i = next++;
      if (i >= n) break;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(err_mu);
        if (!first_error) first_error = std::current_exception();
        failed = true;
      }
    }
  };
  std::vector<std::thread> threads;
  const std::size_t count = std::min(workers, n);
  threads.reserve(count);
  for (std::size_t t = 0; t < count; ++t) threads.emplace_back(worker);
  for (auto& t : threads) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace flexjudge
