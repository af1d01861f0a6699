#include <gtest/gtest.h>

#include <httplib.h>

#include <algorithm>
#include <cstdlib>
#include <thread>

#include "../support.hpp"
#include "flexjudge/http.hpp"

using namespace flexjudge;

// ---------------------------------------------------------------------------
// templates and rendering
// ---------------------------------------------------------------------------

TEST(Prompting, GoldenTranscripts) {
  const bool update = std::getenv("FLEXJUDGE_UPDATE_GOLDEN") != nullptr;
  for (const auto& c : fjtest::golden_cases()) {
    const std::string path = std::string(FLEXJUDGE_GOLDEN_DIR) + "/" + c.name + ".txt";
    const std::string got = fjtest::render_golden(c);
    if (update) {
      std::ofstream(path, std::ios::binary) << got;
      continue;
    }
    EXPECT_EQ(got, fjtest::read_file(path)) << c.name;
  }
}

TEST(Prompting, VerbatimPhrases) {
  auto reg = TemplateRegistry::with_builtins();
  EXPECT_NE(reg.get("pairwise").system_text.find("Score assistants 1-{scale} (higher=better)"), std::string::npos);
  EXPECT_NE(reg.get("batch").system_text.find("DO NOT assign the same score to multiple assistants."),
            std::string::npos);
  EXPECT_NE(reg.get("fourway_edit").system_text.find("You have only FOUR Option"), std::string::npos);
  EXPECT_NE(reg.get("audio_mos").system_text.find("FIRST DECIMAL"), std::string::npos);
  EXPECT_FALSE(reg.get("audio_ss").verified);
}

TEST(Prompting, ScaleSlotFollowsFormat) {
  auto reg = TemplateRegistry::with_builtins();
  auto c = fjtest::golden_cases()[0];
  c.task.format.scale = 5;
  auto m = reg.render("pairwise", c.task, Permutation::identity(2));
  EXPECT_NE(m.messages[0].text().find("Score assistants 1-5 (higher=better)"), std::string::npos);
}

TEST(Prompting, RenderEndsWithThinkPrefill) {
  auto reg = TemplateRegistry::with_builtins();
  for (const auto& c : fjtest::golden_cases()) {
    auto m = reg.render(c.template_id, c.task, Permutation::identity(c.task.candidates.size()));
    ASSERT_EQ(m.messages.size(), 3u);
    EXPECT_EQ(m.messages[0].role, "system");
    EXPECT_EQ(m.messages[1].role, "user");
    EXPECT_TRUE(m.ends_with_prefill());
    EXPECT_EQ(m.messages[2].text(), "<think>");
  }
}

TEST(Prompting, RenderRejectsMismatches) {
  auto reg = TemplateRegistry::with_builtins();
  auto cases = fjtest::golden_cases();
  EXPECT_THROW(reg.render("nope", cases[0].task, Permutation::identity(2)), ConfigError);
  EXPECT_THROW(reg.render("single", cases[0].task, Permutation::identity(2)), ConfigError);
  auto bad = cases[2].task;
  bad.candidates.pop_back();
  EXPECT_THROW(reg.render("batch", bad, Permutation::identity(2)), PreconditionError);
}

TEST(Prompting, PermutedRenderShowsCandidatesInSlotOrder) {
  auto reg = TemplateRegistry::with_builtins();
  auto t = fjtest::golden_cases()[2].task;  // batch of 3
  Permutation p({2, 0, 1});
  auto user = reg.render("batch", t, p).messages[1].text();
  auto pos = [&](const std::string& s) { return user.find(s); };
  EXPECT_LT(pos("Lyon."), pos("Paris."));
  EXPECT_LT(pos("Paris."), pos("The capital of France is Paris"));
}

TEST(Prompting, TemplateJsonRoundTripAndLoadFile) {
  auto t = builtin::pairwise();
  t.id = "custom";
  json j = t;
  auto back = j.get<Template>();
  EXPECT_EQ(json(back).dump(), j.dump());
  const std::string path = ::testing::TempDir() + "custom_template.json";
  std::ofstream(path) << j.dump();
  auto reg = TemplateRegistry::with_builtins();
  reg.load_file(path);
  EXPECT_TRUE(reg.contains("custom"));
  std::ofstream(path) << "{\"id\":\"x\"}";
  EXPECT_THROW(reg.load_file(path), ConfigError);
}

TEST(Prompting, TemplateWithUnknownSlotRejected) {
  auto t = builtin::single();
  t.id = "bad";
  t.system_text += " {nonsense}";
  TemplateRegistry reg;
  EXPECT_THROW(reg.add(t), ConfigError);
}

// Exhaustive over all permutations of up to four candidates.
TEST(Permutation, CanonicalRenderedRoundTripExhaustive) {
  for (std::size_t n = 1; n <= 4; ++n) {
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    do {
      Permutation p(order);
      EXPECT_EQ(p.inverse().inverse(), p);
      std::vector<int> scores(n);
      for (std::size_t i = 0; i < n; ++i) scores[i] = static_cast<int>(i) + 1;
      Verdict canonical = ScoreList{scores};
      EXPECT_EQ(p.to_canonical(p.to_rendered(canonical)), canonical);
      // The rendered verdict lists the score of the candidate shown in each slot.
      auto rendered = std::get<ScoreList>(p.to_rendered(canonical)).values;
      for (std::size_t i = 0; i < n; ++i) EXPECT_EQ(rendered[i], scores[static_cast<std::size_t>(order[i])]);
      std::string letters;
      for (std::size_t i = 0; i < n; ++i) letters.push_back(static_cast<char>('A' + i));
      Verdict rank = RankOrder{letters};
      EXPECT_EQ(p.to_rendered(p.to_canonical(rank)), rank);
      if (n == 2)
        for (auto l : {PairLabel::a_better, PairLabel::b_better, PairLabel::tie_good, PairLabel::tie_bad}) {
          Verdict v = PairChoice{l};
          EXPECT_EQ(p.to_canonical(p.to_canonical(v)), v);
        }
    } while (std::next_permutation(order.begin(), order.end()));
  }
}

TEST(Permutation, RankingRelabelExample) {
  Permutation p({2, 3, 0, 1});
  EXPECT_EQ(std::get<RankOrder>(p.to_canonical(RankOrder{"ABCD"})).letters, "CDAB");
  EXPECT_THROW(Permutation({0, 0}), PreconditionError);
}

TEST(Permutation, ReversedSwapsPairLabels) {
  auto p = Permutation::reversed(2);
  EXPECT_EQ(std::get<PairChoice>(p.to_canonical(PairChoice{PairLabel::a_better})).label, PairLabel::b_better);
  EXPECT_EQ(std::get<PairChoice>(p.to_canonical(PairChoice{PairLabel::tie_good})).label, PairLabel::tie_good);
}

// ---------------------------------------------------------------------------
// wire format and client
// ---------------------------------------------------------------------------

static MessageList golden_prompt(std::size_t i) {
  auto c = fjtest::golden_cases()[i];
  return TemplateRegistry::with_builtins().render(c.template_id, c.task,
                                                  Permutation::identity(c.task.candidates.size()));
}

TEST(Wire, RequestBodyShape) {
  GenerationParams p;
  p.model = "m";
  p.seed = 5;
  p.stop = {"</answer>"};
  auto body = wire::request_body(golden_prompt(0), p, true);
  EXPECT_EQ(body["model"], "m");
  EXPECT_EQ(body["seed"], 5);
  EXPECT_TRUE(body["continue_final_message"].get<bool>());
  EXPECT_FALSE(body["add_generation_prompt"].get<bool>());
  EXPECT_EQ(body["messages"].size(), 3u);
  EXPECT_EQ(body["messages"][2]["content"], "<think>");
}

TEST(Wire, AttachmentsBecomeTypedParts) {
  auto body = wire::request_body(golden_prompt(3), GenerationParams{}, false);
  const auto& content = body["messages"][1]["content"];
  ASSERT_TRUE(content.is_array());
  std::size_t videos = 0;
  for (const auto& part : content) videos += part["type"] == "video_url";
  EXPECT_EQ(videos, 2u);
  auto inline_audio = fjtest::media(MediaKind::audio, "", "audio/wav");
  inline_audio.data = "UklGRg==";
  EXPECT_EQ(wire::attachment_part(inline_audio)["audio_url"]["url"], "data:audio/wav;base64,UklGRg==");
}

TEST(Wire, ParseResponseRejectsMalformed) {
  EXPECT_EQ(wire::parse_response(wire::response_body("hi")).text, "hi");
  EXPECT_THROW(wire::parse_response("not json"), ProtocolError);
  EXPECT_THROW(wire::parse_response("{\"choices\":[]}"), ProtocolError);
}

TEST(Client, RetriesRetryableStatusesWithBackoff) {
  MockScript s;
  s.sequence = {MockReply::failure(429), MockReply::failure(503), MockReply::ok("x</think><answer>3</answer>")};
  auto transport = std::make_shared<MockTransport>(s);
  std::vector<long> sleeps;
  ClientOptions opts;
  opts.retry.sleep = [&](std::chrono::milliseconds d) { sleeps.push_back(static_cast<long>(d.count())); };
  ChatClient client(transport, opts);
  auto c = client.complete(golden_prompt(1), GenerationParams{});
  EXPECT_EQ(c.attempts, 3);
  ASSERT_EQ(sleeps.size(), 2u);
  // base 1 s doubling per attempt, jittered into [d/2, d]
  EXPECT_GE(sleeps[0], 500);
  EXPECT_LE(sleeps[0], 1000);
  EXPECT_GE(sleeps[1], 1000);
  EXPECT_LE(sleeps[1], 2000);
}

TEST(Client, NonRetryableFailsFast) {
  MockScript s;
  s.sequence = {MockReply::failure(400)};
  auto [client, transport] = make_mock_backend(s);
  try {
    client->complete(golden_prompt(1), GenerationParams{});
    FAIL();
  } catch (const TransportError& e) {
    EXPECT_EQ(e.attempts, 1);
  }
}

TEST(Client, RetriesExhaustAfterFiveAttempts) {
  MockScript s;
  s.fallback = MockReply::failure(500);
  auto [client, transport] = make_mock_backend(s);
  EXPECT_THROW(client->complete(golden_prompt(1), GenerationParams{}), TransportError);
  EXPECT_EQ(transport->request_count(), 5u);
}

TEST(Client, BackoffDelayIsCappedAndDeterministic) {
  RetryPolicy r;
  for (int a = 1; a <= 10; ++a) {
    EXPECT_LE(r.delay(a, 7).count(), 30000);
    EXPECT_EQ(r.delay(a, 7), r.delay(a, 7));
  }
  EXPECT_TRUE(RetryPolicy::retryable(0));
  EXPECT_TRUE(RetryPolicy::retryable(408));
  EXPECT_TRUE(RetryPolicy::retryable(502));
  EXPECT_FALSE(RetryPolicy::retryable(404));
}

TEST(Client, InFlightBoundHolds) {
  MockScript s;
  s.fallback = MockReply::ok("x</think><answer>3</answer>");
  auto transport = std::make_shared<MockTransport>(s, std::chrono::microseconds(2000));
  ClientOptions opts;
  opts.max_in_flight = 3;
  ChatClient client(transport, opts);
  auto prompt = golden_prompt(1);
  parallel_for(40, 10, [&](std::size_t) { client.complete(prompt, GenerationParams{}); });
  EXPECT_LE(transport->max_in_flight(), 3);
  EXPECT_EQ(transport->request_count(), 40u);
}

TEST(Client, ContinuationSendsPartialAndStripsEcho) {
  MockScript s;
  s.rules.push_back({"", "Wait", true, MockReply::ok("<think>so far Wait and more</think><answer>5</answer>")});
  auto [client, transport] = make_mock_backend(s);
  auto c = client->continue_completion(golden_prompt(1), "<think>so far Wait", GenerationParams{});
  EXPECT_EQ(c.text, " and more</think><answer>5</answer>");
  auto req = transport->log().back();
  EXPECT_TRUE(req.continuation);
  EXPECT_EQ(req.body["messages"].back()["content"], "<think>so far Wait");
  EXPECT_EQ(req.body["messages"].size(), 3u);
}

TEST(Client, ContinuationUnsupportedOrEmptyPrefix) {
  auto [plain, t1] = make_mock_backend(MockScript{}, false);
  EXPECT_THROW(plain->continue_completion(golden_prompt(1), "x", GenerationParams{}), UnsupportedCapability);
  auto [cont, t2] = make_mock_backend(MockScript{}, true);
  EXPECT_THROW(cont->continue_completion(golden_prompt(1), "", GenerationParams{}), PreconditionError);
}

TEST(Client, PrefillFoldedWithoutContinuation) {
  MockScript s;
  s.fallback = MockReply::ok("x</think><answer>3</answer>");
  auto [client, transport] = make_mock_backend(s, false);
  client->complete(golden_prompt(1), GenerationParams{});
  auto req = transport->log().back();
  EXPECT_FALSE(req.continuation);
  ASSERT_EQ(req.body["messages"].size(), 2u);
  const std::string user = req.body["messages"][1]["content"];
  EXPECT_EQ(user.substr(user.size() - 9), "\n\n<think>");
}

TEST(Client, RequestLogHasOneLinePerAttempt) {
  MockScript s;
  s.sequence = {MockReply::failure(500), MockReply::ok("x</think><answer>3</answer>")};
  auto transport = std::make_shared<MockTransport>(s);
  std::ostringstream log;
  ClientOptions opts;
  opts.retry.sleep = [](std::chrono::milliseconds) {};
  opts.request_log = &log;
  ChatClient client(transport, opts);
  client.complete(golden_prompt(1), GenerationParams{}, {"t1", 2});
  std::istringstream lines(log.str());
  std::string line;
  std::vector<json> rows;
  while (std::getline(lines, line)) rows.push_back(json::parse(line));
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0]["status"], 500);
  EXPECT_EQ(rows[1]["status"], 200);
  EXPECT_EQ(rows[1]["task_id"], "t1");
  EXPECT_EQ(rows[1]["trial"], 2);
  EXPECT_EQ(rows[0]["body_hash"], rows[1]["body_hash"]);
  EXPECT_EQ(rows[0]["timestamp"].get<std::string>().back(), 'Z');
}

TEST(Mock, ScriptFromJsonResolutionOrder) {
  auto body = wire::request_body(golden_prompt(1), GenerationParams{}, true).dump();
  json j = {{"by_hash", {{body_hash(body), "hashed"}}},
            {"sequence", json::array({"first"})},
            {"rules", json::array({{{"contains", "capital"}, {"reply", "ruled"}}})},
            {"default", {{"status", 503}}}};
  MockTransport t(mock_script_from_json(j));
  EXPECT_EQ(wire::parse_response(t.post(body).body).text, "hashed");
  EXPECT_EQ(wire::parse_response(t.post("{\"messages\":[]}").body).text, "first");
  EXPECT_EQ(wire::parse_response(t.post("{\"messages\":[{\"content\":\"capital\"}]}").body).text, "ruled");
  EXPECT_EQ(t.post("{\"messages\":[]}").status, 503);
  MockTransport empty(MockScript{});
  EXPECT_THROW(empty.post("{}"), UnscriptedRequest);
}

TEST(Http, PostsToLocalServer) {
  httplib::Server server;
  std::string seen_auth, seen_path;
  server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    seen_auth = req.get_header_value("Authorization");
    seen_path = req.path;
    auto body = json::parse(req.body);
    res.set_content(wire::response_body("echo " + body["model"].get<std::string>()), "application/json");
  });
  server.Post("/v1/flaky/chat/completions",
              [](const httplib::Request&, httplib::Response& res) { res.status = 503; });
  int port = server.bind_to_any_port("127.0.0.1");
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  auto ok = std::make_shared<HttpTransport>("http://127.0.0.1:" + std::to_string(port) + "/v1/", "sk-test");
  ChatClient client(ok);
  GenerationParams p;
  p.model = "judge-7b";
  EXPECT_EQ(client.complete(golden_prompt(1), p).text, "echo judge-7b");
  EXPECT_EQ(seen_auth, "Bearer sk-test");
  EXPECT_EQ(seen_path, "/v1/chat/completions");

  auto flaky = std::make_shared<HttpTransport>("http://127.0.0.1:" + std::to_string(port) + "/v1/flaky", "");
  ClientOptions opts;
  opts.retry.max_attempts = 2;
  opts.retry.sleep = [](std::chrono::milliseconds) {};
  ChatClient retrying(flaky, opts);
  EXPECT_THROW(retrying.complete(golden_prompt(1), p), TransportError);

  server.stop();
  th.join();
  EXPECT_EQ(HttpTransport("http://127.0.0.1:1/v1", "").post("{}").status, 0);
  EXPECT_THROW(HttpTransport("no-scheme", ""), ConfigError);
}
