#include <atomic>
#include <fstream>
#include <thread>

#include "helpers.hpp"
#include "httplib.h"
#include "molly/index.hpp"
#include "molly/kb.hpp"
#include "molly/llm.hpp"
#include "molly/sandbox.hpp"

using namespace molly;
using namespace molly::llm;

namespace {

// Loopback HTTP server on an ephemeral port for the duration of a test.
struct LocalServer {
  httplib::Server server;
  int port = 0;
  std::thread thread;

  void start() {
    port = server.bind_to_any_port("127.0.0.1");
    REQUIRE(port > 0);
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~LocalServer() {
    server.stop();
    if (thread.joinable()) thread.join();
  }
  http::Endpoint endpoint() const {
    http::Endpoint ep;
    ep.base_url = "http://127.0.0.1:" + std::to_string(port) + "/v1";
    ep.api_key = "sk-test";
    ep.timeout = std::chrono::milliseconds(2000);
    ep.backoff = std::chrono::milliseconds(1);
    return ep;
  }
};

std::string completion_body(const std::string& content) {
  return nlohmann::json{{"choices", {{{"message", {{"role", "assistant"}, {"content", content}}}}}}}
      .dump();
}

}  // namespace

TEST_CASE("stage names and temperatures") {
  CHECK(to_string(StageTag::ReflectionCritic) == "reflection_critic");
  CHECK(parse_stage("perception_student") == StageTag::PerceptionStudent);
  CHECK_ERROR_CODE(parse_stage("planner"), ErrorCode::InvalidConfig);
  CHECK(default_temperature(StageTag::Generation) == 0.3);
  CHECK(default_temperature(StageTag::ReflectionRefiner) == 0.3);
  CHECK(default_temperature(StageTag::PerceptionTeacher) == 0.0);
  CHECK(default_temperature(StageTag::Judge) == 0.0);
}

TEST_CASE("request validation") {
  auto req = make_request(StageTag::Generation, "sys", "user");
  CHECK_NOTHROW(req.validate());
  CHECK(req.to_json()["stage_tag"] == "generation");
  CHECK(req.digest() == make_request(StageTag::Generation, "sys", "user").digest());
  CHECK(req.digest() != make_request(StageTag::Generation, "sys", "other").digest());

  auto empty = make_request(StageTag::Generation, "sys", "  ");
  CHECK_ERROR_CODE(empty.validate(), ErrorCode::PreconditionFailed);
  auto two_sys = req;
  two_sys.messages.push_back({Role::System, "again"});
  CHECK_ERROR_CODE(two_sys.validate(), ErrorCode::PreconditionFailed);
  auto no_sys = req;
  no_sys.messages.erase(no_sys.messages.begin());
  CHECK_ERROR_CODE(no_sys.validate(), ErrorCode::PreconditionFailed);
}

TEST_CASE("playbook occurrence slots") {
  const auto book = Playbook::parse(
      R"({"stage":"generation","response":"second","occurrence":1})"
      "\n"
      R"({"stage":"generation","response":"first"})"
      "\n\n"
      R"({"stage":"judge","response":"AC: 1"})");
  CHECK(book.count(StageTag::Generation) == 2);
  CHECK(book.responses().at(StageTag::Generation)[0] == "first");
  CHECK(book.responses().at(StageTag::Generation)[1] == "second");
  CHECK(Playbook::parse(book.serialize()).responses() == book.responses());

  CHECK_ERROR_CODE(Playbook::parse(R"({"stage":"generation","response":"x","occurrence":2})"),
                   ErrorCode::MalformedRecord);
  const auto dup = testing::capture_error([] {
    Playbook::parse(R"({"stage":"judge","response":"a","occurrence":0})"
                    "\n"
                    R"({"stage":"judge","response":"b","occurrence":0})");
  });
  CHECK(dup.code() == ErrorCode::MalformedRecord);
  CHECK(dup.line() == std::optional<std::size_t>(2));
  CHECK_ERROR_CODE(Playbook::parse(R"({"stage":"nope","response":"x"})"), ErrorCode::InvalidConfig);
  CHECK_ERROR_CODE(Playbook::parse("{oops"), ErrorCode::MalformedRecord);
}

TEST_CASE("shipped playbooks parse") {
  for (const char* name : {"all_pass", "fail_fail_pass", "always_fail", "perception_retry",
                           "exhausted", "eval_agent"}) {
    CHECK_NOTHROW(Playbook::load(testing::source_path(std::string("data/playbooks/") + name +
                                                      ".jsonl")));
  }
}

TEST_CASE("mock backend replays per stage and logs every call") {
  Playbook book;
  book.add(StageTag::Generation, "g1");
  book.add(StageTag::Judge, "j1");
  book.add(StageTag::Generation, "g2");
  MockBackend mock(book);
  CHECK(mock.complete(make_request(StageTag::Judge, "s", "u")) == "j1");
  CHECK(mock.complete(make_request(StageTag::Generation, "s", "u")) == "g1");
  CHECK(mock.remaining(StageTag::Generation) == 1);
  CHECK(mock.complete(make_request(StageTag::Generation, "s", "u")) == "g2");
  CHECK_ERROR_CODE(mock.complete(make_request(StageTag::Generation, "s", "u")),
                   ErrorCode::PlaybookExhausted);
  const auto log = mock.call_log();
  REQUIRE(log.size() == 4);
  CHECK(log[0].stage == StageTag::Judge);
  CHECK(log[3].error.find("PlaybookExhausted") != std::string::npos);
  CHECK(Playbook::from_call_log(log).responses() == book.responses());

  // Invalid requests never reach the script.
  CHECK_ERROR_CODE(mock.complete(make_request(StageTag::Judge, "s", "")),
                   ErrorCode::PreconditionFailed);
}

TEST_CASE("session backends keep separate logs") {
  Playbook book;
  book.add(StageTag::Generation, "a");
  book.add(StageTag::Generation, "b");
  MockBackend mock(book);
  SessionBackend s1(mock), s2(mock);
  s1.complete(make_request(StageTag::Generation, "s", "u"));
  s2.complete(make_request(StageTag::Generation, "s", "u"));
  CHECK(s1.call_count() == 1);
  CHECK(s2.call_log()[0].response == "b");
  CHECK(mock.call_count() == 2);
}

TEST_CASE("template rendering") {
  CHECK(render_template("Q: {question}", {{"question", "x"}}) == "Q: x");
  CHECK(render_template("{{literal}} {a}", {{"a", "1"}}) == "{literal} 1");
  CHECK(render_template("{not closed", {}) == "{not closed");
  CHECK(render_template("{ spaced }", {}) == "{ spaced }");
  const auto err = testing::capture_error([] { render_template("{missing}", {}); });
  CHECK(err.code() == ErrorCode::UnboundPlaceholder);
  CHECK(err.subject() == "missing");

  TemplateStore store;
  CHECK(store.has("judge"));
  CHECK_ERROR_CODE(store.raw("no_such_template"), ErrorCode::UnknownTemplate);
}

TEST_CASE("shipped template files match the built-ins") {
  const auto names = builtin_template_names();
  CHECK(names.size() >= 10);
  for (const auto& name : names) {
    const auto body = kb::read_file(testing::source_path("templates/" + name + ".txt"));
    CHECK_MESSAGE(body == std::string(*builtin_template(name)) + "\n", name);
  }
}

TEST_CASE("template directory overrides and hot reload") {
  sandbox::TempDir dir;
  const auto path = dir.path() / "judge.txt";
  { std::ofstream(path) << "v1 {question}\n"; }
  TemplateStore store(dir.path());
  CHECK(store.render("judge", {{"question", "q"}}) == "v1 q");
  CHECK(store.has("rag_qa"));  // falls back to the built-in

  { std::ofstream(path) << "v2 {question}\n"; }
  // Force a distinct mtime even on coarse filesystem clocks.
  std::filesystem::last_write_time(path, std::filesystem::last_write_time(path) +
                                             std::chrono::seconds(2));
  CHECK(store.render("judge", {{"question", "q"}}) == "v2 q");

  std::filesystem::remove(path);
  CHECK(store.raw("judge") == std::string(*builtin_template("judge")));
  CHECK_ERROR_CODE(TemplateStore(dir.path() / "absent"), ErrorCode::InvalidConfig);
}

TEST_CASE("live backend speaks the chat completions wire format") {
  LocalServer srv;
  std::string seen_auth;
  nlohmann::json seen_body;
  srv.server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    seen_auth = req.get_header_value("Authorization");
    seen_body = nlohmann::json::parse(req.body);
    res.set_content(completion_body("hello"), "application/json");
  });
  srv.server.Get("/v1/models", [](const httplib::Request&, httplib::Response& res) {
    res.set_content("{}", "application/json");
  });
  srv.start();

  LiveBackend live(srv.endpoint(), "test-model");
  CHECK(live.reachable());
  CHECK(live.complete(make_request(StageTag::Generation, "sys", "hi")) == "hello");
  CHECK(seen_auth == "Bearer sk-test");
  CHECK(seen_body["model"] == "test-model");
  CHECK(seen_body["temperature"] == 0.3);
  CHECK(seen_body["messages"][0]["role"] == "system");
  CHECK(seen_body["messages"][1]["content"] == "hi");
  CHECK_FALSE(seen_body.contains("stage_tag"));
}

TEST_CASE("live backend retries transient statuses then gives up") {
  LocalServer srv;
  std::atomic<int> calls{0};
  srv.server.Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
    const int n = ++calls;
    if (n == 1) {
      res.status = 500;
    } else if (n == 2) {
      res.status = 429;
    } else {
      res.set_content(completion_body("third time"), "application/json");
    }
  });
  srv.start();
  LiveBackend live(srv.endpoint(), "m");
  CHECK(live.complete(make_request(StageTag::Judge, "s", "u")) == "third time");
  CHECK(calls == 3);

  LocalServer down;
  std::atomic<int> fails{0};
  down.server.Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
    ++fails;
    res.status = 503;
  });
  down.start();
  LiveBackend flaky(down.endpoint(), "m");
  CHECK_ERROR_CODE(flaky.complete(make_request(StageTag::Judge, "s", "u")),
                   ErrorCode::BackendUnavailable);
  CHECK(fails == 4);  // one attempt plus three retries
}

TEST_CASE("live backend auth failures and malformed bodies do not retry") {
  LocalServer srv;
  std::atomic<int> calls{0};
  srv.server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    ++calls;
    if (req.get_header_value("Authorization") != "Bearer good") {
      res.status = 401;
      return;
    }
    res.set_content(R"({"choices":[]})", "application/json");
  });
  srv.start();
  LiveBackend bad_key(srv.endpoint(), "m");
  CHECK_ERROR_CODE(bad_key.complete(make_request(StageTag::Judge, "s", "u")),
                   ErrorCode::AuthFailure);
  CHECK(calls == 1);

  auto ep = srv.endpoint();
  ep.api_key = "good";
  LiveBackend good_key(ep, "m");
  CHECK_ERROR_CODE(good_key.complete(make_request(StageTag::Judge, "s", "u")),
                   ErrorCode::BackendUnavailable);
  CHECK(calls == 2);
}

TEST_CASE("unreachable and unconfigured endpoints") {
  http::Endpoint ep;
  ep.base_url = "http://127.0.0.1:1/v1";
  ep.timeout = std::chrono::milliseconds(300);
  ep.max_retries = 1;
  ep.backoff = std::chrono::milliseconds(1);
  LiveBackend live(ep, "m");
  CHECK_FALSE(live.reachable());
  CHECK_ERROR_CODE(live.complete(make_request(StageTag::Judge, "s", "u")),
                   ErrorCode::BackendUnavailable);

  LiveBackend blank(http::Endpoint{}, "m");
  CHECK_FALSE(blank.reachable());
  CHECK_ERROR_CODE(blank.complete(make_request(StageTag::Judge, "s", "u")),
                   ErrorCode::BackendUnavailable);
  CHECK_ERROR_CODE(http::parse_url("ftp://x"), ErrorCode::InvalidConfig);
  CHECK(http::parse_url("https://api.example.com/v1/").path == "/v1");
}

TEST_CASE("remote embedder normalizes and checks the dimension") {
  LocalServer srv;
  srv.server.Post("/v1/embeddings", [](const httplib::Request& req, httplib::Response& res) {
    const auto body = nlohmann::json::parse(req.body);
    const double scale = body["input"] == "long" ? 10.0 : 1.0;
    res.set_content(nlohmann::json{{"data", {{{"embedding", {3 * scale, 4 * scale}}}}}}.dump(),
                    "application/json");
  });
  srv.start();
  index::RemoteEmbedder e(srv.endpoint(), "emb", 2);
  const auto v = e.embed("long");
  CHECK(v.values[0] == doctest::Approx(0.6));
  CHECK(v.values[1] == doctest::Approx(0.8));
  CHECK(e.name() == "remote:emb");
  index::RemoteEmbedder wrong(srv.endpoint(), "emb", 3);
  CHECK_ERROR_CODE(wrong.embed("x"), ErrorCode::DimMismatch);
  CHECK_ERROR_CODE(e.embed(""), ErrorCode::EmptyText);
}
