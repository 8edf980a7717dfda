#include <atomic>
#include <condition_variable>
#include <future>
#include <thread>

#include "helpers.hpp"
#include "httplib.h"
#include "molly/kb.hpp"
#include "molly/sandbox.hpp"
#include "molly/service.hpp"

using namespace molly;
using namespace molly::service;

namespace {

config::ServiceConfig make_config(const sandbox::TempDir& dir, const std::string& playbook) {
  std::filesystem::copy_file(testing::source_path("data/sample_kb.jsonl"), dir.path() / "kb.jsonl");
  config::ServiceConfig c;
  c.port = 0;
  c.kb_path = dir.path() / "kb.jsonl";
  c.index_path = dir.path() / "kb.idx";
  c.transcripts_dir = dir.path() / "transcripts";
  c.playbook_path = testing::source_path("data/playbooks/" + playbook + ".jsonl");
  return c;
}

// A service listening on an ephemeral loopback port.
struct Running {
  Service& service;
  int port;
  std::thread thread;

  explicit Running(Service& s) : service(s), port(s.bind()) {
    thread = std::thread([this] { service.run(); });
    httplib::Client probe("127.0.0.1", port);
    for (int i = 0; i < 200; ++i) {
      if (probe.Get("/v1/healthz")) break;
      std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
  }
  ~Running() {
    service.stop();
    thread.join();
  }
  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port);
    c.set_read_timeout(30, 0);
    return c;
  }
};

std::vector<std::string> kinds(const std::vector<StageEvent>& events) {
  std::vector<std::string> out;
  for (const auto& e : events) out.push_back(e.kind);
  return out;
}

// Delegates to a scripted backend, pausing before every call.
class SlowBackend final : public llm::Backend {
 public:
  SlowBackend(llm::Playbook book, std::chrono::milliseconds delay)
      : inner_(std::move(book)), delay_(delay) {}
  bool reachable() const override { return true; }
  std::string name() const override { return "slow-mock"; }

 protected:
  std::string do_complete(const llm::CompletionRequest& r) override {
    std::this_thread::sleep_for(delay_);
    return inner_.complete(r);
  }

 private:
  llm::MockBackend inner_;
  std::chrono::milliseconds delay_;
};

std::shared_ptr<llm::Backend> unreachable_backend() {
  http::Endpoint ep;
  ep.base_url = "http://127.0.0.1:1/v1";
  ep.timeout = std::chrono::milliseconds(300);
  ep.max_retries = 0;
  return std::make_shared<llm::LiveBackend>(ep, "m");
}

}  // namespace

TEST_CASE("sse framing round-trips") {
  StageEvent e{"s-1", 3, "draft", {{"answer_text", "多行\n文本"}, {"iteration", 0}},
               "2026-01-01T00:00:00.000Z"};
  const auto frame = to_sse(e);
  CHECK(frame.rfind("id: 3\nevent: draft\ndata: {", 0) == 0);
  CHECK(frame.substr(frame.size() - 2) == "\n\n");
  const auto back = parse_sse(frame + frame);
  REQUIRE(back.size() == 2);
  CHECK(back[0].payload == e.payload);
  CHECK(back[0].seq == 3);
  CHECK(back[1].session_id == "s-1");
  CHECK_ERROR_CODE(parse_sse("id: 1\nevent: draft\ndata: {nope\n\n"), ErrorCode::MalformedRecord);
  CHECK(is_terminal("aborted"));
  CHECK_FALSE(is_terminal("draft"));
}

TEST_CASE("session ids") {
  CHECK(valid_session_id("abc-1.2_3"));
  CHECK_FALSE(valid_session_id(""));
  CHECK_FALSE(valid_session_id("../etc"));
  CHECK_FALSE(valid_session_id("a b"));
  CHECK_FALSE(valid_session_id(std::string(129, 'a')));
  CHECK(valid_session_id(new_session_id()));
  CHECK(new_session_id() != new_session_id());
}

TEST_CASE("transcript store keeps the latest per session") {
  sandbox::TempDir dir;
  TranscriptStore store(dir.path() / "t");
  agent::SessionTranscript t;
  t.session_id = "a";
  t.question = "first";
  store.save(t);
  t.question = "second";
  store.save(t);
  t.session_id = "a__b";
  t.question = "other";
  store.save(t);
  CHECK(store.sessions() == std::vector<std::string>{"a", "a__b"});
  const auto latest = store.load("a");
  REQUIRE(latest);
  CHECK(nlohmann::json::parse(*latest)["question"] == "second");
  CHECK_FALSE(store.load("zzz"));
  CHECK_FALSE(store.load("../x"));
}

TEST_CASE("ask streams the stages in order and persists the transcript") {
  sandbox::TempDir dir;
  Service service(make_config(dir, "all_pass"));
  Running srv(service);
  auto client = srv.client();
  auto res = client.Post("/v1/ask", R"({"question":"什么是列表?","session_id":"web-1"})",
                         "application/json");
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(res->get_header_value("Content-Type").find("text/event-stream") == 0);
  CHECK(res->get_header_value("Access-Control-Allow-Origin") == "*");
  const auto events = parse_sse(res->body);
  CHECK(kinds(events) == std::vector<std::string>{"perception_note", "retrieval_results", "draft",
                                                  "reflection_verdict", "final_answer"});
  for (std::size_t i = 0; i < events.size(); ++i) {
    CHECK(events[i].seq == i + 1);
    CHECK(events[i].session_id == "web-1");
    CHECK(events[i].timestamp.size() == 24);
  }
  CHECK(events.back().payload["resolved"] == true);

  auto list = client.Get("/v1/transcripts");
  REQUIRE(list);
  CHECK(nlohmann::json::parse(list->body)["sessions"] == nlohmann::json{"web-1"});
  auto one = client.Get("/v1/transcripts/web-1");
  REQUIRE(one);
  CHECK(one->status == 200);
  const auto t = nlohmann::json::parse(one->body);
  CHECK(t["final_answer"] == events.back().payload["final_answer"]);
  CHECK(t["call_log"].size() == 4);
  auto missing = client.Get("/v1/transcripts/nobody");
  REQUIRE(missing);
  CHECK(missing->status == 404);

  // Each session replays the playbook from the start.
  auto again = client.Post("/v1/ask", R"({"question":"什么是列表?"})", "application/json");
  REQUIRE(again);
  CHECK(kinds(parse_sse(again->body)).back() == "final_answer");
  CHECK_FALSE(again->get_header_value("X-Session-Id").empty());

  auto pre = client.Options("/v1/ask");
  REQUIRE(pre);
  CHECK(pre->status == 204);
}

TEST_CASE("bad ask requests are rejected before any stage runs") {
  sandbox::TempDir dir;
  Service service(make_config(dir, "all_pass"));
  Running srv(service);
  auto client = srv.client();
  for (const char* body : {R"({"question":""})", R"({"question":"   "})", R"({"q":"x"})",
                           "not json", R"({"question":"x","session_id":"a/b"})"}) {
    auto res = client.Post("/v1/ask", body, "application/json");
    REQUIRE(res);
    CHECK_MESSAGE(res->status == 400, body);
    CHECK(res->body.find("event:") == std::string::npos);
  }
  CHECK(service.transcripts().sessions().empty());
  CHECK_ERROR_CODE(service.ask("ok", ""), ErrorCode::PreconditionFailed);
}

TEST_CASE("a mid-pipeline failure ends the stream with an aborted event") {
  sandbox::TempDir dir;
  Service service(make_config(dir, "exhausted"));
  Running srv(service);
  auto client = srv.client();
  auto res = client.Post("/v1/ask", R"({"question":"什么是列表?","session_id":"x1"})",
                         "application/json");
  REQUIRE(res);
  CHECK(res->status == 200);
  const auto events = parse_sse(res->body);
  CHECK(kinds(events) == std::vector<std::string>{"perception_note", "retrieval_results", "draft",
                                                  "aborted"});
  CHECK(events.back().payload["code"] == "PlaybookExhausted");
  const auto t = nlohmann::json::parse(*service.transcripts().load("x1"));
  CHECK(t["aborted"] == true);
  CHECK(t["drafts"].size() == 1);
}

TEST_CASE("first-stage backend failure maps to 503 and health degrades") {
  sandbox::TempDir dir;
  auto cfg = make_config(dir, "all_pass");
  Service service(cfg, shared_backend_factory(unreachable_backend()));
  Running srv(service);
  auto client = srv.client();
  auto res = client.Post("/v1/ask", R"({"question":"什么是列表?","session_id":"down"})",
                         "application/json");
  REQUIRE(res);
  CHECK(res->status == 503);
  const auto events = parse_sse(res->body);
  REQUIRE(events.size() == 1);
  CHECK(events[0].kind == "aborted");
  CHECK(events[0].payload["code"] == "BackendUnavailable");

  auto health = client.Get("/v1/healthz");
  REQUIRE(health);
  CHECK(health->status == 200);
  const auto h = nlohmann::json::parse(health->body);
  CHECK(h["backend"] == "unreachable");
  CHECK(h["status"] == "degraded");
  CHECK(h["kb_entries"] == 20);
}

TEST_CASE("kb stats, uploads and reindexing") {
  sandbox::TempDir dir;
  Service service(make_config(dir, "all_pass"));
  CHECK(std::filesystem::exists(dir.path() / "kb.idx"));
  Running srv(service);
  auto client = srv.client();

  auto stats = client.Get("/v1/kb/stats");
  REQUIRE(stats);
  CHECK(nlohmann::json::parse(stats->body)["n_entries"] == 20);

  const std::string dup =
      R"({"id":"new-1","question":"q","knowledge_point":"k","answer":"a"})"
      "\n"
      R"({"id":"py-001","question":"q","knowledge_point":"k","answer":"a"})";
  auto bad = client.Post("/v1/kb/entries", dup, "application/x-ndjson");
  REQUIRE(bad);
  CHECK(bad->status == 422);
  const auto err = nlohmann::json::parse(bad->body);
  CHECK(err["error"] == "DuplicateId");
  CHECK(err["line"] == 2);
  CHECK(service.kb_stats()["n_entries"] == 20);

  auto good = client.Post("/v1/kb/entries",
                          R"({"id":"new-1","question":"什么是字符串?","knowledge_point":"字符串","answer":"字符串是不可变的文本序列。"})",
                          "application/x-ndjson");
  REQUIRE(good);
  CHECK(good->status == 200);
  CHECK(kb::load_dataset(dir.path() / "kb.jsonl").size() == 21);
  auto h = nlohmann::json::parse(client.Get("/v1/healthz")->body);
  CHECK(h["index"] == "stale");
  CHECK(h["status"] == "degraded");

  auto re = client.Post("/v1/kb/reindex", "", "application/json");
  REQUIRE(re);
  CHECK(re->status == 200);
  CHECK(nlohmann::json::parse(re->body)["entries"] == 21);
  h = nlohmann::json::parse(client.Get("/v1/healthz")->body);
  CHECK(h["index"] == "fresh");
  CHECK(h["index_entries"] == 21);
  CHECK(index::VectorIndex::load(dir.path() / "kb.idx").size() == 21);
}

TEST_CASE("sessions during a reindex use the previous index and a second reindex is refused") {
  sandbox::TempDir dir;
  Service service(make_config(dir, "all_pass"));
  Running srv(service);
  service.upload(R"({"id":"py-999","question":"什么是列表?","knowledge_point":"列表","answer":"新条目"})");

  std::promise<void> built, release;
  auto release_future = release.get_future().share();
  auto job = std::async(std::launch::async, [&] {
    return service.reindex([&] {
      built.set_value();
      release_future.wait();
    });
  });
  built.get_future().wait();

  auto has_new = [](const agent::SessionTranscript& t) {
    for (const auto& e : t.exemplars) {
      if (e.entry_id == "py-999") return true;
    }
    return false;
  };
  const auto during = service.ask("during", "什么是列表?");
  CHECK_FALSE(during.aborted);
  CHECK_FALSE(has_new(during));

  auto client = srv.client();
  auto conflict = client.Post("/v1/kb/reindex", "", "application/json");
  REQUIRE(conflict);
  CHECK(conflict->status == 409);
  CHECK(nlohmann::json::parse(client.Get("/v1/healthz")->body)["reindexing"] == true);

  release.set_value();
  job.get();
  const auto after = service.ask("after", "什么是列表?");
  CHECK(has_new(after));
  CHECK_FALSE(service.index_stale());
}

TEST_CASE("a client that disconnects cancels its session") {
  sandbox::TempDir dir;
  auto cfg = make_config(dir, "fail_fail_pass");
  const auto book = llm::Playbook::load(cfg.playbook_path);
  Service service(cfg, [book] {
    return std::make_shared<SlowBackend>(book, std::chrono::milliseconds(150));
  });
  Running srv(service);

  httplib::Client client("127.0.0.1", srv.port);
  httplib::Request req;
  req.method = "POST";
  req.path = "/v1/ask";
  req.body = R"({"question":"什么是列表?","session_id":"gone"})";
  req.set_header("Content-Type", "application/json");
  std::string received;
  req.content_receiver = [&](const char* data, std::size_t n, std::uint64_t, std::uint64_t) {
    received.append(data, n);
    return false;  // hang up after the first chunk
  };
  httplib::Response res;
  httplib::Error error;
  client.send(req, res, error);
  client.stop();
  CHECK(received.find("event: perception_note") != std::string::npos);

  std::optional<std::string> stored;
  for (int i = 0; i < 200 && !stored; ++i) {
    std::this_thread::sleep_for(std::chrono::milliseconds(25));
    stored = service.transcripts().load("gone");
  }
  REQUIRE(stored);
  const auto t = nlohmann::json::parse(*stored);
  CHECK(t["aborted"] == true);
  CHECK(t["error"].get<std::string>().find("Cancelled") != std::string::npos);
  // Far fewer than the eight scripted calls ran.
  CHECK(t["call_log"].size() < 8);
}

TEST_CASE("startup validation") {
  sandbox::TempDir dir;
  auto cfg = make_config(dir, "all_pass");
  kb::write_file(dir.path() / "empty.jsonl", "\n");
  auto empty = cfg;
  empty.kb_path = dir.path() / "empty.jsonl";
  CHECK_ERROR_CODE(Service{empty}, ErrorCode::EmptyKnowledgeBase);

  // An index built with another dimension is rejected.
  index::HashEmbedder small(64);
  const auto kb = kb::load_dataset(cfg.kb_path);
  index::VectorIndex::build(agent::index_items(kb), small).save(cfg.index_path);
  CHECK_ERROR_CODE(Service{cfg}, ErrorCode::DimMismatch);
}
