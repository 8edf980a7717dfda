#include "molly/service.hpp"

#include <httplib.h>

#include <chrono>
#include <condition_variable>
#include <ctime>
#include <deque>
#include <random>
#include <set>
#include <thread>

#include "molly/error.hpp"
#include "molly/text.hpp"

namespace molly::service {

using nlohmann::ordered_json;

namespace {

std::string utc_timestamp(bool compact) {
  const auto now = std::chrono::system_clock::now();
  const auto ms =
      std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  const std::time_t secs = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  ::gmtime_r(&secs, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, compact ? "%Y%m%dT%H%M%S" : "%Y-%m-%dT%H:%M:%S", &tm);
  char out[48];
  std::snprintf(out, sizeof out, compact ? "%s%03dZ" : "%s.%03dZ", buf, static_cast<int>(ms));
  return out;
}

ordered_json error_json(const std::exception& e) {
  ordered_json j;
  if (const auto* err = dynamic_cast<const Error*>(&e)) {
    j["error"] = to_string(err->code());
    j["subject"] = err->subject();
    if (err->line()) j["line"] = *err->line();
  } else {
    j["error"] = "Internal";
  }
  j["message"] = e.what();
  return j;
}

void send_json(httplib::Response& res, int status, const ordered_json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

std::shared_ptr<const index::VectorIndex> load_or_build_index(const config::ServiceConfig& cfg,
                                                              const kb::KnowledgeBase& kb,
                                                              const index::Embedder& embedder) {
  if (!cfg.index_path.empty() && std::filesystem::exists(cfg.index_path)) {
    auto idx = index::VectorIndex::load(cfg.index_path);
    if (idx.dim() != embedder.dim()) {
      throw Error(ErrorCode::DimMismatch, cfg.index_path.string(),
                  "index has dimension " + std::to_string(idx.dim()) + ", embedder " +
                      std::to_string(embedder.dim()));
    }
    for (const auto& key : idx.keys()) {
      if (kb.find(key) == nullptr) {
        throw Error(ErrorCode::UnresolvableId, key, "indexed but absent from the knowledge base");
      }
    }
    return std::make_shared<const index::VectorIndex>(std::move(idx));
  }
  auto items = agent::index_items(kb);
  auto idx = index::VectorIndex::build(items, embedder);
  if (!cfg.index_path.empty()) idx.save(cfg.index_path);
  return std::make_shared<const index::VectorIndex>(std::move(idx));
}

llm::TemplateStore make_templates(const config::ServiceConfig& cfg) {
  if (cfg.templates_dir.empty()) return llm::TemplateStore();
  return llm::TemplateStore(cfg.templates_dir);
}

// Hands events from the pipeline thread to the HTTP writer.
struct EventChannel {
  std::mutex mutex;
  std::condition_variable cv;
  std::deque<StageEvent> queue;
  bool closed = false;
  std::atomic<bool> cancelled{false};
  std::thread worker;

  void push(StageEvent e) {
    {
      std::lock_guard lock(mutex);
      queue.push_back(std::move(e));
    }
    cv.notify_all();
  }
  void close() {
    {
      std::lock_guard lock(mutex);
      closed = true;
    }
    cv.notify_all();
  }
  std::optional<StageEvent> pop() {
    std::unique_lock lock(mutex);
    cv.wait(lock, [&] { return !queue.empty() || closed; });
    if (queue.empty()) return std::nullopt;
    auto e = std::move(queue.front());
    queue.pop_front();
    return e;
  }
  void join() {
    if (worker.joinable()) worker.join();
  }
};

}  // namespace

ordered_json to_json(const StageEvent& e) {
  ordered_json j;
  j["session_id"] = e.session_id;
  j["seq"] = e.seq;
  j["kind"] = e.kind;
  j["payload"] = e.payload;
  j["timestamp"] = e.timestamp;
  return j;
}

std::string to_sse(const StageEvent& e) {
  return "id: " + std::to_string(e.seq) + "\nevent: " + e.kind + "\ndata: " + to_json(e).dump() +
         "\n\n";
}

std::vector<StageEvent> parse_sse(std::string_view stream) {
  std::vector<StageEvent> out;
  std::size_t line_no = 0;
  for (auto line : text::split_lines(stream)) {
    ++line_no;
    if (line.rfind("data:", 0) != 0) continue;
    auto data = line.substr(5);
    if (!data.empty() && data.front() == ' ') data.remove_prefix(1);
    try {
      const auto j = nlohmann::json::parse(data);
      StageEvent e;
      e.session_id = j.at("session_id").get<std::string>();
      e.seq = j.at("seq").get<std::size_t>();
      e.kind = j.at("kind").get<std::string>();
      e.payload = ordered_json::parse(j.at("payload").dump());
      e.timestamp = j.value("timestamp", "");
      out.push_back(std::move(e));
    } catch (const nlohmann::json::exception& ex) {
      throw Error(ErrorCode::MalformedRecord, "event stream", ex.what(), line_no);
    }
  }
  return out;
}

bool is_terminal(std::string_view kind) { return kind == "final_answer" || kind == "aborted"; }

bool valid_session_id(std::string_view id) {
  if (id.empty() || id.size() > 128) return false;
  for (unsigned char c : id) {
    if (!(std::isalnum(c) || c == '.' || c == '_' || c == '-')) return false;
  }
  return id != "." && id != "..";
}

std::string new_session_id() {
  static std::mutex mutex;
  static std::mt19937_64 rng{std::random_device{}()};
  std::lock_guard lock(mutex);
  return "s-" + text::hex64(rng());
}

TranscriptStore::TranscriptStore(std::filesystem::path dir) : dir_(std::move(dir)) {}

std::filesystem::path TranscriptStore::save(const agent::SessionTranscript& t) {
  if (!valid_session_id(t.session_id)) {
    throw Error(ErrorCode::PreconditionFailed, t.session_id, "not a storable session id");
  }
  std::lock_guard lock(mutex_);
  std::filesystem::create_directories(dir_);
  // The counter keeps names unique and ordered within one millisecond.
  char seq[16];
  std::snprintf(seq, sizeof seq, "%06zu", counter_++ % 1000000);
  const auto name = t.session_id + "__" + utc_timestamp(true) + "-" + seq + ".json";
  const auto path = dir_ / name;
  const auto tmp = dir_ / ("." + name + ".tmp");
  kb::write_file(tmp, agent::serialize(t) + "\n");
  std::filesystem::rename(tmp, path);
  return path;
}

std::optional<std::string> TranscriptStore::load(std::string_view session_id) const {
  if (!valid_session_id(session_id)) return std::nullopt;
  std::lock_guard lock(mutex_);
  std::error_code ec;
  if (!std::filesystem::is_directory(dir_, ec)) return std::nullopt;
  const std::string prefix = std::string(session_id) + "__";
  std::optional<std::string> latest;
  for (const auto& entry : std::filesystem::directory_iterator(dir_)) {
    const auto name = entry.path().filename().string();
    if (name.rfind(prefix, 0) != 0 || entry.path().extension() != ".json") continue;
    // "a" must not pick up transcripts of session "a__b".
    if (name.find("__", prefix.size()) != std::string::npos) continue;
    if (!latest || name > *latest) latest = name;
  }
  if (!latest) return std::nullopt;
  auto content = kb::read_file(dir_ / *latest);
  while (!content.empty() && content.back() == '\n') content.pop_back();
  return content;
}

std::vector<std::string> TranscriptStore::sessions() const {
  std::lock_guard lock(mutex_);
  std::set<std::string> ids;
  std::error_code ec;
  if (std::filesystem::is_directory(dir_, ec)) {
    for (const auto& entry : std::filesystem::directory_iterator(dir_)) {
      const auto name = entry.path().filename().string();
      const auto sep = name.rfind("__");
      if (sep == std::string::npos || entry.path().extension() != ".json") continue;
      ids.insert(name.substr(0, sep));
    }
  }
  return {ids.begin(), ids.end()};
}

BackendFactory mock_backend_factory(llm::Playbook playbook) {
  auto shared = std::make_shared<const llm::Playbook>(std::move(playbook));
  return [shared]() -> std::shared_ptr<llm::Backend> {
    return std::make_shared<llm::MockBackend>(*shared);
  };
}

BackendFactory shared_backend_factory(std::shared_ptr<llm::Backend> backend) {
  return [backend] { return backend; };
}

BackendFactory backend_factory_for(const config::ServiceConfig& cfg) {
  if (cfg.backend == "mock") return mock_backend_factory(llm::Playbook::load(cfg.playbook_path));
  return shared_backend_factory(std::shared_ptr<llm::Backend>(llm::LiveBackend::from_environment()));
}

Service::Service(config::ServiceConfig cfg) : Service(cfg, backend_factory_for(cfg)) {}

Service::Service(config::ServiceConfig cfg, BackendFactory backends)
    : config_(std::move(cfg)),
      backends_(std::move(backends)),
      embedder_(index::make_embedder(config_.embedder, config_.dim)),
      templates_(make_templates(config_)),
      transcripts_(config_.transcripts_dir) {
  config_.validate();
  probe_backend_ = backends_();
  kb_ = std::make_shared<const kb::KnowledgeBase>(kb::load_dataset(config_.kb_path));
  if (kb_->empty()) throw Error(ErrorCode::EmptyKnowledgeBase, config_.kb_path.string());
  index_ = load_or_build_index(config_, *kb_, *embedder_);
  // An index file covering fewer entries than the KB is served but marked stale.
  if (index_->size() != kb_->size()) kb_generation_ = 1;
}

Service::~Service() { stop(); }

Service::Snapshot Service::snapshot() const {
  std::lock_guard lock(state_mutex_);
  return {kb_, index_};
}

bool Service::index_stale() const {
  std::lock_guard lock(state_mutex_);
  return kb_generation_ != index_generation_;
}

std::size_t Service::index_size() const {
  std::lock_guard lock(state_mutex_);
  return index_->size();
}

agent::SessionTranscript Service::ask(const std::string& session_id, std::string_view question,
                                      const EventSink& sink, const agent::Clock& clock) {
  if (!valid_session_id(session_id)) {
    throw Error(ErrorCode::PreconditionFailed, "session_id", "expected 1-128 of [A-Za-z0-9._-]");
  }
  if (text::is_blank(question)) {
    throw Error(ErrorCode::PreconditionFailed, "question", "question is empty");
  }
  const auto snap = snapshot();
  auto backend = backends_();
  agent::PipelineContext ctx{*snap.kb, *snap.index, *embedder_, *backend, templates_};

  std::size_t seq = 0;
  agent::StageObserver observer = [&](agent::EventKind kind, const ordered_json& payload) {
    StageEvent e{session_id, ++seq, std::string(agent::to_string(kind)), payload,
                 utc_timestamp(false)};
    return sink ? sink(e) : true;
  };
  auto t = agent::run_session(session_id, question, config_.agent_config(), ctx, observer, clock);
  transcripts_.save(t);
  return t;
}

ordered_json Service::health() const {
  const auto snap = snapshot();
  const bool stale = index_stale();
  const bool reachable = probe_backend_->reachable();
  ordered_json j;
  j["status"] = (!stale && reachable) ? "ok" : "degraded";
  j["kb"] = "loaded";
  j["kb_entries"] = snap.kb->size();
  j["index"] = stale ? "stale" : "fresh";
  j["index_entries"] = snap.index->size();
  j["reindexing"] = reindexing_.load();
  j["backend"] = reachable ? "reachable" : "unreachable";
  j["backend_name"] = probe_backend_->name();
  j["embedder"] = embedder_->name();
  return j;
}

nlohmann::json Service::kb_stats() const {
  return kb::stats_to_json(kb::compute_stats(*snapshot().kb));
}

Service::UploadResult Service::upload(std::string_view records) {
  std::lock_guard upload_lock(upload_mutex_);
  auto entries = kb::parse_entries(records);
  if (entries.empty()) {
    throw Error(ErrorCode::EmptyKnowledgeBase, "upload", "no entries in the request body");
  }
  const auto current = snapshot().kb;
  auto next = std::make_shared<const kb::KnowledgeBase>(current->with_appended(std::move(entries)));
  kb::save_dataset(*next, config_.kb_path);
  UploadResult r{next->size() - current->size(), next->size()};
  std::lock_guard lock(state_mutex_);
  kb_ = std::move(next);
  ++kb_generation_;
  return r;
}

ordered_json Service::reindex(const std::function<void()>& before_swap) {
  bool expected = false;
  if (!reindexing_.compare_exchange_strong(expected, true)) throw ReindexInProgress();
  struct Reset {
    std::atomic<bool>& flag;
    ~Reset() { flag = false; }
  } reset{reindexing_};

  std::shared_ptr<const kb::KnowledgeBase> kb;
  std::size_t generation = 0;
  {
    std::lock_guard lock(state_mutex_);
    kb = kb_;
    generation = kb_generation_;
  }
  const auto started = std::chrono::steady_clock::now();
  auto items = agent::index_items(*kb);
  auto built = std::make_shared<const index::VectorIndex>(index::VectorIndex::build(items, *embedder_));
  if (!config_.index_path.empty()) {
    auto tmp = config_.index_path;
    tmp += ".tmp";
    built->save(tmp);
    std::filesystem::rename(tmp, config_.index_path);
  }
  if (before_swap) before_swap();
  {
    std::lock_guard lock(state_mutex_);
    index_ = built;
    index_generation_ = generation;
  }
  const auto ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started);
  ordered_json j;
  j["entries"] = built->size();
  j["dim"] = built->dim();
  j["index"] = index_stale() ? "stale" : "fresh";
  j["build_ms"] = ms.count();
  return j;
}

void Service::install(httplib::Server& server) {
  server.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
  server.Options(R"(/v1/.*)", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });

  server.Post("/v1/ask", [this](const httplib::Request& req, httplib::Response& res) {
    std::string question;
    std::string session_id;
    try {
      const auto body = nlohmann::json::parse(req.body);
      if (!body.is_object() || !body.contains("question") || !body["question"].is_string()) {
        throw Error(ErrorCode::MissingField, "question", "body must be {\"question\": text}");
      }
      question = body["question"].get<std::string>();
      session_id = body.contains("session_id") && body["session_id"].is_string()
                       ? body["session_id"].get<std::string>()
                       : new_session_id();
      if (text::is_blank(question)) {
        throw Error(ErrorCode::PreconditionFailed, "question", "question is empty");
      }
      if (!valid_session_id(session_id)) {
        throw Error(ErrorCode::PreconditionFailed, "session_id", "expected 1-128 of [A-Za-z0-9._-]");
      }
    } catch (const nlohmann::json::exception& e) {
      send_json(res, 400, {{"error", "MalformedRecord"}, {"message", e.what()}});
      return;
    } catch (const std::exception& e) {
      send_json(res, 400, error_json(e));
      return;
    }

    auto channel = std::make_shared<EventChannel>();
    channel->worker = std::thread([this, channel, session_id, question] {
      try {
        ask(session_id, question, [channel](const StageEvent& e) {
          if (channel->cancelled) return false;
          channel->push(e);
          return true;
        });
      } catch (const std::exception& e) {
        StageEvent ev{session_id, 1, "aborted", error_json(e), utc_timestamp(false)};
        channel->push(std::move(ev));
      }
      channel->close();
    });

    auto first = channel->pop();
    if (!first || first->kind == "aborted") {
      channel->join();
      int status = 500;
      if (first) {
        const auto code = first->payload.value("code", std::string());
        if (code == "BackendUnavailable" || code == "AuthFailure") status = 503;
      }
      res.status = status;
      res.set_content(first ? to_sse(*first) : std::string(), "text/event-stream");
      return;
    }

    res.set_header("Cache-Control", "no-cache");
    res.set_header("X-Session-Id", session_id);
    auto pending = std::make_shared<std::optional<StageEvent>>(std::move(first));
    res.set_chunked_content_provider(
        "text/event-stream",
        [channel, pending](std::size_t, httplib::DataSink& sink) {
          std::optional<StageEvent> e = std::move(*pending);
          pending->reset();
          if (!e) e = channel->pop();
          if (!e) {
            sink.done();
            return true;
          }
          const auto frame = to_sse(*e);
          if (!sink.write(frame.data(), frame.size())) {
            channel->cancelled = true;
            return false;
          }
          if (is_terminal(e->kind)) sink.done();
          return true;
        },
        [channel](bool success) {
          if (!success) channel->cancelled = true;
          channel->join();
        });
  });

  server.Get("/v1/transcripts", [this](const httplib::Request&, httplib::Response& res) {
    send_json(res, 200, {{"sessions", transcripts_.sessions()}});
  });

  server.Get(R"(/v1/transcripts/([^/]+))", [this](const httplib::Request& req,
                                                  httplib::Response& res) {
    const auto id = req.matches[1].str();
    auto content = transcripts_.load(id);
    if (!content) {
      send_json(res, 404, {{"error", "NotFound"}, {"subject", id}});
      return;
    }
    res.set_content(*content, "application/json");
  });

  server.Get("/v1/kb/stats", [this](const httplib::Request&, httplib::Response& res) {
    try {
      res.set_content(kb_stats().dump(), "application/json");
    } catch (const std::exception& e) {
      send_json(res, 500, error_json(e));
    }
  });

  server.Post("/v1/kb/entries", [this](const httplib::Request& req, httplib::Response& res) {
    try {
      const auto r = upload(req.body);
      send_json(res, 200, {{"added", r.added}, {"entries", r.total}, {"index", "stale"}});
    } catch (const Error& e) {
      send_json(res, e.code() == ErrorCode::Io ? 500 : 422, error_json(e));
    } catch (const std::exception& e) {
      send_json(res, 500, error_json(e));
    }
  });

  server.Post("/v1/kb/reindex", [this](const httplib::Request&, httplib::Response& res) {
    try {
      send_json(res, 200, reindex());
    } catch (const ReindexInProgress& e) {
      send_json(res, 409, {{"error", "ReindexInProgress"}, {"message", e.what()}});
    } catch (const std::exception& e) {
      send_json(res, 500, error_json(e));
    }
  });

  server.Get("/v1/healthz", [this](const httplib::Request&, httplib::Response& res) {
    send_json(res, 200, health());
  });
}

int Service::bind() {
  if (!server_) {
    server_ = std::make_unique<httplib::Server>();
    install(*server_);
  }
  const int port = config_.port == 0 ? server_->bind_to_any_port(config_.host)
                                     : (server_->bind_to_port(config_.host, config_.port)
                                            ? config_.port
                                            : -1);
  if (port < 0) {
    throw Error(ErrorCode::Io, config_.host + ":" + std::to_string(config_.port), "cannot bind");
  }
  return port;
}

void Service::run() {
  if (!server_) throw Error(ErrorCode::PreconditionFailed, "server", "bind() first");
  server_->listen_after_bind();
}

void Service::stop() {
  if (server_) server_->stop();
}

}  // namespace molly::service
