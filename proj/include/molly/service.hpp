#pragma once

#include <atomic>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "molly/agent.hpp"
#include "molly/config.hpp"
#include "molly/index.hpp"
#include "molly/kb.hpp"
#include "molly/llm.hpp"

namespace httplib {
class Server;
}

namespace molly::service {

struct StageEvent {
  std::string session_id;
  std::size_t seq = 0;  // 1-based, gapless per session
  std::string kind;
  nlohmann::ordered_json payload;
  std::string timestamp;  // UTC, ISO 8601 with milliseconds
};

nlohmann::ordered_json to_json(const StageEvent& e);
/// `id:`, `event:` and a single `data:` line holding the whole event record,
/// followed by a blank line.
std::string to_sse(const StageEvent& e);
/// Inverse of to_sse over a concatenated stream. Throws MalformedRecord.
std::vector<StageEvent> parse_sse(std::string_view stream);

bool is_terminal(std::string_view kind);

/// Letters, digits, '.', '_' and '-', 1 to 128 characters.
bool valid_session_id(std::string_view id);
std::string new_session_id();

/// Append-only directory of `<session_id>__<timestamp>.json` files.
class TranscriptStore {
 public:
  explicit TranscriptStore(std::filesystem::path dir);
  std::filesystem::path save(const agent::SessionTranscript& t);
  /// Most recent transcript for the session, as stored.
  std::optional<std::string> load(std::string_view session_id) const;
  /// Distinct session ids, sorted.
  std::vector<std::string> sessions() const;
  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
  mutable std::mutex mutex_;
  std::size_t counter_ = 0;
};

class ReindexInProgress : public std::runtime_error {
 public:
  ReindexInProgress() : std::runtime_error("a reindex is already running") {}
};

/// Creates the backend one session talks to.
using BackendFactory = std::function<std::shared_ptr<llm::Backend>()>;
/// Replays the playbook from the start for every session.
BackendFactory mock_backend_factory(llm::Playbook playbook);
/// One shared client for all sessions.
BackendFactory shared_backend_factory(std::shared_ptr<llm::Backend> backend);
/// From the config: a mock playbook or the live endpoint in the environment.
BackendFactory backend_factory_for(const config::ServiceConfig& config);

using EventSink = std::function<bool(const StageEvent&)>;

class Service {
 public:
  explicit Service(config::ServiceConfig config);
  Service(config::ServiceConfig config, BackendFactory backends);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Runs one session against a snapshot of the KB and index, forwarding each
  /// stage event to `sink` (returning false cancels) and persisting the
  /// transcript. Throws PreconditionFailed for an empty question or bad id.
  agent::SessionTranscript ask(const std::string& session_id, std::string_view question,
                               const EventSink& sink = {},
                               const agent::Clock& clock = agent::steady_clock());

  nlohmann::ordered_json health() const;
  nlohmann::json kb_stats() const;

  struct UploadResult {
    std::size_t added = 0;
    std::size_t total = 0;
  };
  /// Validates entry records and appends them; the index becomes stale.
  UploadResult upload(std::string_view records);

  /// Rebuilds the index from the current KB and swaps it in.
  /// `before_swap` runs after the build, before the swap. Throws ReindexInProgress.
  nlohmann::ordered_json reindex(const std::function<void()>& before_swap = {});

  bool index_stale() const;
  std::size_t index_size() const;
  const TranscriptStore& transcripts() const { return transcripts_; }
  const config::ServiceConfig& config() const { return config_; }

  /// Registers the HTTP routes on `server`.
  void install(httplib::Server& server);
  /// Binds to the configured address (port 0 picks one) and returns the port.
  int bind();
  /// Serves until stop(). Requires bind().
  void run();
  void stop();

 private:
  struct Snapshot {
    std::shared_ptr<const kb::KnowledgeBase> kb;
    std::shared_ptr<const index::VectorIndex> index;
  };
  Snapshot snapshot() const;

  config::ServiceConfig config_;
  BackendFactory backends_;
  std::shared_ptr<llm::Backend> probe_backend_;
  std::unique_ptr<index::Embedder> embedder_;
  llm::TemplateStore templates_;
  TranscriptStore transcripts_;

  mutable std::mutex state_mutex_;
  std::shared_ptr<const kb::KnowledgeBase> kb_;
  std::shared_ptr<const index::VectorIndex> index_;
  std::size_t kb_generation_ = 0;
  std::size_t index_generation_ = 0;
  std::mutex upload_mutex_;
  std::atomic<bool> reindexing_{false};

  std::unique_ptr<httplib::Server> server_;
};

}  // namespace molly::service
