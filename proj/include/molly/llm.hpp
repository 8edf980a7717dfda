#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "molly/http.hpp"

namespace molly::llm {

enum class Role { System, User, Assistant };

enum class StageTag {
  PerceptionTeacher,
  PerceptionStudent,
  Generation,
  ReflectionCritic,
  ReflectionRefiner,
  Judge,
};

std::string_view to_string(Role role);
std::string_view to_string(StageTag stage);
/// Throws InvalidConfig for unknown names.
StageTag parse_stage(std::string_view name);

/// 0 for perception, critique and judging; 0.3 for generation and refinement.
double default_temperature(StageTag stage);

struct ChatMessage {
  Role role = Role::User;
  std::string content;
};

struct CompletionRequest {
  std::vector<ChatMessage> messages;
  double temperature = 0.0;
  std::size_t max_tokens = 2048;
  StageTag stage = StageTag::Generation;

  /// Throws PreconditionFailed unless the first message is the only system
  /// message and every content is non-empty.
  void validate() const;
  nlohmann::json to_json() const;
  /// Stable FNV-1a digest of the canonical JSON form.
  std::string digest() const;
};

/// Builds a request with one system and one user message.
CompletionRequest make_request(StageTag stage, std::string system, std::string user);

struct CallRecord {
  StageTag stage = StageTag::Generation;
  std::string request_digest;
  std::string response;
  std::string error;  // empty when the call succeeded

  bool operator==(const CallRecord&) const = default;
};

nlohmann::json to_json(const CallRecord& record);

/// A chat-completion provider. complete() validates the request, delegates to
/// the implementation, and appends one record per invocation to the log.
class Backend {
 public:
  virtual ~Backend() = default;

  std::string complete(const CompletionRequest& request);

  std::vector<CallRecord> call_log() const;
  std::size_t call_count() const;

  virtual bool reachable() const = 0;
  virtual std::string name() const = 0;

 protected:
  virtual std::string do_complete(const CompletionRequest& request) = 0;

 private:
  mutable std::mutex log_mutex_;
  std::vector<CallRecord> log_;
};

/// Forwards to another backend while keeping its own call log; one per
/// session so each transcript carries exactly its own calls.
class SessionBackend final : public Backend {
 public:
  explicit SessionBackend(Backend& inner) : inner_(inner) {}
  bool reachable() const override { return inner_.reachable(); }
  std::string name() const override { return inner_.name(); }

 protected:
  std::string do_complete(const CompletionRequest& request) override {
    return inner_.complete(request);
  }

 private:
  Backend& inner_;
};

/// Canned responses keyed by stage tag, consumed in order.
class Playbook {
 public:
  Playbook() = default;

  void add(StageTag stage, std::string response);
  /// Places a response at an explicit 0-based occurrence slot.
  void set(StageTag stage, std::size_t occurrence, std::string response);

  const std::map<StageTag, std::vector<std::string>>& responses() const { return responses_; }
  std::size_t count(StageTag stage) const;

  /// JSON lines of {"stage": tag, "response": text[, "occurrence": n]}.
  /// Records without an occurrence fill the lowest free slot of their stage.
  static Playbook parse(std::string_view content);
  static Playbook load(const std::filesystem::path& path);
  std::string serialize() const;

  /// Rebuilds the playbook that reproduces a recorded run.
  static Playbook from_call_log(const std::vector<CallRecord>& log);

 private:
  std::map<StageTag, std::vector<std::string>> responses_;
};

/// Deterministic backend that replays a playbook. Consumption is serialized,
/// so concurrent callers see each stage's responses in script order.
class MockBackend final : public Backend {
 public:
  explicit MockBackend(Playbook playbook);
  bool reachable() const override { return true; }
  std::string name() const override { return "mock"; }
  /// Responses still unconsumed for `stage`.
  std::size_t remaining(StageTag stage) const;

 protected:
  std::string do_complete(const CompletionRequest& request) override;

 private:
  Playbook playbook_;
  mutable std::mutex mutex_;
  std::map<StageTag, std::size_t> cursor_;
};

/// OpenAI-compatible `POST {base}/chat/completions` client.
class LiveBackend final : public Backend {
 public:
  LiveBackend(http::Endpoint endpoint, std::string model);
  bool reachable() const override;
  std::string name() const override { return "live:" + model_; }

  /// Reads MOLLY_LLM_BASE_URL, MOLLY_LLM_API_KEY and MOLLY_LLM_MODEL.
  static std::unique_ptr<LiveBackend> from_environment();

 protected:
  std::string do_complete(const CompletionRequest& request) override;

 private:
  http::Endpoint endpoint_;
  std::string model_;
};

/// Prompt templates with `{name}` placeholders; `{{` and `}}` are literal
/// braces. Built-in defaults are overridden by `<name>.txt` files in the
/// optional directory, which are re-read when their mtime changes.
class TemplateStore {
 public:
  TemplateStore();
  explicit TemplateStore(std::filesystem::path dir, bool hot_reload = true);

  /// Throws UnknownTemplate or UnboundPlaceholder.
  std::string render(std::string_view name,
                     const std::map<std::string, std::string>& variables) const;
  bool has(std::string_view name) const;
  std::string raw(std::string_view name) const;
  /// Re-reads every file in the directory.
  void reload();

 private:
  struct FileEntry {
    std::string body;
    std::filesystem::file_time_type mtime;
  };
  std::optional<std::string> lookup(std::string_view name) const;

  std::optional<std::filesystem::path> dir_;
  bool hot_reload_ = false;
  mutable std::mutex mutex_;
  mutable std::map<std::string, FileEntry, std::less<>> files_;
};

/// Substitutes placeholders in `tmpl`. Throws UnboundPlaceholder.
std::string render_template(std::string_view tmpl,
                            const std::map<std::string, std::string>& variables);

/// Built-in template text, or nullopt.
std::optional<std::string_view> builtin_template(std::string_view name);
std::vector<std::string> builtin_template_names();

}  // namespace molly::llm
