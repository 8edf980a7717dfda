#include "molly/llm.hpp"

#include <cstdlib>

#include "molly/error.hpp"
#include "molly/kb.hpp"
#include "molly/text.hpp"

namespace molly::llm {

std::string_view to_string(Role role) {
  switch (role) {
    case Role::System: return "system";
    case Role::User: return "user";
    case Role::Assistant: return "assistant";
  }
  return "user";
}

std::string_view to_string(StageTag stage) {
  switch (stage) {
    case StageTag::PerceptionTeacher: return "perception_teacher";
    case StageTag::PerceptionStudent: return "perception_student";
    case StageTag::Generation: return "generation";
    case StageTag::ReflectionCritic: return "reflection_critic";
    case StageTag::ReflectionRefiner: return "reflection_refiner";
    case StageTag::Judge: return "judge";
  }
  return "generation";
}

StageTag parse_stage(std::string_view name) {
  for (auto s : {StageTag::PerceptionTeacher, StageTag::PerceptionStudent, StageTag::Generation,
                 StageTag::ReflectionCritic, StageTag::ReflectionRefiner, StageTag::Judge}) {
    if (to_string(s) == name) return s;
  }
  throw Error(ErrorCode::InvalidConfig, std::string(name), "unknown stage tag");
}

double default_temperature(StageTag stage) {
  switch (stage) {
    case StageTag::Generation:
    case StageTag::ReflectionRefiner:
      return 0.3;
    default:
      return 0.0;
  }
}

void CompletionRequest::validate() const {
  if (messages.empty() || messages.front().role != Role::System) {
    throw Error(ErrorCode::PreconditionFailed, "messages", "must start with a system message");
  }
  for (std::size_t i = 0; i < messages.size(); ++i) {
    if (i > 0 && messages[i].role == Role::System) {
      throw Error(ErrorCode::PreconditionFailed, "messages", "only one system message allowed");
    }
    if (text::is_blank(messages[i].content)) {
      throw Error(ErrorCode::PreconditionFailed, "messages",
                  "message " + std::to_string(i) + " is empty");
    }
  }
  if (temperature < 0.0) {
    throw Error(ErrorCode::PreconditionFailed, "temperature", "must be non-negative");
  }
}

nlohmann::json CompletionRequest::to_json() const {
  auto msgs = nlohmann::json::array();
  for (const auto& m : messages) {
    msgs.push_back({{"role", to_string(m.role)}, {"content", m.content}});
  }
  return {{"messages", std::move(msgs)},
          {"temperature", temperature},
          {"max_tokens", max_tokens},
          {"stage_tag", to_string(stage)}};
}

std::string CompletionRequest::digest() const {
  return text::hex64(text::fnv1a64(to_json().dump(-1, ' ', false,
                                                  nlohmann::json::error_handler_t::replace)));
}

CompletionRequest make_request(StageTag stage, std::string system, std::string user) {
  CompletionRequest req;
  req.stage = stage;
  req.temperature = default_temperature(stage);
  req.messages.push_back({Role::System, std::move(system)});
  req.messages.push_back({Role::User, std::move(user)});
  return req;
}

nlohmann::json to_json(const CallRecord& record) {
  nlohmann::json j = {{"stage_tag", to_string(record.stage)},
                      {"request_digest", record.request_digest},
                      {"response", record.response}};
  if (!record.error.empty()) j["error"] = record.error;
  return j;
}

std::string Backend::complete(const CompletionRequest& request) {
  request.validate();
  CallRecord record{request.stage, request.digest(), {}, {}};
  try {
    record.response = do_complete(request);
  } catch (const std::exception& e) {
    record.error = e.what();
    std::lock_guard lock(log_mutex_);
    log_.push_back(std::move(record));
    throw;
  }
  std::lock_guard lock(log_mutex_);
  log_.push_back(record);
  return record.response;
}

std::vector<CallRecord> Backend::call_log() const {
  std::lock_guard lock(log_mutex_);
  return log_;
}

std::size_t Backend::call_count() const {
  std::lock_guard lock(log_mutex_);
  return log_.size();
}

void Playbook::add(StageTag stage, std::string response) {
  responses_[stage].push_back(std::move(response));
}

void Playbook::set(StageTag stage, std::size_t occurrence, std::string response) {
  auto& slots = responses_[stage];
  if (slots.size() <= occurrence) slots.resize(occurrence + 1);
  slots[occurrence] = std::move(response);
}

std::size_t Playbook::count(StageTag stage) const {
  auto it = responses_.find(stage);
  return it == responses_.end() ? 0 : it->second.size();
}

Playbook Playbook::parse(std::string_view content) {
  struct Pending {
    StageTag stage;
    std::optional<std::size_t> occurrence;
    std::string response;
    std::size_t line;
  };
  std::vector<Pending> records;
  const auto lines = text::split_lines(content);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (text::is_blank(lines[i])) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(lines[i]);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(ErrorCode::MalformedRecord, "playbook", e.what(), i + 1);
    }
    if (!j.is_object() || !j.contains("stage") || !j.contains("response") ||
        !j["stage"].is_string() || !j["response"].is_string()) {
      throw Error(ErrorCode::MalformedRecord, "playbook",
                  "records need string fields stage and response", i + 1);
    }
    Pending p{parse_stage(j["stage"].get<std::string>()), std::nullopt,
              j["response"].get<std::string>(), i + 1};
    if (j.contains("occurrence")) {
      if (!j["occurrence"].is_number_unsigned()) {
        throw Error(ErrorCode::MalformedRecord, "occurrence", "must be a non-negative integer",
                    i + 1);
      }
      p.occurrence = j["occurrence"].get<std::size_t>();
    }
    records.push_back(std::move(p));
  }

  std::map<StageTag, std::map<std::size_t, std::string>> slots;
  for (const auto& r : records) {
    if (!r.occurrence) continue;
    if (!slots[r.stage].emplace(*r.occurrence, r.response).second) {
      throw Error(ErrorCode::MalformedRecord, std::string(to_string(r.stage)),
                  "occurrence " + std::to_string(*r.occurrence) + " scripted twice", r.line);
    }
  }
  for (const auto& r : records) {
    if (r.occurrence) continue;
    auto& s = slots[r.stage];
    std::size_t free = 0;
    while (s.count(free)) ++free;
    s.emplace(free, r.response);
  }
  Playbook book;
  for (auto& [stage, by_occ] : slots) {
    std::size_t expected = 0;
    for (auto& [occ, resp] : by_occ) {
      if (occ != expected) {
        throw Error(ErrorCode::MalformedRecord, std::string(to_string(stage)),
                    "occurrence " + std::to_string(expected) + " is never scripted");
      }
      book.add(stage, std::move(resp));
      ++expected;
    }
  }
  return book;
}

Playbook Playbook::load(const std::filesystem::path& path) { return parse(kb::read_file(path)); }

std::string Playbook::serialize() const {
  std::string out;
  for (const auto& [stage, list] : responses_) {
    for (std::size_t i = 0; i < list.size(); ++i) {
      nlohmann::json j = {{"stage", to_string(stage)}, {"occurrence", i}, {"response", list[i]}};
      out += j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
      out += '\n';
    }
  }
  return out;
}

Playbook Playbook::from_call_log(const std::vector<CallRecord>& log) {
  Playbook book;
  for (const auto& r : log) {
    if (r.error.empty()) book.add(r.stage, r.response);
  }
  return book;
}

MockBackend::MockBackend(Playbook playbook) : playbook_(std::move(playbook)) {}

std::size_t MockBackend::remaining(StageTag stage) const {
  std::lock_guard lock(mutex_);
  auto it = cursor_.find(stage);
  const std::size_t used = it == cursor_.end() ? 0 : it->second;
  return playbook_.count(stage) - used;
}

std::string MockBackend::do_complete(const CompletionRequest& request) {
  std::lock_guard lock(mutex_);
  auto& cursor = cursor_[request.stage];
  const auto& all = playbook_.responses();
  auto it = all.find(request.stage);
  if (it == all.end() || cursor >= it->second.size()) {
    throw Error(ErrorCode::PlaybookExhausted, std::string(to_string(request.stage)),
                "no scripted response left (" + std::to_string(cursor) + " consumed)");
  }
  return it->second[cursor++];
}

LiveBackend::LiveBackend(http::Endpoint endpoint, std::string model)
    : endpoint_(std::move(endpoint)), model_(std::move(model)) {}

std::unique_ptr<LiveBackend> LiveBackend::from_environment() {
  auto env = [](const char* name) {
    const char* v = std::getenv(name);
    return std::string(v ? v : "");
  };
  http::Endpoint ep;
  ep.base_url = env("MOLLY_LLM_BASE_URL");
  ep.api_key = env("MOLLY_LLM_API_KEY");
  auto model = env("MOLLY_LLM_MODEL");
  if (model.empty()) model = "gpt-4";
  return std::make_unique<LiveBackend>(std::move(ep), std::move(model));
}

bool LiveBackend::reachable() const { return http::probe(endpoint_, "/models"); }

std::string LiveBackend::do_complete(const CompletionRequest& request) {
  auto body = request.to_json();
  body.erase("stage_tag");
  body["model"] = model_;
  const auto response = http::post_json(endpoint_, "/chat/completions", body);
  try {
    const auto& content = response.at("choices").at(0).at("message").at("content");
    if (!content.is_string()) throw std::runtime_error("content is not a string");
    return content.get<std::string>();
  } catch (const std::exception& e) {
    throw Error(ErrorCode::BackendUnavailable, endpoint_.base_url,
                std::string("completion response lacks choices[0].message.content: ") + e.what());
  }
}

}  // namespace molly::llm
