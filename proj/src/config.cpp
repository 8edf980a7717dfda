#include "molly/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdlib>
#include <set>

#include "molly/error.hpp"
#include "molly/kb.hpp"
#include "molly/text.hpp"

namespace molly::config {

namespace {

constexpr std::string_view kKeys[] = {
    "host",      "port",        "kb_path",     "index_path", "transcripts_dir",
    "templates_dir", "backend", "playbook_path", "embedder", "dim",
    "perception", "reflection", "k",           "max_iters",  "interpreter_path",
    "code_timeout_secs",
};

std::size_t parse_count(std::string_view key, std::string_view v) {
  std::size_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw Error(ErrorCode::InvalidConfig, std::string(key),
                "expected a non-negative integer, got '" + std::string(v) + "'");
  }
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  std::string lower(v);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "true" || lower == "on" || lower == "yes" || lower == "1") return true;
  if (lower == "false" || lower == "off" || lower == "no" || lower == "0") return false;
  throw Error(ErrorCode::InvalidConfig, std::string(key),
              "expected true or false, got '" + std::string(v) + "'");
}

}  // namespace

void ServiceConfig::validate() const {
  if (port < 0 || port > 65535) {
    throw Error(ErrorCode::InvalidConfig, "port", "must be within 0..65535");
  }
  if (kb_path.empty()) throw Error(ErrorCode::InvalidConfig, "kb_path", "is required");
  if (backend != "mock" && backend != "live") {
    throw Error(ErrorCode::InvalidConfig, "backend", "expected mock or live, got " + backend);
  }
  if (backend == "mock" && playbook_path.empty()) {
    throw Error(ErrorCode::InvalidConfig, "playbook_path", "mock backend needs a playbook");
  }
  if (embedder != "hash" && embedder != "remote") {
    throw Error(ErrorCode::InvalidConfig, "embedder", "expected hash or remote, got " + embedder);
  }
  if (code_timeout_secs == 0) {
    throw Error(ErrorCode::InvalidConfig, "code_timeout_secs", "must be positive");
  }
  agent_config().validate();
}

agent::AgentConfig ServiceConfig::agent_config() const {
  agent::AgentConfig a;
  a.perception = perception;
  a.reflection = reflection;
  a.k = k;
  a.max_reflection_iters = max_iters;
  return a;
}

void set_key(ServiceConfig& c, std::string_view key, std::string_view raw) {
  const std::string v(text::trim(raw));
  if (key == "host") c.host = v;
  else if (key == "port") {
    const auto p = parse_count(key, v);
    if (p > 65535) throw Error(ErrorCode::InvalidConfig, "port", "must be within 0..65535");
    c.port = static_cast<int>(p);
  } else if (key == "kb_path") c.kb_path = v;
  else if (key == "index_path") c.index_path = v;
  else if (key == "transcripts_dir") c.transcripts_dir = v;
  else if (key == "templates_dir") c.templates_dir = v;
  else if (key == "backend") c.backend = v;
  else if (key == "playbook_path") c.playbook_path = v;
  else if (key == "embedder") c.embedder = v;
  else if (key == "dim") c.dim = parse_count(key, v);
  else if (key == "perception") c.perception = parse_bool(key, v);
  else if (key == "reflection") c.reflection = parse_bool(key, v);
  else if (key == "k") c.k = parse_count(key, v);
  else if (key == "max_iters") c.max_iters = parse_count(key, v);
  else if (key == "interpreter_path") c.interpreter_path = v;
  else if (key == "code_timeout_secs") c.code_timeout_secs = parse_count(key, v);
  else throw Error(ErrorCode::InvalidConfig, std::string(key), "unknown key");
}

EnvLookup process_environment() {
  return [](std::string_view name) -> std::optional<std::string> {
    const char* v = std::getenv(std::string(name).c_str());
    if (v == nullptr) return std::nullopt;
    return std::string(v);
  };
}

namespace {

ServiceConfig parse_into(std::string_view content, ServiceConfig base,
                         std::set<std::string>* seen) {
  std::size_t line_no = 0;
  for (auto line : text::split_lines(content)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    if (text::is_blank(line)) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw Error(ErrorCode::InvalidConfig, std::string(text::trim(line)), "expected key = value",
                  line_no);
    }
    const auto key = text::trim(line.substr(0, eq));
    try {
      set_key(base, key, line.substr(eq + 1));
    } catch (const Error& e) {
      throw Error(e.code(), e.subject(), e.detail(), line_no);
    }
    if (seen) seen->emplace(key);
  }
  return base;
}

}  // namespace

ServiceConfig parse_config(std::string_view content, ServiceConfig base) {
  return parse_into(content, std::move(base), nullptr);
}

ServiceConfig load_config(const std::filesystem::path& path, ServiceConfig base) {
  std::set<std::string> seen;
  auto c = parse_into(kb::read_file(path), std::move(base), &seen);
  const auto dir = path.parent_path();
  auto resolve = [&](std::filesystem::path& p, const char* key) {
    if (seen.count(key) && !p.empty() && p.is_relative()) p = dir / p;
  };
  resolve(c.kb_path, "kb_path");
  resolve(c.index_path, "index_path");
  resolve(c.transcripts_dir, "transcripts_dir");
  resolve(c.templates_dir, "templates_dir");
  resolve(c.playbook_path, "playbook_path");
  return c;
}

ServiceConfig apply_environment(ServiceConfig config, const EnvLookup& env) {
  for (auto key : kKeys) {
    std::string name = "MOLLY_";
    for (char ch : key) name += static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    if (auto v = env(name)) {
      try {
        set_key(config, key, *v);
      } catch (const Error& e) {
        throw Error(e.code(), name, e.detail());
      }
    }
  }
  return config;
}

}  // namespace molly::config
