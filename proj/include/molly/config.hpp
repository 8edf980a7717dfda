#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>

#include "molly/agent.hpp"

namespace molly::config {

/// Settings shared by the service and the CLI.
///
/// File format: one `key = value` per line; `#` starts a comment; blank lines
/// are ignored. Each key may be overridden by the environment variable
/// MOLLY_<KEY in upper case>, e.g. MOLLY_PORT.
struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::filesystem::path kb_path;
  std::filesystem::path index_path;  // optional; built from the KB when absent
  std::filesystem::path transcripts_dir = "transcripts";
  std::filesystem::path templates_dir;  // optional
  std::string backend = "mock";         // mock | live
  std::filesystem::path playbook_path;  // required in mock mode
  std::string embedder = "hash";        // hash | remote
  std::size_t dim = 256;
  bool perception = true;
  bool reflection = true;
  std::size_t k = 3;
  std::size_t max_iters = 3;
  std::string interpreter_path = "python3";
  std::size_t code_timeout_secs = 5;

  /// Throws InvalidConfig.
  void validate() const;
  agent::AgentConfig agent_config() const;
};

using EnvLookup = std::function<std::optional<std::string>(std::string_view)>;
EnvLookup process_environment();

/// Applies `key = value` lines on top of `base`. Unknown keys and bad values
/// raise InvalidConfig with the line number.
ServiceConfig parse_config(std::string_view content, ServiceConfig base = {});
/// Relative paths in the file are resolved against the file's directory.
ServiceConfig load_config(const std::filesystem::path& path, ServiceConfig base = {});
ServiceConfig apply_environment(ServiceConfig config, const EnvLookup& env);

/// Sets one key; shared by files and environment overrides.
void set_key(ServiceConfig& config, std::string_view key, std::string_view value);

}  // namespace molly::config
