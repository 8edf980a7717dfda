#pragma once

#include <chrono>
#include <string>
#include <string_view>

#include "json.hpp"

namespace molly::http {

/// A JSON-over-HTTP endpoint such as `https://api.example.com/v1`.
struct Endpoint {
  std::string base_url;
  std::string api_key;
  std::chrono::milliseconds timeout{60'000};
  int max_retries = 3;
  std::chrono::milliseconds backoff{250};  // doubles after every retry
};

struct ParsedUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;    // without trailing slash, may be empty
};

/// Throws InvalidConfig for anything but http:// or https:// URLs.
ParsedUrl parse_url(std::string_view url);

/// POSTs `body` to base_url + path. Transport failures, 429 and 5xx are
/// retried with exponential backoff; after the last retry BackendUnavailable
/// is thrown. 401/403 throw AuthFailure carrying the status. Other non-2xx
/// statuses and unparseable bodies throw BackendUnavailable without retry.
nlohmann::json post_json(const Endpoint& endpoint, std::string_view path,
                         const nlohmann::json& body);

/// Issues one GET with a short timeout; true iff the server answered below 500.
bool probe(const Endpoint& endpoint, std::string_view path);

}  // namespace molly::http
