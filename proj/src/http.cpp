#include "molly/http.hpp"

#include <thread>

#include "httplib.h"
#include "molly/error.hpp"

namespace molly::http {

ParsedUrl parse_url(std::string_view url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string_view::npos) {
    throw Error(ErrorCode::InvalidConfig, std::string(url), "URL lacks a scheme");
  }
  const auto scheme = url.substr(0, scheme_end);
  if (scheme != "http" && scheme != "https") {
    throw Error(ErrorCode::InvalidConfig, std::string(url), "unsupported URL scheme");
  }
  const auto path_start = url.find('/', scheme_end + 3);
  ParsedUrl out;
  if (path_start == std::string_view::npos) {
    out.origin = std::string(url);
  } else {
    out.origin = std::string(url.substr(0, path_start));
    out.path = std::string(url.substr(path_start));
  }
  while (!out.path.empty() && out.path.back() == '/') out.path.pop_back();
  if (out.origin.size() <= scheme_end + 3) {
    throw Error(ErrorCode::InvalidConfig, std::string(url), "URL lacks a host");
  }
  return out;
}

namespace {

httplib::Client make_client(const ParsedUrl& url, std::chrono::milliseconds timeout) {
  httplib::Client client(url.origin);
  const auto secs = timeout.count() / 1000;
  const auto usecs = (timeout.count() % 1000) * 1000;
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);
  return client;
}

bool transient_status(int status) { return status == 429 || status >= 500; }

}  // namespace

nlohmann::json post_json(const Endpoint& endpoint, std::string_view path,
                         const nlohmann::json& body) {
  if (endpoint.base_url.empty()) {
    throw Error(ErrorCode::BackendUnavailable, "endpoint", "no base URL configured");
  }
  const auto url = parse_url(endpoint.base_url);
  auto client = make_client(url, endpoint.timeout);
  httplib::Headers headers;
  if (!endpoint.api_key.empty()) {
    headers.emplace("Authorization", "Bearer " + endpoint.api_key);
  }
  const auto target = url.path + std::string(path);
  const auto payload = body.dump();

  std::string last_error;
  auto delay = endpoint.backoff;
  for (int attempt = 0; attempt <= endpoint.max_retries; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(delay);
      delay *= 2;
    }
    auto res = client.Post(target, headers, payload, "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status == 401 || res->status == 403) {
      throw Error(ErrorCode::AuthFailure, endpoint.base_url,
                  "endpoint returned status " + std::to_string(res->status));
    }
    if (transient_status(res->status)) {
      last_error = "status " + std::to_string(res->status);
      continue;
    }
    if (res->status < 200 || res->status >= 300) {
      throw Error(ErrorCode::BackendUnavailable, endpoint.base_url,
                  "status " + std::to_string(res->status) + ": " + res->body);
    }
    try {
      return nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(ErrorCode::BackendUnavailable, endpoint.base_url,
                  std::string("unparseable response: ") + e.what());
    }
  }
  throw Error(ErrorCode::BackendUnavailable, endpoint.base_url,
              "gave up after " + std::to_string(endpoint.max_retries) + " retries (" +
                  last_error + ")");
}

bool probe(const Endpoint& endpoint, std::string_view path) {
  if (endpoint.base_url.empty()) return false;
  try {
    const auto url = parse_url(endpoint.base_url);
    auto client = make_client(url, std::chrono::milliseconds(2000));
    httplib::Headers headers;
    if (!endpoint.api_key.empty()) {
      headers.emplace("Authorization", "Bearer " + endpoint.api_key);
    }
    auto res = client.Get(url.path + std::string(path), headers);
    return res && res->status < 500;
  } catch (const Error&) {
    return false;
  }
}

}  // namespace molly::http
