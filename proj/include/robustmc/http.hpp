#pragma once

#include <chrono>
#include <functional>
#include <map>
#include <string>
#include <string_view>

#include "json.hpp"

namespace robustmc {

struct RetryPolicy {
  int attempts = 3;
  std::chrono::milliseconds base_delay{500};
};

// Receives "request <url>" / "response <status>" headers and verbatim bodies
// when tracing is on.
using TraceSink = std::function<void(std::string_view what, std::string_view body)>;

struct ParsedUrl {
  std::string scheme_host_port;  // "https://api.example.com:443"
  std::string path_prefix;       // "/v1", or empty
};
ParsedUrl parse_url(std::string_view url);

// POSTs JSON with bearer auth and exponential-backoff retries. Transport
// failures, 429 and 5xx are retried; other non-2xx statuses fail at once
// with ProtocolError.
class JsonHttpClient {
 public:
  JsonHttpClient(std::string base_url, std::string auth_env, RetryPolicy retry = {},
                 TraceSink trace = {}, std::chrono::seconds timeout = std::chrono::seconds(120));

  // Returns the raw response body.
  std::string post(const std::string& path, const nlohmann::json& body) const;

  const std::string& base_url() const { return base_url_; }

 private:
  std::string base_url_;
  ParsedUrl url_;
  std::string auth_env_;
  RetryPolicy retry_;
  TraceSink trace_;
  std::chrono::seconds timeout_;
};

}  // namespace robustmc
