#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "httplib.h"

#include "robustmc/http.hpp"

#include <cstdlib>
#include <thread>

#include "robustmc/errors.hpp"

namespace robustmc {

ParsedUrl parse_url(std::string_view url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string_view::npos) throw UsageError("endpoint URL needs a scheme: " + std::string(url));
  const auto scheme = url.substr(0, scheme_end);
  if (scheme != "http" && scheme != "https") throw UsageError("unsupported URL scheme: " + std::string(scheme));
  const auto host_begin = scheme_end + 3;
  const auto path_begin = url.find('/', host_begin);
  ParsedUrl out;
  out.scheme_host_port = std::string(url.substr(0, path_begin));
  if (path_begin != std::string_view::npos) {
    out.path_prefix = std::string(url.substr(path_begin));
    while (!out.path_prefix.empty() && out.path_prefix.back() == '/') out.path_prefix.pop_back();
  }
  return out;
}

JsonHttpClient::JsonHttpClient(std::string base_url, std::string auth_env, RetryPolicy retry,
                               TraceSink trace, std::chrono::seconds timeout)
    : base_url_(std::move(base_url)),
      url_(parse_url(base_url_)),
      auth_env_(std::move(auth_env)),
      retry_(retry),
      trace_(std::move(trace)),
      timeout_(timeout) {}

std::string JsonHttpClient::post(const std::string& path, const nlohmann::json& body) const {
  httplib::Headers headers;
  if (!auth_env_.empty()) {
    const char* token = std::getenv(auth_env_.c_str());
    if (token == nullptr || *token == '\0') {
      throw Error("auth_error", "environment variable " + auth_env_ + " is not set");
    }
    headers.emplace("Authorization", std::string("Bearer ") + token);
  }
  const auto full_path = url_.path_prefix + path;
  const auto payload = body.dump();

  std::string last_failure;
  for (int attempt = 0; attempt < retry_.attempts; ++attempt) {
    if (attempt > 0) std::this_thread::sleep_for(retry_.base_delay * (1 << (attempt - 1)));
    httplib::Client cli(url_.scheme_host_port);
    cli.set_connection_timeout(timeout_);
    cli.set_read_timeout(timeout_);
    cli.set_write_timeout(timeout_);
    if (trace_) trace_("request " + url_.scheme_host_port + full_path, payload);
    auto res = cli.Post(full_path, headers, payload, "application/json");
    if (!res) {
      last_failure = "transport failure: " + httplib::to_string(res.error());
      if (trace_) trace_("response error", last_failure);
      continue;
    }
    if (trace_) trace_("response " + std::to_string(res->status), res->body);
    if (res->status >= 200 && res->status < 300) return res->body;
    if (res->status == 429 || res->status >= 500) {
      last_failure = "status " + std::to_string(res->status);
      continue;
    }
    throw ProtocolError(res->status, res->body.substr(0, 500));
  }
  throw TransportError("retries exhausted after " + std::to_string(retry_.attempts) +
                       " attempts: " + last_failure);
}

}  // namespace robustmc
