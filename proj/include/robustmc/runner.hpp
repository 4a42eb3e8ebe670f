#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "json.hpp"
#include "robustmc/http.hpp"
#include "robustmc/perturb.hpp"

namespace robustmc {

enum class EvalMode { letter, logprob };
enum class Capability { letter, logprob, both };

std::string_view to_string(EvalMode mode);
EvalMode eval_mode_from_string(std::string_view s);
std::string_view to_string(Capability c);
Capability capability_from_string(std::string_view s);

struct ModelEndpoint {
  std::string id;
  std::string base_url;
  std::string model;
  // Name of the environment variable holding the bearer token.
  std::string auth_env;
  Capability capability = Capability::letter;
  double temperature = 0.0;
  int max_tokens = 16;
  // Merged verbatim into every request body (e.g. reasoning-effort knobs).
  nlohmann::json extra = nlohmann::json::object();
  std::string system_prompt = "Answer with only the letter of the correct option.";

  bool supports(EvalMode mode) const;
  // Request parameters that change responses; part of every cache key.
  nlohmann::ordered_json params() const;
};

ModelEndpoint endpoint_from_json(const nlohmann::json& j);

// Upstream source of raw response payloads. Payloads follow the
// chat-completions shape (letter mode) and the completions-with-logprobs
// shape (logprob mode).
class Backend {
 public:
  virtual ~Backend() = default;
  virtual const ModelEndpoint& endpoint() const = 0;
  virtual std::string request_letter(std::string_view prompt) = 0;
  virtual std::string request_logprob(std::string_view prompt, std::string_view continuation) = 0;
};

// Offline model. Each option continuation gets a score from a digest of
// (seed, prompt, continuation); letter mode answers with the highest-scoring
// option label found in the prompt's last option block. Both modes pick the
// same option. A robust mock digests the prompt with surrounding
// whitespace and quotes stripped and inner whitespace collapsed.
class MockBackend final : public Backend {
 public:
  MockBackend(std::uint64_t seed, bool brittle);

  const ModelEndpoint& endpoint() const override { return endpoint_; }
  std::string request_letter(std::string_view prompt) override;
  std::string request_logprob(std::string_view prompt, std::string_view continuation) override;

  double score(std::string_view prompt, std::string_view continuation) const;
  static std::string normalize_robust(std::string_view prompt);
  // Labels A, B, ... of lines starting "X. ", in order from the last "A. " line.
  static std::vector<char> option_labels(std::string_view prompt);

 private:
  std::uint64_t seed_;
  bool brittle_;
  ModelEndpoint endpoint_;
};

std::shared_ptr<MockBackend> mock_model(std::uint64_t seed, bool brittle = true);

class HttpBackend final : public Backend {
 public:
  HttpBackend(ModelEndpoint endpoint, RetryPolicy retry = {}, TraceSink trace = {});

  const ModelEndpoint& endpoint() const override { return endpoint_; }
  std::string request_letter(std::string_view prompt) override;
  std::string request_logprob(std::string_view prompt, std::string_view continuation) override;
  // Plain chat turn; returns the raw payload.
  std::string chat(const nlohmann::json& messages);

 private:
  ModelEndpoint endpoint_;
  JsonHttpClient client_;
};

// Content-addressed on-disk store: `<dir>/<2-hex>/<digest>.json` plus an
// append-only `<dir>/index.jsonl`. Entries are immutable.
class ResponseCache {
 public:
  explicit ResponseCache(std::filesystem::path dir);

  static std::string key(const ModelEndpoint& endpoint, EvalMode mode, std::string_view prompt,
                         std::string_view continuation);
  std::optional<std::string> get(const std::string& key) const;
  void put(const std::string& key, const std::string& payload, const ModelEndpoint& endpoint,
           EvalMode mode);
  std::filesystem::path entry_path(const std::string& key) const;

 private:
  std::filesystem::path dir_;
  std::mutex index_mu_;
};

std::string letter_text_from_payload(std::string_view payload);
double logprob_from_payload(std::string_view payload, std::string_view prompt,
                            std::string_view continuation);

// Synchronous facade the rest of the toolkit talks to.
class ModelClient {
 public:
  explicit ModelClient(std::shared_ptr<Backend> backend, std::shared_ptr<ResponseCache> cache = nullptr);

  std::string complete_letter(std::string_view prompt);
  double score_option(std::string_view prompt, std::string_view continuation);

  const ModelEndpoint& endpoint() const { return backend_->endpoint(); }
  std::size_t upstream_calls() const { return upstream_calls_.load(); }

 private:
  std::string fetch(EvalMode mode, std::string_view prompt, std::string_view continuation);

  std::shared_ptr<Backend> backend_;
  std::shared_ptr<ResponseCache> cache_;
  std::atomic<std::size_t> upstream_calls_{0};
};

// Paraphrases through a chat endpoint using the library's instruction
// templates.
class ChatParaphraser final : public ParaphraseProvider {
 public:
  ChatParaphraser(std::shared_ptr<HttpBackend> backend, const TemplateLibrary& templates);
  std::string id() const override;
  std::string rewrite(ParaphraseMode mode, std::string_view text) override;

 private:
  std::shared_ptr<HttpBackend> backend_;
  const TemplateLibrary& templates_;
};

// Runs fn(i) for i in [0, n) on at most `concurrency` threads. The first
// exception thrown is rethrown after all workers stop.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t concurrency, Fn&& fn) {
  if (concurrency <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mu;
  std::vector<std::jthread> workers;
  const auto threads = std::min(concurrency, n);
  for (std::size_t t = 0; t < threads; ++t) {
    workers.emplace_back([&] {
      for (;;) {
        const auto i = next.fetch_add(1);
        if (i >= n || failed.load()) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mu);
          if (!error) error = std::current_exception();
          failed.store(true);
        }
      }
    });
  }
  workers.clear();
  if (error) std::rethrow_exception(error);
}

}  // namespace robustmc
