#include "robustmc/runner.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <ctime>

#include "robustmc/digest.hpp"
#include "robustmc/errors.hpp"
#include "robustmc/io.hpp"
#include "robustmc/text.hpp"

namespace robustmc {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

std::string_view to_string(EvalMode mode) { return mode == EvalMode::letter ? "letter" : "logprob"; }

EvalMode eval_mode_from_string(std::string_view s) {
  if (s == "letter") return EvalMode::letter;
  if (s == "logprob") return EvalMode::logprob;
  throw UsageError("unknown mode '" + std::string(s) + "' (expected letter or logprob)");
}

std::string_view to_string(Capability c) {
  switch (c) {
    case Capability::letter: return "letter";
    case Capability::logprob: return "logprob";
    case Capability::both: return "both";
  }
  return "?";
}

Capability capability_from_string(std::string_view s) {
  if (s == "letter") return Capability::letter;
  if (s == "logprob") return Capability::logprob;
  if (s == "both") return Capability::both;
  throw UsageError("unknown capability '" + std::string(s) + "'");
}

bool ModelEndpoint::supports(EvalMode mode) const {
  if (capability == Capability::both) return true;
  return (mode == EvalMode::letter) == (capability == Capability::letter);
}

ordered_json ModelEndpoint::params() const {
  ordered_json p;
  p["model"] = model;
  p["base_url"] = base_url;
  p["temperature"] = temperature;
  p["max_tokens"] = max_tokens;
  p["system_prompt"] = system_prompt;
  p["extra"] = extra;
  return p;
}

ModelEndpoint endpoint_from_json(const json& j) {
  ModelEndpoint e;
  e.id = j.at("id").get<std::string>();
  e.base_url = j.value("base_url", "");
  e.model = j.value("model", e.id);
  e.auth_env = j.value("auth_env", "");
  e.capability = capability_from_string(j.value("capability", "letter"));
  e.temperature = j.value("temperature", 0.0);
  e.max_tokens = j.value("max_tokens", 16);
  if (j.contains("extra")) e.extra = j.at("extra");
  if (j.contains("system_prompt")) e.system_prompt = j.at("system_prompt").get<std::string>();
  return e;
}

// ---------------------------------------------------------------------------
// Payload shapes

namespace {

std::string chat_payload(const std::string& model, const std::string& content) {
  ordered_json j;
  j["object"] = "chat.completion";
  j["model"] = model;
  ordered_json choice;
  choice["index"] = 0;
  choice["message"] = {{"role", "assistant"}, {"content", content}};
  choice["finish_reason"] = "stop";
  j["choices"] = ordered_json::array({choice});
  return j.dump();
}

std::size_t codepoints(std::string_view s) {
  std::size_t n = 0;
  for (unsigned char c : s) {
    if ((c & 0xC0) != 0x80) ++n;
  }
  return n;
}

}  // namespace

std::string letter_text_from_payload(std::string_view payload) {
  json j;
  try {
    j = json::parse(payload);
    const auto& content = j.at("choices").at(0).at("message").at("content");
    return content.is_null() ? std::string() : content.get<std::string>();
  } catch (const json::exception& e) {
    throw ProtocolError(0, std::string("malformed chat payload: ") + e.what());
  }
}

double logprob_from_payload(std::string_view payload, std::string_view prompt,
                            std::string_view continuation) {
  try {
    const auto j = json::parse(payload);
    const auto& lp = j.at("choices").at(0).at("logprobs");
    const auto& offsets = lp.at("text_offset");
    const auto& values = lp.at("token_logprobs");
    const auto start = codepoints(prompt);
    const auto stop = start + codepoints(continuation);
    double sum = 0.0;
    bool any = false;
    for (std::size_t i = 0; i < offsets.size() && i < values.size(); ++i) {
      const auto off = offsets[i].get<std::size_t>();
      if (off < start || off >= stop || values[i].is_null()) continue;
      sum += values[i].get<double>();
      any = true;
    }
    if (!any) throw ProtocolError(0, "payload has no logprobs for the continuation");
    return sum;
  } catch (const json::exception& e) {
    throw ProtocolError(0, std::string("malformed logprob payload: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Mock model

MockBackend::MockBackend(std::uint64_t seed, bool brittle) : seed_(seed), brittle_(brittle) {
  endpoint_.id = std::string(brittle ? "mock-brittle-" : "mock-robust-") + std::to_string(seed);
  endpoint_.model = endpoint_.id;
  endpoint_.capability = Capability::both;
}

std::shared_ptr<MockBackend> mock_model(std::uint64_t seed, bool brittle) {
  return std::make_shared<MockBackend>(seed, brittle);
}

std::string MockBackend::normalize_robust(std::string_view prompt) {
  std::size_t b = 0;
  std::size_t e = prompt.size();
  auto strippable = [](char c) { return is_ascii_space(c) || c == '"'; };
  while (b < e && strippable(prompt[b])) ++b;
  while (e > b && strippable(prompt[e - 1])) --e;
  std::string out;
  bool in_space = false;
  for (std::size_t i = b; i < e; ++i) {
    if (is_ascii_space(prompt[i])) {
      in_space = true;
      continue;
    }
    if (in_space) out.push_back(' ');
    in_space = false;
    out.push_back(prompt[i]);
  }
  return out;
}

std::vector<char> MockBackend::option_labels(std::string_view prompt) {
  std::vector<std::string_view> lines;
  std::size_t pos = 0;
  while (pos <= prompt.size()) {
    auto nl = prompt.find('\n', pos);
    if (nl == std::string_view::npos) nl = prompt.size();
    lines.push_back(prompt.substr(pos, nl - pos));
    pos = nl + 1;
  }
  auto labelled = [](std::string_view line, char label) {
    return line.size() >= 3 && line[0] == label && line[1] == '.' && line[2] == ' ';
  };
  std::vector<char> labels;
  for (std::size_t i = lines.size(); i-- > 0;) {
    if (!labelled(lines[i], 'A')) continue;
    for (std::size_t j = i; j < lines.size(); ++j) {
      const char next = static_cast<char>('A' + labels.size());
      if (next <= 'Z' && labelled(lines[j], next)) labels.push_back(next);
    }
    break;
  }
  return labels;
}

double MockBackend::score(std::string_view prompt, std::string_view continuation) const {
  std::string material = "mock-v1";
  material += '\0';
  material += std::to_string(seed_);
  material += '\0';
  material += brittle_ ? std::string(prompt) : normalize_robust(prompt);
  material += '\0';
  material += continuation;
  const auto d = sha256_u64(material);
  // Open interval (0, 1); larger digests score higher.
  const double u = (static_cast<double>(d >> 11) + 0.5) / 9007199254740992.0;
  return -10.0 * (1.0 - u);
}

std::string MockBackend::request_letter(std::string_view prompt) {
  const auto labels = option_labels(prompt);
  if (labels.empty()) return chat_payload(endpoint_.model, "I cannot tell which option is correct.");
  char best = labels.front();
  double best_score = score(prompt, std::string(" ") + best);
  for (std::size_t i = 1; i < labels.size(); ++i) {
    const double s = score(prompt, std::string(" ") + labels[i]);
    if (s > best_score) {
      best_score = s;
      best = labels[i];
    }
  }
  return chat_payload(endpoint_.model, std::string("The answer is (") + best + ").");
}

std::string MockBackend::request_logprob(std::string_view prompt, std::string_view continuation) {
  ordered_json j;
  j["object"] = "text_completion";
  j["model"] = endpoint_.model;
  ordered_json lp;
  lp["tokens"] = {"<prompt>", std::string(continuation)};
  lp["token_logprobs"] = {nullptr, score(prompt, continuation)};
  lp["text_offset"] = {0, codepoints(prompt)};
  ordered_json choice;
  choice["index"] = 0;
  choice["text"] = std::string(continuation);
  choice["logprobs"] = std::move(lp);
  j["choices"] = ordered_json::array({choice});
  return j.dump();
}

// ---------------------------------------------------------------------------
// HTTP backend

HttpBackend::HttpBackend(ModelEndpoint endpoint, RetryPolicy retry, TraceSink trace)
    : endpoint_(std::move(endpoint)),
      client_(endpoint_.base_url, endpoint_.auth_env, retry, std::move(trace)) {}

namespace {

void merge_extra(json& body, const json& extra) {
  if (!extra.is_object()) return;
  for (const auto& [k, v] : extra.items()) body[k] = v;
}

}  // namespace

std::string HttpBackend::chat(const json& messages) {
  json body;
  body["model"] = endpoint_.model;
  body["messages"] = messages;
  body["temperature"] = endpoint_.temperature;
  body["max_tokens"] = endpoint_.max_tokens;
  merge_extra(body, endpoint_.extra);
  return client_.post("/chat/completions", body);
}

std::string HttpBackend::request_letter(std::string_view prompt) {
  json messages = json::array();
  if (!endpoint_.system_prompt.empty()) {
    messages.push_back({{"role", "system"}, {"content", endpoint_.system_prompt}});
  }
  messages.push_back({{"role", "user"}, {"content", std::string(prompt)}});
  return chat(messages);
}

std::string HttpBackend::request_logprob(std::string_view prompt, std::string_view continuation) {
  json body;
  body["model"] = endpoint_.model;
  body["prompt"] = std::string(prompt) + std::string(continuation);
  body["max_tokens"] = 1;
  body["echo"] = true;
  body["logprobs"] = 1;
  body["temperature"] = endpoint_.temperature;
  merge_extra(body, endpoint_.extra);
  return client_.post("/completions", body);
}

// ---------------------------------------------------------------------------
// Cache

ResponseCache::ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::filesystem::create_directories(dir_);
}

std::string ResponseCache::key(const ModelEndpoint& endpoint, EvalMode mode, std::string_view prompt,
                               std::string_view continuation) {
  ordered_json k;
  k["endpoint"] = endpoint.id;
  k["mode"] = to_string(mode);
  k["prompt"] = std::string(prompt);
  k["continuation"] = std::string(continuation);
  k["params"] = endpoint.params();
  return sha256_hex(k.dump());
}

std::filesystem::path ResponseCache::entry_path(const std::string& key) const {
  return dir_ / key.substr(0, 2) / (key + ".json");
}

std::optional<std::string> ResponseCache::get(const std::string& key) const {
  auto content = read_file_if_exists(entry_path(key));
  if (!content) return std::nullopt;
  try {
    return json::parse(*content).at("payload").get<std::string>();
  } catch (const json::exception&) {
    return std::nullopt;
  }
}

void ResponseCache::put(const std::string& key, const std::string& payload,
                        const ModelEndpoint& endpoint, EvalMode mode) {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof(stamp), "%Y-%m-%dT%H:%M:%SZ", &tm);

  ordered_json entry;
  entry["key"] = key;
  entry["endpoint"] = endpoint.id;
  entry["mode"] = to_string(mode);
  entry["created_at"] = stamp;
  entry["payload"] = payload;
  write_file_atomic(entry_path(key), entry.dump() + "\n");

  ordered_json line;
  line["key"] = key;
  line["endpoint"] = endpoint.id;
  line["mode"] = to_string(mode);
  line["created_at"] = stamp;
  const auto text = line.dump() + "\n";
  std::lock_guard lock(index_mu_);
  const auto index = dir_ / "index.jsonl";
  const int fd = ::open(index.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
  if (fd < 0) throw Error("io_error", "cannot open cache index " + index.string());
  const auto written = ::write(fd, text.data(), text.size());
  ::close(fd);
  if (written != static_cast<ssize_t>(text.size())) throw Error("io_error", "short write to cache index");
}

// ---------------------------------------------------------------------------
// Client

ModelClient::ModelClient(std::shared_ptr<Backend> backend, std::shared_ptr<ResponseCache> cache)
    : backend_(std::move(backend)), cache_(std::move(cache)) {}

std::string ModelClient::fetch(EvalMode mode, std::string_view prompt, std::string_view continuation) {
  std::string key;
  if (cache_) {
    key = ResponseCache::key(backend_->endpoint(), mode, prompt, continuation);
    if (auto hit = cache_->get(key)) return *hit;
  }
  ++upstream_calls_;
  auto payload = mode == EvalMode::letter ? backend_->request_letter(prompt)
                                          : backend_->request_logprob(prompt, continuation);
  if (cache_) cache_->put(key, payload, backend_->endpoint(), mode);
  return payload;
}

std::string ModelClient::complete_letter(std::string_view prompt) {
  if (!backend_->endpoint().supports(EvalMode::letter)) {
    throw CapabilityError("endpoint " + backend_->endpoint().id + " does not support letter mode");
  }
  return letter_text_from_payload(fetch(EvalMode::letter, prompt, ""));
}

double ModelClient::score_option(std::string_view prompt, std::string_view continuation) {
  if (!backend_->endpoint().supports(EvalMode::logprob)) {
    throw CapabilityError("endpoint " + backend_->endpoint().id + " does not support logprob mode");
  }
  if (continuation.empty()) throw UsageError("empty continuation");
  return logprob_from_payload(fetch(EvalMode::logprob, prompt, continuation), prompt, continuation);
}

// ---------------------------------------------------------------------------
// Paraphrasing over chat

ChatParaphraser::ChatParaphraser(std::shared_ptr<HttpBackend> backend, const TemplateLibrary& templates)
    : backend_(std::move(backend)), templates_(templates) {}

std::string ChatParaphraser::id() const {
  return "chat:" + backend_->endpoint().id + ":" + backend_->endpoint().model;
}

std::string ChatParaphraser::rewrite(ParaphraseMode mode, std::string_view text) {
  auto instruction = templates_.paraphrase(mode);
  const auto at = instruction.find("{text}");
  if (at == std::string::npos) throw TemplateError("paraphrase template lacks {text}");
  instruction.replace(at, 6, text);
  json messages = json::array({{{"role", "user"}, {"content", instruction}}});
  return letter_text_from_payload(backend_->chat(messages));
}

}  // namespace robustmc
