#include "robustmc/similarity.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"
#include "robustmc/digest.hpp"
#include "robustmc/errors.hpp"
#include "robustmc/runner.hpp"
#include "robustmc/text.hpp"

namespace robustmc {

double cosine(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw StatsError("cosine: dimension mismatch");
  double dot = 0.0;
  double nu = 0.0;
  double nv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    nu += u[i] * u[i];
    nv += v[i] * v[i];
  }
  if (nu == 0.0 || nv == 0.0) throw StatsError("cosine: zero vector");
  return std::clamp(dot / (std::sqrt(nu) * std::sqrt(nv)), -1.0, 1.0);
}

HashEmbedder::HashEmbedder(std::size_t dimension) : dimension_(dimension) {
  if (dimension_ == 0) throw UsageError("embedding dimension must be positive");
}

namespace {

std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string normalize_for_embedding(std::string_view text) {
  std::string out;
  bool pending_space = false;
  for (char c : trim(text)) {
    if (is_ascii_space(c)) {
      pending_space = true;
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(c >= 'A' && c <= 'Z' ? static_cast<char>(c - 'A' + 'a') : c);
  }
  return out;
}

}  // namespace

std::vector<double> HashEmbedder::embed(std::string_view text) {
  const auto norm = normalize_for_embedding(text);
  std::vector<double> v(dimension_, 0.0);
  for (std::size_t n = 1; n <= 3; ++n) {
    const char tag = static_cast<char>('0' + n);
    for (std::size_t i = 0; i + n <= norm.size(); ++i) {
      const auto h = fnv1a(std::string_view(norm).substr(i, n), fnv1a(std::string_view(&tag, 1)));
      v[h % dimension_] += 1.0;
    }
  }
  double norm2 = 0.0;
  for (double x : v) norm2 += x * x;
  if (norm2 > 0.0) {
    const double inv = 1.0 / std::sqrt(norm2);
    for (double& x : v) x *= inv;
  }
  return v;
}

HttpEmbedder::HttpEmbedder(std::string base_url, std::string model, std::string auth_env, RetryPolicy retry,
                           TraceSink trace)
    : model_(std::move(model)), client_(std::move(base_url), std::move(auth_env), retry, std::move(trace)) {}

std::vector<double> HttpEmbedder::embed(std::string_view text) {
  nlohmann::json body;
  body["model"] = model_;
  body["input"] = std::string(text);
  const auto payload = client_.post("/embeddings", body);
  try {
    return nlohmann::json::parse(payload).at("data").at(0).at("embedding").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolError(0, std::string("malformed embeddings payload: ") + e.what());
  }
}

SimilarityReport similarity_report(const std::vector<SimilarityPair>& pairs, EmbeddingProvider& provider,
                                   std::size_t concurrency) {
  SimilarityReport out;
  out.provider = provider.id();
  out.n_pairs = pairs.size();
  out.histogram.assign(kHistogramBins, 0);
  if (pairs.empty()) return out;

  std::map<std::string, std::size_t> slot_of;
  std::vector<std::string_view> texts;
  auto slot = [&](const std::string& text) {
    const auto key = sha256_hex(text);
    auto [it, fresh] = slot_of.emplace(key, texts.size());
    if (fresh) texts.push_back(text);
    return it->second;
  };
  std::vector<std::pair<std::size_t, std::size_t>> slots;
  for (const auto& p : pairs) {
    const auto a = slot(p.original);
    slots.emplace_back(a, slot(p.perturbed));
  }

  std::vector<std::vector<double>> vectors(texts.size());
  parallel_for(texts.size(), concurrency, [&](std::size_t i) { vectors[i] = provider.embed(texts[i]); });
  out.embedded_texts = texts.size();

  double sum = 0.0;
  out.min = 1.0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const double s = cosine(vectors[slots[i].first], vectors[slots[i].second]);
    out.scores.push_back(s);
    sum += s;
    out.min = std::min(out.min, s);
    auto& k = out.per_kind[pairs[i].kind];
    k.min = k.count == 0 ? s : std::min(k.min, s);
    k.mean += s;
    ++k.count;
    auto bin = static_cast<std::size_t>(std::floor((s + 1.0) / 2.0 * static_cast<double>(kHistogramBins)));
    out.histogram[std::min(bin, kHistogramBins - 1)] += 1;
  }
  out.mean = sum / static_cast<double>(pairs.size());
  for (auto& [_, k] : out.per_kind) k.mean /= static_cast<double>(k.count);
  return out;
}

}  // namespace robustmc
