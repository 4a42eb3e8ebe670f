#pragma once

#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "robustmc/http.hpp"

namespace robustmc {

double cosine(std::span<const double> u, std::span<const double> v);

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::string id() const = 0;
  virtual std::vector<double> embed(std::string_view text) = 0;
};

// Feature-hashed character 1- to 3-gram counts over lowercased,
// whitespace-collapsed text, L2-normalized. Deterministic; not semantic.
class HashEmbedder final : public EmbeddingProvider {
 public:
  explicit HashEmbedder(std::size_t dimension = 1024);
  std::string id() const override { return "offline-hash"; }
  std::vector<double> embed(std::string_view text) override;
  std::size_t dimension() const { return dimension_; }

 private:
  std::size_t dimension_;
};

// POST {base}/embeddings with {"model", "input"}; reads data[0].embedding.
class HttpEmbedder final : public EmbeddingProvider {
 public:
  HttpEmbedder(std::string base_url, std::string model, std::string auth_env, RetryPolicy retry = {},
               TraceSink trace = {});
  std::string id() const override { return "http:" + model_; }
  std::vector<double> embed(std::string_view text) override;

 private:
  std::string model_;
  JsonHttpClient client_;
};

struct SimilarityPair {
  std::string kind;
  std::string original;
  std::string perturbed;
};

struct KindSimilarity {
  std::size_t count = 0;
  double mean = 0.0;
  double min = 0.0;
};

struct SimilarityReport {
  std::string provider;
  std::size_t n_pairs = 0;
  double mean = 0.0;
  double min = 0.0;
  std::map<std::string, KindSimilarity> per_kind;
  // kHistogramBins equal-width bins over [-1, 1]; 1.0 lands in the last.
  std::vector<std::size_t> histogram;
  std::vector<double> scores;  // per pair, input order
  std::size_t embedded_texts = 0;
};

inline constexpr std::size_t kHistogramBins = 20;

// Embeds each distinct text once (keyed by digest), at most `concurrency`
// requests in flight.
SimilarityReport similarity_report(const std::vector<SimilarityPair>& pairs, EmbeddingProvider& provider,
                                   std::size_t concurrency = 1);

}  // namespace robustmc
