#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "molly/http.hpp"

namespace molly::index {

/// Dense embedding. Vectors produced by embedders are L2-normalized.
struct EmbeddingVector {
  std::vector<double> values;

  std::size_t dim() const noexcept { return values.size(); }
  double norm() const;
  bool operator==(const EmbeddingVector&) const = default;
};

/// Scales `values` to unit L2 norm. Throws PreconditionFailed on a zero vector.
EmbeddingVector normalized(std::vector<double> values);

/// dot(u,v) / (|u| |v|); 0 when either vector is zero. Throws DimMismatch.
double cosine(const EmbeddingVector& u, const EmbeddingVector& v);

/// Character 1-, 2- and 3-gram counts hashed into `dim` buckets, then
/// normalized. Deterministic and offline. Throws InvalidConfig for dim < 8
/// and EmptyText for empty input.
EmbeddingVector hash_embed(std::string_view text, std::size_t dim);

class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual EmbeddingVector embed(std::string_view text) const = 0;
  virtual std::size_t dim() const = 0;
  virtual std::string name() const = 0;
};

class HashEmbedder final : public Embedder {
 public:
  explicit HashEmbedder(std::size_t dim = 256);
  EmbeddingVector embed(std::string_view text) const override;
  std::size_t dim() const override { return dim_; }
  std::string name() const override;

 private:
  std::size_t dim_;
};

/// Client for an OpenAI-style `POST {base}/embeddings` endpoint.
class RemoteEmbedder final : public Embedder {
 public:
  RemoteEmbedder(http::Endpoint endpoint, std::string model, std::size_t expected_dim = 0);
  EmbeddingVector embed(std::string_view text) const override;
  std::size_t dim() const override { return dim_; }
  std::string name() const override { return "remote:" + model_; }

 private:
  http::Endpoint endpoint_;
  std::string model_;
  std::size_t dim_;
};

/// Validates the text and the returned vector. Throws EmptyText.
EmbeddingVector embed(std::string_view text, const Embedder& embedder);

struct RetrievalResult {
  std::string key;
  double score = 0.0;
  std::size_t rank = 0;  // 1-based

  bool operator==(const RetrievalResult&) const = default;
};

/// Exact in-memory cosine index. Vectors live in one row-major block.
class VectorIndex {
 public:
  explicit VectorIndex(std::size_t dim);

  /// Throws DimMismatch, DuplicateId, or MalformedRecord for keys with whitespace.
  void add(std::string key, const EmbeddingVector& v);

  std::size_t size() const noexcept { return keys_.size(); }
  std::size_t dim() const noexcept { return dim_; }
  bool empty() const noexcept { return keys_.empty(); }
  const std::vector<std::string>& keys() const noexcept { return keys_; }
  EmbeddingVector vector(std::size_t i) const;

  /// The k most similar items, best first, ties by ascending key. Scoring is
  /// parallel over items. Throws EmptyIndex, DimMismatch, PreconditionFailed (k == 0).
  std::vector<RetrievalResult> top_k(const EmbeddingVector& query, std::size_t k) const;
  /// Serial reference: scores every item then fully sorts.
  std::vector<RetrievalResult> top_k_serial(const EmbeddingVector& query, std::size_t k) const;

  /// Embeds (key, text) pairs in parallel and returns the index in input order.
  static VectorIndex build(std::span<const std::pair<std::string, std::string>> items,
                           const Embedder& embedder);
  static VectorIndex build_serial(std::span<const std::pair<std::string, std::string>> items,
                                  const Embedder& embedder);

  /// Line format: `<key> <v1> ... <vd>`, LF endings, no header.
  void save(const std::filesystem::path& path) const;
  std::string serialize() const;
  static VectorIndex load(const std::filesystem::path& path);
  static VectorIndex parse(std::string_view content);

 private:
  double score(std::size_t i, const EmbeddingVector& query, double query_norm) const;
  void check_query(const EmbeddingVector& query, std::size_t k) const;

  std::size_t dim_;
  std::vector<std::string> keys_;
  std::unordered_set<std::string> key_set_;
  std::vector<double> values_;
  std::vector<double> norms_;
};

/// Creates "hash" (with `dim`) or "remote" (from MOLLY_EMBED_* environment).
std::unique_ptr<Embedder> make_embedder(std::string_view kind, std::size_t dim);

}  // namespace molly::index
