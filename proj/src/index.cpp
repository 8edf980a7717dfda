#include "molly/index.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <optional>

#include "molly/error.hpp"
#include "molly/kb.hpp"
#include "molly/text.hpp"

namespace molly::index {

namespace {

double l2(const double* v, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += v[i] * v[i];
  return std::sqrt(s);
}

double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

// Cosines that are mathematically equal can differ in the last ulp depending
// on summation order. Ranking on a 1e-12 grid lets the key decide such ties.
double settle(double s) { return std::round(s * 1e12) / 1e12; }

bool ranks_before(const RetrievalResult& a, const RetrievalResult& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.key < b.key;
}

}  // namespace

double EmbeddingVector::norm() const { return l2(values.data(), values.size()); }

EmbeddingVector normalized(std::vector<double> values) {
  const double n = l2(values.data(), values.size());
  if (!(n > 0.0) || !std::isfinite(n)) {
    throw Error(ErrorCode::PreconditionFailed, "embedding", "cannot normalize a zero vector");
  }
  for (auto& x : values) x /= n;
  return EmbeddingVector{std::move(values)};
}

double cosine(const EmbeddingVector& u, const EmbeddingVector& v) {
  if (u.dim() != v.dim()) {
    throw Error(ErrorCode::DimMismatch, {},
                std::to_string(u.dim()) + " vs " + std::to_string(v.dim()));
  }
  const double nu = u.norm();
  const double nv = v.norm();
  if (nu == 0.0 || nv == 0.0) return 0.0;
  return dot(u.values.data(), v.values.data(), u.dim()) / (nu * nv);
}

EmbeddingVector hash_embed(std::string_view input, std::size_t dim) {
  if (dim < 8) throw Error(ErrorCode::InvalidConfig, "dim", "hash embedding needs dim >= 8");
  if (input.empty()) throw Error(ErrorCode::EmptyText, {}, "cannot embed empty text");
  const auto cps = text::decode_utf8(input);
  std::vector<double> counts(dim, 0.0);
  std::string gram;
  for (std::size_t n = 1; n <= 3; ++n) {
    for (std::size_t i = 0; i + n <= cps.size(); ++i) {
      gram.assign(1, static_cast<char>('0' + n));
      gram.push_back(':');
      for (std::size_t k = 0; k < n; ++k) text::append_utf8(gram, cps[i + k]);
      counts[text::fnv1a64(gram) % dim] += 1.0;
    }
  }
  return normalized(std::move(counts));
}

HashEmbedder::HashEmbedder(std::size_t dim) : dim_(dim) {
  if (dim < 8) throw Error(ErrorCode::InvalidConfig, "dim", "hash embedding needs dim >= 8");
}

EmbeddingVector HashEmbedder::embed(std::string_view text) const { return hash_embed(text, dim_); }

std::string HashEmbedder::name() const { return "hash:" + std::to_string(dim_); }

RemoteEmbedder::RemoteEmbedder(http::Endpoint endpoint, std::string model,
                               std::size_t expected_dim)
    : endpoint_(std::move(endpoint)), model_(std::move(model)), dim_(expected_dim) {}

EmbeddingVector RemoteEmbedder::embed(std::string_view text) const {
  if (text.empty()) throw Error(ErrorCode::EmptyText, {}, "cannot embed empty text");
  const auto response =
      http::post_json(endpoint_, "/embeddings", {{"model", model_}, {"input", std::string(text)}});
  std::vector<double> values;
  try {
    values = response.at("data").at(0).at("embedding").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::BackendUnavailable, endpoint_.base_url,
                std::string("embedding response lacks data[0].embedding: ") + e.what());
  }
  if (dim_ != 0 && values.size() != dim_) {
    throw Error(ErrorCode::DimMismatch, model_,
                "expected " + std::to_string(dim_) + ", got " + std::to_string(values.size()));
  }
  return normalized(std::move(values));
}

EmbeddingVector embed(std::string_view text, const Embedder& embedder) {
  if (text.empty()) throw Error(ErrorCode::EmptyText, {}, "cannot embed empty text");
  auto v = embedder.embed(text);
  if (std::abs(v.norm() - 1.0) > 1e-6) v = normalized(std::move(v.values));
  return v;
}

VectorIndex::VectorIndex(std::size_t dim) : dim_(dim) {
  if (dim == 0) throw Error(ErrorCode::InvalidConfig, "dim", "index dimension must be positive");
}

void VectorIndex::add(std::string key, const EmbeddingVector& v) {
  if (v.dim() != dim_) {
    throw Error(ErrorCode::DimMismatch, key,
                std::to_string(v.dim()) + " vs index " + std::to_string(dim_));
  }
  if (key.empty() || key.find_first_of(" \t\r\n") != std::string::npos) {
    throw Error(ErrorCode::MalformedRecord, key, "index keys must be non-empty without whitespace");
  }
  if (!key_set_.insert(key).second) {
    throw Error(ErrorCode::DuplicateId, key, "key already indexed");
  }
  keys_.push_back(std::move(key));
  values_.insert(values_.end(), v.values.begin(), v.values.end());
  norms_.push_back(l2(v.values.data(), dim_));
}

EmbeddingVector VectorIndex::vector(std::size_t i) const {
  const auto* row = values_.data() + i * dim_;
  return EmbeddingVector{std::vector<double>(row, row + dim_)};
}

double VectorIndex::score(std::size_t i, const EmbeddingVector& query, double query_norm) const {
  if (norms_[i] == 0.0 || query_norm == 0.0) return 0.0;
  return settle(dot(query.values.data(), values_.data() + i * dim_, dim_) / (query_norm * norms_[i]));
}

void VectorIndex::check_query(const EmbeddingVector& query, std::size_t k) const {
  if (k == 0) throw Error(ErrorCode::PreconditionFailed, "k", "k must be at least 1");
  if (keys_.empty()) throw Error(ErrorCode::EmptyIndex, {}, "index has no items");
  if (query.dim() != dim_) {
    throw Error(ErrorCode::DimMismatch, "query",
                std::to_string(query.dim()) + " vs index " + std::to_string(dim_));
  }
}

std::vector<RetrievalResult> VectorIndex::top_k(const EmbeddingVector& query,
                                                std::size_t k) const {
  check_query(query, k);
  const double qn = query.norm();
  const auto n = static_cast<long>(keys_.size());
  std::vector<double> scores(keys_.size());
#pragma omp parallel for schedule(static)
  for (long i = 0; i < n; ++i) scores[i] = score(static_cast<std::size_t>(i), query, qn);

  std::vector<std::size_t> order(keys_.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const auto take = std::min(k, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<long>(take), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (scores[a] != scores[b]) return scores[a] > scores[b];
                      return keys_[a] < keys_[b];
                    });
  std::vector<RetrievalResult> out;
  out.reserve(take);
  for (std::size_t r = 0; r < take; ++r) {
    out.push_back({keys_[order[r]], scores[order[r]], r + 1});
  }
  return out;
}

std::vector<RetrievalResult> VectorIndex::top_k_serial(const EmbeddingVector& query,
                                                       std::size_t k) const {
  check_query(query, k);
  const double qn = query.norm();
  std::vector<RetrievalResult> all;
  all.reserve(keys_.size());
  for (std::size_t i = 0; i < keys_.size(); ++i) all.push_back({keys_[i], score(i, query, qn), 0});
  std::sort(all.begin(), all.end(), ranks_before);
  all.resize(std::min(k, all.size()));
  for (std::size_t r = 0; r < all.size(); ++r) all[r].rank = r + 1;
  return all;
}

VectorIndex VectorIndex::build(std::span<const std::pair<std::string, std::string>> items,
                               const Embedder& embedder) {
  std::vector<EmbeddingVector> vectors(items.size());
  std::exception_ptr failure;
  const auto n = static_cast<long>(items.size());
#pragma omp parallel for schedule(dynamic, 16)
  for (long i = 0; i < n; ++i) {
    try {
      vectors[i] = embed(items[i].second, embedder);
    } catch (...) {
#pragma omp critical
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  VectorIndex index(vectors.empty() ? embedder.dim() : vectors.front().dim());
  for (std::size_t i = 0; i < items.size(); ++i) index.add(items[i].first, vectors[i]);
  return index;
}

VectorIndex VectorIndex::build_serial(std::span<const std::pair<std::string, std::string>> items,
                                      const Embedder& embedder) {
  std::vector<EmbeddingVector> vectors;
  for (const auto& [key, text] : items) vectors.push_back(embed(text, embedder));
  VectorIndex index(vectors.empty() ? embedder.dim() : vectors.front().dim());
  for (std::size_t i = 0; i < items.size(); ++i) index.add(items[i].first, vectors[i]);
  return index;
}

std::string VectorIndex::serialize() const {
  std::string out;
  char buf[32];
  for (std::size_t i = 0; i < keys_.size(); ++i) {
    out += keys_[i];
    for (std::size_t d = 0; d < dim_; ++d) {
      std::snprintf(buf, sizeof buf, " %.17g", values_[i * dim_ + d]);
      out += buf;
    }
    out += '\n';
  }
  return out;
}

void VectorIndex::save(const std::filesystem::path& path) const {
  kb::write_file(path, serialize());
}

VectorIndex VectorIndex::parse(std::string_view content) {
  std::optional<VectorIndex> index;
  const auto lines = text::split_lines(content);
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    auto line = text::trim(lines[ln]);
    if (line.empty()) continue;
    const auto key_end = line.find(' ');
    if (key_end == std::string_view::npos) {
      throw Error(ErrorCode::MalformedRecord, {}, "vector line has no values", ln + 1);
    }
    std::string key(line.substr(0, key_end));
    std::vector<double> values;
    auto rest = line.substr(key_end + 1);
    while (!rest.empty()) {
      const auto sp = rest.find(' ');
      auto tok = rest.substr(0, sp);
      rest = sp == std::string_view::npos ? std::string_view{} : rest.substr(sp + 1);
      if (tok.empty()) continue;
      // from_chars for double is available in libstdc++ 11.
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (ec != std::errc() || ptr != tok.data() + tok.size()) {
        throw Error(ErrorCode::MalformedRecord, key, "bad number '" + std::string(tok) + "'",
                    ln + 1);
      }
      values.push_back(v);
    }
    if (!index) index.emplace(values.size());
    try {
      index->add(std::move(key), EmbeddingVector{std::move(values)});
    } catch (const Error& e) {
      throw Error(e.code(), e.subject(), "vector file", ln + 1);
    }
  }
  if (!index) throw Error(ErrorCode::EmptyIndex, {}, "vector file has no items");
  return std::move(*index);
}

VectorIndex VectorIndex::load(const std::filesystem::path& path) {
  return parse(kb::read_file(path));
}

std::unique_ptr<Embedder> make_embedder(std::string_view kind, std::size_t dim) {
  if (kind == "hash") return std::make_unique<HashEmbedder>(dim);
  if (kind == "remote") {
    auto env = [](const char* name) {
      const char* v = std::getenv(name);
      return std::string(v ? v : "");
    };
    http::Endpoint ep;
    ep.base_url = env("MOLLY_EMBED_BASE_URL");
    ep.api_key = env("MOLLY_EMBED_API_KEY");
    if (ep.api_key.empty()) ep.api_key = env("MOLLY_LLM_API_KEY");
    auto model = env("MOLLY_EMBED_MODEL");
    if (ep.base_url.empty() || model.empty()) {
      throw Error(ErrorCode::BackendUnavailable, "embedder",
                  "remote embedder needs MOLLY_EMBED_BASE_URL and MOLLY_EMBED_MODEL");
    }
    return std::make_unique<RemoteEmbedder>(std::move(ep), std::move(model));
  }
  throw Error(ErrorCode::InvalidConfig, "embedder",
              "unknown embedder '" + std::string(kind) + "' (expected hash or remote)");
}

}  // namespace molly::index
