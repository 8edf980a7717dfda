#include <algorithm>
#include <cmath>
#include <random>

#include "helpers.hpp"
#include "molly/agent.hpp"
#include "molly/index.hpp"
#include "molly/kb.hpp"

using namespace molly;
using namespace molly::index;

namespace {

EmbeddingVector random_unit(std::mt19937& rng, std::size_t dim) {
  std::normal_distribution<double> nd;
  std::vector<double> v(dim);
  for (auto& x : v) x = nd(rng);
  return normalized(std::move(v));
}

// Brute force kept deliberately naive: plain loops, stable sort on (-score, key).
std::vector<std::pair<std::string, double>> brute_force(
    const std::vector<std::pair<std::string, EmbeddingVector>>& items, const EmbeddingVector& q,
    std::size_t k) {
  std::vector<std::pair<std::string, double>> scored;
  for (const auto& [key, v] : items) {
    double dot = 0, nu = 0, nv = 0;
    for (std::size_t i = 0; i < q.dim(); ++i) {
      dot += v.values[i] * q.values[i];
      nu += v.values[i] * v.values[i];
      nv += q.values[i] * q.values[i];
    }
    scored.emplace_back(key, dot / (std::sqrt(nu) * std::sqrt(nv)));
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  scored.resize(std::min(k, scored.size()));
  return scored;
}

}  // namespace

TEST_CASE("cosine basics") {
  const EmbeddingVector u{{1, 0, 0}}, v{{0, 1, 0}}, w{{2, 0, 0}}, z{{0, 0, 0}};
  CHECK(cosine(u, v) == doctest::Approx(0.0));
  CHECK(cosine(u, w) == doctest::Approx(1.0));
  CHECK(cosine(u, z) == 0.0);
  CHECK_ERROR_CODE(cosine(u, EmbeddingVector{{1, 0}}), ErrorCode::DimMismatch);
  CHECK_ERROR_CODE(normalized({0, 0}), ErrorCode::PreconditionFailed);
}

TEST_CASE("property: cosine is symmetric and bounded") {
  std::mt19937 rng(3);
  for (int i = 0; i < 200; ++i) {
    const auto a = random_unit(rng, 16), b = random_unit(rng, 16);
    CHECK(cosine(a, b) == doctest::Approx(cosine(b, a)));
    CHECK(cosine(a, b) <= 1.0 + 1e-12);
    CHECK(cosine(a, b) >= -1.0 - 1e-12);
    CHECK(cosine(a, a) == doctest::Approx(1.0));
  }
}

TEST_CASE("hash embeddings are deterministic and normalized") {
  const auto a = hash_embed("什么是列表?", 64);
  CHECK(a.dim() == 64);
  CHECK(a.norm() == doctest::Approx(1.0));
  CHECK(a == hash_embed("什么是列表?", 64));
  CHECK(cosine(a, hash_embed("什么是列表", 64)) > cosine(a, hash_embed("如何读取文件", 64)));
  CHECK_ERROR_CODE(hash_embed("", 64), ErrorCode::EmptyText);
  CHECK_ERROR_CODE(hash_embed("x", 4), ErrorCode::InvalidConfig);
  CHECK_ERROR_CODE(embed("", HashEmbedder(32)), ErrorCode::EmptyText);
  CHECK_ERROR_CODE(make_embedder("word2vec", 32), ErrorCode::InvalidConfig);
}

TEST_CASE("top_k ranks best first and breaks ties by key") {
  VectorIndex idx(2);
  idx.add("b", EmbeddingVector{{1, 0}});
  idx.add("a", EmbeddingVector{{1, 0}});
  idx.add("c", EmbeddingVector{{0, 1}});
  const auto r = idx.top_k(EmbeddingVector{{1, 0}}, 3);
  REQUIRE(r.size() == 3);
  CHECK(r[0].key == "a");
  CHECK(r[0].rank == 1);
  CHECK(r[1].key == "b");
  CHECK(r[2].key == "c");
  CHECK(idx.top_k(EmbeddingVector{{1, 0}}, 10).size() == 3);
}

TEST_CASE("index errors") {
  VectorIndex idx(2);
  CHECK_ERROR_CODE(idx.top_k(EmbeddingVector{{1, 0}}, 1), ErrorCode::EmptyIndex);
  idx.add("a", EmbeddingVector{{1, 0}});
  CHECK_ERROR_CODE(idx.top_k(EmbeddingVector{{1, 0}}, 0), ErrorCode::PreconditionFailed);
  CHECK_ERROR_CODE(idx.top_k(EmbeddingVector{{1, 0, 0}}, 1), ErrorCode::DimMismatch);
  CHECK_ERROR_CODE(idx.add("a", EmbeddingVector{{0, 1}}), ErrorCode::DuplicateId);
  CHECK_ERROR_CODE(idx.add("x y", EmbeddingVector{{0, 1}}), ErrorCode::MalformedRecord);
  CHECK_ERROR_CODE(idx.add("z", EmbeddingVector{{0, 1, 2}}), ErrorCode::DimMismatch);
}

TEST_CASE("property: top_k equals brute force and the serial reference") {
  std::mt19937 rng(42);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t dim = 4 + rng() % 30, n = 1 + rng() % 200;
    VectorIndex idx(dim);
    std::vector<std::pair<std::string, EmbeddingVector>> items;
    for (std::size_t i = 0; i < n; ++i) {
      auto v = random_unit(rng, dim);
      // Duplicate vectors now and then to exercise tie-breaking.
      if (i > 0 && rng() % 5 == 0) v = items[rng() % items.size()].second;
      items.emplace_back("k" + std::to_string(rng() % 100000) + "-" + std::to_string(i), v);
      idx.add(items.back().first, v);
    }
    for (int q = 0; q < 10; ++q) {
      const auto query = random_unit(rng, dim);
      const std::size_t k = 1 + rng() % 10;
      const auto got = idx.top_k(query, k);
      const auto want = brute_force(items, query, k);
      REQUIRE(got.size() == want.size());
      for (std::size_t i = 0; i < got.size(); ++i) {
        CHECK(got[i].key == want[i].first);
        CHECK(got[i].score == doctest::Approx(want[i].second).epsilon(1e-12));
        CHECK(got[i].rank == i + 1);
      }
      CHECK(got == idx.top_k_serial(query, k));
    }
  }
}

TEST_CASE("parallel and serial builds agree on the sample knowledge base") {
  const auto kb = kb::load_dataset(testing::source_path("data/sample_kb.jsonl"));
  const auto items = agent::index_items(kb);
  REQUIRE(items.size() == kb.size());
  CHECK(items[0].second == kb.entries()[0].question);
  HashEmbedder e(128);
  const auto a = VectorIndex::build(items, e);
  const auto b = VectorIndex::build_serial(items, e);
  CHECK(a.serialize() == b.serialize());
  CHECK(a.keys() == b.keys());
}

TEST_CASE("save and parse round-trip exactly") {
  std::mt19937 rng(8);
  VectorIndex idx(6);
  for (int i = 0; i < 20; ++i) idx.add("id-" + std::to_string(i), random_unit(rng, 6));
  const auto again = VectorIndex::parse(idx.serialize());
  CHECK(again.keys() == idx.keys());
  for (std::size_t i = 0; i < idx.size(); ++i) CHECK(again.vector(i) == idx.vector(i));
}

TEST_CASE("vector file errors carry the line number") {
  auto err = testing::capture_error([] { VectorIndex::parse("a 1 0\nb 1 x\n"); });
  CHECK(err.code() == ErrorCode::MalformedRecord);
  CHECK(err.line() == std::optional<std::size_t>(2));

  err = testing::capture_error([] { VectorIndex::parse("a 1 0\n\nb 1 0 0\n"); });
  CHECK(err.code() == ErrorCode::DimMismatch);
  CHECK(err.line() == std::optional<std::size_t>(3));

  err = testing::capture_error([] { VectorIndex::parse("a 1 0\na 0 1\n"); });
  CHECK(err.code() == ErrorCode::DuplicateId);
  CHECK_ERROR_CODE(VectorIndex::parse("\n\n"), ErrorCode::EmptyIndex);
}
