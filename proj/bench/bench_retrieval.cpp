// Times the OpenMP kernels against their serial references and checks that
// both produce identical output.
//
//   bench_retrieval [entries=5000] [queries=200] [dim=256]

#include <omp.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <random>
#include <string>
#include <vector>

#include "molly/chunker.hpp"
#include "molly/index.hpp"

using namespace molly;
using Clock = std::chrono::steady_clock;

static double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

static std::string random_text(std::mt19937_64& rng, std::size_t words) {
  static const char* vocab[] = {"列表", "字典", "循环", "函数", "异常", "类", "模块",
                                "list", "dict", "for", "def", "try", "except", "import",
                                "print", "range", "yield", "lambda", "with", "open"};
  std::uniform_int_distribution<std::size_t> pick(0, std::size(vocab) - 1);
  std::string out;
  for (std::size_t i = 0; i < words; ++i) {
    if (i) out += (i % 11 == 0) ? "\n\n" : (i % 5 == 0 ? "\n" : " ");
    out += vocab[pick(rng)];
  }
  return out;
}

int main(int argc, char** argv) {
  const std::size_t n_entries = argc > 1 ? std::strtoul(argv[1], nullptr, 10) : 5000;
  const std::size_t n_queries = argc > 2 ? std::strtoul(argv[2], nullptr, 10) : 200;
  const std::size_t dim = argc > 3 ? std::strtoul(argv[3], nullptr, 10) : 256;
  std::printf("threads=%d entries=%zu queries=%zu dim=%zu\n", omp_get_max_threads(), n_entries,
              n_queries, dim);

  std::mt19937_64 rng(7);
  std::vector<std::pair<std::string, std::string>> items;
  for (std::size_t i = 0; i < n_entries; ++i) {
    items.emplace_back("q" + std::to_string(i), random_text(rng, 12));
  }
  const index::HashEmbedder embedder(dim);

  auto t0 = Clock::now();
  const auto serial_idx = index::VectorIndex::build_serial(items, embedder);
  const double build_serial_ms = ms_since(t0);
  t0 = Clock::now();
  const auto parallel_idx = index::VectorIndex::build(items, embedder);
  const double build_parallel_ms = ms_since(t0);
  const bool build_same = serial_idx.serialize() == parallel_idx.serialize();

  std::vector<index::EmbeddingVector> queries;
  for (std::size_t i = 0; i < n_queries; ++i) queries.push_back(embedder.embed(random_text(rng, 6)));

  bool topk_same = true;
  t0 = Clock::now();
  std::vector<std::vector<index::RetrievalResult>> serial_hits;
  for (const auto& q : queries) serial_hits.push_back(serial_idx.top_k_serial(q, 3));
  const double topk_serial_ms = ms_since(t0);
  t0 = Clock::now();
  for (std::size_t i = 0; i < queries.size(); ++i) {
    const auto hits = parallel_idx.top_k(queries[i], 3);
    for (std::size_t j = 0; j < hits.size(); ++j) {
      topk_same = topk_same && hits[j].key == serial_hits[i][j].key &&
                  hits[j].score == serial_hits[i][j].score;
    }
  }
  const double topk_parallel_ms = ms_since(t0);

  std::vector<chunk::Document> docs;
  for (std::size_t i = 0; i < 64; ++i) docs.push_back({"d" + std::to_string(i), random_text(rng, 4000)});
  t0 = Clock::now();
  const auto serial_chunks = chunk::split_documents_serial(docs);
  const double split_serial_ms = ms_since(t0);
  t0 = Clock::now();
  const auto parallel_chunks = chunk::split_documents(docs);
  const double split_parallel_ms = ms_since(t0);
  bool split_same = serial_chunks.size() == parallel_chunks.size();
  for (std::size_t d = 0; split_same && d < docs.size(); ++d) {
    split_same = serial_chunks[d].size() == parallel_chunks[d].size();
    for (std::size_t c = 0; split_same && c < serial_chunks[d].size(); ++c) {
      split_same = serial_chunks[d][c].text == parallel_chunks[d][c].text &&
                   serial_chunks[d][c].start == parallel_chunks[d][c].start;
    }
  }

  std::printf("%-16s %12s %12s %8s %s\n", "kernel", "serial_ms", "parallel_ms", "speedup", "same");
  auto row = [](const char* name, double s, double p, bool same) {
    std::printf("%-16s %12.2f %12.2f %8.2f %s\n", name, s, p, p > 0 ? s / p : 0.0,
                same ? "yes" : "NO");
  };
  row("index_build", build_serial_ms, build_parallel_ms, build_same);
  row("top_k", topk_serial_ms, topk_parallel_ms, topk_same);
  row("split_documents", split_serial_ms, split_parallel_ms, split_same);
  return build_same && topk_same && split_same ? 0 : 1;
}
