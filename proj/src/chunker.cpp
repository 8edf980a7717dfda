#include "molly/chunker.hpp"

#include <exception>

#include "json.hpp"
#include "molly/error.hpp"
#include "molly/text.hpp"

namespace molly::chunk {

void ChunkConfig::validate() const {
  if (max_len == 0) throw Error(ErrorCode::InvalidConfig, "max_len", "must be positive");
  if (overlap >= max_len) {
    throw Error(ErrorCode::InvalidConfig, "overlap", "overlap must be smaller than max_len");
  }
  if (delimiters.empty() || !delimiters.back().empty()) {
    throw Error(ErrorCode::InvalidConfig, "delimiters",
                "delimiter list must be non-empty and end with the empty string");
  }
}

namespace {

struct Cut {
  std::size_t end;
  bool forced;
};

// Descends the delimiter list until one occurs inside [start, limit).
Cut find_cut(std::u32string_view source, std::size_t start, std::size_t limit,
             std::span<const std::u32string> delimiters) {
  const auto& delim = delimiters.front();
  if (delim.empty()) return {limit, true};
  const auto window = source.substr(start, limit - start);
  const auto pos = window.rfind(delim);
  if (pos != std::u32string_view::npos) return {start + pos + delim.size(), false};
  return find_cut(source, start, limit, delimiters.subspan(1));
}

}  // namespace

std::vector<Chunk> split_document(std::string_view doc_id, std::string_view source_text,
                                  const ChunkConfig& config) {
  config.validate();
  const auto source = text::decode_utf8(source_text);
  std::vector<std::u32string> delimiters;
  delimiters.reserve(config.delimiters.size());
  for (const auto& d : config.delimiters) delimiters.push_back(text::decode_utf8(d));

  std::vector<Chunk> chunks;
  const std::u32string_view view(source);
  std::size_t start = 0;
  while (start < view.size()) {
    Chunk c;
    c.doc_id = std::string(doc_id);
    c.seq = chunks.size();
    c.start = start;
    std::size_t next = 0;
    if (view.size() - start <= config.max_len) {
      c.end = view.size();
      next = c.end;
    } else {
      const auto cut = find_cut(view, start, start + config.max_len, delimiters);
      c.end = cut.end;
      c.forced = cut.forced;
      next = cut.forced ? cut.end - config.overlap : cut.end;
    }
    c.text = text::encode_utf8(view.substr(c.start, c.end - c.start));
    chunks.push_back(std::move(c));
    start = next;
  }
  return chunks;
}

std::vector<std::vector<Chunk>> split_documents(std::span<const Document> docs,
                                                const ChunkConfig& config) {
  config.validate();
  std::vector<std::vector<Chunk>> out(docs.size());
  const auto n = static_cast<long>(docs.size());
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < n; ++i) {
    try {
      out[i] = split_document(docs[i].id, docs[i].text, config);
    } catch (...) {
#pragma omp critical
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

std::vector<std::vector<Chunk>> split_documents_serial(std::span<const Document> docs,
                                                       const ChunkConfig& config) {
  std::vector<std::vector<Chunk>> out;
  out.reserve(docs.size());
  for (const auto& d : docs) out.push_back(split_document(d.id, d.text, config));
  return out;
}

std::string chunk_to_record(const Chunk& c) {
  nlohmann::json j = {
      {"doc_id", c.doc_id}, {"seq", c.seq}, {"start", c.start}, {"end", c.end}, {"text", c.text},
  };
  return j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
}

}  // namespace molly::chunk
