#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace molly::chunk {

struct ChunkConfig {
  std::size_t max_len = 1000;  // code points
  std::size_t overlap = 100;   // code points, applied after forced splits only
  std::vector<std::string> delimiters{"\n\n", "\n", " ", ""};

  /// Throws InvalidConfig unless 0 <= overlap < max_len and the delimiter
  /// list is non-empty and ends with the empty string.
  void validate() const;
};

struct Chunk {
  std::string doc_id;
  std::size_t seq = 0;
  std::string text;
  std::size_t start = 0;  // code point offsets into the source, [start, end)
  std::size_t end = 0;
  bool forced = false;    // ended by a mid-fragment cut; successor overlaps

  bool operator==(const Chunk&) const = default;
};

struct Document {
  std::string id;
  std::string text;
};

/// Splits one document. Each chunk is the longest prefix of the remaining
/// text that fits in max_len and ends right after an occurrence of the
/// highest-priority delimiter available in that window; delimiters stay with
/// the preceding chunk. When only the empty delimiter is left the window is
/// cut at max_len and the next chunk starts `overlap` code points earlier.
std::vector<Chunk> split_document(std::string_view doc_id, std::string_view text,
                                  const ChunkConfig& config = {});

/// Splits every document; parallel across documents.
std::vector<std::vector<Chunk>> split_documents(std::span<const Document> docs,
                                                const ChunkConfig& config = {});
/// Serial reference for split_documents.
std::vector<std::vector<Chunk>> split_documents_serial(std::span<const Document> docs,
                                                       const ChunkConfig& config = {});

std::string chunk_to_record(const Chunk& c);

}  // namespace molly::chunk
