#pragma once

#include <cstddef>
#include <filesystem>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "molly/text.hpp"

namespace molly::kb {

/// One knowledge-base item: a learner question with its expert answer.
struct QAEntry {
  std::string id;
  std::string question;
  std::string knowledge_point;
  std::string answer;
  bool contains_code = false;  // derived from `answer`, never read from input

  bool operator==(const QAEntry&) const = default;
};

/// Ordered, immutable collection of entries with unique ids.
class KnowledgeBase {
 public:
  KnowledgeBase() = default;
  /// Throws DuplicateId; `first_line` numbers the entries for the message.
  explicit KnowledgeBase(std::vector<QAEntry> entries, std::size_t first_line = 1);

  const std::vector<QAEntry>& entries() const noexcept { return entries_; }
  const std::set<std::string>& vocabulary() const noexcept { return vocabulary_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }

  /// nullptr when the id is unknown.
  const QAEntry* find(std::string_view id) const;

  /// New knowledge base with `extra` appended. Duplicate ids against either
  /// the existing entries or each other raise DuplicateId numbered from
  /// `first_line` of the appended batch.
  KnowledgeBase with_appended(std::vector<QAEntry> extra, std::size_t first_line = 1) const;

 private:
  std::vector<QAEntry> entries_;
  std::unordered_map<std::string, std::size_t> by_id_;
  std::set<std::string> vocabulary_;
};

QAEntry parse_entry(std::string_view record, std::size_t line = 0);
std::string serialize_entry(const QAEntry& entry);

/// Parses newline-delimited records; blank lines are skipped but still count
/// toward line numbers.
std::vector<QAEntry> parse_entries(std::string_view content, std::size_t first_line = 1);
KnowledgeBase parse_dataset(std::string_view content);
KnowledgeBase load_dataset(const std::filesystem::path& path);
void save_dataset(const KnowledgeBase& kb, const std::filesystem::path& path);

/// Allow-list of knowledge-point labels, one per line.
std::set<std::string> load_vocabulary(const std::filesystem::path& path);
/// One warning per entry whose label is outside `allowed`.
std::vector<std::string> vocabulary_warnings(const KnowledgeBase& kb,
                                             const std::set<std::string>& allowed);

struct DatasetStats {
  std::size_t n_entries = 0;
  std::size_t question_len_max = 0;
  std::size_t question_len_min = 0;
  double question_len_avg = 0.0;
  std::size_t answer_tokens_max = 0;
  std::size_t answer_tokens_min = 0;
  double answer_tokens_avg = 0.0;
  std::size_t n_with_code = 0;
};

/// Throws EmptyKnowledgeBase.
DatasetStats compute_stats(const KnowledgeBase& kb,
                           const text::TokenCounter& count = text::count_tokens_cjk);

/// Two-column table using the row labels of the published dataset summary.
std::string render_stats_table(const DatasetStats& stats);
nlohmann::json stats_to_json(const DatasetStats& stats);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view content);

}  // namespace molly::kb
