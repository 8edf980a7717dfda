#include "molly/kb.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "molly/error.hpp"

namespace molly::kb {

using nlohmann::json;

KnowledgeBase::KnowledgeBase(std::vector<QAEntry> entries, std::size_t first_line) {
  entries_.reserve(entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto& e = entries[i];
    if (!by_id_.emplace(e.id, entries_.size()).second) {
      throw Error(ErrorCode::DuplicateId, e.id, {}, first_line + i);
    }
    vocabulary_.insert(e.knowledge_point);
    entries_.push_back(std::move(e));
  }
}

const QAEntry* KnowledgeBase::find(std::string_view id) const {
  auto it = by_id_.find(std::string(id));
  return it == by_id_.end() ? nullptr : &entries_[it->second];
}

KnowledgeBase KnowledgeBase::with_appended(std::vector<QAEntry> extra,
                                           std::size_t first_line) const {
  std::unordered_map<std::string, std::size_t> seen;
  for (std::size_t i = 0; i < extra.size(); ++i) {
    if (by_id_.count(extra[i].id) || !seen.emplace(extra[i].id, i).second) {
      throw Error(ErrorCode::DuplicateId, extra[i].id, {}, first_line + i);
    }
  }
  std::vector<QAEntry> all = entries_;
  all.insert(all.end(), std::make_move_iterator(extra.begin()),
             std::make_move_iterator(extra.end()));
  return KnowledgeBase(std::move(all));
}

namespace {

std::string required_string(const json& obj, const char* name, std::size_t line) {
  auto it = obj.find(name);
  if (it == obj.end() || it->is_null()) throw Error(ErrorCode::MissingField, name, {}, line);
  if (!it->is_string()) {
    throw Error(ErrorCode::MalformedRecord, name, "field must be a string", line);
  }
  auto value = it->get<std::string>();
  if (text::is_blank(value)) throw Error(ErrorCode::EmptyField, name, {}, line);
  return value;
}

}  // namespace

QAEntry parse_entry(std::string_view record, std::size_t line) {
  json obj;
  try {
    obj = json::parse(record);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::MalformedRecord, "byte " + std::to_string(e.byte), e.what(), line);
  }
  if (!obj.is_object()) {
    throw Error(ErrorCode::MalformedRecord, {}, "record is not a key-value object", line);
  }
  QAEntry entry;
  entry.id = required_string(obj, "id", line);
  entry.question = required_string(obj, "question", line);
  entry.knowledge_point = required_string(obj, "knowledge_point", line);
  entry.answer = required_string(obj, "answer", line);
  entry.contains_code = text::has_fenced_block(entry.answer);
  return entry;
}

std::string serialize_entry(const QAEntry& entry) {
  json obj = {
      {"id", entry.id},
      {"question", entry.question},
      {"knowledge_point", entry.knowledge_point},
      {"answer", entry.answer},
      {"contains_code", entry.contains_code},
  };
  return obj.dump(-1, ' ', false, json::error_handler_t::replace);
}

std::vector<QAEntry> parse_entries(std::string_view content, std::size_t first_line) {
  std::vector<QAEntry> entries;
  auto lines = text::split_lines(content);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (text::is_blank(lines[i])) continue;
    entries.push_back(parse_entry(lines[i], first_line + i));
  }
  return entries;
}

KnowledgeBase parse_dataset(std::string_view content) {
  std::vector<QAEntry> entries;
  std::vector<std::size_t> line_of;
  auto lines = text::split_lines(content);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (text::is_blank(lines[i])) continue;
    entries.push_back(parse_entry(lines[i], i + 1));
    line_of.push_back(i + 1);
  }
  // Report duplicates with their physical line, not their entry ordinal.
  std::unordered_map<std::string, std::size_t> seen;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (!seen.emplace(entries[i].id, i).second) {
      throw Error(ErrorCode::DuplicateId, entries[i].id, {}, line_of[i]);
    }
  }
  return KnowledgeBase(std::move(entries));
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, path.string(), "cannot open file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, path.string(), "cannot open file for writing");
  out << content;
  if (!out) throw Error(ErrorCode::Io, path.string(), "write failed");
}

KnowledgeBase load_dataset(const std::filesystem::path& path) {
  return parse_dataset(read_file(path));
}

void save_dataset(const KnowledgeBase& kb, const std::filesystem::path& path) {
  std::string out;
  for (const auto& e : kb.entries()) {
    out += serialize_entry(e);
    out += '\n';
  }
  write_file(path, out);
}

std::set<std::string> load_vocabulary(const std::filesystem::path& path) {
  std::set<std::string> labels;
  const auto content = read_file(path);
  for (auto line : text::split_lines(content)) {
    auto t = text::trim(line);
    if (!t.empty() && t.front() != '#') labels.emplace(t);
  }
  return labels;
}

std::vector<std::string> vocabulary_warnings(const KnowledgeBase& kb,
                                             const std::set<std::string>& allowed) {
  std::vector<std::string> warnings;
  for (const auto& e : kb.entries()) {
    if (!allowed.count(e.knowledge_point)) {
      warnings.push_back("entry " + e.id + ": knowledge point '" + e.knowledge_point +
                         "' not in vocabulary");
    }
  }
  return warnings;
}

DatasetStats compute_stats(const KnowledgeBase& kb, const text::TokenCounter& count) {
  if (kb.empty()) throw Error(ErrorCode::EmptyKnowledgeBase, {}, "no entries");
  DatasetStats s;
  s.n_entries = kb.size();
  s.question_len_min = s.answer_tokens_min = static_cast<std::size_t>(-1);
  std::size_t q_sum = 0;
  std::size_t a_sum = 0;
  for (const auto& e : kb.entries()) {
    const auto q = count(e.question);
    const auto a = count(e.answer);
    q_sum += q;
    a_sum += a;
    s.question_len_max = std::max(s.question_len_max, q);
    s.question_len_min = std::min(s.question_len_min, q);
    s.answer_tokens_max = std::max(s.answer_tokens_max, a);
    s.answer_tokens_min = std::min(s.answer_tokens_min, a);
    if (e.contains_code) ++s.n_with_code;
  }
  s.question_len_avg = static_cast<double>(q_sum) / static_cast<double>(s.n_entries);
  s.answer_tokens_avg = static_cast<double>(a_sum) / static_cast<double>(s.n_entries);
  return s;
}

std::string render_stats_table(const DatasetStats& s) {
  const std::vector<std::pair<std::string, std::string>> rows = {
      {"Number of dialogues", std::to_string(s.n_entries)},
      {"Longest question length", std::to_string(s.question_len_max)},
      {"Shortest question length", std::to_string(s.question_len_min)},
      {"Average question length", text::format_fixed(s.question_len_avg)},
      {"Max. # tokens per answer", std::to_string(s.answer_tokens_max)},
      {"Min. # tokens per answer", std::to_string(s.answer_tokens_min)},
      {"Avg. # tokens per answer", text::format_fixed(s.answer_tokens_avg)},
      {"Number of answers containing code", std::to_string(s.n_with_code)},
  };
  std::size_t w = 0;
  for (const auto& [k, v] : rows) w = std::max(w, k.size());
  std::string out;
  auto rule = std::string(w + 2, '-') + "+" + std::string(12, '-') + "\n";
  out += rule;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& [k, v] = rows[i];
    out += k + std::string(w - k.size() + 2, ' ') + "| " + v + "\n";
    if (i == 0 || i == 3 || i == 6) out += rule;
  }
  out += rule;
  return out;
}

nlohmann::json stats_to_json(const DatasetStats& s) {
  return {
      {"n_entries", s.n_entries},
      {"question_len_max", s.question_len_max},
      {"question_len_min", s.question_len_min},
      {"question_len_avg", text::round_half_up(s.question_len_avg)},
      {"answer_tokens_max", s.answer_tokens_max},
      {"answer_tokens_min", s.answer_tokens_min},
      {"answer_tokens_avg", text::round_half_up(s.answer_tokens_avg)},
      {"n_with_code", s.n_with_code},
  };
}

}  // namespace molly::kb
