#include <array>
#include <utility>

#include "molly/error.hpp"
#include "molly/kb.hpp"
#include "molly/llm.hpp"

namespace molly::llm {

namespace {

// Keep in sync with templates/*.txt (checked by test_llm).
constexpr std::array<std::pair<std::string_view, std::string_view>, 15> kBuiltins{{
    {"base_qa",
     "You are a Python teacher, and I am a Python learner, please answer my question:\n"
     "{question}"},
    {"rag_qa",
     "You are a Python teacher, and I am a Python learner. Please answer my question based on "
     "the retrieved relevant documents. Documents: {documents}. Question: {question}"},
    {"generation_system",
     "You are Molly, a Python programming tutor. Answer accurately and include runnable "
     "examples where they help the learner."},
    {"perception_teacher_system",
     "You are an experienced Python teacher. Given a learner's question, identify which "
     "knowledge points and which angles of approach can resolve it. Do not answer the question "
     "directly."},
    {"perception_teacher",
     "Learner question:\n{question}\n{feedback}\n"
     "List the relevant knowledge points and the angles from which the question can be solved. "
     "Do not give the final answer."},
    {"perception_student_system",
     "You are a Python learner with some programming experience. From the asker's point of "
     "view, you judge whether a teacher's analysis would help resolve a question."},
    {"perception_student",
     "Question:\n{question}\n\nTeacher's analysis:\n{analysis}\n\n"
     "Decide whether the analysis effectively addresses the question. Reply using exactly "
     "these lines:\n"
     "ADDRESSES: YES or NO\n"
     "CRITIQUE: what is missing, or none\n"
     "SUMMARY: a concise note-style summary of the teacher's analysis, at most {summary_cap} "
     "characters"},
    {"reflection_critic_system",
     "You review answers written by a Python tutor. Check them against the human expert "
     "answers you are given."},
    {"reflection_critic",
     "Question:\n{question}\n\nHuman expert answers to related questions:\n{exemplars}\n\n"
     "Candidate answer:\n{draft}\n\n"
     "Evaluate the candidate answer in phases. First check content rationality: is the "
     "explanation accurate and consistent with the expert answers? Then check code "
     "correctness: does every code example run and do what the text claims? Finally check "
     "answer usefulness: does it resolve the learner's question?\n"
     "Reply using exactly these lines:\n"
     "RATIONALITY: PASS or FAIL, then a short comment\n"
     "CODE: PASS or FAIL, then a short comment\n"
     "USEFULNESS: PASS or FAIL, then a short comment\n"
     "INSTRUCTIONS: concrete revision instructions, empty when all pass"},
    {"reflection_refiner_system",
     "You are a Python tutor revising your own answer after review."},
    {"reflection_refiner",
     "Question:\n{question}\n\nHuman expert answers to related questions:\n{exemplars}\n\n"
     "Your previous answer:\n{draft}\n\nReview findings:\n{findings}\n\n"
     "Revision instructions:\n{instructions}\n\n"
     "Write the complete revised answer. Keep what was correct, fix what the review found and "
     "stay consistent with the expert answers."},
    {"judge_system", "You grade answers to Python programming questions written for learners."},
    {"judge",
     "Question:\n{question}\n\nReference answer written by a human expert:\n{reference}\n\n"
     "Candidate answer:\n{candidate}\n\n"
     "Score the candidate from 0 to 100 on each dimension:\n"
     "AC (Answer Correctness): technical accuracy and rigor of the answer\n"
     "EA (Expressive Ability): logical organization and expressiveness of language\n"
     "UF (Usefulness): whether the content of the answer solves the problem\n"
     "Reply using exactly these lines:\n"
     "AC: <score>\nEA: <score>\nUF: <score>"},
    {"code_judge",
     "Question:\n{question}\n\nCode snippet:\n```\n{snippet}\n```\n\n"
     "Is this code correct for the question? Reply with exactly one line:\n"
     "CORRECT: YES or NO"},
    {"format_reminder",
     "Your previous reply did not follow the required format. Reply again using exactly the "
     "requested lines."},
}};

bool is_ident_start(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_';
}
bool is_ident(char c) { return is_ident_start(c) || (c >= '0' && c <= '9'); }

}  // namespace

std::optional<std::string_view> builtin_template(std::string_view name) {
  for (const auto& [n, body] : kBuiltins) {
    if (n == name) return body;
  }
  return std::nullopt;
}

std::vector<std::string> builtin_template_names() {
  std::vector<std::string> names;
  for (const auto& [n, body] : kBuiltins) names.emplace_back(n);
  return names;
}

std::string render_template(std::string_view tmpl,
                            const std::map<std::string, std::string>& variables) {
  std::string out;
  out.reserve(tmpl.size());
  std::size_t i = 0;
  while (i < tmpl.size()) {
    const char c = tmpl[i];
    if (c == '{' && i + 1 < tmpl.size() && tmpl[i + 1] == '{') {
      out.push_back('{');
      i += 2;
      continue;
    }
    if (c == '}' && i + 1 < tmpl.size() && tmpl[i + 1] == '}') {
      out.push_back('}');
      i += 2;
      continue;
    }
    if (c == '{' && i + 1 < tmpl.size() && is_ident_start(tmpl[i + 1])) {
      std::size_t j = i + 1;
      while (j < tmpl.size() && is_ident(tmpl[j])) ++j;
      if (j < tmpl.size() && tmpl[j] == '}') {
        const std::string name(tmpl.substr(i + 1, j - i - 1));
        auto it = variables.find(name);
        if (it == variables.end()) throw Error(ErrorCode::UnboundPlaceholder, name);
        out += it->second;
        i = j + 1;
        continue;
      }
    }
    out.push_back(c);
    ++i;
  }
  return out;
}

TemplateStore::TemplateStore() = default;

TemplateStore::TemplateStore(std::filesystem::path dir, bool hot_reload)
    : dir_(std::move(dir)), hot_reload_(hot_reload) {
  if (!std::filesystem::is_directory(*dir_)) {
    throw Error(ErrorCode::InvalidConfig, dir_->string(), "template directory does not exist");
  }
  reload();
}

void TemplateStore::reload() {
  if (!dir_) return;
  std::lock_guard lock(mutex_);
  files_.clear();
  for (const auto& entry : std::filesystem::directory_iterator(*dir_)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".txt") continue;
    auto body = kb::read_file(entry.path());
    if (!body.empty() && body.back() == '\n') body.pop_back();
    files_[entry.path().stem().string()] = {std::move(body), entry.last_write_time()};
  }
}

std::optional<std::string> TemplateStore::lookup(std::string_view name) const {
  if (dir_) {
    std::lock_guard lock(mutex_);
    const auto path = *dir_ / (std::string(name) + ".txt");
    auto it = files_.find(name);
    if (hot_reload_) {
      std::error_code ec;
      const auto mtime = std::filesystem::last_write_time(path, ec);
      if (!ec && (it == files_.end() || it->second.mtime != mtime)) {
        auto body = kb::read_file(path);
        if (!body.empty() && body.back() == '\n') body.pop_back();
        it = files_.insert_or_assign(std::string(name), FileEntry{std::move(body), mtime}).first;
      } else if (ec && it != files_.end()) {
        files_.erase(it);
        it = files_.end();
      }
    }
    if (it != files_.end()) return it->second.body;
  }
  if (auto b = builtin_template(name)) return std::string(*b);
  return std::nullopt;
}

bool TemplateStore::has(std::string_view name) const { return lookup(name).has_value(); }

std::string TemplateStore::raw(std::string_view name) const {
  auto body = lookup(name);
  if (!body) throw Error(ErrorCode::UnknownTemplate, std::string(name));
  return *body;
}

std::string TemplateStore::render(std::string_view name,
                                  const std::map<std::string, std::string>& variables) const {
  return render_template(raw(name), variables);
}

}  // namespace molly::llm
