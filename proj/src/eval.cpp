#include "molly/eval.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <exception>
#include <sstream>
#include <unordered_map>

#include "molly/error.hpp"
#include "molly/text.hpp"

namespace molly::eval {

namespace {

void check_component(const char* name, double v) {
  if (!std::isfinite(v) || v < 0.0 || v > 100.0) {
    throw Error(ErrorCode::OutOfRange, name, text::format_fixed(v, 4) + " is outside [0, 100]");
  }
}

std::optional<double> parse_number(std::string_view s) {
  s = text::trim(s);
  // Tolerate "85/100" and "85 points": take the leading number.
  std::size_t end = 0;
  while (end < s.size() && (std::isdigit(static_cast<unsigned char>(s[end])) || s[end] == '.' ||
                            (end == 0 && (s[end] == '-' || s[end] == '+')))) {
    ++end;
  }
  if (end == 0) return std::nullopt;
  auto num = s.substr(0, end);
  if (num.front() == '+') num.remove_prefix(1);
  double v = 0;
  auto [ptr, ec] = std::from_chars(num.data(), num.data() + num.size(), v);
  if (ec != std::errc() || ptr != num.data() + num.size()) return std::nullopt;
  return v;
}

std::string last_nonblank_line(std::string_view s) {
  auto lines = text::split_lines(s);
  for (auto it = lines.rbegin(); it != lines.rend(); ++it) {
    if (!text::is_blank(*it)) return std::string(text::trim(*it));
  }
  return {};
}

template <typename Label>
KappaResult kappa_impl(std::span<const Label> a, std::span<const Label> b) {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::LengthMismatch, "ratings",
                std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  }
  if (a.empty()) throw Error(ErrorCode::LengthMismatch, "ratings", "no rated items");

  // Integer counts keep the result exact and independent of label order.
  std::map<Label, std::pair<std::uint64_t, std::uint64_t>> marginals;
  std::uint64_t agree = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] == b[i]) ++agree;
    ++marginals[a[i]].first;
    ++marginals[b[i]].second;
  }
  std::uint64_t chance = 0;
  for (const auto& [label, counts] : marginals) chance += counts.first * counts.second;

  const auto n = static_cast<std::uint64_t>(a.size());
  KappaResult r;
  r.n = a.size();
  r.observed_agreement = static_cast<double>(agree) / static_cast<double>(n);
  r.expected_agreement = static_cast<double>(chance) / (static_cast<double>(n) * n);
  if (chance == n * n) {
    if (agree != n) {
      throw Error(ErrorCode::DegenerateMarginals, "ratings",
                  "expected agreement is 1 but observed agreement is not");
    }
    r.kappa = 1.0;
    return r;
  }
  r.kappa = (r.observed_agreement - r.expected_agreement) / (1.0 - r.expected_agreement);
  return r;
}

}  // namespace

double overall_score(double ac, double ea, double uf) {
  check_component("AC", ac);
  check_component("EA", ea);
  check_component("UF", uf);
  return kWeightAC * ac + kWeightEA * ea + kWeightUF * uf;
}

double score_overall(double ac, double ea, double uf) {
  return text::round_half_up(overall_score(ac, ea, uf), 2);
}

std::string_view to_string(Band b) {
  switch (b) {
    case Band::Excellent: return "Excellent";
    case Band::Good: return "Good";
    case Band::Average: return "Average";
    case Band::Poor: return "Poor";
  }
  return "Poor";
}

Band band(double overall) {
  check_component("overall", overall);
  if (overall >= 90.0) return Band::Excellent;
  if (overall >= 80.0) return Band::Good;
  // The 70-80 range has no band of its own and is folded into Average.
  if (overall >= 60.0) return Band::Average;
  return Band::Poor;
}

RubricScore make_score(double ac, double ea, double uf) {
  RubricScore s;
  s.ac = ac;
  s.ea = ea;
  s.uf = uf;
  s.overall = overall_score(ac, ea, uf);
  s.grade = band(text::round_half_up(s.overall, 2));
  return s;
}

nlohmann::ordered_json to_json(const RubricScore& s) {
  nlohmann::ordered_json j;
  j["ac"] = s.ac;
  j["ea"] = s.ea;
  j["uf"] = s.uf;
  j["overall"] = text::round_half_up(s.overall, 2);
  j["band"] = to_string(s.grade);
  return j;
}

std::optional<std::array<double, 3>> parse_judge_scores(std::string_view reply) {
  auto fields = text::parse_keyed_fields(reply, {"AC", "EA", "UF"});
  std::array<double, 3> out{};
  const char* keys[] = {"AC", "EA", "UF"};
  for (int i = 0; i < 3; ++i) {
    auto it = fields.find(keys[i]);
    if (it == fields.end()) return std::nullopt;
    auto v = parse_number(it->second);
    if (!v) return std::nullopt;
    out[i] = *v;
  }
  return out;
}

RubricScore judge(std::string_view question, std::string_view candidate,
                  std::string_view reference, llm::Backend& backend,
                  const llm::TemplateStore& templates) {
  const std::map<std::string, std::string> vars = {{"question", std::string(question)},
                                                    {"reference", std::string(reference)},
                                                    {"candidate", std::string(candidate)}};
  const auto system = templates.render("judge_system", {});
  auto user = templates.render("judge", vars);
  for (int attempt = 0; attempt < 2; ++attempt) {
    if (attempt == 1) user += "\n\n" + templates.render("format_reminder", {});
    const auto reply = backend.complete(llm::make_request(llm::StageTag::Judge, system, user));
    if (auto scores = parse_judge_scores(reply)) {
      return make_score((*scores)[0], (*scores)[1], (*scores)[2]);
    }
  }
  throw Error(ErrorCode::MalformedJudgeOutput, "judge", "no AC/EA/UF block after one retry");
}

std::vector<std::string> extract_code_blocks(std::string_view answer) {
  std::vector<std::string> out;
  for (auto& block : text::scan_fences(answer)) out.push_back(std::move(block.body));
  return out;
}

std::string_view to_string(CodeMode mode) {
  return mode == CodeMode::Execution ? "execution" : "judge";
}

CodeMode parse_code_mode(std::string_view name) {
  if (name == "execution") return CodeMode::Execution;
  if (name == "judge") return CodeMode::Judge;
  throw Error(ErrorCode::InvalidConfig, "code_mode", "expected execution or judge, got " +
                                                         std::string(name));
}

nlohmann::ordered_json to_json(const CodeOutcome& o) {
  nlohmann::ordered_json j;
  j["snippet_index"] = o.snippet_index;
  j["verdict"] = o.verdict;
  j["mode"] = to_string(o.mode);
  j["detail"] = o.detail;
  return j;
}

CodeOutcome check_code(std::string_view snippet, CodeMode mode, const CodeLimits& limits,
                       const CodeJudge* judge_ctx, std::size_t snippet_index) {
  CodeOutcome out;
  out.snippet_index = snippet_index;
  out.mode = mode;

  if (mode == CodeMode::Judge) {
    if (judge_ctx == nullptr) {
      throw Error(ErrorCode::PreconditionFailed, "code_mode", "judge mode needs a backend");
    }
    const auto system = judge_ctx->templates.render("judge_system", {});
    auto user = judge_ctx->templates.render(
        "code_judge", {{"question", judge_ctx->question}, {"snippet", std::string(snippet)}});
    for (int attempt = 0; attempt < 2; ++attempt) {
      if (attempt == 1) user += "\n\n" + judge_ctx->templates.render("format_reminder", {});
      const auto reply =
          judge_ctx->backend.complete(llm::make_request(llm::StageTag::Judge, system, user));
      auto fields = text::parse_keyed_fields(reply, {"CORRECT"});
      auto it = fields.find("CORRECT");
      if (it == fields.end()) continue;
      auto value = std::string(text::trim(it->second));
      std::transform(value.begin(), value.end(), value.begin(),
                     [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
      if (value.rfind("YES", 0) == 0 || value.rfind("NO", 0) == 0) {
        out.verdict = value[0] == 'Y' ? 1 : 0;
        out.detail = "judge: " + value.substr(0, value[0] == 'Y' ? 3 : 2);
        return out;
      }
    }
    throw Error(ErrorCode::MalformedJudgeOutput, "code_judge", "no CORRECT line after one retry");
  }

  const auto interpreter = sandbox::find_executable(limits.interpreter_path);
  if (interpreter.empty()) {
    throw Error(ErrorCode::InterpreterMissing, limits.interpreter_path, "not found or not executable");
  }
  sandbox::TempDir dir;
  kb::write_file(dir.path() / "snippet.py", std::string(snippet) + "\n");
  const auto result = sandbox::run({interpreter.string(), "snippet.py"}, dir.path(), limits.sandbox);
  if (result.timed_out) {
    const auto ms = limits.sandbox.timeout.count();
    out.detail = ms % 1000 == 0 ? "timeout after " + std::to_string(ms / 1000) + " s"
                                : "timeout after " + std::to_string(ms) + " ms";
    return out;
  }
  if (result.succeeded()) {
    out.verdict = 1;
    out.detail = "exit 0";
    return out;
  }
  auto why = last_nonblank_line(result.stderr_text);
  if (why.empty()) {
    why = result.signal != 0 ? "killed by signal " + std::to_string(result.signal)
                             : "exit " + std::to_string(result.exit_code);
  }
  out.detail = why;
  return out;
}

KappaResult cohen_kappa(std::span<const std::string> a, std::span<const std::string> b) {
  return kappa_impl(a, b);
}

KappaResult cohen_kappa(std::span<const int> a, std::span<const int> b) {
  return kappa_impl(a, b);
}

PipelineAnswerSource::PipelineAnswerSource(agent::PipelineContext context,
                                           agent::AgentConfig config)
    : context_(context), config_(std::move(config)) {
  config_.validate();
}

std::string PipelineAnswerSource::answer(const kb::QAEntry& item) {
  auto t = agent::run_session("eval-" + item.id, item.question, config_, context_);
  if (t.aborted) throw std::runtime_error(t.error);
  return t.final_answer;
}

BaselineAnswerSource::BaselineAnswerSource(llm::Backend& backend,
                                           const llm::TemplateStore& templates)
    : backend_(backend), templates_(templates) {}

std::string BaselineAnswerSource::answer(const kb::QAEntry& item) {
  return backend_.complete(llm::make_request(llm::StageTag::Generation,
                                             templates_.render("generation_system", {}),
                                             templates_.render("base_qa", {{"question", item.question}})));
}

RecordedAnswerSource::RecordedAnswerSource(std::map<std::string, std::string> answers)
    : answers_(std::move(answers)) {}

RecordedAnswerSource RecordedAnswerSource::load(const std::filesystem::path& path) {
  const auto content = kb::read_file(path);
  std::map<std::string, std::string> answers;
  std::size_t line_no = 0;
  for (auto line : text::split_lines(content)) {
    ++line_no;
    if (text::is_blank(line)) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::MalformedRecord, path.string(), e.what(), line_no);
    }
    if (!j.is_object()) {
      throw Error(ErrorCode::MalformedRecord, path.string(), "expected a JSON object", line_no);
    }
    std::string id;
    if (j.contains("id") && j["id"].is_string()) {
      id = j["id"].get<std::string>();
    } else if (j.contains("session_id") && j["session_id"].is_string()) {
      id = j["session_id"].get<std::string>();
      if (id.rfind("eval-", 0) == 0) id = id.substr(5);
    } else {
      throw Error(ErrorCode::MissingField, "id", "recorded answer has no id", line_no);
    }
    const char* field = j.contains("answer") ? "answer" : "final_answer";
    if (!j.contains(field) || !j[field].is_string()) {
      throw Error(ErrorCode::MissingField, "answer", "recorded answer for " + id + " has no text",
                  line_no);
    }
    if (!answers.emplace(id, j[field].get<std::string>()).second) {
      throw Error(ErrorCode::DuplicateId, id, "recorded twice", line_no);
    }
  }
  return RecordedAnswerSource(std::move(answers));
}

std::string RecordedAnswerSource::answer(const kb::QAEntry& item) {
  auto it = answers_.find(item.id);
  if (it == answers_.end()) {
    throw Error(ErrorCode::MissingField, item.id, "no recorded answer for this item");
  }
  return it->second;
}

nlohmann::ordered_json to_json(const ItemRecord& r) {
  nlohmann::ordered_json j;
  j["id"] = r.id;
  j["ok"] = r.ok;
  if (!r.error.empty()) j["error"] = r.error;
  j["answer"] = r.answer;
  j["score"] = r.score ? to_json(*r.score) : nlohmann::ordered_json(nullptr);
  auto code = nlohmann::ordered_json::array();
  for (const auto& o : r.code) code.push_back(to_json(o));
  j["code"] = std::move(code);
  if (!r.code_error.empty()) j["code_error"] = r.code_error;
  return j;
}

nlohmann::ordered_json to_json(const EvalRow& row) {
  nlohmann::ordered_json j;
  j["system"] = row.system;
  j["n_items"] = row.n_items;
  j["n_scored"] = row.n_scored;
  j["ac"] = text::round_half_up(row.mean_ac, 2);
  j["ea"] = text::round_half_up(row.mean_ea, 2);
  j["uf"] = text::round_half_up(row.mean_uf, 2);
  j["overall"] = text::round_half_up(row.mean_overall, 2);
  j["n_snippets"] = row.n_snippets;
  j["n_correct"] = row.n_correct;
  j["code_accuracy_pct"] = row.code_accuracy_pct
                               ? nlohmann::ordered_json(text::round_half_up(*row.code_accuracy_pct, 2))
                               : nlohmann::ordered_json(nullptr);
  return j;
}

EvalRow aggregate(std::string system, std::span<const ItemRecord> items) {
  EvalRow row;
  row.system = std::move(system);
  row.n_items = items.size();
  for (const auto& it : items) {
    if (it.score) {
      ++row.n_scored;
      row.mean_ac += it.score->ac;
      row.mean_ea += it.score->ea;
      row.mean_uf += it.score->uf;
      row.mean_overall += it.score->overall;
    }
    for (const auto& o : it.code) {
      ++row.n_snippets;
      row.n_correct += static_cast<std::size_t>(o.verdict);
    }
  }
  if (row.n_scored > 0) {
    const auto n = static_cast<double>(row.n_scored);
    row.mean_ac /= n;
    row.mean_ea /= n;
    row.mean_uf /= n;
    row.mean_overall /= n;
  }
  if (row.n_snippets > 0) {
    row.code_accuracy_pct =
        100.0 * static_cast<double>(row.n_correct) / static_cast<double>(row.n_snippets);
  }
  return row;
}

EvalResult evaluate_dataset(std::span<const kb::QAEntry> items, AnswerSource& source,
                            llm::Backend& judge_backend, const llm::TemplateStore& templates,
                            const EvalOptions& options) {
  if (items.empty()) throw Error(ErrorCode::PreconditionFailed, "items", "nothing to evaluate");
  if (options.parallelism == 0) {
    throw Error(ErrorCode::InvalidConfig, "parallelism", "must be at least 1");
  }

  EvalResult result;
  result.items.resize(items.size());
  const auto n = static_cast<std::ptrdiff_t>(items.size());
  const int threads = static_cast<int>(options.parallelism);

#pragma omp parallel for schedule(dynamic) num_threads(threads)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto& item = items[static_cast<std::size_t>(i)];
    auto& rec = result.items[static_cast<std::size_t>(i)];
    rec.id = item.id;
    try {
      rec.answer = source.answer(item);
      rec.score = judge(item.question, rec.answer, item.answer, judge_backend, templates);
      rec.ok = true;
    } catch (const std::exception& e) {
      rec.error = e.what();
    }
    if (!rec.ok || !item.contains_code) continue;
    try {
      auto snippets = extract_code_blocks(rec.answer);
      if (snippets.empty()) rec.code_error = "answer has no fenced code block";
      const CodeJudge ctx{item.question, judge_backend, templates};
      for (std::size_t s = 0; s < snippets.size(); ++s) {
        rec.code.push_back(check_code(snippets[s], options.code_mode, options.code_limits, &ctx, s));
      }
    } catch (const std::exception& e) {
      rec.code_error = e.what();
    }
  }

  result.row = aggregate(options.system_name.empty() ? source.name() : options.system_name,
                         result.items);
  return result;
}

std::string render_report_table(std::span<const EvalRow> rows) {
  const std::vector<std::string> header = {"Method", "AC", "EA", "UF", "Overall Score",
                                           "Code Accuracy (%)"};
  std::vector<std::vector<std::string>> table = {header};
  for (const auto& r : rows) {
    table.push_back({r.system, text::format_fixed(r.mean_ac), text::format_fixed(r.mean_ea),
                     text::format_fixed(r.mean_uf), text::format_fixed(r.mean_overall),
                     r.code_accuracy_pct ? text::format_fixed(*r.code_accuracy_pct) : "-"});
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& row : table) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      width[c] = std::max(width[c], text::length(row[c]));
    }
  }
  std::ostringstream out;
  auto emit = [&](const std::vector<std::string>& row) {
    out << '|';
    for (std::size_t c = 0; c < row.size(); ++c) {
      out << ' ' << row[c] << std::string(width[c] - text::length(row[c]), ' ') << " |";
    }
    out << '\n';
  };
  emit(table.front());
  out << '|';
  for (auto w : width) out << std::string(w + 2, '-') << '|';
  out << '\n';
  for (std::size_t r = 1; r < table.size(); ++r) emit(table[r]);
  return out.str();
}

}  // namespace molly::eval
