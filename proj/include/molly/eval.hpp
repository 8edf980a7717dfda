#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "molly/agent.hpp"
#include "molly/kb.hpp"
#include "molly/llm.hpp"
#include "molly/sandbox.hpp"

namespace molly::eval {

inline constexpr double kWeightAC = 0.7;
inline constexpr double kWeightEA = 0.1;
inline constexpr double kWeightUF = 0.2;

/// 0.7*AC + 0.1*EA + 0.2*UF, unrounded. Throws OutOfRange naming the first
/// component outside [0, 100].
double overall_score(double ac, double ea, double uf);
/// overall_score rounded half-up to two decimals, as reported.
double score_overall(double ac, double ea, double uf);

enum class Band { Excellent, Good, Average, Poor };
std::string_view to_string(Band band);

/// Excellent [90,100], Good [80,90), Average [60,80), Poor [0,60).
/// Throws OutOfRange.
Band band(double overall);

struct RubricScore {
  double ac = 0;
  double ea = 0;
  double uf = 0;
  double overall = 0;  // unrounded weighted sum
  Band grade = Band::Poor;  // banded from the reported (rounded) overall
};

/// Computes overall and band locally from the three components.
RubricScore make_score(double ac, double ea, double uf);
nlohmann::ordered_json to_json(const RubricScore& s);

/// AC/EA/UF values from a judge reply; nullopt when any is missing or not a number.
std::optional<std::array<double, 3>> parse_judge_scores(std::string_view reply);

/// Asks the backend to grade `candidate` against the human `reference`.
/// Throws MalformedJudgeOutput after one re-prompt, OutOfRange for scores
/// outside [0, 100].
RubricScore judge(std::string_view question, std::string_view candidate,
                  std::string_view reference, llm::Backend& backend,
                  const llm::TemplateStore& templates);

/// Bodies of all fenced code blocks, language tag stripped, in order.
/// Throws UnterminatedFence.
std::vector<std::string> extract_code_blocks(std::string_view answer);

enum class CodeMode { Execution, Judge };
std::string_view to_string(CodeMode mode);
CodeMode parse_code_mode(std::string_view name);

struct CodeLimits {
  std::string interpreter_path = "python3";
  sandbox::Limits sandbox;
};

struct CodeOutcome {
  std::size_t snippet_index = 0;
  int verdict = 0;  // 1 correct, 0 incorrect
  CodeMode mode = CodeMode::Execution;
  std::string detail;
};
nlohmann::ordered_json to_json(const CodeOutcome& o);

/// What judge mode needs to ask the backend.
struct CodeJudge {
  std::string question;
  llm::Backend& backend;
  const llm::TemplateStore& templates;
};

/// Execution mode runs the snippet with the interpreter in a fresh temp
/// directory; verdict 1 iff it exits successfully, timeouts score 0. Judge
/// mode asks for "CORRECT: YES|NO". Throws InterpreterMissing,
/// SandboxSetupFailure, or PreconditionFailed (judge mode without `judge`).
CodeOutcome check_code(std::string_view snippet, CodeMode mode, const CodeLimits& limits,
                       const CodeJudge* judge = nullptr, std::size_t snippet_index = 0);

struct KappaResult {
  double kappa = 0;
  double observed_agreement = 0;
  double expected_agreement = 0;
  std::size_t n = 0;
};

/// Two-rater Cohen's kappa over categorical labels. Throws LengthMismatch
/// (including empty input) and DegenerateMarginals (p_e = 1 with p_o < 1).
KappaResult cohen_kappa(std::span<const std::string> ratings_a,
                        std::span<const std::string> ratings_b);
KappaResult cohen_kappa(std::span<const int> ratings_a, std::span<const int> ratings_b);

/// A system under evaluation.
class AnswerSource {
 public:
  virtual ~AnswerSource() = default;
  virtual std::string answer(const kb::QAEntry& item) = 0;
  virtual std::string name() const = 0;
};

/// The full agent pipeline; aborted sessions raise their error.
class PipelineAnswerSource final : public AnswerSource {
 public:
  PipelineAnswerSource(agent::PipelineContext context, agent::AgentConfig config);
  std::string answer(const kb::QAEntry& item) override;
  std::string name() const override { return "agent"; }

 private:
  agent::PipelineContext context_;
  agent::AgentConfig config_;
};

/// Plain teacher prompt with no retrieval.
class BaselineAnswerSource final : public AnswerSource {
 public:
  BaselineAnswerSource(llm::Backend& backend, const llm::TemplateStore& templates);
  std::string answer(const kb::QAEntry& item) override;
  std::string name() const override { return "baseline"; }

 private:
  llm::Backend& backend_;
  const llm::TemplateStore& templates_;
};

/// Answers recorded earlier, keyed by item id.
class RecordedAnswerSource final : public AnswerSource {
 public:
  explicit RecordedAnswerSource(std::map<std::string, std::string> answers);
  /// JSON lines with "id" and either "answer" or "final_answer"; stored
  /// transcripts ("session_id" + "final_answer") are accepted too.
  static RecordedAnswerSource load(const std::filesystem::path& path);
  std::string answer(const kb::QAEntry& item) override;
  std::string name() const override { return "recorded"; }

 private:
  std::map<std::string, std::string> answers_;
};

struct ItemRecord {
  std::string id;
  bool ok = false;
  std::string error;  // why the item could not be scored
  std::string answer;
  std::optional<RubricScore> score;
  std::vector<CodeOutcome> code;
  std::string code_error;  // e.g. an unterminated fence in the candidate
};
nlohmann::ordered_json to_json(const ItemRecord& r);

/// One row of the comparison table.
struct EvalRow {
  std::string system;
  std::size_t n_items = 0;
  std::size_t n_scored = 0;
  double mean_ac = 0;
  double mean_ea = 0;
  double mean_uf = 0;
  double mean_overall = 0;
  std::size_t n_snippets = 0;
  std::size_t n_correct = 0;
  std::optional<double> code_accuracy_pct;  // absent when no snippets were checked
};
nlohmann::ordered_json to_json(const EvalRow& row);

struct EvalOptions {
  std::string system_name;
  CodeMode code_mode = CodeMode::Execution;
  CodeLimits code_limits;
  std::size_t parallelism = 1;
};

struct EvalResult {
  EvalRow row;
  std::vector<ItemRecord> items;
};

/// Means over successfully scored items; code accuracy over all checked snippets.
EvalRow aggregate(std::string system, std::span<const ItemRecord> items);

/// Answers, judges and code-checks every item. Per-item failures are kept in
/// the records. Throws PreconditionFailed for an empty item list.
EvalResult evaluate_dataset(std::span<const kb::QAEntry> items, AnswerSource& source,
                            llm::Backend& judge_backend, const llm::TemplateStore& templates,
                            const EvalOptions& options = {});

/// Columns: Method | AC | EA | UF | Overall Score | Code Accuracy (%).
std::string render_report_table(std::span<const EvalRow> rows);

}  // namespace molly::eval
