#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "molly/index.hpp"
#include "molly/kb.hpp"
#include "molly/llm.hpp"

namespace molly::agent {

struct AgentConfig {
  bool perception = true;
  bool reflection = true;
  std::size_t k = 3;
  std::size_t max_reflection_iters = 3;
  std::size_t max_perception_rounds = 2;
  std::size_t summary_cap = 400;  // code points
  bool empty_exemplar_fallback = true;

  /// Throws InvalidConfig for zero k, zero perception rounds or zero cap.
  void validate() const;
};

struct StudentVerdict {
  bool addresses = false;
  std::string critique;
};

/// Output of the role-play perception stage.
struct PerceptionNote {
  std::string teacher_analysis;
  StudentVerdict student_verdict;
  std::size_t rounds_used = 0;
  std::string summary;
};

struct ExemplarAnswer {
  std::string entry_id;
  std::string question;
  std::string answer;
  double score = 0.0;
};

struct Draft {
  std::size_t iteration = 0;  // 0 = preliminary answer
  std::string answer_text;
};

struct DimensionVerdict {
  bool pass = false;
  std::string comment;
};

struct ReflectionVerdict {
  DimensionVerdict rationality;
  DimensionVerdict code_correctness;
  DimensionVerdict usefulness;
  std::string revision_instructions;  // empty iff all three pass

  bool all_pass() const {
    return rationality.pass && code_correctness.pass && usefulness.pass;
  }
};

struct StageTiming {
  std::string stage;
  double millis = 0.0;
};

struct SessionTranscript {
  std::string session_id;
  std::string question;
  std::optional<PerceptionNote> perception;  // absent when the stage is disabled
  std::string query;
  std::vector<ExemplarAnswer> exemplars;
  std::vector<Draft> drafts;
  std::vector<ReflectionVerdict> verdicts;
  std::string final_answer;
  std::optional<bool> resolved;  // absent when reflection is disabled or the run aborted early
  bool aborted = false;
  std::string error;
  std::vector<llm::CallRecord> call_log;
  std::vector<StageTiming> timings;
};

nlohmann::ordered_json to_json(const PerceptionNote& note);
nlohmann::ordered_json to_json(const ExemplarAnswer& e);
nlohmann::ordered_json to_json(const Draft& d);
nlohmann::ordered_json to_json(const ReflectionVerdict& v);
nlohmann::ordered_json to_json(const SessionTranscript& t);
/// Canonical single-line serialization; byte-stable for equal transcripts.
std::string serialize(const SessionTranscript& t);

/// Parsed student reply; nullopt when the ADDRESSES line is missing, or the
/// SUMMARY is missing while `require_summary` holds.
struct StudentReply {
  bool addresses = false;
  std::string critique;
  std::string summary;
};
std::optional<StudentReply> parse_student_reply(std::string_view reply, bool require_summary);

/// Parses the RATIONALITY / CODE / USEFULNESS / INSTRUCTIONS block. When any
/// dimension fails without instructions, instructions are assembled from the
/// failing comments; when all pass, instructions are cleared.
std::optional<ReflectionVerdict> parse_verdict(std::string_view reply);

/// Everything one pipeline run reads.
struct PipelineContext {
  const kb::KnowledgeBase& kb;
  const index::VectorIndex& index;
  const index::Embedder& embedder;
  llm::Backend& backend;
  const llm::TemplateStore& templates;
};

/// Teacher/student role play. Throws MalformedPersonaOutput, BackendUnavailable.
PerceptionNote perceive(std::string_view question, llm::Backend& backend,
                        const llm::TemplateStore& templates, const AgentConfig& config = {});

/// `question + "\n" + summary`.
std::string build_query(std::string_view question, const PerceptionNote& note);

/// (id, text) pairs the retrieval index is built from: each entry's question,
/// since learner queries are matched against knowledge-base questions.
std::vector<std::pair<std::string, std::string>> index_items(const kb::KnowledgeBase& kb);

/// Throws UnresolvableId when the index names an entry the KB lacks.
std::vector<ExemplarAnswer> retrieve_exemplars(std::string_view query,
                                               const kb::KnowledgeBase& kb,
                                               const index::VectorIndex& index,
                                               const index::Embedder& embedder,
                                               std::size_t k = 3);

/// Renders exemplars as the documents block of the retrieval prompt.
std::string format_documents(const std::vector<ExemplarAnswer>& exemplars);

/// Throws NoExemplars when `exemplars` is empty and fallback is disabled.
Draft generate_draft(std::string_view question, const std::vector<ExemplarAnswer>& exemplars,
                     llm::Backend& backend, const llm::TemplateStore& templates,
                     bool empty_exemplar_fallback = true);

/// Throws MalformedVerdict after one re-prompt.
ReflectionVerdict critique(std::string_view question, const Draft& draft,
                           const std::vector<ExemplarAnswer>& exemplars, llm::Backend& backend,
                           const llm::TemplateStore& templates);

/// Throws PreconditionFailed when `verdict` passes every dimension.
Draft refine(std::string_view question, const Draft& draft, const ReflectionVerdict& verdict,
             const std::vector<ExemplarAnswer>& exemplars, llm::Backend& backend,
             const llm::TemplateStore& templates);

enum class EventKind {
  PerceptionNote,
  RetrievalResults,
  Draft,
  ReflectionVerdict,
  FinalAnswer,
  Aborted,
};
std::string_view to_string(EventKind kind);

/// Receives each stage result as it completes. Returning false cancels the
/// session, which then aborts at the next stage boundary.
using StageObserver = std::function<bool(EventKind, const nlohmann::ordered_json&)>;

/// Milliseconds from an arbitrary origin.
using Clock = std::function<double()>;
Clock steady_clock();
/// Always returns 0; gives byte-stable transcripts.
Clock frozen_clock();

/// Runs perception, retrieval, drafting and the critique/refine loop. Stage
/// errors never escape: the returned transcript is marked aborted instead.
SessionTranscript run_session(std::string session_id, std::string_view question,
                              const AgentConfig& config, const PipelineContext& context,
                              const StageObserver& observer = {},
                              const Clock& clock = steady_clock());

}  // namespace molly::agent
