#include "molly/agent.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>

#include "molly/error.hpp"
#include "molly/text.hpp"

namespace molly::agent {

using nlohmann::ordered_json;

void AgentConfig::validate() const {
  if (k == 0) throw Error(ErrorCode::InvalidConfig, "k", "k must be at least 1");
  if (max_perception_rounds == 0) {
    throw Error(ErrorCode::InvalidConfig, "max_perception_rounds", "must be at least 1");
  }
  if (summary_cap == 0) throw Error(ErrorCode::InvalidConfig, "summary_cap", "must be positive");
}

ordered_json to_json(const PerceptionNote& note) {
  return {{"teacher_analysis", note.teacher_analysis},
          {"student_verdict",
           {{"addresses", note.student_verdict.addresses},
            {"critique", note.student_verdict.critique}}},
          {"rounds_used", note.rounds_used},
          {"summary", note.summary}};
}

ordered_json to_json(const ExemplarAnswer& e) {
  return {{"entry_id", e.entry_id}, {"question", e.question}, {"answer", e.answer},
          {"score", e.score}};
}

ordered_json to_json(const Draft& d) {
  return {{"iteration", d.iteration}, {"answer_text", d.answer_text}};
}

namespace {

ordered_json to_json(const DimensionVerdict& d) {
  return {{"pass", d.pass}, {"comment", d.comment}};
}

}  // namespace

ordered_json to_json(const ReflectionVerdict& v) {
  return {{"rationality", to_json(v.rationality)},
          {"code_correctness", to_json(v.code_correctness)},
          {"usefulness", to_json(v.usefulness)},
          {"revision_instructions", v.revision_instructions}};
}

ordered_json to_json(const SessionTranscript& t) {
  ordered_json j;
  j["session_id"] = t.session_id;
  j["question"] = t.question;
  j["perception"] = t.perception ? to_json(*t.perception) : ordered_json(nullptr);
  j["query"] = t.query;
  auto& ex = j["exemplars"] = ordered_json::array();
  for (const auto& e : t.exemplars) ex.push_back(to_json(e));
  auto& drafts = j["drafts"] = ordered_json::array();
  for (const auto& d : t.drafts) drafts.push_back(to_json(d));
  auto& verdicts = j["verdicts"] = ordered_json::array();
  for (const auto& v : t.verdicts) verdicts.push_back(to_json(v));
  j["final_answer"] = t.final_answer;
  j["resolved"] = t.resolved ? ordered_json(*t.resolved) : ordered_json(nullptr);
  j["aborted"] = t.aborted;
  j["error"] = t.error.empty() ? ordered_json(nullptr) : ordered_json(t.error);
  auto& log = j["call_log"] = ordered_json::array();
  for (const auto& r : t.call_log) {
    ordered_json rec = {{"stage_tag", llm::to_string(r.stage)},
                        {"request_digest", r.request_digest},
                        {"response", r.response}};
    if (!r.error.empty()) rec["error"] = r.error;
    log.push_back(std::move(rec));
  }
  auto& timings = j["timings"] = ordered_json::object();
  for (const auto& s : t.timings) timings[s.stage + "_ms"] = s.millis;
  return j;
}

std::string serialize(const SessionTranscript& t) {
  return to_json(t).dump(-1, ' ', false, ordered_json::error_handler_t::replace);
}

std::optional<StudentReply> parse_student_reply(std::string_view reply, bool require_summary) {
  auto fields = text::parse_keyed_fields(reply, {"ADDRESSES", "CRITIQUE", "SUMMARY"});
  auto it = fields.find("ADDRESSES");
  if (it == fields.end()) return std::nullopt;
  std::string verdict = it->second;
  std::transform(verdict.begin(), verdict.end(), verdict.begin(),
                 [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  StudentReply out;
  if (verdict.rfind("YES", 0) == 0) {
    out.addresses = true;
  } else if (verdict.rfind("NO", 0) == 0) {
    out.addresses = false;
  } else {
    return std::nullopt;
  }
  out.critique = fields.count("CRITIQUE") ? fields["CRITIQUE"] : std::string{};
  out.summary = fields.count("SUMMARY") ? fields["SUMMARY"] : std::string{};
  if ((require_summary || out.addresses) && text::is_blank(out.summary)) return std::nullopt;
  return out;
}

namespace {

std::optional<DimensionVerdict> parse_dimension(const std::map<std::string, std::string>& fields,
                                                const std::string& key) {
  auto it = fields.find(key);
  if (it == fields.end()) return std::nullopt;
  std::string_view value = it->second;
  DimensionVerdict d;
  auto upper = [](std::string_view s, std::size_t n) {
    std::string u(s.substr(0, n));
    for (auto& c : u) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return u;
  };
  if (upper(value, 4) == "PASS") {
    d.pass = true;
  } else if (upper(value, 4) == "FAIL") {
    d.pass = false;
  } else {
    return std::nullopt;
  }
  auto rest = text::trim(value.substr(4));
  while (!rest.empty() && (rest.front() == '-' || rest.front() == ',' || rest.front() == ':' ||
                           rest.front() == ';' || rest.front() == '.')) {
    rest = text::trim(rest.substr(1));
  }
  d.comment = std::string(rest);
  return d;
}

}  // namespace

std::optional<ReflectionVerdict> parse_verdict(std::string_view reply) {
  const auto fields =
      text::parse_keyed_fields(reply, {"RATIONALITY", "CODE", "USEFULNESS", "INSTRUCTIONS"});
  auto r = parse_dimension(fields, "RATIONALITY");
  auto c = parse_dimension(fields, "CODE");
  auto u = parse_dimension(fields, "USEFULNESS");
  if (!r || !c || !u) return std::nullopt;
  ReflectionVerdict v{*r, *c, *u, {}};
  if (v.all_pass()) return v;
  auto it = fields.find("INSTRUCTIONS");
  if (it != fields.end()) v.revision_instructions = it->second;
  if (text::is_blank(v.revision_instructions)) {
    std::string synthesized;
    auto add = [&](const char* name, const DimensionVerdict& d) {
      if (d.pass) return;
      if (!synthesized.empty()) synthesized += '\n';
      synthesized += std::string("Fix ") + name + (d.comment.empty() ? "" : ": " + d.comment);
    };
    add("content rationality", v.rationality);
    add("code correctness", v.code_correctness);
    add("answer usefulness", v.usefulness);
    v.revision_instructions = synthesized;
  }
  return v;
}

namespace {

std::string ask(llm::Backend& backend, const llm::TemplateStore& templates, llm::StageTag stage,
                std::string_view system_template, std::string_view user_template,
                const std::map<std::string, std::string>& vars, bool with_reminder = false) {
  auto user = templates.render(user_template, vars);
  if (with_reminder) user += "\n\n" + templates.render("format_reminder", {});
  return backend.complete(llm::make_request(stage, templates.render(system_template, {}), user));
}

std::string truncate_chars(std::string_view s, std::size_t cap) {
  auto cps = text::decode_utf8(s);
  if (cps.size() <= cap) return std::string(s);
  cps.resize(cap);
  return text::encode_utf8(cps);
}

}  // namespace

std::vector<std::pair<std::string, std::string>> index_items(const kb::KnowledgeBase& kb) {
  std::vector<std::pair<std::string, std::string>> items;
  items.reserve(kb.size());
  for (const auto& e : kb.entries()) items.emplace_back(e.id, e.question);
  return items;
}

PerceptionNote perceive(std::string_view question, llm::Backend& backend,
                        const llm::TemplateStore& templates, const AgentConfig& config) {
  if (text::is_blank(question)) {
    throw Error(ErrorCode::PreconditionFailed, "question", "question is empty");
  }
  PerceptionNote note;
  std::string feedback;
  for (std::size_t round = 1; round <= config.max_perception_rounds; ++round) {
    const std::map<std::string, std::string> teacher_vars{{"question", std::string(question)},
                                                          {"feedback", feedback}};
    auto analysis = ask(backend, templates, llm::StageTag::PerceptionTeacher,
                        "perception_teacher_system", "perception_teacher", teacher_vars);
    if (text::is_blank(analysis)) {
      analysis = ask(backend, templates, llm::StageTag::PerceptionTeacher,
                     "perception_teacher_system", "perception_teacher", teacher_vars, true);
      if (text::is_blank(analysis)) {
        throw Error(ErrorCode::MalformedPersonaOutput, "perception_teacher",
                    "teacher produced no analysis");
      }
    }

    const bool final_round = round == config.max_perception_rounds;
    const std::map<std::string, std::string> student_vars{
        {"question", std::string(question)},
        {"analysis", analysis},
        {"summary_cap", std::to_string(config.summary_cap)}};
    auto reply = parse_student_reply(
        ask(backend, templates, llm::StageTag::PerceptionStudent, "perception_student_system",
            "perception_student", student_vars),
        final_round);
    if (!reply) {
      reply = parse_student_reply(
          ask(backend, templates, llm::StageTag::PerceptionStudent, "perception_student_system",
              "perception_student", student_vars, true),
          final_round);
      if (!reply) {
        throw Error(ErrorCode::MalformedPersonaOutput, "perception_student",
                    "student reply lacks the ADDRESSES/SUMMARY fields");
      }
    }

    note.teacher_analysis = analysis;
    note.student_verdict = {reply->addresses, reply->critique};
    note.rounds_used = round;
    note.summary = truncate_chars(reply->summary, config.summary_cap);
    if (reply->addresses) break;
    feedback = "A student reviewer found your previous analysis insufficient: " +
               (reply->critique.empty() ? std::string("no reason given") : reply->critique) +
               "\nRevise your analysis accordingly.";
  }
  return note;
}

std::string build_query(std::string_view question, const PerceptionNote& note) {
  return std::string(question) + "\n" + note.summary;
}

std::vector<ExemplarAnswer> retrieve_exemplars(std::string_view query,
                                               const kb::KnowledgeBase& kb,
                                               const index::VectorIndex& index,
                                               const index::Embedder& embedder, std::size_t k) {
  const auto q = index::embed(query, embedder);
  std::vector<ExemplarAnswer> out;
  for (const auto& hit : index.top_k(q, k)) {
    const auto* entry = kb.find(hit.key);
    if (!entry) {
      throw Error(ErrorCode::UnresolvableId, hit.key, "index refers to an entry missing from the KB");
    }
    out.push_back({entry->id, entry->question, entry->answer, std::clamp(hit.score, -1.0, 1.0)});
  }
  return out;
}

std::string format_documents(const std::vector<ExemplarAnswer>& exemplars) {
  std::string out;
  for (std::size_t i = 0; i < exemplars.size(); ++i) {
    if (i > 0) out += "\n\n";
    out += "[" + std::to_string(i + 1) + "] Question: " + exemplars[i].question + "\nAnswer:\n" +
           exemplars[i].answer;
  }
  return out;
}

Draft generate_draft(std::string_view question, const std::vector<ExemplarAnswer>& exemplars,
                     llm::Backend& backend, const llm::TemplateStore& templates,
                     bool empty_exemplar_fallback) {
  std::string answer;
  if (exemplars.empty()) {
    if (!empty_exemplar_fallback) {
      throw Error(ErrorCode::NoExemplars, {}, "retrieval returned nothing and fallback is off");
    }
    answer = ask(backend, templates, llm::StageTag::Generation, "generation_system", "base_qa",
                 {{"question", std::string(question)}});
  } else {
    answer = ask(backend, templates, llm::StageTag::Generation, "generation_system", "rag_qa",
                 {{"question", std::string(question)}, {"documents", format_documents(exemplars)}});
  }
  if (text::is_blank(answer)) {
    throw Error(ErrorCode::BackendUnavailable, "generation", "backend returned an empty answer");
  }
  return Draft{0, std::move(answer)};
}

ReflectionVerdict critique(std::string_view question, const Draft& draft,
                           const std::vector<ExemplarAnswer>& exemplars, llm::Backend& backend,
                           const llm::TemplateStore& templates) {
  const std::map<std::string, std::string> vars{
      {"question", std::string(question)},
      {"exemplars", exemplars.empty() ? std::string("(none)") : format_documents(exemplars)},
      {"draft", draft.answer_text}};
  auto verdict = parse_verdict(ask(backend, templates, llm::StageTag::ReflectionCritic,
                                   "reflection_critic_system", "reflection_critic", vars));
  if (!verdict) {
    verdict = parse_verdict(ask(backend, templates, llm::StageTag::ReflectionCritic,
                                "reflection_critic_system", "reflection_critic", vars, true));
  }
  if (!verdict) {
    throw Error(ErrorCode::MalformedVerdict, "reflection_critic",
                "critic reply lacks RATIONALITY/CODE/USEFULNESS verdict lines");
  }
  return *verdict;
}

Draft refine(std::string_view question, const Draft& draft, const ReflectionVerdict& verdict,
             const std::vector<ExemplarAnswer>& exemplars, llm::Backend& backend,
             const llm::TemplateStore& templates) {
  if (verdict.all_pass()) {
    throw Error(ErrorCode::PreconditionFailed, "verdict", "nothing to refine: all dimensions pass");
  }
  auto line = [](const char* name, const DimensionVerdict& d) {
    return std::string(name) + ": " + (d.pass ? "PASS" : "FAIL") +
           (d.comment.empty() ? "" : " - " + d.comment);
  };
  const std::string findings = line("Content rationality", verdict.rationality) + "\n" +
                               line("Code correctness", verdict.code_correctness) + "\n" +
                               line("Answer usefulness", verdict.usefulness);
  auto answer = ask(
      backend, templates, llm::StageTag::ReflectionRefiner, "reflection_refiner_system",
      "reflection_refiner",
      {{"question", std::string(question)},
       {"exemplars", exemplars.empty() ? std::string("(none)") : format_documents(exemplars)},
       {"draft", draft.answer_text},
       {"findings", findings},
       {"instructions", verdict.revision_instructions}});
  if (text::is_blank(answer)) {
    throw Error(ErrorCode::BackendUnavailable, "reflection_refiner",
                "backend returned an empty answer");
  }
  return Draft{draft.iteration + 1, std::move(answer)};
}

std::string_view to_string(EventKind kind) {
  switch (kind) {
    case EventKind::PerceptionNote: return "perception_note";
    case EventKind::RetrievalResults: return "retrieval_results";
    case EventKind::Draft: return "draft";
    case EventKind::ReflectionVerdict: return "reflection_verdict";
    case EventKind::FinalAnswer: return "final_answer";
    case EventKind::Aborted: return "aborted";
  }
  return "aborted";
}

Clock steady_clock() {
  return [] {
    using namespace std::chrono;
    return duration<double, std::milli>(steady_clock::now().time_since_epoch()).count();
  };
}

Clock frozen_clock() {
  return [] { return 0.0; };
}

SessionTranscript run_session(std::string session_id, std::string_view question,
                              const AgentConfig& config, const PipelineContext& context,
                              const StageObserver& observer, const Clock& clock) {
  SessionTranscript t;
  t.session_id = std::move(session_id);
  t.question = std::string(question);
  llm::SessionBackend backend(context.backend);

  auto emit = [&](EventKind kind, const ordered_json& payload) {
    if (observer && !observer(kind, payload)) {
      throw Error(ErrorCode::Cancelled, std::string(to_string(kind)), "client went away");
    }
  };
  std::string stage = "perception";
  double stage_start = clock();
  auto close_stage = [&](std::string next) {
    const double now = clock();
    t.timings.push_back({stage, now - stage_start});
    stage = std::move(next);
    stage_start = now;
  };

  try {
    config.validate();
    if (text::is_blank(question)) {
      throw Error(ErrorCode::PreconditionFailed, "question", "question is empty");
    }

    if (config.perception) {
      t.perception = perceive(question, backend, context.templates, config);
      t.query = build_query(question, *t.perception);
      close_stage("retrieval");
      emit(EventKind::PerceptionNote, to_json(*t.perception));
    } else {
      t.query = t.question;
      stage = "retrieval";
    }

    t.exemplars = retrieve_exemplars(t.query, context.kb, context.index, context.embedder, config.k);
    close_stage("generation");
    {
      ordered_json payload = {{"query", t.query}, {"exemplars", ordered_json::array()}};
      for (const auto& e : t.exemplars) payload["exemplars"].push_back(to_json(e));
      emit(EventKind::RetrievalResults, payload);
    }

    t.drafts.push_back(generate_draft(question, t.exemplars, backend, context.templates,
                                      config.empty_exemplar_fallback));
    close_stage("reflection");
    emit(EventKind::Draft, to_json(t.drafts.back()));

    if (config.reflection) {
      for (std::size_t iter = 0;; ++iter) {
        t.verdicts.push_back(
            critique(question, t.drafts.back(), t.exemplars, backend, context.templates));
        auto payload = to_json(t.verdicts.back());
        payload["iteration"] = t.drafts.back().iteration;
        emit(EventKind::ReflectionVerdict, payload);
        if (t.verdicts.back().all_pass() || iter == config.max_reflection_iters) break;
        t.drafts.push_back(refine(question, t.drafts.back(), t.verdicts.back(), t.exemplars,
                                  backend, context.templates));
        emit(EventKind::Draft, to_json(t.drafts.back()));
      }
      t.resolved = t.verdicts.back().all_pass();
      close_stage("done");
    } else {
      stage = "done";
    }

    t.final_answer = t.drafts.back().answer_text;
    t.call_log = backend.call_log();
    ordered_json payload = {{"final_answer", t.final_answer},
                            {"resolved", t.resolved ? ordered_json(*t.resolved) : ordered_json()},
                            {"drafts", t.drafts.size()},
                            {"verdicts", t.verdicts.size()}};
    emit(EventKind::FinalAnswer, payload);
  } catch (const std::exception& e) {
    const std::string failed_stage = stage;
    if (stage != "done") close_stage("aborted");
    t.aborted = true;
    t.error = e.what();
    t.resolved.reset();
    if (!t.drafts.empty()) t.final_answer = t.drafts.back().answer_text;
    t.call_log = backend.call_log();
    if (observer) {
      ordered_json payload = {{"error", t.error}, {"stage", failed_stage}};
      if (const auto* err = dynamic_cast<const Error*>(&e)) payload["code"] = to_string(err->code());
      observer(EventKind::Aborted, payload);
    }
  }
  return t;
}

}  // namespace molly::agent
