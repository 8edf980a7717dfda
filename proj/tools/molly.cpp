// Command-line entry points: ingest, index, ask, eval, stats, serve.

#include <csignal>
#include <iostream>
#include <memory>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "molly/agent.hpp"
#include "molly/config.hpp"
#include "molly/error.hpp"
#include "molly/eval.hpp"
#include "molly/index.hpp"
#include "molly/kb.hpp"
#include "molly/llm.hpp"
#include "molly/service.hpp"
#include "molly/text.hpp"

namespace {

using namespace molly;

// Flags shared by ask and eval; they override the config file and environment.
struct PipelineFlags {
  std::string config_path;
  std::string kb_path;
  std::string index_path;
  std::string backend;
  std::string playbook;
  std::string templates;
  std::string embedder;
  std::size_t dim = 0;
  std::size_t k = 0;
  std::size_t max_iters = 0;
  bool no_perception = false;
  bool no_reflection = false;

  void add_to(CLI::App& cmd, bool kb_required) {
    cmd.add_option("--config", config_path, "Config file (key = value lines)")
        ->check(CLI::ExistingFile);
    auto* kb = cmd.add_option("--kb", kb_path, "Knowledge base (JSON lines)");
    if (kb_required) kb->required();
    cmd.add_option("--index", index_path, "Saved index; built in memory when omitted");
    cmd.add_option("--backend", backend, "mock or live")->check(CLI::IsMember({"mock", "live"}));
    cmd.add_option("--playbook", playbook, "Scripted responses for the mock backend");
    cmd.add_option("--templates", templates, "Directory of prompt template overrides");
    cmd.add_option("--embedder", embedder, "hash or remote")->check(CLI::IsMember({"hash", "remote"}));
    cmd.add_option("--dim", dim, "Hash embedding dimension");
    cmd.add_option("--k", k, "Exemplars retrieved per question");
    cmd.add_option("--max-iters", max_iters, "Refinement rounds after the first critique");
    cmd.add_flag("--no-perception", no_perception, "Skip the role-play perception stage");
    cmd.add_flag("--no-reflection", no_reflection, "Skip critique and refinement");
  }

  config::ServiceConfig resolve() const {
    config::ServiceConfig c;
    if (!config_path.empty()) c = config::load_config(config_path, c);
    c = config::apply_environment(std::move(c), config::process_environment());
    if (!kb_path.empty()) c.kb_path = kb_path;
    if (!index_path.empty()) c.index_path = index_path;
    if (!backend.empty()) c.backend = backend;
    if (!playbook.empty()) c.playbook_path = playbook;
    if (!templates.empty()) c.templates_dir = templates;
    if (!embedder.empty()) c.embedder = embedder;
    if (dim != 0) c.dim = dim;
    if (k != 0) c.k = k;
    if (max_iters != 0) c.max_iters = max_iters;
    if (no_perception) c.perception = false;
    if (no_reflection) c.reflection = false;
    return c;
  }
};

std::unique_ptr<llm::Backend> make_backend(const config::ServiceConfig& c) {
  if (c.backend == "mock") {
    if (c.playbook_path.empty()) {
      throw Error(ErrorCode::InvalidConfig, "playbook", "the mock backend needs --playbook");
    }
    return std::make_unique<llm::MockBackend>(llm::Playbook::load(c.playbook_path));
  }
  return llm::LiveBackend::from_environment();
}

std::unique_ptr<llm::TemplateStore> make_templates(const config::ServiceConfig& c) {
  if (c.templates_dir.empty()) return std::make_unique<llm::TemplateStore>();
  return std::make_unique<llm::TemplateStore>(c.templates_dir, false);
}

index::VectorIndex load_index(const config::ServiceConfig& c, const kb::KnowledgeBase& kb,
                              const index::Embedder& embedder) {
  if (c.index_path.empty()) return index::VectorIndex::build(agent::index_items(kb), embedder);
  auto idx = index::VectorIndex::load(c.index_path);
  if (idx.dim() != embedder.dim()) {
    throw Error(ErrorCode::DimMismatch, c.index_path.string(),
                "index dimension " + std::to_string(idx.dim()) + " but embedder produces " +
                    std::to_string(embedder.dim()));
  }
  return idx;
}

int cmd_ingest(const std::string& input, const std::string& out, const std::string& vocab) {
  const auto kb = kb::load_dataset(input);
  if (!vocab.empty()) {
    for (const auto& w : kb::vocabulary_warnings(kb, kb::load_vocabulary(vocab))) {
      std::cerr << "warning: " << w << "\n";
    }
  }
  kb::save_dataset(kb, out);
  std::cout << "ingested " << kb.size() << " entries into " << out << "\n";
  return 0;
}

int cmd_index(const std::string& kb_path, const std::string& out, const std::string& embedder_kind,
              std::size_t dim) {
  const auto kb = kb::load_dataset(kb_path);
  if (kb.empty()) throw Error(ErrorCode::EmptyKnowledgeBase, kb_path);
  const auto embedder = index::make_embedder(embedder_kind, dim);
  const auto idx = index::VectorIndex::build(agent::index_items(kb), *embedder);
  idx.save(out);
  std::cout << "indexed " << idx.size() << " entries (" << embedder->name() << ") into " << out
            << "\n";
  return 0;
}

int cmd_ask(const std::string& question, const PipelineFlags& flags, bool trace,
            std::string session_id) {
  auto c = flags.resolve();
  if (c.kb_path.empty()) throw Error(ErrorCode::InvalidConfig, "kb", "--kb is required");
  const auto kb = kb::load_dataset(c.kb_path);
  const auto embedder = index::make_embedder(c.embedder, c.dim);
  const auto idx = load_index(c, kb, *embedder);
  auto backend = make_backend(c);
  auto templates = make_templates(c);
  const auto agent_cfg = c.agent_config();
  // Mock runs use a frozen clock so repeated invocations print identical output.
  const auto clock = c.backend == "mock" ? agent::frozen_clock() : agent::steady_clock();
  if (session_id.empty()) session_id = c.backend == "mock" ? "cli" : service::new_session_id();

  const auto t = agent::run_session(session_id, question, agent_cfg,
                                    {kb, idx, *embedder, *backend, *templates}, {}, clock);
  if (trace) {
    std::cout << agent::to_json(t).dump(2) << "\n";
  } else if (!t.aborted) {
    std::cout << t.final_answer << "\n";
  }
  if (t.aborted) {
    std::cerr << "error: " << t.error << "\n";
    return 1;
  }
  return 0;
}

struct EvalFlags {
  std::string items;
  std::string mode = "agent";
  std::string answers;
  std::string report;
  std::string code_mode = "execution";
  std::string interpreter;
  std::size_t timeout_secs = 0;
  std::size_t parallelism = 1;
  std::string system_name;
};

int cmd_eval(const EvalFlags& e, const PipelineFlags& flags) {
  auto c = flags.resolve();
  if (!e.interpreter.empty()) c.interpreter_path = e.interpreter;
  if (e.timeout_secs != 0) c.code_timeout_secs = e.timeout_secs;

  const auto items_kb = kb::load_dataset(e.items);
  if (items_kb.empty()) throw Error(ErrorCode::PreconditionFailed, "items", "nothing to evaluate");
  auto backend = make_backend(c);
  auto templates = make_templates(c);

  std::optional<kb::KnowledgeBase> kb;
  std::unique_ptr<index::Embedder> embedder;
  std::optional<index::VectorIndex> idx;
  std::unique_ptr<eval::AnswerSource> source;
  if (e.mode == "agent") {
    if (c.kb_path.empty()) throw Error(ErrorCode::InvalidConfig, "kb", "agent mode needs --kb");
    kb = kb::load_dataset(c.kb_path);
    embedder = index::make_embedder(c.embedder, c.dim);
    idx = load_index(c, *kb, *embedder);
    source = std::make_unique<eval::PipelineAnswerSource>(
        agent::PipelineContext{*kb, *idx, *embedder, *backend, *templates}, c.agent_config());
  } else if (e.mode == "baseline") {
    source = std::make_unique<eval::BaselineAnswerSource>(*backend, *templates);
  } else {
    if (e.answers.empty()) {
      throw Error(ErrorCode::InvalidConfig, "answers", "recorded mode needs --answers");
    }
    source = std::make_unique<eval::RecordedAnswerSource>(eval::RecordedAnswerSource::load(e.answers));
  }

  eval::EvalOptions opts;
  opts.system_name = e.system_name;
  opts.code_mode = eval::parse_code_mode(e.code_mode);
  opts.code_limits.interpreter_path = c.interpreter_path;
  opts.code_limits.sandbox.timeout = std::chrono::seconds(c.code_timeout_secs);
  opts.parallelism = e.parallelism;

  const auto result =
      eval::evaluate_dataset(items_kb.entries(), *source, *backend, *templates, opts);
  const std::vector<eval::EvalRow> rows = {result.row};
  const auto table = eval::render_report_table(rows);
  std::cout << table;

  if (!e.report.empty()) {
    kb::write_file(e.report, table);
    kb::write_file(e.report + ".json", eval::to_json(result.row).dump(2) + "\n");
    std::string lines;
    for (const auto& r : result.items) lines += eval::to_json(r).dump() + "\n";
    kb::write_file(e.report + ".items.jsonl", lines);
  }

  std::size_t failed = 0;
  for (const auto& r : result.items) {
    if (!r.ok) {
      ++failed;
      std::cerr << "item " << r.id << ": " << r.error << "\n";
    }
  }
  if (failed > 0) {
    std::cerr << "error: " << failed << " of " << result.items.size() << " items could not be scored\n";
    return 1;
  }
  return 0;
}

int cmd_stats(const std::string& kb_path, bool as_json, const std::string& tokenizer) {
  const auto kb = kb::load_dataset(kb_path);
  const auto stats = kb::compute_stats(kb, text::token_counter(tokenizer));
  if (as_json) {
    std::cout << kb::stats_to_json(stats).dump(2) << "\n";
  } else {
    std::cout << kb::render_stats_table(stats);
  }
  return 0;
}

service::Service* g_service = nullptr;

void on_signal(int) {
  if (g_service) g_service->stop();
}

int cmd_serve(const PipelineFlags& flags, std::optional<int> port) {
  auto c = flags.resolve();
  if (port) c.port = *port;
  service::Service svc(c);
  const int bound = svc.bind();
  std::cerr << "listening on http://" << c.host << ":" << bound << "\n";
  g_service = &svc;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  svc.run();
  g_service = nullptr;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"molly: retrieval-augmented Python tutoring agent"};
  app.require_subcommand(1);

  std::string input, out, vocab;
  auto* ingest = app.add_subcommand("ingest", "Validate a QA dataset and write a knowledge base");
  ingest->add_option("--input", input, "Entries as JSON lines")->required();
  ingest->add_option("--out", out, "Output knowledge base")->required();
  ingest->add_option("--vocab", vocab, "Allowed knowledge-point labels, one per line");

  std::string index_kb, index_out, index_embedder = "hash";
  std::size_t index_dim = 256;
  auto* index_cmd = app.add_subcommand("index", "Build the retrieval index");
  index_cmd->add_option("--kb", index_kb)->required();
  index_cmd->add_option("--out", index_out)->required();
  index_cmd->add_option("--embedder", index_embedder)->check(CLI::IsMember({"hash", "remote"}));
  index_cmd->add_option("--dim", index_dim);

  std::string question, session_id;
  bool trace = false;
  PipelineFlags ask_flags;
  auto* ask = app.add_subcommand("ask", "Answer one question end to end");
  ask->add_option("question", question)->required();
  ask_flags.add_to(*ask, false);
  ask->add_flag("--trace", trace, "Print the full session transcript");
  ask->add_option("--session-id", session_id);

  EvalFlags eval_flags;
  PipelineFlags eval_pipeline;
  auto* eval_cmd = app.add_subcommand("eval", "Score a system over evaluation items");
  eval_cmd->add_option("--items", eval_flags.items, "Items with reference answers")->required();
  eval_cmd->add_option("--mode", eval_flags.mode)
      ->check(CLI::IsMember({"agent", "baseline", "recorded"}));
  eval_cmd->add_option("--answers", eval_flags.answers, "Recorded answers (recorded mode)");
  eval_cmd->add_option("--report", eval_flags.report, "Report path; .json and .items.jsonl siblings are written too");
  eval_cmd->add_option("--code-mode", eval_flags.code_mode)
      ->check(CLI::IsMember({"execution", "judge"}));
  eval_cmd->add_option("--interpreter", eval_flags.interpreter, "Interpreter for code snippets");
  eval_cmd->add_option("--code-timeout", eval_flags.timeout_secs, "Seconds per snippet");
  eval_cmd->add_option("--parallelism", eval_flags.parallelism, "Items evaluated concurrently")
      ->check(CLI::PositiveNumber);
  eval_cmd->add_option("--name", eval_flags.system_name, "Method label in the report");
  eval_pipeline.add_to(*eval_cmd, false);

  std::string stats_kb, tokenizer = "cjk";
  bool stats_json = false;
  auto* stats = app.add_subcommand("stats", "Summarize a knowledge base");
  stats->add_option("--kb", stats_kb)->required();
  stats->add_flag("--json", stats_json);
  stats->add_option("--tokenizer", tokenizer)->check(CLI::IsMember({"cjk", "whitespace"}));

  PipelineFlags serve_flags;
  int serve_port = -1;
  auto* serve = app.add_subcommand("serve", "Run the HTTP service");
  serve_flags.add_to(*serve, false);
  serve->add_option("--port", serve_port);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*ingest) return cmd_ingest(input, out, vocab);
    if (*index_cmd) return cmd_index(index_kb, index_out, index_embedder, index_dim);
    if (*ask) return cmd_ask(question, ask_flags, trace, session_id);
    if (*eval_cmd) return cmd_eval(eval_flags, eval_pipeline);
    if (*stats) return cmd_stats(stats_kb, stats_json, tokenizer);
    if (*serve) {
      return cmd_serve(serve_flags, serve_port >= 0 ? std::optional<int>(serve_port) : std::nullopt);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
