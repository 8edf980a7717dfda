#pragma once

#include <filesystem>
#include <string>

#include "molly/agent.hpp"
#include "molly/index.hpp"
#include "molly/kb.hpp"
#include "molly/llm.hpp"

namespace testing {

// Sample KB, its question index, and a mock backend replaying one playbook.
struct Pipeline {
  molly::kb::KnowledgeBase kb;
  molly::index::HashEmbedder embedder{256};
  molly::index::VectorIndex index{256};
  molly::llm::MockBackend backend;
  molly::llm::TemplateStore templates;

  Pipeline(const std::filesystem::path& source_dir, const std::string& playbook)
      : kb(molly::kb::load_dataset(source_dir / "data/sample_kb.jsonl")),
        index(molly::index::VectorIndex::build(molly::agent::index_items(kb), embedder)),
        backend(molly::llm::Playbook::load(source_dir / "data/playbooks" / (playbook + ".jsonl"))) {
  }

  molly::agent::PipelineContext context() { return {kb, index, embedder, backend, templates}; }

  molly::agent::SessionTranscript run(const std::string& question,
                                      const molly::agent::AgentConfig& config = {},
                                      const molly::agent::StageObserver& observer = {}) {
    return molly::agent::run_session("s-test", question, config, context(), observer,
                                     molly::agent::frozen_clock());
  }
};

}  // namespace testing
