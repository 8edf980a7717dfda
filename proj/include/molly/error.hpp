#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace molly {

enum class ErrorCode {
  // kb
  MissingField,
  EmptyField,
  MalformedRecord,
  DuplicateId,
  EmptyKnowledgeBase,
  // chunker / configuration
  InvalidConfig,
  // index
  EmptyText,
  DimMismatch,
  EmptyIndex,
  // llm
  BackendUnavailable,
  AuthFailure,
  UnknownTemplate,
  UnboundPlaceholder,
  PlaybookExhausted,
  // agent
  MalformedPersonaOutput,
  UnresolvableId,
  NoExemplars,
  MalformedVerdict,
  Cancelled,
  // eval
  OutOfRange,
  MalformedJudgeOutput,
  UnterminatedFence,
  InterpreterMissing,
  SandboxSetupFailure,
  LengthMismatch,
  DegenerateMarginals,
  // shared
  PreconditionFailed,
  Io,
};

std::string_view to_string(ErrorCode code);

/// Error raised by every molly module. `subject` carries the offending field,
/// id, stage tag or component name; `line` is set for file-level errors.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, std::string subject, std::string message = {},
        std::optional<std::size_t> line = std::nullopt);

  ErrorCode code() const noexcept { return code_; }
  const std::string& subject() const noexcept { return subject_; }
  std::optional<std::size_t> line() const noexcept { return line_; }
  /// The message without the code/subject/line prefix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string subject_;
  std::string detail_;
  std::optional<std::size_t> line_;
};

}  // namespace molly
