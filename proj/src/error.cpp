#include "molly/error.hpp"

namespace molly {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MissingField: return "MissingField";
    case ErrorCode::EmptyField: return "EmptyField";
    case ErrorCode::MalformedRecord: return "MalformedRecord";
    case ErrorCode::DuplicateId: return "DuplicateId";
    case ErrorCode::EmptyKnowledgeBase: return "EmptyKnowledgeBase";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::EmptyText: return "EmptyText";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::EmptyIndex: return "EmptyIndex";
    case ErrorCode::BackendUnavailable: return "BackendUnavailable";
    case ErrorCode::AuthFailure: return "AuthFailure";
    case ErrorCode::UnknownTemplate: return "UnknownTemplate";
    case ErrorCode::UnboundPlaceholder: return "UnboundPlaceholder";
    case ErrorCode::PlaybookExhausted: return "PlaybookExhausted";
    case ErrorCode::MalformedPersonaOutput: return "MalformedPersonaOutput";
    case ErrorCode::UnresolvableId: return "UnresolvableId";
    case ErrorCode::NoExemplars: return "NoExemplars";
    case ErrorCode::MalformedVerdict: return "MalformedVerdict";
    case ErrorCode::Cancelled: return "Cancelled";
    case ErrorCode::OutOfRange: return "OutOfRange";
    case ErrorCode::MalformedJudgeOutput: return "MalformedJudgeOutput";
    case ErrorCode::UnterminatedFence: return "UnterminatedFence";
    case ErrorCode::InterpreterMissing: return "InterpreterMissing";
    case ErrorCode::SandboxSetupFailure: return "SandboxSetupFailure";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::DegenerateMarginals: return "DegenerateMarginals";
    case ErrorCode::PreconditionFailed: return "PreconditionFailed";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

namespace {

std::string compose(ErrorCode code, const std::string& subject, const std::string& message,
                    std::optional<std::size_t> line) {
  std::string out(to_string(code));
  if (!subject.empty()) out += "(" + subject + ")";
  if (line) out += " at line " + std::to_string(*line);
  if (!message.empty()) out += ": " + message;
  return out;
}

}  // namespace

Error::Error(ErrorCode code, std::string subject, std::string message,
             std::optional<std::size_t> line)
    : std::runtime_error(compose(code, subject, message, line)),
      code_(code),
      subject_(std::move(subject)),
      detail_(std::move(message)),
      line_(line) {}

}  // namespace molly
