#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ftr {

enum class ErrorCode {
  // corpus
  MalformedRecord,
  UnknownLabel,
  SpanOutOfBounds,
  InsufficientSupport,
  InsufficientNegatives,
  TargetTooSmall,
  // metrics
  UnknownSentence,
  WrongTask,
  BadEdges,
  // filtering
  BadDistribution,
  DuplicateSample,
  SampleMismatch,
  SchemaMismatch,
  MissingSample,
  EmptyValidation,
  // prompting
  MissingTemplate,
  MarkerCollision,
  BadVariant,
  // retrieval
  MissingEmbedding,
  PoolTooSmall,
  // llm_client
  EndpointUnreachable,
  ContextTooLong,
  AuthFailure,
  // pipeline / io
  ConfigError,
  IoError,
};

std::string_view to_string(ErrorCode code);

// Coarse grouping used for process exit codes.
enum class ErrorClass { Config, Data, Endpoint };
ErrorClass classify(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail)
      : std::runtime_error(std::string(to_string(code)) + ": " + detail),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace ftr
