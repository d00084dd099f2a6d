#include "ftr/error.hpp"

namespace ftr {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedRecord: return "MalformedRecord";
    case ErrorCode::UnknownLabel: return "UnknownLabel";
    case ErrorCode::SpanOutOfBounds: return "SpanOutOfBounds";
    case ErrorCode::InsufficientSupport: return "InsufficientSupport";
    case ErrorCode::InsufficientNegatives: return "InsufficientNegatives";
    case ErrorCode::TargetTooSmall: return "TargetTooSmall";
    case ErrorCode::UnknownSentence: return "UnknownSentence";
    case ErrorCode::WrongTask: return "WrongTask";
    case ErrorCode::BadEdges: return "BadEdges";
    case ErrorCode::BadDistribution: return "BadDistribution";
    case ErrorCode::DuplicateSample: return "DuplicateSample";
    case ErrorCode::SampleMismatch: return "SampleMismatch";
    case ErrorCode::SchemaMismatch: return "SchemaMismatch";
    case ErrorCode::MissingSample: return "MissingSample";
    case ErrorCode::EmptyValidation: return "EmptyValidation";
    case ErrorCode::MissingTemplate: return "MissingTemplate";
    case ErrorCode::MarkerCollision: return "MarkerCollision";
    case ErrorCode::BadVariant: return "BadVariant";
    case ErrorCode::MissingEmbedding: return "MissingEmbedding";
    case ErrorCode::PoolTooSmall: return "PoolTooSmall";
    case ErrorCode::EndpointUnreachable: return "EndpointUnreachable";
    case ErrorCode::ContextTooLong: return "ContextTooLong";
    case ErrorCode::AuthFailure: return "AuthFailure";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

ErrorClass classify(ErrorCode code) {
  switch (code) {
    case ErrorCode::EndpointUnreachable:
    case ErrorCode::ContextTooLong:
    case ErrorCode::AuthFailure:
      return ErrorClass::Endpoint;
    case ErrorCode::ConfigError:
    case ErrorCode::BadVariant:
    case ErrorCode::BadEdges:
      return ErrorClass::Config;
    default:
      return ErrorClass::Data;
  }
}

}  // namespace ftr
