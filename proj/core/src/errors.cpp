#include "fjd/errors.hpp"

namespace fjd {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidInput: return "invalid-input";
    case ErrorKind::InvalidTemperature: return "invalid-temperature";
    case ErrorKind::InsufficientTokens: return "insufficient-tokens";
    case ErrorKind::InvalidThreshold: return "invalid-threshold";
    case ErrorKind::InconsistentLogprobs: return "inconsistent-logprobs";
    case ErrorKind::InvalidRequest: return "invalid-request";
    case ErrorKind::MissingRecord: return "missing-record";
    case ErrorKind::ParseError: return "parse-error";
    case ErrorKind::BackendUnavailable: return "backend-unavailable";
    case ErrorKind::UnsupportedEndpoint: return "unsupported-endpoint";
    case ErrorKind::RetryExhausted: return "retry-exhausted";
    case ErrorKind::DegenerateDataset: return "degenerate-dataset";
    case ErrorKind::InvalidBudget: return "invalid-budget";
    case ErrorKind::InvalidToken: return "invalid-token";
    case ErrorKind::InvalidHorizon: return "invalid-horizon";
    case ErrorKind::DegenerateSaliency: return "degenerate-saliency";
    case ErrorKind::IngestError: return "ingest-error";
    case ErrorKind::SchemaError: return "schema-error";
    case ErrorKind::LeakageError: return "leakage-error";
    case ErrorKind::AbortedRun: return "aborted-run";
    case ErrorKind::IoError: return "io-error";
  }
  return "unknown-error";
}

}  // namespace fjd
