#pragma once

#include <stdexcept>
#include <string>

namespace fjd {

// Every failure the engine can raise, one enumerator per contract violation.
// The CLI maps these onto its exit-code classes; tests match on the kind
// rather than on message text.
enum class ErrorKind {
  InvalidInput,
  InvalidTemperature,
  InsufficientTokens,
  InvalidThreshold,
  InconsistentLogprobs,
  InvalidRequest,
  MissingRecord,
  ParseError,
  BackendUnavailable,
  UnsupportedEndpoint,
  RetryExhausted,
  DegenerateDataset,
  InvalidBudget,
  InvalidToken,
  InvalidHorizon,
  DegenerateSaliency,
  IngestError,
  SchemaError,
  LeakageError,
  AbortedRun,
  IoError,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message),
        kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace fjd
