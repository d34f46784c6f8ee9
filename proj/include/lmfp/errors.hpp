#pragma once

#include <stdexcept>
#include <string>

namespace lmfp {

// Error taxonomy shared by the library and the CLI. Exit codes:
//   0 success, 2 usage/validation, 3 transport, 4 incompatibility, 5 divergence.
enum class ErrorKind {
  validation,       // object violates a type invariant
  parse,            // malformed input stream
  usage,            // bad CLI invocation / missing required input
  capability,       // backend cannot provide what was asked (e.g. logprobs)
  data,             // well-formed input with unusable content
  domain_error,     // argument outside its documented range
  labeling,         // evaluation input references an unlabeled model
  transport,        // network failure after retries
  protocol,         // remote replied with an unusable payload
  incompatibility,  // fingerprints/keys that cannot be compared
  divergence,       // training produced a non-finite loss
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string message)
      : std::runtime_error(std::move(message)), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

  int exit_code() const { return exit_code(kind_); }

  static int exit_code(ErrorKind kind) {
    switch (kind) {
      case ErrorKind::transport:
      case ErrorKind::protocol:
        return 3;
      case ErrorKind::incompatibility:
        return 4;
      case ErrorKind::divergence:
        return 5;
      default:
        return 2;
    }
  }

  static const char* kind_name(ErrorKind kind) {
    switch (kind) {
      case ErrorKind::validation: return "validation";
      case ErrorKind::parse: return "parse";
      case ErrorKind::usage: return "usage";
      case ErrorKind::capability: return "capability";
      case ErrorKind::data: return "data";
      case ErrorKind::domain_error: return "domain";
      case ErrorKind::labeling: return "labeling";
      case ErrorKind::transport: return "transport";
      case ErrorKind::protocol: return "protocol";
      case ErrorKind::incompatibility: return "incompatibility";
      case ErrorKind::divergence: return "divergence";
    }
    return "unknown";
  }

 private:
  ErrorKind kind_;
};

}  // namespace lmfp
