#pragma once

#include <stdexcept>
#include <string>

namespace masr {

// Every failure surfaced by the library carries one of these categories.
// The CLI maps them onto its "error[<category>]: ..." exit messages.
enum class ErrorCategory {
  Shape,      // operand dimensions disagree
  Index,      // out-of-range index
  Config,     // invalid configuration value
  Parse,      // malformed input file (message names the line)
  Schema,     // well-formed file violating a data invariant
  Collision,  // label declared by more than one source
  Ingestion,  // record references an undeclared source or label
  Contract,   // caller broke an operation precondition
  Report,     // report requested on unusable data (e.g. empty corpus)
  Numeric,    // non-finite value where one is not allowed
  Io,         // filesystem failure
};

inline const char* to_string(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::Shape: return "shape";
    case ErrorCategory::Index: return "index";
    case ErrorCategory::Config: return "config";
    case ErrorCategory::Parse: return "parse";
    case ErrorCategory::Schema: return "schema";
    case ErrorCategory::Collision: return "collision";
    case ErrorCategory::Ingestion: return "ingestion";
    case ErrorCategory::Contract: return "contract";
    case ErrorCategory::Report: return "report";
    case ErrorCategory::Numeric: return "numeric";
    case ErrorCategory::Io: return "io";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& message)
      : std::runtime_error(message), category_(category) {}

  ErrorCategory category() const { return category_; }

 private:
  ErrorCategory category_;
};

}  // namespace masr
