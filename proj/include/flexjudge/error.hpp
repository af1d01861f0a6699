#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace flexjudge {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct PreconditionError : Error {
  using Error::Error;
};

struct SchemaError : Error {
  using Error::Error;
};

struct JsonlError : Error {
  std::size_t line;
  JsonlError(std::size_t line_, const std::string& what)
      : Error("line " + std::to_string(line_) + ": " + what), line(line_) {}
};

enum class ParseErrorCode {
  missing_answer,
  unbalanced_tags,
  arity_mismatch,
  out_of_range,
  non_integer,
  non_numeric,
  unknown_label,
};

inline const char* to_string(ParseErrorCode c) {
  switch (c) {
    case ParseErrorCode::missing_answer: return "MissingAnswer";
    case ParseErrorCode::unbalanced_tags: return "UnbalancedTags";
    case ParseErrorCode::arity_mismatch: return "ArityMismatch";
    case ParseErrorCode::out_of_range: return "OutOfRange";
    case ParseErrorCode::non_integer: return "NonInteger";
    case ParseErrorCode::non_numeric: return "NonNumeric";
    case ParseErrorCode::unknown_label: return "UnknownLabel";
  }
  return "Unknown";
}

struct ParseError : Error {
  ParseErrorCode code;
  ParseError(ParseErrorCode code_, const std::string& detail)
      : Error(std::string(to_string(code_)) + ": " + detail), code(code_) {}
};

enum class MetricErrorCode { length_mismatch, degenerate_variance, empty_after_filter };

inline const char* to_string(MetricErrorCode c) {
  switch (c) {
    case MetricErrorCode::length_mismatch: return "LengthMismatch";
    case MetricErrorCode::degenerate_variance: return "DegenerateVariance";
    case MetricErrorCode::empty_after_filter: return "EmptyAfterFilter";
  }
  return "Unknown";
}

struct MetricError : Error {
  MetricErrorCode code;
  MetricError(MetricErrorCode code_, const std::string& what) : Error(what), code(code_) {}
};

struct TransportError : Error {
  int attempts;
  TransportError(const std::string& what, int attempts_) : Error(what), attempts(attempts_) {}
};

struct ProtocolError : Error {
  using Error::Error;
};

struct UnsupportedCapability : Error {
  using Error::Error;
};

// Raised by the mock backend when no script entry answers a request.
struct UnscriptedRequest : Error {
  std::string body_hash;
  explicit UnscriptedRequest(std::string hash)
      : Error("unscripted mock request, body hash " + hash), body_hash(std::move(hash)) {}
};

struct InsufficientPool : Error {
  std::size_t available;
  std::size_t required;
  InsufficientPool(const std::string& what, std::size_t available_, std::size_t required_)
      : Error(what + ": " + std::to_string(available_) + " qualifying, " + std::to_string(required_) +
              " required"),
        available(available_),
        required(required_) {}
};

struct SegmentationFailure : Error {
  using Error::Error;
};

struct AllSamplesFailed : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

}  // namespace flexjudge
