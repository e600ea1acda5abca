#pragma once

#include <stdexcept>
#include <string>

namespace dynba {

/// Logarithm requested for a rotation at (or numerically near) pi, where the
/// rotation axis is not unique.
class BranchAmbiguityError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// A factor whose linearization is undefined at the current values, e.g. a
/// rigidity factor whose two points coincide.
class DegenerateGeometryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Structural problems with a factor graph.
class GraphIntegrityError : public std::runtime_error {
 public:
  enum class Code {
    kDuplicateVariable,
    kDanglingReference,
    kKindMismatch,
    kNonSpdCovariance,
    kMissingValue,
    kInvalidFactor,
  };

  GraphIntegrityError(Code code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  Code code() const noexcept { return code_; }

 private:
  Code code_;
};

/// Preconditions of an algorithm are not met (e.g. no gauge anchor).
class PreconditionError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Invalid or unparsable configuration. `field` names the offending entry
/// (dotted path) when known; `line` is 1-based, 0 when not applicable.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& what, std::string field = {}, int line = 0)
      : std::runtime_error(what), field_(std::move(field)), line_(line) {}

  const std::string& field() const noexcept { return field_; }
  int line() const noexcept { return line_; }

 private:
  std::string field_;
  int line_;
};

/// Malformed input file. `line` is 1-based.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& message, int line, const std::string& file = {})
      : std::runtime_error((file.empty() ? "" : file + ":") + "line " +
                           std::to_string(line) + ": " + message),
        message_(message),
        line_(line) {}

  const std::string& message() const noexcept { return message_; }
  int line() const noexcept { return line_; }

 private:
  std::string message_;
  int line_;
};

}  // namespace dynba
