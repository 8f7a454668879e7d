#pragma once

#include <stdexcept>
#include <string>

namespace aufa {

enum class ErrorKind {
  MissingFile,
  RaggedRows,
  NonNumeric,
  TooFewTimePoints,
  DegenerateSignal,
  DimensionMismatch,
  DuplicateSubject,
  MissingLabel,
  InvalidArgument,
  InvalidConfig,
  Format,
};

const char* to_string(ErrorKind kind);

// All library failures are reported through this type; callers that care
// about the category inspect kind().
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace aufa
