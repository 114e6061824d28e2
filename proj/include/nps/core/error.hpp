#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>

namespace nps {

enum class ErrorCode {
  InvalidTopic,
  InvalidFilter,
  InvalidArgument,
  SplitArity,
  NoRoute,
  UnknownFn,
  UnknownPredicate,
  UnexpectedInput,
  MixedVersions,
  MixedModels,
  LengthMismatch,
  SearchSpaceTooLarge,
  NoFeasiblePlacement,
  InstanceTerminated,
  StaleVersion,
  UnknownModel,
  NoPublisher,
  AmbiguousPublisher,
  UnknownSubscription,
  DuplicateSubscription,
  DuplicatePeer,
  BrokerUnavailable,
  ParseError,
  ValidationError,
};

std::string_view to_string(ErrorCode code);

/// Every contract violation raised by the library is an nps::Error carrying
/// a code that callers and tests can switch on.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& message)
      : Error(ErrorCode::ParseError, "line " + std::to_string(line) + ": " + message),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class ValidationError : public Error {
 public:
  ValidationError(std::string path, std::string rule)
      : Error(ErrorCode::ValidationError, path + ": " + rule),
        path_(std::move(path)),
        rule_(std::move(rule)) {}

  const std::string& path() const noexcept { return path_; }
  const std::string& rule() const noexcept { return rule_; }

 private:
  std::string path_;
  std::string rule_;
};

}  // namespace nps
