#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace rebalance {

enum class ErrorKind {
  SingularCovariance,
  DimensionMismatch,
  InvalidSwitch,
  IterationCapExceeded,
  DomainError,
  DegenerateDesign,
  BracketFailure,
  EigFailure,
  EmptyInput,
  MissingBaseline,
  Validation,
};

std::string_view to_string(ErrorKind kind) noexcept;

/// Base of every error the library throws. `kind()` is stable and is what the
/// CLI maps onto exit codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define REBALANCE_DEFINE_ERROR(Name)                                  \
  class Name : public Error {                                         \
   public:                                                            \
    explicit Name(const std::string& message)                         \
        : Error(ErrorKind::Name, message) {}                          \
  }

REBALANCE_DEFINE_ERROR(SingularCovariance);
REBALANCE_DEFINE_ERROR(DimensionMismatch);
REBALANCE_DEFINE_ERROR(InvalidSwitch);
REBALANCE_DEFINE_ERROR(DomainError);
REBALANCE_DEFINE_ERROR(DegenerateDesign);
REBALANCE_DEFINE_ERROR(BracketFailure);
REBALANCE_DEFINE_ERROR(EigFailure);
REBALANCE_DEFINE_ERROR(EmptyInput);
REBALANCE_DEFINE_ERROR(MissingBaseline);

#undef REBALANCE_DEFINE_ERROR

/// Bad user input: malformed files, out-of-range parameters, schema errors.
class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& message)
      : Error(ErrorKind::Validation, message) {}
};

}  // namespace rebalance
