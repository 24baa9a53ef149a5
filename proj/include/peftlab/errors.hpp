#pragma once

#include <stdexcept>
#include <string>

namespace peftlab {

// Base type for all library errors so callers can catch everything at once.
class Error : public std::runtime_error {
  public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Incompatible tensor/matrix shapes. Messages name the offending shapes.
class ShapeError : public Error {
  public:
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// Non-finite or otherwise invalid numeric input.
class NumericError : public Error {
  public:
    explicit NumericError(const std::string& msg) : Error(msg) {}
};

// An iterative solver failed to converge within its sweep budget.
class ConvergenceError : public Error {
  public:
    explicit ConvergenceError(const std::string& msg) : Error(msg) {}
};

// Invalid run/strategy configuration.
class ConfigError : public Error {
  public:
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Malformed domain input (prompts, targets, files).
class ValidationError : public Error {
  public:
    explicit ValidationError(const std::string& msg) : Error(msg) {}
};

// API misuse: a call that violates a documented contract.
class ContractError : public Error {
  public:
    explicit ContractError(const std::string& msg) : Error(msg) {}
};

// Training produced a non-finite loss.
class DivergenceError : public Error {
  public:
    explicit DivergenceError(const std::string& msg) : Error(msg) {}
};

}  // namespace peftlab
