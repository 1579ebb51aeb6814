#pragma once

#include <stdexcept>
#include <string>

namespace tempo {

// Precondition violated by the caller (bad shapes, invalid actions, ...).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Argument outside the mathematical domain of an operation.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Malformed input file. The message carries line/field context.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// NaN/Inf detected in a numeric pipeline.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace tempo
