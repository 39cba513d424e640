#pragma once

#include <stdexcept>
#include <string>

namespace emformer {

// Extents disagree with what an operation requires.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Non-finite input or an undefined reduction (e.g. a fully masked softmax row).
class NumericError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Invalid model configuration; the message names the offending field.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed weight or feature file.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operation not allowed in the current state of a streaming session.
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace emformer
