#pragma once

#include <stdexcept>
#include <string>

namespace projsdpa {

// Incompatible tensor shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A row that cannot be normalized (zero norm, or every entry masked).
class DegenerateRowError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Invalid configuration value.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Bad input data: unreadable corpus, out-of-range token id, empty batch.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite value produced where a finite one was required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace projsdpa
