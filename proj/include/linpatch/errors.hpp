#pragma once

#include <stdexcept>
#include <string>

namespace linpatch {

// Bad user input: shapes, indices, flags, corpus sizes.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed checkpoint, trace, cache or spec file.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Open/read/write failure on a path.
class FileError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller broke an API contract (non-scalar backward, duplicate patch slot, ...).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// NaN/Inf produced by an operation.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace linpatch
