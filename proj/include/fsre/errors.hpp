#pragma once

#include <stdexcept>

namespace fsre {

// Malformed input file contents (JSON, TSV, embedding text).
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Well-formed input that violates a domain invariant (span bounds, sizes).
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Episode sampling or split construction cannot satisfy the request.
class SamplingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Numerical failure during training (non-finite loss or gradient).
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace fsre
