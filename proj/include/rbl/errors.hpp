#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace rbl {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InvalidArgument : Error {
  using Error::Error;
};

/// Coincident points or a rank-deficient anchor layout.
struct DegenerateGeometryError : Error {
  using Error::Error;
};

struct SingularSystemError : Error {
  using Error::Error;
};

/// A message-passing run produced a non-finite value.
struct DivergenceError : Error {
  DivergenceError(int iteration, const std::string& what)
      : Error("divergence at iteration " + std::to_string(iteration) + ": " + what),
        iteration(iteration) {}
  int iteration;
  /// Set by callers that run one engine per sensor; -1 otherwise.
  std::ptrdiff_t sensor = -1;
};

}  // namespace rbl
