#pragma once

#include <stdexcept>
#include <string>

namespace mrla {

// Dimension/shape violations (mismatched extents, bad ranks).
struct shape_error : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Invalid configuration values (even kernel size, indivisible heads, bad keys).
struct config_error : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// API contract violations (non-scalar backward root, carry/mode mismatch).
struct contract_error : std::logic_error {
  using std::logic_error::logic_error;
};

// Numerical failures (degenerate normalization, non-finite loss).
struct numeric_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// File format and I/O failures (bad magic, truncated records, unwritable paths).
struct io_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace mrla
