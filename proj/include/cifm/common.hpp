#pragma once

#include <stdexcept>
#include <string>

namespace cifm {

inline constexpr const char* kVersion = "cifm 0.1.0";

// Error taxonomy used across the library. Every throwing path picks the
// narrowest category so callers (and tests) can distinguish misuse from
// bad data from internal bugs.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid configuration value (out of range, unknown key, bad combination).
struct ConfigError : Error {
  using Error::Error;
};

// Malformed or inconsistent input data (files, batches, labels).
struct DataError : Error {
  using Error::Error;
};

// API called in a way its contract forbids (wrong mode, missing argument).
struct UsageError : Error {
  using Error::Error;
};

// Non-finite values where finiteness is required.
struct NumericError : Error {
  using Error::Error;
};

// Internal invariant broken (weight restoration mismatch, checksum drift).
struct ConsistencyError : Error {
  using Error::Error;
};

}  // namespace cifm
