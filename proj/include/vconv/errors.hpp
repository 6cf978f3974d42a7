#pragma once

#include <stdexcept>
#include <string>

namespace vconv {

// Error taxonomy mirrors the CLI exit codes: config 2, data 3, numeric 4,
// checkpoint 5.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct MissingFileError : DataError {
  explicit MissingFileError(const std::string& msg) : DataError(msg) {}
};

struct MalformedWavError : DataError {
  explicit MalformedWavError(const std::string& msg) : DataError(msg) {}
};

struct UnsupportedWavError : DataError {
  explicit UnsupportedWavError(const std::string& msg) : DataError(msg) {}
};

struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

struct CheckpointError : std::runtime_error {
  explicit CheckpointError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace vconv
