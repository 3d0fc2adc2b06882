#pragma once

#include <stdexcept>
#include <string>

namespace omnicd {

/// Bad command-line usage or incompatible options. CLI exit code 1.
struct UsageError : std::runtime_error {
    explicit UsageError(const std::string& m) : std::runtime_error(m) {}
};

/// Malformed or inconsistent input data (shapes, files, labels). CLI exit code 2.
struct DataError : std::runtime_error {
    explicit DataError(const std::string& m) : std::runtime_error(m) {}
};

struct ShapeError : DataError {
    explicit ShapeError(const std::string& m) : DataError(m) {}
};

/// Non-finite activations or losses. CLI exit code 3.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& m) : std::runtime_error(m) {}
};

}  // namespace omnicd
