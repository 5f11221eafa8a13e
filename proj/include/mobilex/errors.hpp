#pragma once

#include <stdexcept>
#include <string>

namespace mobilex {

// Error categories map 1:1 onto CLI exit codes (see tools/).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ShapeError : ConfigError {
    explicit ShapeError(const std::string& msg) : ConfigError(msg) {}
};

}  // namespace mobilex
