#pragma once

#include <stdexcept>
#include <string>

namespace epiforge {

// Error taxonomy mirrored by the CLI exit codes: configuration errors exit
// with 2, data errors with 3, numeric errors with 4.

class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad inputs discovered after configuration: invalid ids, dimension
// mismatches, insufficient or degenerate data, missing history.
class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace epiforge
