#pragma once

#include <stdexcept>
#include <string>

namespace crowdflow {

// Validation failures (bad arguments, inconsistent shapes, malformed values).
// CLI maps these to exit code 1.
class validation_error : public std::runtime_error {
public:
    explicit validation_error(const std::string& msg) : std::runtime_error(msg) {}
};

// File and format failures. CLI maps these to exit code 2.
class io_error : public std::runtime_error {
public:
    explicit io_error(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace crowdflow
