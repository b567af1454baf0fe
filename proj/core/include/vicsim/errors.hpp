#pragma once

#include <stdexcept>
#include <string>

namespace vicsim {

// Shape / rate / config violations. CLI maps this to exit code 2.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Wire-format violations (bad magic, version, length). Exit code 3.
class ProtocolError : public std::runtime_error {
public:
    ProtocolError(const std::string& field, const std::string& msg)
        : std::runtime_error(msg), field_(field) {}
    const std::string& field() const { return field_; }

private:
    std::string field_;
};

// Non-finite values where finite ones are required. Exit code 4.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace vicsim
