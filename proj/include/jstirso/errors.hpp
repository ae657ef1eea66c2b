#pragma once

#include <stdexcept>
#include <string>

namespace jstirso {

/// Raised when a numeric parameter is outside its admissible range.
class ParameterError : public std::invalid_argument {
public:
    explicit ParameterError(const std::string& what) : std::invalid_argument(what) {}
};

/// Raised when an operation is called with inconsistent inputs
/// (dimension mismatch, wrong history length, missing ground truth).
class UsageError : public std::logic_error {
public:
    explicit UsageError(const std::string& what) : std::logic_error(what) {}
};

/// Raised for a malformed or out-of-range configuration field. `field()`
/// names the offending key.
class ConfigError : public std::runtime_error {
public:
    ConfigError(std::string field, const std::string& what)
        : std::runtime_error(field + ": " + what), field_(std::move(field)) {}
    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

} // namespace jstirso
