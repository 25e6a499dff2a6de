#pragma once

#include <stdexcept>
#include <string>

namespace incap {

// Input file could not be parsed (malformed structure, bad record).
struct ParseError : std::runtime_error {
    explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

// Input parsed but violates a documented invariant (dangling reference, ...).
struct ValidationError : std::runtime_error {
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Caller broke an API precondition (shape mismatch, out-of-range index, ...).
struct ContractViolation : std::logic_error {
    explicit ContractViolation(const std::string& msg) : std::logic_error(msg) {}
};

// Bad or inconsistent configuration (unknown class name, missing teacher, ...).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace incap
