#pragma once

#include <stdexcept>
#include <string>

namespace pdm {

// Malformed input text; carries the 1-based line number.
class ParseError : public std::runtime_error {
public:
    ParseError(int line, const std::string& what)
        : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
    int line() const { return line_; }

private:
    int line_;
};

// Structurally valid input that violates a dataset invariant.
class IntegrityError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bad configuration value.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Caller broke an operation precondition (dimension mismatch, bad action, ...).
class ContractViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

// Model is unusable (untrained, NaN parameters, diverged).
class ModelStateError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace pdm
