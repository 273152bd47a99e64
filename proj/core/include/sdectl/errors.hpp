#pragma once

#include <stdexcept>
#include <string>

namespace sdectl {

/// Argument shapes or preconditions do not match an operation's contract.
class ContractError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A computation produced a non-finite value.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Cholesky factorization failed even after jitter regularization.
class SingularCovarianceError : public NumericError {
public:
    using NumericError::NumericError;
};

/// An operation needed derivatives that are neither supplied nor allowed to be approximated.
class CapabilityError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Malformed configuration, file or command line.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ParseError : public ConfigError {
public:
    ParseError(const std::string& what, std::size_t line)
        : ConfigError(what + " (line " + std::to_string(line) + ")"), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

} // namespace sdectl
