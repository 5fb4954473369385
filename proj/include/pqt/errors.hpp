#pragma once

#include <stdexcept>
#include <string>

namespace pqt {

// Base class for all domain errors. The CLI maps these to exit code 1
// (invalid input / configuration); anything else is a runtime failure (2).
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class ValidationError : public Error {
public:
    explicit ValidationError(const std::string& msg) : Error(msg) {}
};

// Malformed on-disk data (bad record length, bad magic, ...).
class FormatError : public ValidationError {
public:
    explicit FormatError(const std::string& msg) : ValidationError(msg) {}
};

// Inconsistent or incomplete run configuration.
class ConfigError : public ValidationError {
public:
    explicit ConfigError(const std::string& msg) : ValidationError(msg) {}
};

// Input data that a statistical fit cannot digest (all zeros, one-sided, ...).
class DegenerateInputError : public ValidationError {
public:
    explicit DegenerateInputError(const std::string& msg) : ValidationError(msg) {}
};

class InsufficientDataError : public ValidationError {
public:
    explicit InsufficientDataError(const std::string& msg) : ValidationError(msg) {}
};

// Checkpoint bytes that do not match their own manifest.
class CorruptionError : public Error {
public:
    explicit CorruptionError(const std::string& msg) : Error(msg) {}
};

// Checkpoint written by an unsupported format version.
class IncompatibilityError : public Error {
public:
    explicit IncompatibilityError(const std::string& msg) : Error(msg) {}
};

} // namespace pqt
