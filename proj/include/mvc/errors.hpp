#pragma once

#include <stdexcept>
#include <string>

namespace mvc {

// Every failure mode the library reports maps onto one of these types. The
// code() string doubles as the machine-parsable prefix the CLI prints before
// exiting nonzero, so keep the set small and stable.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& msg)
        : std::runtime_error(msg), code_(std::move(code)) {}
    const std::string& code() const { return code_; }

private:
    std::string code_;
};

// Bad shapes or incompatible dimensions between operands.
class DimensionError : public Error {
public:
    explicit DimensionError(const std::string& msg) : Error("E_DIMENSION", msg) {}
};

// Numerically invalid input (log of a non-positive value, empty mask set,
// zero-norm direction, ...).
class DomainError : public Error {
public:
    explicit DomainError(const std::string& msg) : Error("E_DOMAIN", msg) {}
};

// API misuse: backward called twice without reset, stepping a finished
// schedule, and similar lifecycle violations.
class StateError : public Error {
public:
    explicit StateError(const std::string& msg) : Error("E_STATE", msg) {}
};

// Unparseable or inconsistent configuration (files or flags).
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error("E_CONFIG", msg) {}
};

// File format violations and filesystem failures.
class IoError : public Error {
public:
    explicit IoError(const std::string& msg) : Error("E_IO", msg) {}
};

// Impossible scene requests (camera inside geometry, no surface hit where one
// is required).
class GenerationError : public Error {
public:
    explicit GenerationError(const std::string& msg) : Error("E_GENERATION", msg) {}
};

// Degenerate point configurations in similarity alignment.
class AlignmentError : public Error {
public:
    explicit AlignmentError(const std::string& msg) : Error("E_ALIGN", msg) {}
};

} // namespace mvc
