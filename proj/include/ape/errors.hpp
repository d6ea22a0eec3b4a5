#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace ape {

/// Base class for all harness failures. `code()` is a stable machine-readable
/// identifier; `what()` carries the human-readable message.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& message)
        : std::runtime_error(message), code_(std::move(code)) {}

    const std::string& code() const noexcept { return code_; }

private:
    std::string code_;
};

/// Malformed input text (not valid JSON, not valid toy source, ...).
class SyntaxError : public Error {
public:
    explicit SyntaxError(const std::string& message) : Error("syntax", message) {}
};

/// Structurally valid input that violates a schema: missing field, unknown
/// key, bad type. The message names the offending field.
class SchemaError : public Error {
public:
    explicit SchemaError(const std::string& message) : Error("schema", message) {}
};

/// Filesystem-level failure (environmental, not a caller bug).
class IoFailure : public Error {
public:
    explicit IoFailure(const std::string& message) : Error("io", message) {}
};

class TimeoutError : public Error {
public:
    explicit TimeoutError(const std::string& message) : Error("timeout", message) {}
};

}  // namespace ape
