#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace querymlp {

enum class ErrorKind {
    InvalidInput,
    InvalidLabel,
    InvalidBatch,
    InvalidState,
    Numeric,
    Config,
    Parse,
    Schema,
    Checkpoint,
    GenerationFailed,
};

std::string_view to_string(ErrorKind kind) noexcept;

/// Base exception for every failure raised by the library. The kind drives
/// the CLI exit code.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), m_kind(kind) {}

    ErrorKind kind() const noexcept { return m_kind; }

private:
    ErrorKind m_kind;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
    throw Error(kind, message);
}

} // namespace querymlp
