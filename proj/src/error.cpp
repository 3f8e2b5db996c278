#include "querymlp/error.hpp"

namespace querymlp {

std::string_view to_string(ErrorKind kind) noexcept {
    switch (kind) {
    case ErrorKind::InvalidInput:
        return "invalid-input";
    case ErrorKind::InvalidLabel:
        return "invalid-label";
    case ErrorKind::InvalidBatch:
        return "invalid-batch";
    case ErrorKind::InvalidState:
        return "invalid-state";
    case ErrorKind::Numeric:
        return "numeric";
    case ErrorKind::Config:
        return "config";
    case ErrorKind::Parse:
        return "parse";
    case ErrorKind::Schema:
        return "schema";
    case ErrorKind::Checkpoint:
        return "checkpoint";
    case ErrorKind::GenerationFailed:
        return "generation-failed";
    }
    return "unknown";
}

} // namespace querymlp
