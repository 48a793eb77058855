#include "ctxkmp/errors.hpp"

namespace ctxkmp {

int exit_code(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::Usage:
        case ErrorKind::Config:
            return 1;
        case ErrorKind::Schema:
        case ErrorKind::Dimension:
        case ErrorKind::Data:
        case ErrorKind::Input:
            return 2;
        case ErrorKind::Numerical:
        case ErrorKind::Diverged:
            return 3;
    }
    return 3;
}

const char *to_string(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::Usage: return "usage";
        case ErrorKind::Config: return "config";
        case ErrorKind::Schema: return "schema";
        case ErrorKind::Dimension: return "dimension";
        case ErrorKind::Data: return "data";
        case ErrorKind::Input: return "input";
        case ErrorKind::Numerical: return "numerical";
        case ErrorKind::Diverged: return "diverged";
    }
    return "unknown";
}

}  // namespace ctxkmp
