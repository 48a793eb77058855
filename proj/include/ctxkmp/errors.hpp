#pragma once

#include <stdexcept>
#include <string>

namespace ctxkmp {

enum class ErrorKind {
    Usage,
    Config,
    Schema,
    Dimension,
    Data,
    Input,
    Numerical,
    Diverged,
};

/// Base of every error raised by the library. The kind decides the CLI exit
/// code and the HTTP status of the service.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string &what) : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

struct UsageError : Error {
    explicit UsageError(const std::string &w) : Error(ErrorKind::Usage, w) {}
};
struct ConfigError : Error {
    explicit ConfigError(const std::string &w) : Error(ErrorKind::Config, w) {}
};
struct SchemaError : Error {
    explicit SchemaError(const std::string &w) : Error(ErrorKind::Schema, w) {}
};
struct DimensionError : Error {
    explicit DimensionError(const std::string &w) : Error(ErrorKind::Dimension, w) {}
};
struct DataError : Error {
    explicit DataError(const std::string &w) : Error(ErrorKind::Data, w) {}
};
struct InputError : Error {
    explicit InputError(const std::string &w) : Error(ErrorKind::Input, w) {}
};
struct NumericalError : Error {
    explicit NumericalError(const std::string &w) : Error(ErrorKind::Numerical, w) {}
};

/// Exit codes: 0 success, 1 usage, 2 data, 3 numerical.
int exit_code(ErrorKind kind) noexcept;

const char *to_string(ErrorKind kind) noexcept;

}  // namespace ctxkmp
