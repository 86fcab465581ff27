#pragma once

#include <stdexcept>
#include <string>

namespace compact {

enum class ErrorKind {
    InvalidArgument,
    Io,
    Format,
    Validation,
    Numeric,
};

// Every failure raised by the core library. The C API maps `kind()` onto its
// status codes.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

}  // namespace compact
