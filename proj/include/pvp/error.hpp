#pragma once

#include <stdexcept>
#include <string>

namespace pvp {

// Coarse error classes; the service maps these onto HTTP status codes.
enum class ErrorKind {
    InvalidArgument,
    ShapeMismatch,
    NotFound,
    Conflict,
    Format,
    Numeric,
    Unavailable,
    Cancelled,
    Internal,
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

// Non-fatal outcome attached to results that can degrade gracefully.
enum class Status { Ok, Warning };

}  // namespace pvp
