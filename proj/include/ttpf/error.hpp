#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ttpf {

enum class ErrorKind {
    DegenerateInput,
    Shape,
    Numeric,
    Range,
    Config,
    Template,
    Data,
    Io,
};

constexpr std::string_view kind_name(ErrorKind kind) noexcept {
    switch (kind) {
    case ErrorKind::DegenerateInput: return "DegenerateInput";
    case ErrorKind::Shape: return "ShapeError";
    case ErrorKind::Numeric: return "NumericError";
    case ErrorKind::Range: return "RangeError";
    case ErrorKind::Config: return "ConfigError";
    case ErrorKind::Template: return "TemplateError";
    case ErrorKind::Data: return "DataError";
    case ErrorKind::Io: return "IoError";
    }
    return "Error";
}

/// Every failure raised by the library. `kind()` is the machine-readable
/// category the CLI prints on exit.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(kind_name(kind)) + ": " + message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
    throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
    if (!condition) fail(kind, message);
}

} // namespace ttpf
