#pragma once

#include <stdexcept>
#include <string>

namespace kpanim {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    virtual const char* kind() const noexcept { return "error"; }
};

/// Shapes of two operands disagree.
class DimensionError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "dimension"; }
};

/// A value violates a documented precondition (range, finiteness, name lookup).
class ValueError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "value"; }
};

/// Malformed, truncated or schema-violating input document.
class FormatError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "format"; }
};

class VersionError : public FormatError {
public:
    using FormatError::FormatError;
    const char* kind() const noexcept override { return "version"; }
};

/// Numerical failure during optimization (non-finite loss).
class NumericError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "numeric"; }
};

/// Error raised while producing one frame; keeps the inner error's kind.
class FrameError : public Error {
public:
    FrameError(long long frame, const Error& inner)
        : Error("frame " + std::to_string(frame) + ": " + inner.what()), frame_(frame), inner_kind_(inner.kind()) {}
    const char* kind() const noexcept override { return inner_kind_.c_str(); }
    long long frame() const { return frame_; }

private:
    long long frame_;
    std::string inner_kind_;
};

} // namespace kpanim
