#pragma once

#include <stdexcept>
#include <string>

namespace rmlab {

/// Base class for every error raised by the lab.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid configuration or precondition on user-supplied settings.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Tensor or record dimensions that do not line up.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// NaN / Inf encountered where finite values are required.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
public:
    using Error::Error;
};

/// Exhaustive enumeration requested on a world that is too large.
class EnumerationRefused : public Error {
public:
    using Error::Error;
};

/// Malformed or mismatched on-disk artifact.
class FormatError : public Error {
public:
    using Error::Error;
};

}  // namespace rmlab
