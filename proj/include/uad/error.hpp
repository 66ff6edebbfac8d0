#pragma once

#include <stdexcept>
#include <string>

namespace uad {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes or violated divisibility constraints.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// NaN or Inf encountered where finite values are required.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Misuse of a gradient tape (non-scalar loss, replay, stale parameters).
class TapeError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration values or mismatched checkpoint/dataset configs.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Invalid argument outside the shape/config categories.
class ValueError : public Error {
public:
    using Error::Error;
};

// On-disk format errors. Each failure mode has its own type so callers and
// tests can tell a bad magic from a truncated payload.
class FormatError : public Error {
public:
    using Error::Error;
};
class MagicError : public FormatError {
public:
    using FormatError::FormatError;
};
class VersionError : public FormatError {
public:
    using FormatError::FormatError;
};
class DtypeError : public FormatError {
public:
    using FormatError::FormatError;
};
class RankError : public FormatError {
public:
    using FormatError::FormatError;
};
class TruncatedError : public FormatError {
public:
    using FormatError::FormatError;
};
class ChecksumError : public FormatError {
public:
    using FormatError::FormatError;
};

class IoError : public Error {
public:
    using Error::Error;
};

} // namespace uad
