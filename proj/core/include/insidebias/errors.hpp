#pragma once

#include <stdexcept>
#include <string>

namespace insidebias {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Dimension/shape incompatibilities (conv geometry, batch layout, ...).
class ShapeError : public Error {
public:
    using Error::Error;
};

/// NaN/Inf encountered where finite values are required.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration (bad arch id, unsupported input size, bad flag value).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Malformed input data (IDX files, manifests, images).
class DataError : public Error {
public:
    using Error::Error;
};

/// A sampling protocol asked for more samples than a group can provide.
class CapacityError : public Error {
public:
    using Error::Error;
};

/// Filesystem-level failures.
class IoError : public Error {
public:
    using Error::Error;
};

// Weight-file load failures, one type per distinct condition.
class LoadError : public Error {
public:
    using Error::Error;
};

class BadMagicError : public LoadError {
public:
    using LoadError::LoadError;
};

class VersionMismatchError : public LoadError {
public:
    using LoadError::LoadError;
};

class TruncatedFileError : public LoadError {
public:
    using LoadError::LoadError;
};

class ChecksumError : public LoadError {
public:
    ChecksumError(const std::string& tensor_name, const std::string& msg)
        : LoadError(msg), tensor_name_(tensor_name) {}
    const std::string& tensor_name() const { return tensor_name_; }

private:
    std::string tensor_name_;
};

class ArchMismatchError : public LoadError {
public:
    using LoadError::LoadError;
};

}  // namespace insidebias
