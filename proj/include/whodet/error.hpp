#pragma once

#include <stdexcept>
#include <string>

namespace whodet {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed or truncated input file.
class FormatError : public Error {
public:
    using Error::Error;
};

/// Model file declares a format version this library does not read.
class VersionError : public FormatError {
public:
    using FormatError::FormatError;
};

/// Model file is well-formed JSON but violates the model schema.
class SchemaError : public FormatError {
public:
    using FormatError::FormatError;
};

/// Stored numbers include NaN or infinity.
class NonFiniteError : public FormatError {
public:
    using FormatError::FormatError;
};

/// Arguments violate an operation's preconditions (shape, channel count, ranges).
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Feature pipeline of the input does not match the one a model was trained with.
class ConfigMismatchError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

/// Requested model shape needs offsets beyond the background statistics radius.
class RadiusError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

/// Covariance matrix would exceed the configured memory cap.
class MemoryLimitError : public Error {
public:
    MemoryLimitError(const std::string& what, unsigned long long estimate)
        : Error(what), estimate_(estimate) {}
    unsigned long long estimate() const noexcept { return estimate_; }

private:
    unsigned long long estimate_;
};

/// Cholesky factorization kept failing after every regularizer escalation.
class NumericalError : public Error {
public:
    using Error::Error;
};

}  // namespace whodet
