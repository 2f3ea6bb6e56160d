#pragma once

#include <stdexcept>
#include <string>

namespace mixtune {

/// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Shape/dimension mismatch between tensors.
struct DimensionError : Error {
    using Error::Error;
};

/// Invalid argument values (out-of-range label, length mismatch, ...).
struct InputError : Error {
    using Error::Error;
};

/// Bad or inconsistent run configuration.
struct ConfigError : Error {
    using Error::Error;
};

/// Non-finite values where finite math is required (diverged training, NaN grads).
struct NumericError : Error {
    using Error::Error;
};

/// Malformed serialized artifact (checkpoint, CSV).
struct FormatError : Error {
    using Error::Error;
};

}  // namespace mixtune
