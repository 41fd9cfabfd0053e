#pragma once

#include <stdexcept>
#include <string>

namespace rotsym {

// Base class for everything thrown by this library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Shape mismatch between tensors, or an out-of-range index.
class DimensionError : public Error {
public:
    using Error::Error;
};

// Invalid model configuration (zero sizes, d_model not divisible by heads, ...).
class ConfigError : public Error {
public:
    using Error::Error;
};

// Invalid value in otherwise well-shaped data (non-finite entries, bad labels).
class ValueError : public Error {
public:
    using Error::Error;
};

// A numeric procedure failed (singular system, divergence, non-finite result).
class NumericError : public Error {
public:
    using Error::Error;
};

// Malformed serialized data (bad magic, unsupported version, parse failure).
class FormatError : public Error {
public:
    using Error::Error;
};

// Structurally valid file whose content is inconsistent (truncation, bad sizes).
class IntegrityError : public Error {
public:
    using Error::Error;
};

// Filesystem level failure.
class IoError : public Error {
public:
    using Error::Error;
};

} // namespace rotsym
