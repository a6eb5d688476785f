#pragma once

#include <stdexcept>
#include <string>

namespace pfsd {

// Base for everything this library throws.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes / axes.
struct ShapeError : Error {
    using Error::Error;
};

// Malformed on-disk data (bad magic, version, dtype code, truncation).
struct FormatError : Error {
    using Error::Error;
};

// Invalid user-supplied configuration; maps to CLI exit code 1.
struct ConfigError : Error {
    using Error::Error;
};

// NaN/Inf surfaced from a numeric kernel; maps to CLI exit code 2.
struct NumericError : Error {
    using Error::Error;
};

// Filesystem trouble.
struct IoError : Error {
    using Error::Error;
};

}  // namespace pfsd
