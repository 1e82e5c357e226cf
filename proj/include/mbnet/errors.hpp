#pragma once

#include <stdexcept>
#include <string>

namespace mbnet {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid configuration value or combination.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Tensor shape or spatial-size contract violated.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// File could not be read, written or decoded.
class IoError : public Error {
public:
    using Error::Error;
};

/// Dataset tree is inconsistent (e.g. a scene without a depth map).
class IndexingError : public Error {
public:
    using Error::Error;
};

/// Checkpoint or tensor archive is damaged.
class CorruptionError : public Error {
public:
    using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
public:
    using Error::Error;
};

/// Prediction and ground-truth directories do not pair up.
class PairingError : public Error {
public:
    using Error::Error;
};

/// Input too small for the requested operation (e.g. SSIM window).
class DegenerateInputError : public Error {
public:
    using Error::Error;
};

}  // namespace mbnet
