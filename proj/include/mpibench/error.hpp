#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mpibench {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Shape or length mismatch between operands.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Invalid argument or configuration value.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Problem with on-disk data (missing, corrupt, unsupported).
class DataError : public Error {
public:
    using Error::Error;
};

class VersionError : public DataError {
public:
    using DataError::DataError;
};

class ChecksumError : public DataError {
public:
    using DataError::DataError;
};

class MissingArrayError : public DataError {
public:
    using DataError::DataError;
};

/// Iterative decomposition did not reach tolerance.
class ConvergenceError : public Error {
public:
    ConvergenceError(const std::string& what, std::size_t iterations)
        : Error(what), iterations_(iterations) {}
    std::size_t iterations() const noexcept { return iterations_; }

private:
    std::size_t iterations_;
};

/// A solver produced a non-finite value.
class NumericalError : public Error {
public:
    NumericalError(const std::string& what, std::size_t iteration)
        : Error(what), iteration_(iteration) {}
    std::size_t iteration() const noexcept { return iteration_; }

private:
    std::size_t iteration_;
};

}  // namespace mpibench
