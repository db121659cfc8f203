#pragma once

#include <stdexcept>
#include <string>

namespace xghsi {

/// Base class for all errors raised by the engine.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor or matrix shapes that do not line up.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Malformed or inconsistent input data (corpus, graph, checkpoint).
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration values.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// File system failures.
class IoError : public Error {
public:
    using Error::Error;
};

/// A non-finite objective during optimization.
class DivergenceError : public Error {
public:
    using Error::Error;
};

/// Violated call precondition (programming error on the caller side).
class ContractError : public Error {
public:
    using Error::Error;
};

} // namespace xghsi
