#pragma once

#include <stdexcept>
#include <string>

namespace lapfusion {

/// Base of every exception thrown by the library. The category decides the
/// CLI exit code.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input geometry/topology (bad index, non-manifold edge,
/// degenerate face).
class TopologyError : public Error {
public:
    using Error::Error;
};

/// Solver failure, divergence, rank deficiency.
class NumericError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

} // namespace lapfusion
