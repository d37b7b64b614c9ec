#pragma once

#include <stdexcept>
#include <string>

namespace vem {

/// Base class for every error raised by the solver library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Non-increasing interval or too few nodes.
class InvalidGridError : public Error {
public:
    using Error::Error;
};

/// Mismatched profile, vector, or matrix shapes.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// A user callable returned a non-finite value.
class EvaluationError : public Error {
public:
    using Error::Error;
};

/// An operation was called in a configuration it does not support.
class UsageError : public Error {
public:
    using Error::Error;
};

/// Explicit step size collapsed; the flow is probably stiff.
class StiffnessError : public Error {
public:
    using Error::Error;
};

/// Implicit stepping could not make progress.
class ConvergenceError : public Error {
public:
    using Error::Error;
};

/// The monitored functional rose far beyond the allowed slack.
class DescentViolation : public Error {
public:
    using Error::Error;
};

}  // namespace vem
