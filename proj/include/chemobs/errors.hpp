#pragma once

#include <stdexcept>
#include <string>

namespace chemobs {

/// Base class for all errors raised by this library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// An argument violated a precondition (negative concentration, bad grid, ...).
class DomainError : public Error {
public:
    using Error::Error;
};

/// Kinetics degenerate for the requested analysis (e.g. identical
/// half-saturation constants make the log-ratio derivative vanish).
class DegenerateKineticsError : public Error {
public:
    using Error::Error;
};

/// The operation needs a model family the given parameters do not belong to.
class UnsupportedModelError : public Error {
public:
    using Error::Error;
};

/// No positive single-species equilibrium exists for the requested inputs.
class WashoutError : public Error {
public:
    using Error::Error;
};

/// A rate evaluation produced a non-finite value.
class EvaluationError : public Error {
public:
    using Error::Error;
};

/// The integrated state left its invariant domain by more than the repair
/// tolerance. Carries the time at which the exit was detected.
class IntegrationDomainError : public Error {
public:
    IntegrationDomainError(const std::string& what, double time)
        : Error(what), time(time) {}
    double time;
};

/// Scenario configuration error. `field` is the dotted path of the offending
/// entry ("observer.r"), empty for document-level syntax errors.
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what, std::string field = {})
        : Error(what), field(std::move(field)) {}
    std::string field;
};

/// Output directory or file could not be written.
class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace chemobs
