#pragma once

#include <stdexcept>
#include <string>

namespace dirlik {

/// Base class for all library errors.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Invalid user input (bad graph, bad dimensions, bad config).
struct InputError : Error {
    explicit InputError(const std::string& msg) : Error(msg) {}
};

/// A matrix required to be positive definite was not.
struct NotPositiveDefiniteError : Error {
    explicit NotPositiveDefiniteError(const std::string& msg) : Error(msg) {}
};

/// Numerically non-PD / badly conditioned matrix inside a likelihood evaluation.
struct IllConditionedError : Error {
    IllConditionedError(const std::string& msg, double cond)
        : Error(msg + " (condition estimate " + std::to_string(cond) + ")"), condition(cond) {}
    double condition;
};

/// Parameters violate a model constraint; names the violated constraint.
struct ConstraintViolationError : Error {
    explicit ConstraintViolationError(const std::string& constraint)
        : Error("constraint violated: " + constraint) {}
};

/// Rejection sampling exceeded its iteration cap.
struct ResamplingError : Error {
    explicit ResamplingError(const std::string& msg) : Error(msg) {}
};

}  // namespace dirlik
