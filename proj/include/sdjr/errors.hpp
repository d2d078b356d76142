#pragma once

#include <stdexcept>
#include <string>

namespace sdjr {

// Failure categories. The CLI maps these onto exit codes 2 (validation),
// 3 (numerical) and 4 (resource limit).

class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A spec object (generator, jump law, delay, config) violates its invariants.
class InvalidSpec : public ValidationError {
public:
    using ValidationError::ValidationError;
};

/// An operation was called with arguments outside its domain.
class InvalidArgument : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A simulated value became non-finite.
class NumericalBlowup : public NumericalError {
public:
    NumericalBlowup(const std::string& what, int step)
        : NumericalError(what + " (step " + std::to_string(step) + ")"), step_(step) {}
    int step() const noexcept { return step_; }

private:
    int step_;
};

/// The grid is too coarse for a probability or an implicit step to stay valid.
class DtTooLarge : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class ResourceLimit : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace sdjr
