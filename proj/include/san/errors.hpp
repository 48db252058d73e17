#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace san {

/// Precondition violated by the caller (bad shape, out-of-range hyperparameter, non-finite input).
class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Input is well-formed but the quantity is undefined for it (e.g. zero-norm vector).
class DegenerateInput : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// An internal invariant failed; indicates a bug rather than bad input.
class InvariantViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// A score cannot be evaluated because one side of the known/unknown split is empty.
class UndefinedScore : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, std::size_t line)
        : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Training produced a non-finite loss or gradient. `layer` is the flat layer
/// index where the first non-finite value was seen, or -1 for the loss itself.
class TrainingDivergence : public std::runtime_error {
public:
    TrainingDivergence(const std::string& what, int layer)
        : std::runtime_error(what), layer_(layer) {}

    int layer() const noexcept { return layer_; }

private:
    int layer_;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace san
