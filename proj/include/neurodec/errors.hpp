#pragma once

#include <stdexcept>
#include <string>

namespace neurodec {

// Shape or dimension disagreement between operands.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// A precondition of an operation was violated (bad argument, wrong rank, ...).
class ContractError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// NaN/Inf surfaced by an op, a loss, or an optimizer step.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bad or inconsistent configuration.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A stage input (checkpoint, dataset, image directory) does not exist.
class MissingArtifact : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed, truncated or version-mismatched file.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A file could not be written.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace neurodec
