#pragma once

#include <stdexcept>
#include <string>

namespace fmlab {

// Error taxonomy. The CLI maps each family onto a process exit code.

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Non-finite values or other numeric breakdowns during training/sampling.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Post-hoc averaging asked for a window that contains no snapshot.
class EmptyWindowError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace fmlab
