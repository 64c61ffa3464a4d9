#pragma once

#include <stdexcept>
#include <string>

namespace mscff {

// Tensor or raster dimensions do not agree with what an operation requires.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// A scalar argument is outside its valid domain.
class ArgumentError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// A file (checkpoint, raster header, PGM) is truncated or malformed.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// An API was called in a state that does not support it.
class UsageError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

// A loss or gradient became NaN/Inf.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Internal invariant broken (e.g. an uncovered pixel while stitching).
class ContractViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

}  // namespace mscff
