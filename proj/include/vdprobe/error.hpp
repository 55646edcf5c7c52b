#pragma once

#include <stdexcept>
#include <string>

namespace vdprobe {

/// Bad argument, shape, or configuration value. Maps to CLI exit code 1.
class ValidationError : public std::runtime_error {
 public:
    using std::runtime_error::runtime_error;
};

/// Tensor shapes that violate a kernel's shape rule.
class ShapeError : public ValidationError {
 public:
    using ValidationError::ValidationError;
};

/// NaN/Inf produced by a kernel.
class NumericError : public std::runtime_error {
 public:
    using std::runtime_error::runtime_error;
};

/// Malformed, truncated, or mismatched file. Maps to CLI exit code 2.
class FormatError : public std::runtime_error {
 public:
    using std::runtime_error::runtime_error;
};

/// Filesystem failure (cannot open, cannot write). Maps to CLI exit code 2.
class IoError : public std::runtime_error {
 public:
    using std::runtime_error::runtime_error;
};

}  // namespace vdprobe
