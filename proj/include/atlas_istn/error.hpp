#pragma once

#include <stdexcept>
#include <string>

namespace atlas_istn {

// Bad input that the caller could have avoided (shape mismatch, invalid config).
class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Failures while reading or writing persisted artefacts.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Numerical failures: non-finite values, singular matrices, non-convergence.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace atlas_istn
