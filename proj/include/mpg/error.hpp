#pragma once

#include <stdexcept>
#include <string>

namespace mpg {

/// Raised for contract violations on inputs (dimension mismatch, bad config,
/// non-finite values). Carries a human-readable location in the message.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised when an internal identity check fails. Signals a bug, not bad input.
class IdentityError : public Error {
public:
    using Error::Error;
};

}  // namespace mpg
