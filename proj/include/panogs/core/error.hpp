#pragma once

#include <stdexcept>
#include <string>

namespace panogs {

/// Malformed argument, dimension mismatch or violated precondition.
class InvalidInput : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A file could not be read or written.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A self-check (equivalence, gradient, tape consistency) failed.
class VerificationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline void require(bool condition, const std::string& message) {
    if (!condition) throw InvalidInput(message);
}

} // namespace panogs
