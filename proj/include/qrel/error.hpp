#pragma once

#include <stdexcept>
#include <string>

namespace qrel {

/// Input violated a documented precondition (bad shape, out-of-range value, malformed file).
class ValidationError : public std::invalid_argument {
public:
    explicit ValidationError(const std::string& what) : std::invalid_argument(what) {}
};

/// A numerical procedure failed (non-finite loss, divergence that could not be recovered).
class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

inline void require(bool cond, const std::string& msg)
{
    if (!cond) throw ValidationError(msg);
}

} // namespace qrel
