#pragma once

#include <stdexcept>
#include <string>

namespace dpu {

// Malformed arguments: dimension mismatches, out-of-range ratios, bad sizes.
class InputError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// A computation that is well-formed but has no defined answer under the
// configured policy (e.g. both contribution vectors degenerate).
class PolicyError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

inline void require(bool cond, const std::string& what) {
    if (!cond) throw InputError(what);
}

}  // namespace detail
}  // namespace dpu
