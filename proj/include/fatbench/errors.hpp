#pragma once

#include <stdexcept>
#include <string>

namespace fatbench {

// API misuse: shape mismatches, out-of-range indices, invalid configs.
struct ContractError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad external input: unparsable files, inconsistent datasets, bad artifacts.
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A numeric op produced NaN/Inf.
struct NumericFault : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace fatbench
