#pragma once

#include <stdexcept>
#include <string>

namespace fedpoison {

/// Input file could not be parsed; message carries file and row context.
struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// A stratified split could not keep per-part label proportions within
/// one sample of the global proportion.
struct StratificationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Feature-poisoning target column has max == min, so min-max scaling
/// is undefined.
struct DegenerateColumnError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace fedpoison
