// Error hierarchy shared by all modules. The CLI maps these onto exit codes.
#pragma once

#include <stdexcept>
#include <string>

namespace thama {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Graph construction or tensor binding with inconsistent shapes.
struct ShapeError : Error {
    using Error::Error;
};

// Invalid run configuration or model specification.
struct ConfigError : Error {
    using Error::Error;
};

// Malformed or truncated container files (EMB1 / FRM1 / CKPT1 / manifest).
struct DataError : Error {
    using Error::Error;
};

// Non-finite values in a forward pass, NaN loss, failed gradient check.
struct NumericError : Error {
    using Error::Error;
};

} // namespace thama
