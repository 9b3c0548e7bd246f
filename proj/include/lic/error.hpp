#pragma once

#include <stdexcept>
#include <string>

namespace lic {

// Base class for everything this library throws.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape/axis mismatches between tensors or layer specs.
struct DimensionError : Error {
    using Error::Error;
};

// A documented precondition was violated by the caller.
struct ContractError : Error {
    using Error::Error;
};

// Non-finite values, divergence, invalid numeric domain.
struct NumericError : Error {
    using Error::Error;
};

// Malformed files (checkpoints, PPM, CSV).
struct FormatError : Error {
    using Error::Error;
};

// Invalid run configuration.
struct ConfigError : Error {
    using Error::Error;
};

// Dataset problems (missing directory, empty dataset, bad image).
struct DataError : Error {
    using Error::Error;
};

}  // namespace lic
