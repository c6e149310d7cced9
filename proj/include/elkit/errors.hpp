#pragma once

#include <stdexcept>
#include <string>

namespace elkit {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Degenerate inputs
struct ConstantColumn : Error {
    explicit ConstantColumn(int col)
        : Error("column " + std::to_string(col) + " has zero sample standard deviation") {}
};
struct DimensionMismatch : Error {
    using Error::Error;
};
struct NonFinite : Error {
    using Error::Error;
};

// Model fitting
struct NotPositiveDefinite : Error {
    using Error::Error;
};
struct SingularCovariance : Error {
    using Error::Error;
};
struct TooManyVariables : Error {
    explicit TooManyVariables(int n, int limit)
        : Error("exact enumeration infeasible for N=" + std::to_string(n) +
                " (limit " + std::to_string(limit) + ")") {}
};
struct DegenerateComponent : Error {
    using Error::Error;
};
struct DegenerateScale : Error {
    using Error::Error;
};

// Simulation
struct InfeasibleGeometry : Error {
    using Error::Error;
};
struct UnstableStep : Error {
    using Error::Error;
};
struct SingleState : Error {
    using Error::Error;
};

// Evaluation / statistics
struct EmptyBasin : Error {
    explicit EmptyBasin(int b) : Error("basin " + std::to_string(b) + " has no assigned points") {}
};
struct TooFewSamples : Error {
    using Error::Error;
};
struct TooShort : Error {
    using Error::Error;
};

// I/O and configuration
struct ConfigError : Error {
    using Error::Error;
};
struct DataError : Error {
    using Error::Error;
};

}  // namespace elkit
