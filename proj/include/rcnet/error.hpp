#pragma once

#include <stdexcept>
#include <string>

namespace rcnet {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Incompatible tensor/image extents.
class DimensionError : public Error {
public:
    using Error::Error;
};

// NaN/Inf produced by an operation on finite inputs, or a non-finite loss.
class NumericDomainError : public Error {
public:
    using Error::Error;
};

// API misuse: non-scalar backward seed, missing gradient, repeated backward.
class ContractError : public Error {
public:
    using Error::Error;
};

// Malformed or missing files, schema violations.
class DataError : public Error {
public:
    using Error::Error;
};

// Bad command line or configuration key.
class UsageError : public Error {
public:
    using Error::Error;
};

} // namespace rcnet
