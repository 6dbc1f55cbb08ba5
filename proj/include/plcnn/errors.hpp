#pragma once

#include <stdexcept>
#include <string>

namespace plcnn {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Incompatible tensor or layer shapes.
class ShapeError : public Error {
public:
    using Error::Error;
};

// NaN/Inf produced by an evaluation.
class NumericError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class DataError : public Error {
public:
    using Error::Error;
};

class BadMagicError : public DataError {
public:
    using DataError::DataError;
};

class TruncatedError : public DataError {
public:
    using DataError::DataError;
};

class CountMismatchError : public DataError {
public:
    using DataError::DataError;
};

} // namespace plcnn
