#pragma once

#include <stdexcept>
#include <string>

namespace volreg {

// Base for all toolkit errors. The CLI maps the subtypes to distinct
// exit codes (config=2, data=3, numeric=4).
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid configuration, arguments or shape mismatches between
// configured components.
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Malformed files, inconsistent datasets, empty inputs.
class DataError : public Error {
public:
    explicit DataError(const std::string& msg) : Error(msg) {}
};

// Non-finite values encountered during training.
class NumericError : public Error {
public:
    explicit NumericError(const std::string& msg) : Error(msg) {}
};

}  // namespace volreg
