#ifndef MAT_CORE_ERROR_HPP
#define MAT_CORE_ERROR_HPP

#include <stdexcept>
#include <string>

namespace mat {

// Root of every library error. `exit_code()` is the CLI status the error maps to.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    [[nodiscard]] virtual int exit_code() const noexcept { return 3; }
};

// Bad configuration: invalid hyper-parameters, unknown names, missing files.
class ConfigError : public Error {
public:
    using Error::Error;
    [[nodiscard]] int exit_code() const noexcept override { return 2; }
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class IndexError : public Error {
public:
    using Error::Error;
};

// Non-finite values in activations, losses or gradients.
class NumericError : public Error {
public:
    using Error::Error;
};

class CorruptDataError : public Error {
public:
    using Error::Error;
};

// Data manifest does not describe the files it sits next to.
class ManifestError : public Error {
public:
    using Error::Error;
};

// Checkpoint written by an incompatible format version.
class FormatVersionError : public Error {
public:
    using Error::Error;
};

class AggregationError : public Error {
public:
    using Error::Error;
};

}  // namespace mat

#endif  // MAT_CORE_ERROR_HPP
