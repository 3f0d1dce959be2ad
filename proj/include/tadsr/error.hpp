#pragma once

#include <stdexcept>
#include <string>

namespace tadsr {

/// Invalid argument value (ranges, counts, unknown enum names).
class ParameterError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Tensor shapes do not satisfy an operation's contract.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Division by a vanishing schedule coefficient.
class NumericalDomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// A LoRA adapter does not fit the weight it names.
class AdapterError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A training stage was started without the checkpoint of the stage it builds on.
class DependencyError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A training loss became NaN or infinite.
class DivergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace tadsr
