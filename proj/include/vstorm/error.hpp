#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace vstorm {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Array extents disagree with the geometry an operation expects.
class ShapeError : public Error {
public:
    using Error::Error;
};

class IndexError : public Error {
public:
    using Error::Error;
};

class ArgumentError : public Error {
public:
    using Error::Error;
};

/// Two inputs that must describe the same acquisition do not.
class ConsistencyError : public Error {
public:
    using Error::Error;
};

/// NaN/Inf in an input or a loss value.
class NumericError : public Error {
public:
    using Error::Error;
};

/// On-disk container whose manifest and payload disagree.
class CorruptionError : public Error {
public:
    using Error::Error;
};

/// A pipeline stage was run before the stage that produces its inputs.
class DependencyError : public Error {
public:
    using Error::Error;
};

/// Carries every violation found, each prefixed with its key path.
class ConfigError : public Error {
public:
    explicit ConfigError(std::vector<std::string> violations)
        : Error(join(violations)), violations_(std::move(violations)) {}
    explicit ConfigError(const std::string& violation)
        : ConfigError(std::vector<std::string>{violation}) {}

    const std::vector<std::string>& violations() const { return violations_; }

private:
    static std::string join(const std::vector<std::string>& v) {
        std::string out = "invalid configuration:";
        for (const auto& s : v) out += "\n  " + s;
        return out;
    }
    std::vector<std::string> violations_;
};

} // namespace vstorm
