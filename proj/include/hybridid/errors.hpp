#pragma once

#include <stdexcept>
#include <string>

namespace hybridid {

/// Coarse classification used by the command-line front end to pick an exit code.
enum class ErrorCategory { config, dependency, numerical, data };

inline const char* category_name(ErrorCategory c) {
    switch (c) {
        case ErrorCategory::config: return "config";
        case ErrorCategory::dependency: return "dependency";
        case ErrorCategory::numerical: return "numerical";
        case ErrorCategory::data: return "data";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorCategory category, const std::string& what)
        : std::runtime_error(what), category_(category) {}
    ErrorCategory category() const noexcept { return category_; }

private:
    ErrorCategory category_;
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error(ErrorCategory::config, what) {}
};

/// A pipeline stage was asked to run before the artifacts it reads exist.
class DependencyError : public Error {
public:
    explicit DependencyError(const std::string& what) : Error(ErrorCategory::dependency, what) {}
};

class DataError : public Error {
public:
    explicit DataError(const std::string& what) : Error(ErrorCategory::data, what) {}
};

class RangeError : public DataError {
public:
    explicit RangeError(const std::string& what) : DataError(what) {}
};

class DimensionError : public DataError {
public:
    explicit DimensionError(const std::string& what) : DataError(what) {}
};

class ConsistencyError : public DataError {
public:
    explicit ConsistencyError(const std::string& what) : DataError(what) {}
};

class NumericalError : public Error {
public:
    explicit NumericalError(const std::string& what) : Error(ErrorCategory::numerical, what) {}
};

/// A model evaluator was called outside its physical domain (e.g. a non-positive level).
class DomainError : public NumericalError {
public:
    explicit DomainError(const std::string& what) : NumericalError(what) {}
};

class IntegrationError : public NumericalError {
public:
    IntegrationError(const std::string& what, double time)
        : NumericalError(what + " at t=" + std::to_string(time)), time_(time) {}
    double time() const noexcept { return time_; }

private:
    double time_;
};

}  // namespace hybridid
