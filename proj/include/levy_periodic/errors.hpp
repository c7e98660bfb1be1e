// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace levy_periodic {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidRate : public Error { public: using Error::Error; };
class InvalidAtom : public Error { public: using Error::Error; };
class CovarianceError : public Error { public: using Error::Error; };
class IntervalError : public Error { public: using Error::Error; };
class ModelError : public Error { public: using Error::Error; };
class RangeError : public Error { public: using Error::Error; };
class ParameterError : public Error { public: using Error::Error; };
class EmptySampleError : public Error { public: using Error::Error; };
class DimError : public Error { public: using Error::Error; };
class NoSignalError : public Error { public: using Error::Error; };
class VarianceError : public Error { public: using Error::Error; };

/// A path left the finite region (or exceeded the divergence radius).
class DivergenceError : public Error {
public:
    DivergenceError(const std::string& what, double last_finite_time, long path_index = -1)
        : Error(what), last_finite_time_(last_finite_time), path_index_(path_index) {}

    double last_finite_time() const noexcept { return last_finite_time_; }
    long path_index() const noexcept { return path_index_; }

    DivergenceError with_path(long index) const {
        return DivergenceError(std::string(what()) + " (path " + std::to_string(index) + ")",
                               last_finite_time_, index);
    }

private:
    double last_finite_time_;
    long path_index_;
};

struct ConfigIssue {
    int line = 0;  // 0 when the issue is not tied to a line
    std::string key;
    std::string message;
};

class ConfigError : public Error {
public:
    explicit ConfigError(std::vector<ConfigIssue> issues)
        : Error(render(issues)), issues_(std::move(issues)) {}

    const std::vector<ConfigIssue>& issues() const noexcept { return issues_; }

private:
    static std::string render(const std::vector<ConfigIssue>& issues) {
        std::string out = "invalid configuration:";
        for (const auto& i : issues) {
            out += "\n  ";
            if (i.line > 0) out += "line " + std::to_string(i.line) + ": ";
            if (!i.key.empty()) out += "'" + i.key + "': ";
            out += i.message;
        }
        return out;
    }

    std::vector<ConfigIssue> issues_;
};

}  // namespace levy_periodic
