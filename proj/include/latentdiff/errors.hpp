#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace latentdiff {

/// Bad user input: unknown kinds, dimension mismatches, malformed specs.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// An argument outside the mathematical domain of an operation.
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Requested a closed-form oracle that does not exist for this kind.
class UnsupportedOracle : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

class InsufficientData : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class NonConvergence : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidDistribution : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Non-finite values reached a Monte Carlo accumulator.
class PoisonedStats : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Point-cloud construction ran out of retries.
class ApproximationFailure : public std::runtime_error {
public:
    ApproximationFailure(const std::string& what, double sup_value_err, double sup_grad_err)
        : std::runtime_error(what), sup_value_err(sup_value_err), sup_grad_err(sup_grad_err) {}

    double sup_value_err;
    double sup_grad_err;
};

/// A configuration that failed validation; one entry per offending field.
class ValidationError : public ConfigError {
public:
    explicit ValidationError(std::vector<std::string> issues)
        : ConfigError(join(issues)), issues(std::move(issues)) {}

    std::vector<std::string> issues;

private:
    static std::string join(const std::vector<std::string>& items) {
        std::string out;
        for (const auto& s : items) {
            if (!out.empty()) out += "; ";
            out += s;
        }
        return out;
    }
};

}  // namespace latentdiff
