#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace agepop {

// Argument outside the mathematical domain of an operation (age outside [0, A],
// time outside a sampled range, nonpositive inner product in a transform).
struct DomainError : std::domain_error {
    using std::domain_error::domain_error;
};

// Inconsistent run configuration, e.g. a time step that differs from the age step.
struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Root bracketing or iteration did not converge.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A quantity that the scheme guarantees (such as nonnegativity) was violated.
struct InvariantError : std::logic_error {
    using std::logic_error::logic_error;
};

// Equilibrium data outside the admissible region (u* outside (0, zeta_1), ...).
struct InfeasibleError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Collects every problem found while validating an input instead of stopping at the first.
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(std::vector<std::string> problems);
    const std::vector<std::string>& problems() const noexcept { return problems_; }

private:
    std::vector<std::string> problems_;
};

}  // namespace agepop
