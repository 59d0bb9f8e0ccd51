#pragma once

#include <functional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace agepop {

// Uniform partition of [0, A] into n cells; node j sits at age j * da.
class AgeGrid {
public:
    AgeGrid(double max_age, int cells);

    double max_age() const noexcept { return max_age_; }
    int cells() const noexcept { return cells_; }
    double step() const noexcept { return step_; }
    std::size_t nodes() const noexcept { return static_cast<std::size_t>(cells_) + 1; }

    // The last node returns A itself so that a_n == A holds bit-exactly.
    double age(std::size_t j) const noexcept;
    std::size_t nearest_node(double a) const;

    bool operator==(const AgeGrid&) const = default;

private:
    double max_age_;
    int cells_;
    double step_;
};

// A kernel sampled at the grid nodes. Values between nodes are linear interpolants.
struct KernelSample {
    AgeGrid grid;
    std::vector<double> values;

    KernelSample(AgeGrid g, std::vector<double> v);

    double at(double a) const;
    double operator[](std::size_t j) const { return values[j]; }
    std::span<const double> view() const { return values; }
    bool nonnegative() const;
};

// Analytic kernel recipes accepted by scenario files.
struct ConstantForm {
    double value;
};
struct GaussianBumpForm {
    double center, width, height;
};
struct WindowForm {
    double lo, hi, height;
};
struct ExponentialForm {
    double height, rate;
};
struct SampledForm {
    std::vector<double> values;
};
using KernelForm = std::variant<ConstantForm, GaussianBumpForm, WindowForm, ExponentialForm, SampledForm>;

KernelSample make_kernel(const AgeGrid& grid, const KernelForm& form);
// Value of an analytic recipe at any age; sampled recipes throw DomainError.
double eval_kernel_form(const KernelForm& form, double a);
// Callable over [0, A]; sampled recipes interpolate linearly between nodes.
std::function<double(double)> kernel_function(const AgeGrid& grid, const KernelForm& form);
KernelSample constant_kernel(const AgeGrid& grid, double value);

struct SpeciesSpec {
    KernelSample mortality;
    KernelSample fertility;
    // Kernel through which this species is suppressed by its predator.
    KernelSample interaction;
    double max_age;
};

// Builds a species, snapping max_age to the nearest node (with a logged warning when it
// is off-grid) and rejecting negative kernels or fertility beyond max_age.
SpeciesSpec make_species(KernelSample mortality, KernelSample fertility, KernelSample interaction,
                         double max_age);

// Composite trapezoid rule on nodes with spacing h.
double trapezoid(std::span<const double> f, double h);
// Trapezoid rule restricted to the first `count` nodes.
double trapezoid_prefix(std::span<const double> f, double h, std::size_t count);
double trapezoid_product(std::span<const double> f, std::span<const double> g, double h);
// Running integral F_j = int_0^{a_j} f with F_0 = 0.
std::vector<double> cumulative_trapezoid(std::span<const double> f, double h);

// exp(-int_0^{a_j} (mu + shift)) at every node.
std::vector<double> survival_profile(const KernelSample& mortality, double shift = 0.0);
double survival_probability(const KernelSample& mortality, double a);
double net_reproduction(const SpeciesSpec& spec);

struct ConstantFn {
    double value;
};
struct PeriodicFn {
    double mean, amplitude, period, phase;
};
struct SampledFn {
    std::vector<double> times, values;
};
using TimeFunction = std::variant<ConstantFn, PeriodicFn, SampledFn>;

double eval_time_function(const TimeFunction& f, double t);
// Average over one period (periodic), over the sample span (sampled) or the constant itself.
double time_average(const TimeFunction& f);
// Smallest value the function can take; used to validate positivity constraints.
double lower_bound(const TimeFunction& f);

}  // namespace agepop
