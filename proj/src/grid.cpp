#include "agepop/grid.hpp"

#include "agepop/errors.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace agepop {

ValidationError::ValidationError(std::vector<std::string> problems)
    : std::runtime_error([&] {
          std::string msg = "validation failed:";
          for (const auto& p : problems) msg += "\n  - " + p;
          return msg;
      }()),
      problems_(std::move(problems)) {}

AgeGrid::AgeGrid(double max_age, int cells) : max_age_(max_age), cells_(cells), step_(0.0) {
    if (!(max_age > 0.0) || !std::isfinite(max_age)) throw DomainError("AgeGrid: max age must be positive");
    if (cells < 2) throw DomainError("AgeGrid: at least two cells are required");
    step_ = max_age / cells;
}

double AgeGrid::age(std::size_t j) const noexcept {
    return j >= static_cast<std::size_t>(cells_) ? max_age_ : static_cast<double>(j) * step_;
}

std::size_t AgeGrid::nearest_node(double a) const {
    if (a < 0.0 || a > max_age_) throw DomainError("age outside [0, A]");
    return static_cast<std::size_t>(std::lround(a / step_));
}

KernelSample::KernelSample(AgeGrid g, std::vector<double> v) : grid(g), values(std::move(v)) {
    if (values.size() != grid.nodes())
        throw DomainError("KernelSample: expected " + std::to_string(grid.nodes()) + " values, got " +
                          std::to_string(values.size()));
}

double KernelSample::at(double a) const {
    if (a < 0.0 || a > grid.max_age()) throw DomainError("KernelSample::at: age outside [0, A]");
    const double s = a / grid.step();
    const auto j = std::min(static_cast<std::size_t>(s), grid.nodes() - 2);
    const double w = s - static_cast<double>(j);
    return (1.0 - w) * values[j] + w * values[j + 1];
}

bool KernelSample::nonnegative() const {
    return std::ranges::all_of(values, [](double v) { return v >= 0.0; });
}

double eval_kernel_form(const KernelForm& form, double a) {
    return std::visit(
        [a](const auto& f) -> double {
            using F = std::decay_t<decltype(f)>;
            if constexpr (std::is_same_v<F, ConstantForm>) {
                return f.value;
            } else if constexpr (std::is_same_v<F, GaussianBumpForm>) {
                const double d = (a - f.center) / f.width;
                return f.height * std::exp(-0.5 * d * d);
            } else if constexpr (std::is_same_v<F, WindowForm>) {
                return (a >= f.lo && a <= f.hi) ? f.height : 0.0;
            } else if constexpr (std::is_same_v<F, ExponentialForm>) {
                return f.height * std::exp(-f.rate * a);
            } else {
                throw DomainError("sampled kernels have no closed form away from their grid");
            }
        },
        form);
}

KernelSample make_kernel(const AgeGrid& grid, const KernelForm& form) {
    if (const auto* sampled = std::get_if<SampledForm>(&form)) return KernelSample(grid, sampled->values);
    std::vector<double> v(grid.nodes());
    for (std::size_t j = 0; j < v.size(); ++j) v[j] = eval_kernel_form(form, grid.age(j));
    return KernelSample(grid, std::move(v));
}

std::function<double(double)> kernel_function(const AgeGrid& grid, const KernelForm& form) {
    if (std::holds_alternative<SampledForm>(form)) {
        auto k = make_kernel(grid, form);
        return [k = std::move(k)](double a) { return k.at(a); };
    }
    return [form](double a) { return eval_kernel_form(form, a); };
}

KernelSample constant_kernel(const AgeGrid& grid, double value) {
    return KernelSample(grid, std::vector<double>(grid.nodes(), value));
}

SpeciesSpec make_species(KernelSample mortality, KernelSample fertility, KernelSample interaction,
                         double max_age) {
    const AgeGrid& grid = mortality.grid;
    std::vector<std::string> problems;
    if (!(fertility.grid == grid) || !(interaction.grid == grid)) problems.emplace_back("kernels live on different grids");
    if (!mortality.nonnegative()) problems.emplace_back("mortality has negative values");
    if (!fertility.nonnegative()) problems.emplace_back("fertility has negative values");
    if (!interaction.nonnegative()) problems.emplace_back("interaction kernel has negative values");
    if (!(max_age > 0.0) || max_age > grid.max_age() * (1.0 + 1e-12))
        problems.emplace_back("species max age must lie in (0, A]");
    if (!problems.empty()) throw ValidationError(std::move(problems));

    const std::size_t node = grid.nearest_node(std::min(max_age, grid.max_age()));
    const double snapped = grid.age(node);
    if (std::abs(snapped - max_age) > 1e-9 * grid.max_age())
        spdlog::warn("species max age {} is off-grid; snapped to node age {}", max_age, snapped);
    for (std::size_t j = node + 1; j < grid.nodes(); ++j)
        if (fertility[j] != 0.0)
            throw ValidationError({"fertility must vanish beyond the species max age " + std::to_string(snapped)});
    return SpeciesSpec{std::move(mortality), std::move(fertility), std::move(interaction), snapped};
}

double trapezoid(std::span<const double> f, double h) {
    return trapezoid_prefix(f, h, f.size());
}

double trapezoid_prefix(std::span<const double> f, double h, std::size_t count) {
    count = std::min(count, f.size());
    if (count < 2) return 0.0;
    double s = 0.5 * (f[0] + f[count - 1]);
    for (std::size_t j = 1; j + 1 < count; ++j) s += f[j];
    return s * h;
}

double trapezoid_product(std::span<const double> f, std::span<const double> g, double h) {
    const std::size_t n = std::min(f.size(), g.size());
    if (n < 2) return 0.0;
    double s = 0.5 * (f[0] * g[0] + f[n - 1] * g[n - 1]);
    for (std::size_t j = 1; j + 1 < n; ++j) s += f[j] * g[j];
    return s * h;
}

std::vector<double> cumulative_trapezoid(std::span<const double> f, double h) {
    std::vector<double> out(f.size(), 0.0);
    for (std::size_t j = 1; j < f.size(); ++j) out[j] = out[j - 1] + 0.5 * h * (f[j - 1] + f[j]);
    return out;
}

std::vector<double> survival_profile(const KernelSample& mortality, double shift) {
    auto cum = cumulative_trapezoid(mortality.view(), mortality.grid.step());
    for (std::size_t j = 0; j < cum.size(); ++j) cum[j] = std::exp(-(cum[j] + shift * mortality.grid.age(j)));
    return cum;
}

double survival_probability(const KernelSample& mortality, double a) {
    const AgeGrid& g = mortality.grid;
    if (a < 0.0 || a > g.max_age()) throw DomainError("survival_probability: age outside [0, A]");
    // Full cells by the trapezoid rule, then the partial cell against the interpolated kernel.
    const auto full = std::min(static_cast<std::size_t>(a / g.step()), g.nodes() - 1);
    double integral = trapezoid_prefix(mortality.view(), g.step(), full + 1);
    const double rest = a - g.age(full);
    if (rest > 0.0) integral += 0.5 * rest * (mortality[full] + mortality.at(a));
    return std::exp(-integral);
}

double net_reproduction(const SpeciesSpec& spec) {
    const auto pi = survival_profile(spec.mortality);
    return trapezoid_product(spec.fertility.view(), pi, spec.mortality.grid.step());
}

double eval_time_function(const TimeFunction& f, double t) {
    return std::visit(
        [t](const auto& fn) -> double {
            using F = std::decay_t<decltype(fn)>;
            if constexpr (std::is_same_v<F, ConstantFn>) {
                return fn.value;
            } else if constexpr (std::is_same_v<F, PeriodicFn>) {
                return fn.mean + fn.amplitude * std::sin(2.0 * std::numbers::pi * (t - fn.phase) / fn.period);
            } else {
                if (fn.times.empty() || t < fn.times.front() || t > fn.times.back())
                    throw DomainError("sampled time function evaluated outside its sample range");
                const auto it = std::upper_bound(fn.times.begin(), fn.times.end(), t);
                if (it == fn.times.end()) return fn.values.back();
                const auto k = static_cast<std::size_t>(it - fn.times.begin());
                const double w = (t - fn.times[k - 1]) / (fn.times[k] - fn.times[k - 1]);
                return (1.0 - w) * fn.values[k - 1] + w * fn.values[k];
            }
        },
        f);
}

double time_average(const TimeFunction& f) {
    return std::visit(
        [](const auto& fn) -> double {
            using F = std::decay_t<decltype(fn)>;
            if constexpr (std::is_same_v<F, ConstantFn>) {
                return fn.value;
            } else if constexpr (std::is_same_v<F, PeriodicFn>) {
                return fn.mean;
            } else {
                if (fn.times.size() < 2) return fn.values.empty() ? 0.0 : fn.values.front();
                double s = 0.0;
                for (std::size_t k = 1; k < fn.times.size(); ++k)
                    s += 0.5 * (fn.values[k] + fn.values[k - 1]) * (fn.times[k] - fn.times[k - 1]);
                return s / (fn.times.back() - fn.times.front());
            }
        },
        f);
}

double lower_bound(const TimeFunction& f) {
    return std::visit(
        [](const auto& fn) -> double {
            using F = std::decay_t<decltype(fn)>;
            if constexpr (std::is_same_v<F, ConstantFn>) {
                return fn.value;
            } else if constexpr (std::is_same_v<F, PeriodicFn>) {
                return fn.mean - std::abs(fn.amplitude);
            } else {
                return fn.values.empty() ? 0.0 : *std::ranges::min_element(fn.values);
            }
        },
        f);
}

}  // namespace agepop
