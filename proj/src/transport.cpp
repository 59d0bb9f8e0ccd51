#include "agepop/transport.hpp"

#include "agepop/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace agepop {

PopulationState::PopulationState(AgeGrid grid, std::size_t rows, double time)
    : t(time), grid_(grid), rows_(rows), data_(rows * grid.nodes(), 0.0) {}

std::span<double> PopulationState::row(std::size_t i) {
    return std::span<double>(data_).subspan(i * grid_.nodes(), grid_.nodes());
}

std::span<const double> PopulationState::row(std::size_t i) const {
    return std::span<const double>(data_).subspan(i * grid_.nodes(), grid_.nodes());
}

double PopulationState::total(std::size_t i) const { return trapezoid(row(i), grid_.step()); }

double PopulationState::min_value() const {
    return data_.empty() ? 0.0 : *std::ranges::min_element(data_);
}

void GeneralNetworkSpec::validate() const {
    std::vector<std::string> problems;
    const std::size_t n = species.size();
    if (n == 0) throw ValidationError({"network has no species"});
    if (adjacency.n != n) problems.emplace_back("adjacency matrix size differs from species count");
    if (control_placement.size() != n) problems.emplace_back("control placement length differs from species count");
    for (int b : control_placement)
        if (b != 0 && b != 1) problems.emplace_back("control placement entries must be 0 or 1");
    for (std::size_t i = 0; i < n && adjacency.n == n; ++i) {
        if (!(species[i].mortality.grid == grid())) problems.emplace_back("species " + std::to_string(i) + " uses another grid");
        for (std::size_t j = 0; j < n; ++j) {
            const double e = adjacency(i, j);
            if (e != 0.0 && e != 1.0) problems.emplace_back("adjacency entries must be 0 or 1");
            if (e == 1.0 && !kernels.contains({i, j}))
                problems.emplace_back("missing interaction kernel g_" + std::to_string(i) + std::to_string(j));
        }
    }
    if (!problems.empty()) throw ValidationError(std::move(problems));
}

bool GeneralNetworkSpec::is_cyclic() const {
    const std::size_t n = size();
    if (adjacency.n != n || control_placement.size() != n) return false;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            if (adjacency(i, j) != (j == (i + 1) % n ? 1.0 : 0.0)) return false;
    for (std::size_t i = 0; i < n; ++i)
        if (control_placement[i] != (i == 0 ? 1 : 0)) return false;
    return true;
}

GeneralNetworkSpec make_cyclic_network(std::vector<SpeciesSpec> species) {
    GeneralNetworkSpec spec;
    const std::size_t n = species.size();
    spec.adjacency = SquareMatrix(n);
    spec.control_placement.assign(n, 0);
    if (n > 0) spec.control_placement[0] = 1;
    for (std::size_t i = 0; i < n; ++i) {
        spec.adjacency(i, (i + 1) % n) = 1.0;
        spec.kernels.emplace(std::pair{i, (i + 1) % n}, species[i].interaction);
    }
    spec.species = std::move(species);
    spec.validate();
    return spec;
}

SquareMatrix interaction_intensities(const GeneralNetworkSpec& spec, const PopulationState& state) {
    const std::size_t n = spec.size();
    if (state.rows() != n || !(state.grid() == spec.grid()))
        throw ValidationError({"state dimensions do not match the network"});
    SquareMatrix out(n);
    const double h = spec.grid().step();
    for (const auto& [ij, g] : spec.kernels) {
        const auto [i, j] = ij;
        if (spec.adjacency(i, j) == 1.0) out(i, j) = trapezoid_product(g.view(), state.row(j), h);
    }
    return out;
}

namespace {

void require_unit_cfl(const AgeGrid& grid, double dt) {
    if (std::abs(dt - grid.step()) > 1e-12 * grid.step())
        throw ConfigError("time step must equal the age step (dt = " + std::to_string(dt) +
                          ", da = " + std::to_string(grid.step()) + ")");
}

void require_nonnegative(const PopulationState& s) {
    for (std::size_t i = 0; i < s.rows(); ++i) {
        const auto r = s.row(i);
        for (std::size_t j = 0; j < r.size(); ++j)
            if (r[j] < 0.0 || std::isnan(r[j]))
                throw InvariantError("negative density " + std::to_string(r[j]) + " in row " + std::to_string(i) +
                                     " at a=" + std::to_string(s.grid().age(j)) + ", t=" + std::to_string(s.t));
    }
}

}  // namespace

PopulationState step(const GeneralNetworkSpec& spec, const PopulationState& state, double dt,
                     std::span<const double> controls) {
    const AgeGrid& grid = spec.grid();
    require_unit_cfl(grid, dt);
    if (controls.size() != spec.size()) throw ConfigError("one control value per species is required");
    const SquareMatrix gamma = interaction_intensities(spec, state);
    PopulationState next(grid, spec.size(), state.t + dt);
    const std::size_t n = static_cast<std::size_t>(grid.cells());
    for (std::size_t i = 0; i < spec.size(); ++i) {
        double rate = spec.control_placement[i] == 1 ? controls[i] : 0.0;
        for (std::size_t j = 0; j < spec.size(); ++j) rate += gamma(i, j);
        const auto& mu = spec.species[i].mortality.values;
        const auto x = state.row(i);
        auto y = next.row(i);
        for (std::size_t j = 0; j < n; ++j) y[j + 1] = x[j] * std::exp(-(0.5 * (mu[j] + mu[j + 1]) + rate) * dt);
        y[0] = trapezoid_product(spec.species[i].fertility.view(), x, grid.step());
        y[n] = 0.0;
    }
    require_nonnegative(next);
    return next;
}

std::size_t step_count(double horizon, double dt) {
    if (!(horizon >= 0.0) || !(dt > 0.0)) throw DomainError("horizon and step must be positive");
    return static_cast<std::size_t>(std::llround(horizon / dt));
}

Recorder::Recorder(std::vector<std::string> labels, SimOptions opts) : opts_(opts) {
    out_.labels = std::move(labels);
    if (opts_.stride == 0) opts_.stride = 1;
    out_.positivity.min_value = std::numeric_limits<double>::infinity();
}

void Recorder::observe(std::size_t k, const PopulationState& state, double u, std::optional<double> v) {
    for (std::size_t i = 0; i < state.rows(); ++i) {
        const auto r = state.row(i);
        for (std::size_t j = 0; j < r.size(); ++j)
            if (r[j] < out_.positivity.min_value || first_) {
                out_.positivity = {r[j], state.t, state.grid().age(j), i};
                first_ = false;
            }
    }
    if (k % opts_.stride == 0) {
        out_.times.push_back(state.t);
        std::vector<double> tot(state.rows());
        for (std::size_t i = 0; i < state.rows(); ++i) tot[i] = state.total(i);
        out_.totals.push_back(std::move(tot));
        out_.control.push_back(u);
        out_.lyapunov.push_back(v.value_or(std::numeric_limits<double>::quiet_NaN()));
    }
    if (opts_.snapshot_every > 0 && k % opts_.snapshot_every == 0) out_.snapshots.push_back(state);
}

SimOutput Recorder::finish() && { return std::move(out_); }

SimOutput simulate(const GeneralNetworkSpec& spec, PopulationState initial, double horizon,
                   const ControlPolicy& controller, SimOptions opts) {
    spec.validate();
    if (!(horizon > 0.0)) throw DomainError("simulate: horizon must be positive");
    std::vector<std::string> labels;
    for (std::size_t i = 0; i < spec.size(); ++i) labels.push_back("x" + std::to_string(i + 1));
    Recorder rec(std::move(labels), opts);
    const double dt = spec.grid().step();
    const std::size_t steps = step_count(horizon, dt);
    std::vector<double> controls(spec.size(), 0.0);
    PopulationState state = std::move(initial);
    for (std::size_t k = 0;; ++k) {
        const ControlSample c = controller ? controller(state) : ControlSample{};
        if (!std::isfinite(c.u)) throw InvariantError("controller returned a non-finite value");
        rec.observe(k, state, c.u, c.lyapunov);
        if (k == steps) break;
        std::ranges::fill(controls, c.u);
        state = step(spec, state, dt, controls);
    }
    SimOutput out = std::move(rec).finish();
    out.final_state = std::move(state);
    return out;
}

double RenewalSolution::at(double t) const {
    const double s = t / dt;
    const auto k = std::min(static_cast<std::size_t>(s), b.size() - 2);
    const double w = s - static_cast<double>(k);
    return (1.0 - w) * b[k] + w * b[k + 1];
}

RenewalSolution solve_renewal(const RenewalProblem& problem, double dt) {
    if (!(dt > 0.0)) throw DomainError("solve_renewal: dt must be positive");
    const std::size_t n = std::max<std::size_t>(step_count(problem.horizon, dt), 1);
    RenewalSolution sol{dt, std::vector<double>(n + 1, 0.0)};
    auto& b = sol.b;
    b[0] = problem.forcing(0.0);
    for (std::size_t m = 1; m <= n; ++m) {
        const double t = static_cast<double>(m) * dt;
        double hist = 0.5 * problem.kernel(t, t) * b[0];
        for (std::size_t j = 1; j < m; ++j) hist += problem.kernel(t - static_cast<double>(j) * dt, t) * b[j];
        const double denom = 1.0 - 0.5 * dt * problem.kernel(0.0, t);
        if (denom <= 0.0) throw NumericError("solve_renewal: step too large for the kernel magnitude");
        b[m] = (problem.forcing(t) + dt * hist) / denom;
    }
    return sol;
}

}  // namespace agepop
