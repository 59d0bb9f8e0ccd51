#pragma once

#include "agepop/grid.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace agepop {

// Age densities of several species (or compartments) on a shared grid at time t.
class PopulationState {
public:
    PopulationState(AgeGrid grid, std::size_t rows, double t = 0.0);

    const AgeGrid& grid() const noexcept { return grid_; }
    std::size_t rows() const noexcept { return rows_; }
    std::span<double> row(std::size_t i);
    std::span<const double> row(std::size_t i) const;
    double total(std::size_t i) const;
    double min_value() const;

    double t;

private:
    AgeGrid grid_;
    std::size_t rows_;
    std::vector<double> data_;
};

// Dense square matrix used for adjacency patterns and interaction intensities.
struct SquareMatrix {
    std::size_t n = 0;
    std::vector<double> a;

    explicit SquareMatrix(std::size_t size = 0) : n(size), a(size * size, 0.0) {}
    double& operator()(std::size_t i, std::size_t j) { return a[i * n + j]; }
    double operator()(std::size_t i, std::size_t j) const { return a[i * n + j]; }
};

struct GeneralNetworkSpec {
    std::vector<SpeciesSpec> species;
    // adjacency(i, j) == 1 when species j suppresses species i through kernels.at({i, j}).
    SquareMatrix adjacency;
    std::map<std::pair<std::size_t, std::size_t>, KernelSample> kernels;
    std::vector<int> control_placement;

    std::size_t size() const noexcept { return species.size(); }
    const AgeGrid& grid() const { return species.front().mortality.grid; }
    // Throws ValidationError listing every structural problem.
    void validate() const;
    bool is_cyclic() const;
};

// Species i is suppressed by species i+1 (mod N) through species[i].interaction; the
// control acts on species 0 only.
GeneralNetworkSpec make_cyclic_network(std::vector<SpeciesSpec> species);

SquareMatrix interaction_intensities(const GeneralNetworkSpec& spec, const PopulationState& state);

// One characteristic step of length dt == da. `controls` holds one rate per species and
// is applied only where control_placement is 1.
PopulationState step(const GeneralNetworkSpec& spec, const PopulationState& state, double dt,
                     std::span<const double> controls);

struct ControlSample {
    double u = 0.0;
    std::optional<double> lyapunov;
};
using ControlPolicy = std::function<ControlSample(const PopulationState&)>;

struct SimOptions {
    std::size_t stride = 1;          // record every stride-th step
    std::size_t snapshot_every = 0;  // 0 disables profile snapshots
};

struct PositivityRecord {
    double min_value = 0.0;
    double t = 0.0;
    double a = 0.0;
    std::size_t row = 0;
};

struct SimOutput {
    std::vector<std::string> labels;
    std::vector<double> times;
    std::vector<std::vector<double>> totals;  // totals[k][i]
    std::vector<double> control;
    std::vector<double> lyapunov;  // NaN when no controller reports one
    std::vector<PopulationState> snapshots;
    std::optional<PopulationState> final_state;  // state at the horizon
    PositivityRecord positivity;
    std::uint64_t seed = 0;
};

// Accumulates the thinned time series and the running positivity audit of a march.
class Recorder {
public:
    Recorder(std::vector<std::string> labels, SimOptions opts);
    void observe(std::size_t step_index, const PopulationState& state, double u, std::optional<double> v);
    SimOutput finish() &&;

private:
    SimOptions opts_;
    SimOutput out_;
    bool first_ = true;
};

SimOutput simulate(const GeneralNetworkSpec& spec, PopulationState initial, double horizon,
                   const ControlPolicy& controller = {}, SimOptions opts = {});

std::size_t step_count(double horizon, double dt);

// b(t) = F(t) + int_0^t K(t - s, t) b(s) ds.
struct RenewalProblem {
    std::function<double(double)> forcing;
    std::function<double(double, double)> kernel;  // (age, time)
    double horizon = 0.0;
};

struct RenewalSolution {
    double dt = 0.0;
    std::vector<double> b;
    double at(double t) const;
};

RenewalSolution solve_renewal(const RenewalProblem& problem, double dt);

}  // namespace agepop
