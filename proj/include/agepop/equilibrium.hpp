#pragma once

#include "agepop/grid.hpp"
#include "agepop/transport.hpp"

#include <vector>

namespace agepop {

// Growth exponent: the real root of int k(a) exp(-int_0^a (mu + zeta)) da = 1.
double solve_zeta(const KernelSample& fertility, const KernelSample& mortality);
double euler_lotka_residual(const KernelSample& fertility, const KernelSample& mortality, double zeta);

// pi0(a) = int_a^A k(s) exp(-int_a^s (zeta + mu)) ds on the grid nodes.
std::vector<double> adjoint_function(const KernelSample& fertility, const KernelSample& mortality, double zeta);

struct SpeciesEquilibrium {
    double zeta = 0.0;
    double newborn = 0.0;         // x*(0)
    double lambda = 0.0;          // int g_{i-1} x*_i
    std::vector<double> shape;    // exp(-int (mu + zeta)), equal to 1 at a = 0
    std::vector<double> profile;  // newborn * shape
    std::vector<double> adjoint;
};

struct Equilibrium {
    AgeGrid grid;
    double u_star = 0.0;
    std::vector<SpeciesEquilibrium> species;

    std::vector<double> lambdas() const;
};

// Steady state of the cyclic network for a prescribed equilibrium control u*.
Equilibrium build_equilibrium(const GeneralNetworkSpec& cyclic, double u_star);

// Equilibrium densities packed as a population state.
PopulationState equilibrium_state(const Equilibrium& eq);

enum class Stability { stable, unstable, critical };
const char* to_string(Stability s);

inline constexpr double kCriticalTolerance = 1e-9;

Stability classify(double r0, double tol = kCriticalTolerance);

// R0 = int beta(a) exp(-int_0^a loss) da with the caller-supplied linearized loss.
double reproduction_number(const SpeciesSpec& spec, const KernelSample& linearized_loss);

struct StabilityReport {
    std::vector<double> r0;
    std::vector<Stability> classification;
    bool all_below_one = false;
    bool all_above_one = false;
};

// Uses mu + lambda_{i+1} (plus u* on the controlled species) as the linearized loss.
StabilityReport stability_report(const GeneralNetworkSpec& cyclic, const Equilibrium& eq);

}  // namespace agepop
