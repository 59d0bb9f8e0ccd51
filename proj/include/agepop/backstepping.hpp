#pragma once

#include "agepop/equilibrium.hpp"
#include "agepop/grid.hpp"
#include "agepop/transport.hpp"

#include <cmath>
#include <optional>
#include <span>
#include <vector>

namespace agepop {

// Data of the reduced cyclic system. lambda[i] holds lambda_{i+1}.
struct CyclicSystem {
    std::vector<double> lambda;
    double u_star = 0.0;

    std::size_t size() const noexcept { return lambda.size(); }
    static CyclicSystem from(const Equilibrium& eq);
};

struct ControllerConfig {
    double theta = 1.0;
    std::vector<double> gains;  // c_1 .. c_{N-1}
    double terminal_gain = 1.0; // c_N
    double u_min = 0.0;
    double u_max = 0.0;
    double eps_z = 1e-9;

    // Offset gain multiplying phi_1(z_{N-1}) in the expanded N = 3 and N = 4 laws.
    double terminal_offset_gain() const { return terminal_gain + 1.0; }
};

// c_i = lambda_{i+2} / lambda_{i+1} for i < N-1 and c_{N-1} = lambda_1 / lambda_N.
std::vector<double> ratio_gains(std::span<const double> lambda);

// Gains from the ratio pattern, saturation [0, 10 u*] unless overridden.
ControllerConfig derive_config(const CyclicSystem& sys, double theta = 1.0, double terminal_gain = 1.0);

inline double phi(double lambda, double x) { return lambda * std::expm1(x); }
inline double omega(double x) { return std::expm1(x) - x; }

// z_1 = eta_3 - eta_2, z_i = eta_{i+2} - z_{i-1}, z_{N-1} = eta_1 - z_{N-2}. Linear in eta.
std::vector<double> z_coordinates(std::span<const double> eta);

struct ReducedState {
    std::vector<double> eta;
    std::vector<double> z;
    // psi[i][j] = psi_i(t - a_j) on every grid node. The node a = A is absorbing, so
    // psi = -1 is allowed there and nowhere else.
    std::vector<std::vector<double>> psi;
    double u = 0.0;
    double V = 0.0;
};

ReducedState to_reduced(const PopulationState& state, const Equilibrium& eq);
PopulationState from_reduced(const ReducedState& red, const Equilibrium& eq);

// Reduced vector field with psi == 0: returns d(eta)/dt for a given applied control.
std::vector<double> reduced_rhs(std::span<const double> eta, const CyclicSystem& sys, double u);

// Closed-form general-N law without guard or saturation.
double control_formula(std::span<const double> eta, const CyclicSystem& sys, const ControllerConfig& cfg);
// Dedicated expanded laws for three and four species.
double control_formula_three(std::span<const double> eta, const CyclicSystem& sys, const ControllerConfig& cfg);
double control_formula_four(std::span<const double> eta, const CyclicSystem& sys, const ControllerConfig& cfg);

struct ControlDecision {
    double u = 0.0;    // applied value
    double raw = 0.0;  // formula value before saturation (previous u when guarded)
    bool guarded = false;
    bool clamped = false;
};

ControlDecision control_law(std::span<const double> eta, const CyclicSystem& sys, const ControllerConfig& cfg,
                            double previous_u);

double lyapunov_VN(std::span<const double> eta, const CyclicSystem& sys, const ControllerConfig& cfg);
// Prescribed dissipation -theta c_1 phi_2^2 - theta sum c_i phi_{i+1}(z_{i-1})^2 - c_N phi_1(z_{N-1})^2.
double lyapunov_VN_rate(std::span<const double> eta, const CyclicSystem& sys, const ControllerConfig& cfg);
// Chain rule dV/dt for an arbitrary eta velocity.
double lyapunov_VN_derivative(std::span<const double> eta, std::span<const double> eta_dot,
                              const CyclicSystem& sys, const ControllerConfig& cfg);

// h(p) = int_0^p (e^z - 1)^2 / z dz for p >= 0.
double h_integral(double p);
// max_a |psi(t-a)| e^{-a sigma} / (1 + max(0, min_a psi(t-a))) over ages a_j = j * da.
double g_functional(std::span<const double> psi, double da, double sigma);

struct DelayWeights {
    std::vector<double> gamma;
    std::vector<double> sigma;
};

double lyapunov_VG(const ReducedState& red, const CyclicSystem& sys, const ControllerConfig& cfg,
                   const DelayWeights& w, double da);

struct FeasibilityCaps {
    std::vector<double> gamma;  // weights gamma_i
    std::vector<double> bound;  // C_i
};

// gamma_i = 2 C_i lambda_i, so every cap sits at ln 2.
FeasibilityCaps default_caps(const CyclicSystem& sys, std::span<const double> bounds);

struct FeasibilityReport {
    bool inside = false;
    bool control_positive = false;
    bool singular = false;
    std::vector<bool> cap_ok;
    double u = 0.0;
    double V = 0.0;
};

FeasibilityReport feasible_set_check(std::span<const double> eta, const CyclicSystem& sys,
                                     const ControllerConfig& cfg, const std::optional<FeasibilityCaps>& caps);

struct H6Result {
    bool holds = false;
    double best_kappa = 0.0;
    double min_integral = 0.0;
    double margin = 0.0;  // 1 - min_integral
};

// Scans kappa in [0, kappa_max] for int |k~ - z kappa int_a^A k~| e^{sigma a} da < 1.
H6Result check_H6(const KernelSample& ktilde, double sigma, double kappa_max = 4.0, std::size_t samples = 4001);

// k~(a) = k(a) exp(-int_0^a (mu + zeta)), normalised so that it integrates to one.
KernelSample normalized_kernel(const SpeciesSpec& spec, double zeta);

// History-driven reduced dynamics: lambda-hat_i(t) = int w_i(a) (1 + psi_i(t - a)) da.
struct DelayModel {
    AgeGrid grid;
    std::vector<std::vector<double>> ktilde;  // per species, on the grid
    std::vector<std::vector<double>> weight;  // w_i = g_{i-1} x*_i, on the grid
    std::vector<std::vector<double>> psi0;    // initial histories psi_i(-a_j)
    std::vector<double> sigma;                // decay rates used for the G functional
};

DelayModel delay_model(const GeneralNetworkSpec& cyclic, const Equilibrium& eq,
                       std::vector<std::vector<double>> psi0);

struct TrajectoryRow {
    double t = 0.0;
    std::vector<double> eta;
    std::vector<double> z;
    double u = 0.0;
    double V = 0.0;
    double vdot_analytic = 0.0;
    double vdot_numeric = 0.0;
    int zlast_sign = 0;
    bool saturated = false;
    bool guarded = false;
};

struct ClosedLoopTrajectory {
    std::vector<TrajectoryRow> rows;
    std::size_t clamp_events = 0;
    std::size_t guard_events = 0;
    bool feasible_start = false;
    std::vector<std::vector<double>> g_series;  // G_i over time in delay mode
};

// RK4 integration of the reduced closed loop; the control is evaluated in every stage.
ClosedLoopTrajectory closed_loop_reduced(const CyclicSystem& sys, const ControllerConfig& cfg,
                                         std::vector<double> eta0, double horizon, double dt,
                                         const std::optional<DelayModel>& delay = std::nullopt,
                                         std::size_t stride = 1);

// Feedback policy for the full PDE: computes eta from the state and applies control_law.
ControlPolicy backstepping_policy(const Equilibrium& eq, const ControllerConfig& cfg);

}  // namespace agepop
