#pragma once

#include "agepop/grid.hpp"
#include "agepop/transport.hpp"

#include <array>
#include <string>
#include <vector>

namespace agepop {

struct Release {
    double t = 0.0;
    double alpha = 0.0;
};

// Parameters of the aquatic/adult mosquito models. Every kernel starts at zero on the grid.
struct MosquitoSpec {
    explicit MosquitoSpec(AgeGrid g);

    AgeGrid grid;
    KernelSample mu0, mu1;     // aquatic mortality mu0 + mu1 * p, with p = int_0^tau I
    double tau = 1.0;          // end of the aquatic window used for p
    KernelSample mu_F, mu_M;
    KernelSample mu_Fj, mu_Fa, mu_Ms;
    KernelSample emergence;    // w
    KernelSample male_weight;  // lambda, fertile-male weight in m = int lambda M
    KernelSample beta0;
    double r = 0.5;
    double iota = 1.0;
    double delta = 1.0;
    TimeFunction K = ConstantFn{1.0};
    TimeFunction Gamma = ConstantFn{1.0};
    TimeFunction gamma = ConstantFn{1.0};
    std::vector<Release> releases;
    std::size_t release_cells = 5;  // ages (0, release_cells * da] receive each cohort

    // Throws ValidationError listing every problem.
    void validate() const;
    double K_star() const { return time_average(K); }
    double Gamma_star() const { return time_average(Gamma); }
    double gamma_star() const { return time_average(gamma); }
};

// Compartment rows of the two state layouts.
namespace bio {
inline constexpr std::size_t I = 0, F = 1, M = 2, rows = 3;
}
namespace genetic {
inline constexpr std::size_t I = 0, Fj = 1, Fa = 2, M = 3, Ms = 4, rows = 5;
}

// beta0 * m / (m + iota) * exp(-delta * m_s).
double fertility_modulated(double beta0, double m, double m_s, double iota, double delta);
double fertility_modulated(const MosquitoSpec& spec, double a, double m, double m_s);

// int M / (1 + int M + int M_s).
double mating_probability(double males, double sterile_males);
double mating_probability(const PopulationState& genetic_state);

// One step of the three-compartment model under aquatic control rate P (applied as given).
PopulationState step_bio(const MosquitoSpec& spec, const PopulationState& state, double dt, double P);
// One step of the five-compartment model. Releases are injected separately.
PopulationState step_genetic(const MosquitoSpec& spec, const PopulationState& state, double dt);
// Adds a sterile-male cohort of total mass alpha spread evenly over the release ages.
void inject_release(const MosquitoSpec& spec, PopulationState& genetic_state, double alpha);

struct MosquitoEquilibrium {
    double zeta_I = 0.0, zeta_F = 0.0, zeta_M = 0.0;
    double p_star = 0.0;
    double m_star = 0.0;
    double k_I = 0.0;
    double P_star = 0.0;
    double K_star = 0.0, Gamma_star = 0.0, gamma_star = 0.0;
    double residual = 0.0;  // r int w I~ * int beta F~ - 1
    std::vector<double> I, F, M;
    double I0 = 0.0, F0 = 0.0, M0 = 0.0;
};

MosquitoEquilibrium mosquito_equilibrium(const MosquitoSpec& spec, double P_star);
PopulationState bio_state(const MosquitoEquilibrium& eq, const AgeGrid& grid);

// Feedforward plus feedback law; may be negative, see applied_control.
double control_P(double t, const MosquitoEquilibrium& eq, const MosquitoSpec& spec);
inline double applied_control(double raw) { return raw < 0.0 ? 0.0 : raw; }

using Matrix2 = std::array<std::array<double, 2>, 2>;

Matrix2 q_matrix(double Gamma, double gamma, double K);
double lambda_min_closed_form(double Gamma, double gamma, double K);

struct StabilityCondition {
    bool holds = false;
    bool degenerate = false;
    double lambda_min = 0.0;
};

StabilityCondition stability_condition(double Gamma, double gamma, double K);
StabilityCondition stability_condition(const MosquitoSpec& spec, double t);

double lyapunov_VI(double eta_I, double k_I);
double lyapunov_V_delay(double eta_I, double k_I, std::span<const double> psi_I, double gamma1, double sigma,
                        double da);

enum class Strategy { none, bio, bio_static, genetic };
Strategy parse_strategy(const std::string& name);
const char* to_string(Strategy s);

struct Certificate {
    bool lyapunov_monotone = true;
    double max_positivity_violation = 0.0;
    double condition_fraction = 0.0;  // share of steps where the positivity condition of Q holds
    double worst_lyapunov_rise = 0.0;
    std::size_t clamp_events = 0;
};

struct StrategyRun {
    Strategy strategy = Strategy::none;
    SimOutput out;                    // totals per compartment, applied control, V_I
    std::vector<double> eta_I;        // ln(int I / k_I), NaN without an equilibrium
    std::vector<double> recruitment;  // I(0, t)
    std::vector<double> mating;       // genetic runs only
    std::vector<bool> in_feasible_set;
    double final_relative_gap = 0.0;  // |int I - k_I| / k_I at the horizon
    Certificate certificate;
};

struct StrategyOptions {
    double horizon = 0.0;
    double P_star = 0.0;
    double initial_scale = 1.5;     // initial densities relative to the equilibrium profiles
    double lyapunov_slack = 10.0;   // V(t + dt) <= V(t) + slack * dt^2
    std::size_t stride = 1;
    std::size_t snapshot_every = 0;
};

StrategyRun run_strategy(const MosquitoSpec& spec, Strategy strategy, const StrategyOptions& opts);

}  // namespace agepop
