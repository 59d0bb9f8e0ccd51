#pragma once

#include "agepop/grid.hpp"
#include "agepop/mosquito.hpp"
#include "agepop/transport.hpp"
#include "agepop/verification.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace agepop {

inline constexpr int kSchemaVersion = 1;

enum class ModelKind { linear_demographic, cyclic, general_network, mosquito_bio, mosquito_genetic };

// "cyclic-3" style names carry the species count; it must match the species list.
struct KindName {
    ModelKind kind;
    int species = 0;  // only meaningful for cyclic
};
KindName parse_kind(const std::string& name);
std::string kind_name(ModelKind kind, std::size_t species);

struct SpeciesConfig {
    std::string name;
    KernelForm mortality = ConstantForm{0.0};
    KernelForm fertility = ConstantForm{0.0};
    KernelForm interaction = ConstantForm{0.0};
    std::optional<double> max_age;  // defaults to the grid's A
    std::optional<double> r0;       // rescale fertility to this net reproduction number
};

struct InteractionLink {
    std::size_t prey = 0, predator = 0;
    KernelForm kernel = ConstantForm{0.0};
};

struct ControllerSettings {
    double u_star = 0.0;
    double theta = 1.0;
    double terminal_gain = 1.0;
    std::vector<double> gains;  // empty: ratio pattern from the equilibrium
    std::optional<double> u_max;
    double eps_z = 1e-9;
};

// Initial densities. "equilibrium" multiplies the equilibrium profiles by per-species
// scales and an optional seeded random perturbation; "profiles" uses analytic recipes.
struct InitialRecipe {
    enum class Kind { equilibrium, profiles };
    Kind kind = Kind::profiles;
    std::vector<double> scales;  // one per species, or a single value for all
    double noise = 0.0;          // relative amplitude of the seeded perturbation
    std::vector<KernelForm> profiles;
};

struct MosquitoConfig {
    KernelForm mu0 = ConstantForm{0.0}, mu1 = ConstantForm{0.0};
    KernelForm mu_F = ConstantForm{0.0}, mu_M = ConstantForm{0.0};
    std::optional<KernelForm> mu_Fj, mu_Fa;  // default to mu_F
    KernelForm mu_Ms = ConstantForm{0.0};
    KernelForm emergence = ConstantForm{0.0};
    KernelForm male_weight = ConstantForm{0.0};
    KernelForm beta0 = ConstantForm{0.0};
    double tau = 1.0, r = 0.5, iota = 1.0, delta = 1.0;
    TimeFunction K = ConstantFn{1.0}, Gamma = ConstantFn{1.0}, gamma = ConstantFn{1.0};
    std::vector<Release> releases;
    std::size_t release_cells = 5;
    Strategy strategy = Strategy::bio;
    double P_star = 0.0;
    double initial_scale = 1.5;
    bool uncontrolled_twin = true;
};

struct OutputSettings {
    std::size_t stride = 1;
    std::size_t snapshot_every = 0;
};

struct Scenario {
    int schema_version = kSchemaVersion;
    std::string name;
    ModelKind kind = ModelKind::linear_demographic;
    double max_age = 1.0;
    int cells = 100;
    double horizon = 1.0;
    std::uint64_t seed = 0;
    std::vector<SpeciesConfig> species;
    // general-network only
    std::vector<std::vector<int>> adjacency;
    std::vector<InteractionLink> links;
    std::vector<int> control_placement;
    double open_loop_control = 0.0;  // constant rate on the controlled species
    std::optional<ControllerSettings> controller;
    InitialRecipe initial;
    std::optional<MosquitoConfig> mosquito;
    OutputSettings output;
    Tolerances tolerances;
    double convergence_l1 = 0.05;  // distance to the equilibrium profiles accepted at the horizon

    AgeGrid grid() const { return AgeGrid(max_age, cells); }
};

// Parses and validates; throws ValidationError listing every problem found.
Scenario parse_scenario(std::string_view text);
Scenario load_scenario(const std::filesystem::path& path);
std::string dump_scenario(const Scenario& s);
void save_scenario(const Scenario& s, const std::filesystem::path& path);

// Model objects. These assume a validated scenario.
std::vector<SpeciesSpec> build_species(const Scenario& s);
GeneralNetworkSpec build_network(const Scenario& s);
MosquitoSpec build_mosquito(const Scenario& s);

// Overrides one numeric parameter by path, for sweeps. Supported paths: horizon, seed,
// controller.u_star, controller.theta, controller.terminal_gain, mosquito.P_star,
// mosquito.alpha (every release mass), mosquito.initial_scale, initial.scale, initial.noise,
// grid.cells.
void set_parameter(Scenario& s, const std::string& path, double value);

}  // namespace agepop
