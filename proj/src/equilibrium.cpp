#include "agepop/equilibrium.hpp"

#include "agepop/errors.hpp"

#include <algorithm>
#include <cmath>

namespace agepop {

namespace {

double lotka_integral(std::span<const double> k, std::span<const double> pi, const AgeGrid& g, double zeta) {
    const double h = g.step();
    const std::size_t n = k.size();
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        const double w = (j == 0 || j + 1 == n) ? 0.5 : 1.0;
        if (k[j] != 0.0) s += w * k[j] * pi[j] * std::exp(-zeta * g.age(j));
    }
    return s * h;
}

}  // namespace

double euler_lotka_residual(const KernelSample& fertility, const KernelSample& mortality, double zeta) {
    const auto pi = survival_profile(mortality);
    return lotka_integral(fertility.view(), pi, mortality.grid, zeta) - 1.0;
}

double solve_zeta(const KernelSample& fertility, const KernelSample& mortality) {
    const AgeGrid& g = mortality.grid;
    const auto pi = survival_profile(mortality);
    if (lotka_integral(fertility.view(), pi, g, 0.0) <= 0.0)
        throw NumericError("solve_zeta: fertility vanishes, the characteristic equation has no root");
    auto G = [&](double z) { return lotka_integral(fertility.view(), pi, g, z) - 1.0; };

    const double min_mu = *std::ranges::min_element(mortality.values);
    const double max_beta = *std::ranges::max_element(fertility.values);
    double lo = -min_mu + 1e-8;
    double hi = std::max(10.0 * max_beta, lo + 1.0);
    double width = hi - lo;
    for (int it = 0; G(lo) < 0.0; ++it) {
        if (it > 200) throw NumericError("solve_zeta: lower bracket expansion failed");
        hi = lo;
        lo -= width;
        width *= 2.0;
    }
    width = hi - lo;
    for (int it = 0; G(hi) > 0.0; ++it) {
        if (it > 200) throw NumericError("solve_zeta: upper bracket expansion failed");
        lo = hi;
        hi += width;
        width *= 2.0;
    }
    double mid = 0.5 * (lo + hi);
    for (int it = 0; it < 400; ++it) {
        mid = 0.5 * (lo + hi);
        const double gm = G(mid);
        if (gm == 0.0 || std::abs(gm) <= 1e-13 || hi - lo <= 4e-16 * std::max(1.0, std::abs(mid))) break;
        (gm > 0.0 ? lo : hi) = mid;
    }
    if (std::abs(G(mid)) > 1e-12) throw NumericError("solve_zeta: bisection stalled above tolerance");
    return mid;
}

std::vector<double> adjoint_function(const KernelSample& fertility, const KernelSample& mortality, double zeta) {
    const AgeGrid& g = mortality.grid;
    const double h = g.step();
    const std::size_t n = g.nodes();
    std::vector<double> pi0(n, 0.0);
    for (std::size_t j = n - 1; j-- > 0;) {
        const double r = std::exp(-0.5 * h * (mortality[j] + mortality[j + 1] + 2.0 * zeta));
        pi0[j] = 0.5 * h * fertility[j] + r * (pi0[j + 1] + 0.5 * h * fertility[j + 1]);
    }
    return pi0;
}

std::vector<double> Equilibrium::lambdas() const {
    std::vector<double> out;
    out.reserve(species.size());
    for (const auto& s : species) out.push_back(s.lambda);
    return out;
}

Equilibrium build_equilibrium(const GeneralNetworkSpec& cyclic, double u_star) {
    cyclic.validate();
    if (!cyclic.is_cyclic()) throw ConfigError("build_equilibrium expects the cyclic preset network");
    const std::size_t n = cyclic.size();
    if (n < 2) throw ConfigError("cyclic network needs at least two species");
    const AgeGrid& grid = cyclic.grid();
    const double h = grid.step();

    Equilibrium eq{grid, u_star, std::vector<SpeciesEquilibrium>(n)};
    for (std::size_t i = 0; i < n; ++i) {
        auto& s = eq.species[i];
        s.zeta = solve_zeta(cyclic.species[i].fertility, cyclic.species[i].mortality);
        s.shape = survival_profile(cyclic.species[i].mortality, s.zeta);
        s.adjoint = adjoint_function(cyclic.species[i].fertility, cyclic.species[i].mortality, s.zeta);
    }
    const double zeta1 = eq.species[0].zeta;
    if (!(u_star > 0.0 && u_star < zeta1))
        throw InfeasibleError("u* = " + std::to_string(u_star) + " lies outside (0, zeta_1 = " + std::to_string(zeta1) + ")");
    for (std::size_t i = 1; i < n; ++i)
        if (!(eq.species[i].zeta > 0.0))
            throw InfeasibleError("species " + std::to_string(i + 1) + " has nonpositive growth exponent " +
                                  std::to_string(eq.species[i].zeta));

    // lambda_i balances the loss of the prey of species i: species i-1 (mod n).
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t prey = (i + n - 1) % n;
        double lambda = eq.species[prey].zeta;
        if (prey == 0) lambda -= u_star;
        const auto& g = cyclic.species[prey].interaction;
        const double weight = trapezoid_product(g.view(), eq.species[i].shape, h);
        if (!(weight > 0.0)) throw InfeasibleError("interaction kernel does not see species " + std::to_string(i + 1));
        auto& s = eq.species[i];
        s.lambda = lambda;
        s.newborn = lambda / weight;
        s.profile = s.shape;
        for (double& v : s.profile) v *= s.newborn;
    }
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t prey = (i + n - 1) % n;
        const double lam = trapezoid_product(cyclic.species[prey].interaction.view(), eq.species[i].profile, h);
        const double expect = eq.species[prey].zeta - (prey == 0 ? u_star : 0.0);
        if (std::abs(lam - expect) > 1e-8 * std::max(1.0, std::abs(expect)))
            throw NumericError("equilibrium coupling residual exceeds 1e-8");
    }
    return eq;
}

PopulationState equilibrium_state(const Equilibrium& eq) {
    PopulationState s(eq.grid, eq.species.size());
    for (std::size_t i = 0; i < eq.species.size(); ++i) std::ranges::copy(eq.species[i].profile, s.row(i).begin());
    return s;
}

const char* to_string(Stability s) {
    switch (s) {
        case Stability::stable: return "stable";
        case Stability::unstable: return "unstable";
        case Stability::critical: return "critical";
    }
    return "?";
}

Stability classify(double r0, double tol) {
    if (std::abs(r0 - 1.0) <= tol) return Stability::critical;
    return r0 < 1.0 ? Stability::stable : Stability::unstable;
}

double reproduction_number(const SpeciesSpec& spec, const KernelSample& linearized_loss) {
    const auto surv = survival_profile(linearized_loss);
    return trapezoid_product(spec.fertility.view(), surv, linearized_loss.grid.step());
}

StabilityReport stability_report(const GeneralNetworkSpec& cyclic, const Equilibrium& eq) {
    StabilityReport rep;
    const std::size_t n = cyclic.size();
    for (std::size_t i = 0; i < n; ++i) {
        double rate = eq.species[(i + 1) % n].lambda + (i == 0 ? eq.u_star : 0.0);
        KernelSample loss = cyclic.species[i].mortality;
        for (double& v : loss.values) v += rate;
        const double r0 = reproduction_number(cyclic.species[i], loss);
        rep.r0.push_back(r0);
        rep.classification.push_back(classify(r0));
    }
    rep.all_below_one = std::ranges::all_of(rep.r0, [](double r) { return r < 1.0; });
    rep.all_above_one = std::ranges::all_of(rep.r0, [](double r) { return r > 1.0; });
    return rep;
}

}  // namespace agepop
