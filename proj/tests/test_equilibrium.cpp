#include "agepop/equilibrium.hpp"
#include "agepop/errors.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>

using namespace agepop;

namespace {

// Independent bisection on a closed-form characteristic function.
double bisect(double lo, double hi, const auto& f) {
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        (f(mid) > 0.0 ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

SpeciesSpec constant_species(const AgeGrid& g, double mu, double beta, double gval = 1.0) {
    return make_species(constant_kernel(g, mu), constant_kernel(g, beta), constant_kernel(g, gval), g.max_age());
}

}  // namespace

TEST_CASE("growth exponent") {
    SUBCASE("beta = 3, mu = 1, A = 10") {
        const AgeGrid g(10.0, 20000);
        const double zeta = solve_zeta(constant_kernel(g, 3.0), constant_kernel(g, 1.0));
        const double oracle = bisect(0.0, 5.0, [](double z) { return 3.0 * -std::expm1(-(1.0 + z) * 10.0) / (1.0 + z) - 1.0; });
        CHECK(oracle == doctest::Approx(2.0).epsilon(1e-8));
        // Trapezoid error on e^{-3a} with da = 5e-4 stays below 1e-6.
        CHECK(std::abs(zeta - oracle) <= 1e-6);
        CHECK(std::abs(euler_lotka_residual(constant_kernel(g, 3.0), constant_kernel(g, 1.0), zeta)) <= 1e-12);
    }
    SUBCASE("beta = 2, mu = 0, A = 1") {
        const AgeGrid g(1.0, 4000);
        const double zeta = solve_zeta(constant_kernel(g, 2.0), constant_kernel(g, 0.0));
        const auto G = [](double z) { return 2.0 * -std::expm1(-z) / z - 1.0; };
        const double oracle = bisect(0.5, 3.0, G);
        // Newton from the other side agrees with the bisection.
        double nz = 3.0;
        for (int it = 0; it < 50; ++it) {
            const double d = (G(nz + 1e-7) - G(nz - 1e-7)) / 2e-7;
            nz -= G(nz) / d;
        }
        CHECK(std::abs(nz - oracle) <= 1e-8);
        CHECK(oracle == doctest::Approx(1.59362).epsilon(1e-5));
        CHECK(std::abs(zeta - oracle) <= 1e-6);
    }
    SUBCASE("net reproduction one gives zero") {
        const AgeGrid g(1.0, 10);
        CHECK(std::abs(solve_zeta(constant_kernel(g, 1.0), constant_kernel(g, 0.0))) <= 1e-12);
    }
    SUBCASE("no fertility has no root") {
        const AgeGrid g(1.0, 10);
        CHECK_THROWS_AS(solve_zeta(constant_kernel(g, 0.0), constant_kernel(g, 1.0)), NumericError);
    }
}

TEST_CASE("adjoint vanishes at the maximal age and equals one at birth") {
    const AgeGrid g(5.0, 500);
    testkit::Gen gen(3);
    const auto beta = gen.kernel(g, 0.5, 2.0);
    const auto mu = gen.kernel(g, 0.1, 0.5);
    const double zeta = solve_zeta(beta, mu);
    const auto pi0 = adjoint_function(beta, mu, zeta);
    CHECK(pi0.back() == 0.0);
    // pi0(0) reproduces the characteristic integral, which is one at the root.
    CHECK(pi0.front() == doctest::Approx(1.0).epsilon(1e-10));
    // Adjoint equation pi0' = (zeta + mu) pi0 - k, checked by central differences.
    for (std::size_t j = 10; j + 10 < g.nodes(); j += 37) {
        const double d = (pi0[j + 1] - pi0[j - 1]) / (2.0 * g.step());
        CHECK(std::abs(d - ((zeta + mu[j]) * pi0[j] - beta[j])) <= 5e-3);
    }
}

TEST_CASE("cyclic equilibrium") {
    const AgeGrid g(4.0, 4000);
    SUBCASE("closed-form newborn values with g = 1") {
        std::vector<SpeciesSpec> sp{constant_species(g, 0.5, 2.0), constant_species(g, 0.4, 1.5),
                                    constant_species(g, 0.3, 1.2)};
        const auto net = make_cyclic_network(sp);
        const double u_star = 0.2;
        const auto eq = build_equilibrium(net, u_star);
        for (std::size_t i = 0; i < 3; ++i) {
            const auto& s = eq.species[i];
            const std::size_t prey = (i + 2) % 3;
            const double rate = (i == 0 ? 0.5 : i == 1 ? 0.4 : 0.3) + s.zeta;
            const double lam = eq.species[prey].zeta - (prey == 0 ? u_star : 0.0);
            const double closed = lam * rate / -std::expm1(-rate * 4.0);
            CHECK(testkit::rel_err(s.newborn, closed) <= 1e-6);
            CHECK(s.newborn > 0.0);
        }
        CHECK(eq.species[0].zeta == doctest::Approx(eq.species[1].lambda + u_star).epsilon(1e-10));
    }
    SUBCASE("symmetric species share the growth exponent") {
        const auto sp = constant_species(g, 0.5, 2.0);
        const auto eq = build_equilibrium(make_cyclic_network({sp, sp, sp}), 0.3);
        CHECK(eq.species[0].zeta == eq.species[1].zeta);
        CHECK(eq.species[1].lambda == doctest::Approx(eq.species[0].zeta - 0.3).epsilon(1e-10));
    }
    SUBCASE("u* outside (0, zeta_1) is infeasible") {
        const auto sp = constant_species(g, 0.5, 2.0);
        const auto net = make_cyclic_network({sp, sp, sp});
        const double z1 = solve_zeta(sp.fertility, sp.mortality);
        CHECK_THROWS_AS(build_equilibrium(net, 0.0), InfeasibleError);
        CHECK_THROWS_AS(build_equilibrium(net, z1), InfeasibleError);
        const auto near = build_equilibrium(net, z1 * (1.0 - 1e-9));
        CHECK(near.species[1].newborn < 1e-8);
    }
}

TEST_CASE("reproduction number and classification") {
    const AgeGrid g(10.0, 20000);
    const auto sp = constant_species(g, 0.0, 2.0);
    CHECK(classify(reproduction_number(sp, constant_kernel(g, 1e4))) == Stability::stable);
    const double r0 = reproduction_number(sp, constant_kernel(g, 1.0));
    CHECK(std::abs(r0 - 2.0 * -std::expm1(-10.0)) <= 1e-7);
    CHECK(classify(r0) == Stability::unstable);
    CHECK(classify(1.0 + 1e-12) == Stability::critical);
    CHECK(std::string(to_string(Stability::critical)) == "critical");
}

TEST_CASE("property: growth exponent monotone in fertility and mortality") {
    testkit::Gen gen(41);
    for (int trial = 0; trial < 100; ++trial) {
        const AgeGrid g(gen.uniform(1.0, 8.0), gen.integer(20, 200));
        const auto beta = gen.kernel(g, 0.2, 2.0);
        const auto mu = gen.kernel(g, 0.0, 1.0);
        const double z = solve_zeta(beta, mu);
        auto b2 = beta;
        for (double& v : b2.values) v *= 1.1;
        auto m2 = mu;
        for (double& v : m2.values) v += 0.05;
        CHECK(solve_zeta(b2, mu) > z);
        CHECK(solve_zeta(beta, m2) < z);
    }
}

TEST_CASE("property: growth exponent sign agrees with R0 - 1") {
    testkit::Gen gen(42);
    for (int trial = 0; trial < 200; ++trial) {
        const AgeGrid g(gen.uniform(1.0, 8.0), gen.integer(20, 200));
        const auto beta = gen.kernel(g, 0.0, 1.5);
        const auto mu = gen.kernel(g, 0.0, 1.0);
        const auto sp = make_species(mu, beta, constant_kernel(g, 1.0), g.max_age());
        const double r0 = reproduction_number(sp, mu);
        if (std::abs(r0 - 1.0) < 1e-9) continue;
        CHECK((solve_zeta(beta, mu) > 0.0) == (r0 > 1.0));
    }
}

TEST_CASE("property: equilibrium is preserved by the transport solver") {
    const AgeGrid g(3.0, 300);
    testkit::Gen gen(43);
    std::vector<SpeciesSpec> sp;
    for (int i = 0; i < 3; ++i)
        sp.push_back(make_species(gen.kernel(g, 0.1, 0.4), gen.kernel(g, 1.0, 2.0), gen.kernel(g, 0.5, 1.0), 3.0));
    const auto net = make_cyclic_network(sp);
    const auto eq = build_equilibrium(net, 0.3);
    PopulationState s = equilibrium_state(eq);
    std::vector<double> start(3);
    for (std::size_t i = 0; i < 3; ++i) start[i] = s.total(i);
    const std::vector<double> u{0.3, 0.0, 0.0};
    for (std::size_t k = 0; k < g.cells(); ++k) s = step(net, s, g.step(), u);
    for (std::size_t i = 0; i < 3; ++i) CHECK(testkit::rel_err(s.total(i), start[i]) <= 5e-3);
}
