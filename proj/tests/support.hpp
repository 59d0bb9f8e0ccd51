#pragma once

#include "agepop/grid.hpp"

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace testkit {

// Seeded generators for the hand-rolled property checks. Each property draws its own
// stream so a failure can be replayed by seed.
class Gen {
public:
    explicit Gen(std::uint64_t seed) : rng_(seed) {}

    double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
    int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }

    // Smooth nonnegative kernel: a positive base plus a couple of random bumps.
    agepop::KernelSample kernel(const agepop::AgeGrid& g, double lo, double hi) {
        const double base = uniform(lo, hi);
        const double c1 = uniform(0.0, g.max_age()), w1 = uniform(0.1, 0.5) * g.max_age();
        const double h1 = uniform(0.0, hi - lo);
        std::vector<double> v(g.nodes());
        for (std::size_t j = 0; j < v.size(); ++j) {
            const double a = g.age(j);
            v[j] = base + h1 * std::exp(-0.5 * (a - c1) * (a - c1) / (w1 * w1));
        }
        return agepop::KernelSample(g, std::move(v));
    }

    std::mt19937_64& engine() { return rng_; }

private:
    std::mt19937_64 rng_;
};

inline double rel_err(double got, double want) { return std::abs(got - want) / std::max(std::abs(want), 1e-300); }

}  // namespace testkit
