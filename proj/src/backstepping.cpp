#include "agepop/backstepping.hpp"

#include "agepop/errors.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

namespace agepop {

namespace {

void require_chain(std::size_t n) {
    if (n < 3) throw ConfigError("the backstepping chain needs at least three species");
}

// One-based accessors keep the formulas close to their index conventions.
struct Indexed {
    std::span<const double> eta;
    std::vector<double> z;
    const CyclicSystem& sys;
    const ControllerConfig& cfg;

    std::size_t n() const { return sys.size(); }
    double lam(std::size_t i) const { return sys.lambda[i - 1]; }
    double e(std::size_t i) const { return eta[i - 1]; }
    double zz(std::size_t i) const { return z[i - 1]; }
    double c(std::size_t i) const { return i == n() ? cfg.terminal_gain : cfg.gains[i - 1]; }
    double ph(std::size_t k, double x) const { return phi(lam(k), x); }
};

Indexed index(std::span<const double> eta, const CyclicSystem& sys, const ControllerConfig& cfg) {
    require_chain(sys.size());
    if (eta.size() != sys.size()) throw ConfigError("eta has the wrong length");
    if (cfg.gains.size() + 1 != sys.size()) throw ConfigError("controller needs N - 1 gains");
    return Indexed{eta, z_coordinates(eta), sys, cfg};
}

double inner(std::span<const double> a, std::span<const double> b, double h) { return trapezoid_product(a, b, h); }

}  // namespace

CyclicSystem CyclicSystem::from(const Equilibrium& eq) { return CyclicSystem{eq.lambdas(), eq.u_star}; }

std::vector<double> ratio_gains(std::span<const double> lambda) {
    const std::size_t n = lambda.size();
    require_chain(n);
    std::vector<double> c(n - 1);
    for (std::size_t i = 1; i + 1 < n; ++i) c[i - 1] = lambda[i + 1] / lambda[i];
    c[n - 2] = lambda[0] / lambda[n - 1];
    return c;
}

ControllerConfig derive_config(const CyclicSystem& sys, double theta, double terminal_gain) {
    if (!(theta > 0.0)) throw ConfigError("theta must be positive");
    if (!(terminal_gain > 0.0)) throw ConfigError("terminal gain must be positive");
    ControllerConfig cfg;
    cfg.theta = theta;
    cfg.gains = ratio_gains(sys.lambda);
    cfg.terminal_gain = terminal_gain;
    cfg.u_min = 0.0;
    cfg.u_max = 10.0 * sys.u_star;
    for (double g : cfg.gains)
        if (!(g > 0.0)) throw ConfigError("derived gains must be positive");
    return cfg;
}

std::vector<double> z_coordinates(std::span<const double> eta) {
    const std::size_t n = eta.size();
    require_chain(n);
    std::vector<double> z(n - 1);
    z[0] = eta[2] - eta[1];
    for (std::size_t i = 1; i + 2 < n; ++i) z[i] = eta[i + 2] - z[i - 1];
    z[n - 2] = eta[0] - z[n - 3];
    return z;
}

ReducedState to_reduced(const PopulationState& state, const Equilibrium& eq) {
    const std::size_t n = eq.species.size();
    if (state.rows() != n || !(state.grid() == eq.grid)) throw ConfigError("state does not match the equilibrium");
    const double h = eq.grid.step();
    ReducedState red;
    red.eta.resize(n);
    red.psi.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& s = eq.species[i];
        const auto x = state.row(i);
        const double num = inner(s.adjoint, x, h);
        const double den = inner(s.adjoint, s.profile, h);
        if (!(num > 0.0) || !(den > 0.0))
            throw DomainError("to_reduced: nonpositive adjoint pairing for species " + std::to_string(i + 1));
        const double pi = num / den;
        red.eta[i] = std::log(pi);
        red.psi[i].resize(x.size());
        for (std::size_t j = 0; j < x.size(); ++j) red.psi[i][j] = x[j] / (s.profile[j] * pi) - 1.0;
    }
    if (n >= 3) red.z = z_coordinates(red.eta);
    return red;
}

PopulationState from_reduced(const ReducedState& red, const Equilibrium& eq) {
    const std::size_t n = eq.species.size();
    if (red.eta.size() != n || red.psi.size() != n) throw ConfigError("reduced state does not match the equilibrium");
    PopulationState out(eq.grid, n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& prof = eq.species[i].profile;
        const auto& psi = red.psi[i];
        if (psi.size() != prof.size()) throw ConfigError("psi history length differs from the grid");
        const double scale = std::exp(red.eta[i]);
        auto row = out.row(i);
        for (std::size_t j = 0; j < prof.size(); ++j) {
            const bool last = j + 1 == prof.size();
            if (psi[j] < -1.0 || (!last && psi[j] == -1.0))
                throw DomainError("from_reduced: psi <= -1 at node " + std::to_string(j));
            row[j] = prof[j] * (1.0 + psi[j]) * scale;
        }
    }
    return out;
}

std::vector<double> reduced_rhs(std::span<const double> eta, const CyclicSystem& sys, double u) {
    const std::size_t n = sys.size();
    std::vector<double> d(n);
    d[0] = sys.u_star - u - phi(sys.lambda[1], eta[1]);
    for (std::size_t i = 1; i + 1 < n; ++i) d[i] = -phi(sys.lambda[i + 1], eta[i + 1]);
    d[n - 1] = -phi(sys.lambda[0], eta[0]);
    return d;
}

double control_formula(std::span<const double> eta, const CyclicSystem& sys, const ControllerConfig& cfg) {
    const Indexed x = index(eta, sys, cfg);
    const std::size_t N = x.n();
    const double th = cfg.theta;
    const double P = x.ph(1, x.zz(N - 1));
    const double p2 = x.ph(2, x.e(2));

    double num = x.c(N) * P * P + th * x.c(1) * p2 * p2;
    for (std::size_t i = 1; i <= N - 2; ++i) {
        const double f = x.ph(i + 2, x.zz(i));
        num += th * x.c(i + 1) * f * f;
    }
    double u = sys.u_star + num / P + (P - th * x.ph(N, x.zz(N - 2))) / P * x.ph(1, x.e(1)) - p2;

    for (std::size_t k = 3; k <= N; ++k) {
        const int eps = k % 2 == 1 ? 1 : 0;
        double a = 0.0;
        for (std::size_t i = std::max<std::size_t>(1, k - 3); i <= N - 2; ++i) {
            const double sgn = (i + eps) % 2 == 0 ? 1.0 : -1.0;
            a += sgn * x.ph(i + 2, x.zz(i));
        }
        a *= th;
        a += ((N + 1 - eps) % 2 == 0 ? 1.0 : -1.0) * P;
        if (k == 3) a -= th * p2;
        u += a / P * x.ph(k, x.e(k));
    }
    return u;
}

double control_formula_three(std::span<const double> eta, const CyclicSystem& sys, const ControllerConfig& cfg) {
    const Indexed x = index(eta, sys, cfg);
    if (x.n() != 3) throw ConfigError("control_formula_three needs three species");
    const double th = cfg.theta;
    const double c1 = x.c(1), c2 = x.c(2);
    const double l1 = x.lam(1), l3 = x.lam(3);
    const double p = x.ph(2, x.e(2));
    const double q = x.ph(3, x.zz(1));
    const double r = x.ph(1, x.zz(2));
    return sys.u_star + cfg.terminal_offset_gain() * r - th * (c2 / l1) * q * q + (c2 - 1.0 - th) * q +
           (c2 / l1) * q * r - (c1 / l3) * q * p - (c1 + 1.0) * p +
           th * q / r * ((c1 / l3) * q * p - (c1 / l3) * p * p + (c1 - 1.0) * p + q);
}

double control_formula_four(std::span<const double> eta, const CyclicSystem& sys, const ControllerConfig& cfg) {
    const Indexed x = index(eta, sys, cfg);
    if (x.n() != 4) throw ConfigError("control_formula_four needs four species");
    const double th = cfg.theta;
    const double c1 = x.c(1), c2 = x.c(2), c3 = x.c(3);
    const double l1 = x.lam(1), l3 = x.lam(3), l4 = x.lam(4);
    const double p = x.ph(2, x.e(2));
    const double q = x.ph(3, x.zz(1));
    const double s = x.ph(4, x.zz(2));
    const double r = x.ph(1, x.zz(3));
    const double head = cfg.terminal_offset_gain() * r - th * (c3 / l1) * s * s + (c3 - 1.0 - th) * s +
                        (c1 - 1.0) * p + (c3 / l1) * s * r - (c2 / l4) * q * s - (c2 - 1.0) * q + (c1 / l3) * p * q;
    const double tail1 = th / r * (s * s - c1 * p * s + q * q);
    const double tail2 = th * q / r *
                         ((c1 / l3) * q * p - (c1 / l3) * p * p - (c2 / l4) * q * s + (c1 - 1.0) * p + (c2 - 2.0) * s +
                          (c2 / l4) * s * s - (c1 / l3) * p * s);
    return sys.u_star + head + tail1 + tail2;
}

ControlDecision control_law(std::span<const double> eta, const CyclicSystem& sys, const ControllerConfig& cfg,
                            double previous_u) {
    const std::size_t n = sys.size();
    require_chain(n);
    ControlDecision d;
    const bool origin = std::ranges::all_of(eta, [](double v) { return std::abs(v) <= 1e-14; });
    if (origin) {
        d.raw = sys.u_star;
    } else {
        const auto z = z_coordinates(eta);
        if (std::abs(phi(sys.lambda[0], z[n - 2])) <= cfg.eps_z) {
            d.guarded = true;
            d.raw = previous_u;
        } else if (n == 3) {
            d.raw = control_formula_three(eta, sys, cfg);
        } else if (n == 4) {
            d.raw = control_formula_four(eta, sys, cfg);
        } else {
            d.raw = control_formula(eta, sys, cfg);
        }
    }
    d.u = std::clamp(d.raw, cfg.u_min, cfg.u_max);
    d.clamped = d.u != d.raw;
    return d;
}

double lyapunov_VN(std::span<const double> eta, const CyclicSystem& sys, const ControllerConfig& cfg) {
    const Indexed x = index(eta, sys, cfg);
    const std::size_t N = x.n();
    double v = cfg.theta * x.lam(2) * omega(x.e(2));
    for (std::size_t i = 1; i <= N - 2; ++i) v += cfg.theta * x.lam(i + 2) * omega(x.zz(i));
    return v + x.lam(1) * omega(x.zz(N - 1));
}

double lyapunov_VN_rate(std::span<const double> eta, const CyclicSystem& sys, const ControllerConfig& cfg) {
    const Indexed x = index(eta, sys, cfg);
    const std::size_t N = x.n();
    const double p2 = x.ph(2, x.e(2));
    double r = -cfg.theta * x.c(1) * p2 * p2;
    for (std::size_t i = 2; i <= N - 1; ++i) {
        const double f = x.ph(i + 1, x.zz(i - 1));
        r -= cfg.theta * x.c(i) * f * f;
    }
    const double last = x.ph(1, x.zz(N - 1));
    return r - x.c(N) * last * last;
}

double lyapunov_VN_derivative(std::span<const double> eta, std::span<const double> eta_dot, const CyclicSystem& sys,
                              const ControllerConfig& cfg) {
    const Indexed x = index(eta, sys, cfg);
    const std::size_t N = x.n();
    const auto zd = z_coordinates(eta_dot);
    double v = cfg.theta * x.ph(2, x.e(2)) * eta_dot[1];
    for (std::size_t i = 1; i <= N - 2; ++i) v += cfg.theta * x.ph(i + 2, x.zz(i)) * zd[i - 1];
    return v + x.ph(1, x.zz(N - 1)) * zd[N - 2];
}

namespace {

constexpr double kSeriesCut = 1e-4;

double h_integrand(double z) {
    const double e = std::expm1(z);
    return e * e / z;
}

double h_series(double p) { return p * p / 2.0 + p * p * p / 3.0 + 7.0 * p * p * p * p / 48.0; }

double simpson(double a, double b, double fa, double fm, double fb) {
    return (b - a) / 6.0 * (fa + 4.0 * fm + fb);
}

double adaptive_simpson(const std::function<double(double)>& f, double a, double b, double fa, double fm, double fb,
                        double whole, double tol, int depth) {
    const double m = 0.5 * (a + b);
    const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
    const double flm = f(lm), frm = f(rm);
    const double left = simpson(a, m, fa, flm, fm);
    const double right = simpson(m, b, fm, frm, fb);
    const double delta = left + right - whole;
    if (depth <= 0 || std::abs(delta) <= 15.0 * tol) return left + right + delta / 15.0;
    return adaptive_simpson(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
           adaptive_simpson(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

}  // namespace

double h_integral(double p) {
    if (!(p >= 0.0)) throw DomainError("h_integral expects p >= 0");
    if (p <= kSeriesCut) return h_series(p);
    const std::function<double(double)> f = h_integrand;
    const double a = kSeriesCut, b = p;
    const double fa = f(a), fm = f(0.5 * (a + b)), fb = f(b);
    const double whole = simpson(a, b, fa, fm, fb);
    return h_series(kSeriesCut) + adaptive_simpson(f, a, b, fa, fm, fb, whole, 1e-13 * std::max(1.0, whole), 50);
}

double g_functional(std::span<const double> psi, double da, double sigma) {
    if (psi.empty()) throw DomainError("g_functional: empty psi history");
    double peak = 0.0;
    double low = psi[0];
    for (std::size_t j = 0; j < psi.size(); ++j) {
        peak = std::max(peak, std::abs(psi[j]) * std::exp(-static_cast<double>(j) * da * sigma));
        low = std::min(low, psi[j]);
    }
    return peak / (1.0 + std::max(0.0, low));
}

double lyapunov_VG(const ReducedState& red, const CyclicSystem& sys, const ControllerConfig& cfg,
                   const DelayWeights& w, double da) {
    const std::size_t n = sys.size();
    if (red.psi.size() != n || w.gamma.size() != n || w.sigma.size() != n)
        throw ConfigError("lyapunov_VG: one psi history, weight and rate per species");
    double v = lyapunov_VN(red.eta, sys, cfg);
    for (std::size_t i = 0; i < n; ++i) {
        if (!(w.sigma[i] > 0.0)) throw ConfigError("lyapunov_VG: decay rates must be positive");
        v += w.gamma[i] / w.sigma[i] * h_integral(g_functional(red.psi[i], da, w.sigma[i]));
    }
    return v;
}

FeasibilityCaps default_caps(const CyclicSystem& sys, std::span<const double> bounds) {
    if (bounds.size() != sys.size()) throw ConfigError("one bound C_i per species");
    FeasibilityCaps caps;
    for (std::size_t i = 0; i < sys.size(); ++i) {
        caps.bound.push_back(bounds[i]);
        caps.gamma.push_back(2.0 * bounds[i] * sys.lambda[i]);
    }
    return caps;
}

FeasibilityReport feasible_set_check(std::span<const double> eta, const CyclicSystem& sys,
                                     const ControllerConfig& cfg, const std::optional<FeasibilityCaps>& caps) {
    FeasibilityReport rep;
    rep.V = lyapunov_VN(eta, sys, cfg);
    const bool origin = std::ranges::all_of(eta, [](double v) { return v == 0.0; });
    const auto z = z_coordinates(eta);
    if (origin) {
        rep.u = sys.u_star;
    } else if (std::abs(phi(sys.lambda[0], z.back())) <= cfg.eps_z) {
        rep.singular = true;
        rep.u = std::nan("");
    } else {
        rep.u = sys.size() == 3 ? control_formula_three(eta, sys, cfg)
                : sys.size() == 4 ? control_formula_four(eta, sys, cfg)
                                  : control_formula(eta, sys, cfg);
    }
    rep.control_positive = !rep.singular && rep.u > 0.0;
    rep.cap_ok.assign(sys.size(), true);
    if (caps) {
        if (caps->gamma.size() != sys.size() || caps->bound.size() != sys.size())
            throw ConfigError("feasibility caps need one entry per species");
        for (std::size_t i = 0; i < sys.size(); ++i)
            rep.cap_ok[i] = eta[i] <= std::log(caps->gamma[i] / (caps->bound[i] * sys.lambda[i]));
    }
    rep.inside = rep.control_positive && std::ranges::all_of(rep.cap_ok, [](bool b) { return b; });
    return rep;
}

H6Result check_H6(const KernelSample& ktilde, double sigma, double kappa_max, std::size_t samples) {
    const AgeGrid& g = ktilde.grid;
    const double h = g.step();
    const std::size_t n = g.nodes();
    std::vector<double> ak(n), ages(n);
    for (std::size_t j = 0; j < n; ++j) {
        ages[j] = g.age(j);
        ak[j] = ages[j] * ktilde[j];
    }
    const double mean_age = trapezoid(ak, h);
    if (!(mean_age > 0.0)) throw NumericError("check_H6: int a k~(a) da vanishes");
    const double z = 1.0 / mean_age;
    const auto cum = cumulative_trapezoid(ktilde.view(), h);
    std::vector<double> tail(n), weight(n), f(n);
    for (std::size_t j = 0; j < n; ++j) {
        tail[j] = cum.back() - cum[j];
        weight[j] = std::exp(sigma * ages[j]);
    }
    H6Result best;
    best.min_integral = std::numeric_limits<double>::infinity();
    const std::size_t m = std::max<std::size_t>(samples, 2);
    for (std::size_t s = 0; s < m; ++s) {
        const double kappa = kappa_max * static_cast<double>(s) / static_cast<double>(m - 1);
        for (std::size_t j = 0; j < n; ++j) f[j] = std::abs(ktilde[j] - z * kappa * tail[j]) * weight[j];
        const double integral = trapezoid(f, h);
        if (integral < best.min_integral) {
            best.min_integral = integral;
            best.best_kappa = kappa;
        }
    }
    best.margin = 1.0 - best.min_integral;
    best.holds = best.min_integral < 1.0;
    return best;
}

KernelSample normalized_kernel(const SpeciesSpec& spec, double zeta) {
    auto shape = survival_profile(spec.mortality, zeta);
    for (std::size_t j = 0; j < shape.size(); ++j) shape[j] *= spec.fertility[j];
    const double total = trapezoid(shape, spec.mortality.grid.step());
    if (!(total > 0.0)) throw NumericError("normalized_kernel: kernel integrates to zero");
    for (double& v : shape) v /= total;
    return KernelSample(spec.mortality.grid, std::move(shape));
}

DelayModel delay_model(const GeneralNetworkSpec& cyclic, const Equilibrium& eq,
                       std::vector<std::vector<double>> psi0) {
    const std::size_t n = cyclic.size();
    if (psi0.size() != n) throw ConfigError("delay_model: one initial history per species");
    DelayModel m{eq.grid, {}, {}, std::move(psi0), std::vector<double>(n, 0.0)};
    for (std::size_t i = 0; i < n; ++i) {
        if (m.psi0[i].size() != eq.grid.nodes()) throw ConfigError("delay_model: history length differs from the grid");
        m.ktilde.push_back(normalized_kernel(cyclic.species[i], eq.species[i].zeta).values);
        const auto& g = cyclic.species[(i + n - 1) % n].interaction;
        std::vector<double> w(eq.grid.nodes());
        for (std::size_t j = 0; j < w.size(); ++j) w[j] = g[j] * eq.species[i].profile[j];
        m.weight.push_back(std::move(w));
    }
    return m;
}

namespace {

// History recursion psi(t) = int k~(a) psi(t - a) da, advanced by one age step.
void advance_history(std::vector<double>& psi, std::span<const double> k, double h) {
    std::rotate(psi.rbegin(), psi.rbegin() + 1, psi.rend());
    const std::size_t n = psi.size();
    double s = 0.5 * k[n - 1] * psi[n - 1];
    for (std::size_t j = 1; j + 1 < n; ++j) s += k[j] * psi[j];
    psi[0] = h * s / (1.0 - 0.5 * h * k[0]);
}

}  // namespace

ClosedLoopTrajectory closed_loop_reduced(const CyclicSystem& sys, const ControllerConfig& cfg,
                                         std::vector<double> eta0, double horizon, double dt,
                                         const std::optional<DelayModel>& delay, std::size_t stride) {
    const std::size_t n = sys.size();
    require_chain(n);
    if (eta0.size() != n) throw ConfigError("closed_loop_reduced: initial eta has the wrong length");
    const std::size_t steps = step_count(horizon, dt);
    if (stride == 0) stride = 1;

    ClosedLoopTrajectory out;
    out.feasible_start = feasible_set_check(eta0, sys, cfg, std::nullopt).inside ||
                         std::ranges::all_of(eta0, [](double v) { return v == 0.0; });
    if (!out.feasible_start) spdlog::warn("closed loop starts outside the feasible set");

    std::vector<std::vector<double>> psi;
    std::vector<double> lam_hat = sys.lambda;
    if (delay) {
        if (std::abs(dt - delay->grid.step()) > 1e-12 * dt)
            throw ConfigError("kernel-driven mode needs dt equal to the age step");
        psi = delay->psi0;
    }
    auto refresh_lambda_hat = [&] {
        if (!delay) return;
        const double h = delay->grid.step();
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0.0;
            const auto& w = delay->weight[i];
            for (std::size_t j = 0; j < w.size(); ++j)
                s += (j == 0 || j + 1 == w.size() ? 0.5 : 1.0) * w[j] * (1.0 + psi[i][j]);
            lam_hat[i] = h * s;
        }
    };
    auto rhs = [&](std::span<const double> eta, double u) {
        std::vector<double> d(n);
        auto hat = [&](std::size_t i) { return std::exp(eta[i]) * lam_hat[i] - sys.lambda[i]; };
        d[0] = sys.u_star - u - hat(1);
        for (std::size_t i = 1; i + 1 < n; ++i) d[i] = -hat(i + 1);
        d[n - 1] = -hat(0);
        return d;
    };

    std::vector<double> eta = std::move(eta0);
    std::vector<double> v_all;
    std::vector<std::size_t> row_steps;
    double prev_u = sys.u_star;
    v_all.reserve(steps + 1);
    for (std::size_t k = 0;; ++k) {
        refresh_lambda_hat();
        const ControlDecision d0 = control_law(eta, sys, cfg, prev_u);
        out.clamp_events += d0.clamped;
        out.guard_events += d0.guarded;
        const double V = lyapunov_VN(eta, sys, cfg);
        v_all.push_back(V);
        if (k % stride == 0 || k == steps) {
            TrajectoryRow row;
            row.t = static_cast<double>(k) * dt;
            row.eta = eta;
            row.z = z_coordinates(eta);
            row.u = d0.u;
            row.V = V;
            row.vdot_analytic = lyapunov_VN_rate(eta, sys, cfg);
            const double zl = row.z.back();
            row.zlast_sign = (zl > 0.0) - (zl < 0.0);
            row.saturated = d0.clamped;
            row.guarded = d0.guarded;
            out.rows.push_back(std::move(row));
            row_steps.push_back(k);
            if (delay) {
                std::vector<double> g(n);
                for (std::size_t i = 0; i < n; ++i)
                    g[i] = g_functional(psi[i], delay->grid.step(), delay->sigma[i]);
                out.g_series.push_back(std::move(g));
            }
        }
        if (k == steps) break;

        auto stage = [&](std::span<const double> e) {
            const ControlDecision d = control_law(e, sys, cfg, prev_u);
            return rhs(e, d.u);
        };
        const auto k1 = rhs(eta, d0.u);
        std::vector<double> tmp(n);
        for (std::size_t i = 0; i < n; ++i) tmp[i] = eta[i] + 0.5 * dt * k1[i];
        const auto k2 = stage(tmp);
        for (std::size_t i = 0; i < n; ++i) tmp[i] = eta[i] + 0.5 * dt * k2[i];
        const auto k3 = stage(tmp);
        for (std::size_t i = 0; i < n; ++i) tmp[i] = eta[i] + dt * k3[i];
        const auto k4 = stage(tmp);
        for (std::size_t i = 0; i < n; ++i) eta[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        prev_u = d0.u;
        if (delay)
            for (std::size_t i = 0; i < n; ++i) advance_history(psi[i], delay->ktilde[i], delay->grid.step());
        if (!std::ranges::all_of(eta, [](double v) { return std::isfinite(v); }))
            throw NumericError("closed_loop_reduced: state became non-finite at t = " +
                               std::to_string(static_cast<double>(k + 1) * dt));
    }

    const std::size_t m = v_all.size();
    for (std::size_t r = 0; r < out.rows.size(); ++r) {
        auto& row = out.rows[r];
        const std::size_t k = row_steps[r];
        if (m < 2) {
            row.vdot_numeric = 0.0;
        } else if (k == 0) {
            row.vdot_numeric = (v_all[1] - v_all[0]) / dt;
        } else if (k + 1 == m) {
            row.vdot_numeric = (v_all[k] - v_all[k - 1]) / dt;
        } else {
            row.vdot_numeric = (v_all[k + 1] - v_all[k - 1]) / (2.0 * dt);
        }
    }
    if (out.clamp_events > 0 || out.guard_events > 0)
        spdlog::info("closed loop: {} saturated and {} guarded control evaluations over {} steps", out.clamp_events,
                     out.guard_events, steps);
    return out;
}

ControlPolicy backstepping_policy(const Equilibrium& eq, const ControllerConfig& cfg) {
    const CyclicSystem sys = CyclicSystem::from(eq);
    return [eq, cfg, sys, prev = eq.u_star](const PopulationState& state) mutable {
        const ReducedState red = to_reduced(state, eq);
        const ControlDecision d = control_law(red.eta, sys, cfg, prev);
        if (d.guarded) spdlog::debug("control guard active at t = {}", state.t);
        prev = d.u;
        return ControlSample{d.u, lyapunov_VN(red.eta, sys, cfg)};
    };
}

}  // namespace agepop
