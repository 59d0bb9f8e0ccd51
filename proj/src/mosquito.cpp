#include "agepop/mosquito.hpp"

#include "agepop/backstepping.hpp"
#include "agepop/errors.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <limits>

namespace agepop {

MosquitoSpec::MosquitoSpec(AgeGrid g)
    : grid(g),
      mu0(constant_kernel(g, 0.0)),
      mu1(constant_kernel(g, 0.0)),
      mu_F(constant_kernel(g, 0.0)),
      mu_M(constant_kernel(g, 0.0)),
      mu_Fj(constant_kernel(g, 0.0)),
      mu_Fa(constant_kernel(g, 0.0)),
      mu_Ms(constant_kernel(g, 0.0)),
      emergence(constant_kernel(g, 0.0)),
      male_weight(constant_kernel(g, 0.0)),
      beta0(constant_kernel(g, 0.0)) {}

void MosquitoSpec::validate() const {
    std::vector<std::string> problems;
    const std::pair<const KernelSample*, const char*> kernels[] = {
        {&mu0, "mu0"},   {&mu1, "mu1"},         {&mu_F, "mu_F"},   {&mu_M, "mu_M"},   {&mu_Fj, "mu_Fj"},
        {&mu_Fa, "mu_Fa"}, {&mu_Ms, "mu_Ms"},   {&emergence, "w"}, {&male_weight, "lambda"}, {&beta0, "beta0"}};
    for (const auto& [k, name] : kernels) {
        if (!(k->grid == grid)) problems.emplace_back(std::string(name) + " lives on another grid");
        else if (!k->nonnegative()) problems.emplace_back(std::string(name) + " has negative values");
    }
    if (!(r > 0.0 && r < 1.0)) problems.emplace_back("sex ratio r must lie in (0, 1)");
    if (!(iota > 0.0)) problems.emplace_back("saturation iota must be positive");
    if (!(delta > 0.0)) problems.emplace_back("inhibition delta must be positive");
    if (!(tau > 0.0 && tau <= grid.max_age())) problems.emplace_back("aquatic window tau must lie in (0, A]");
    if (!(lower_bound(K) > 0.0)) problems.emplace_back("carrying capacity K(t) must stay positive");
    if (lower_bound(Gamma) < 0.0) problems.emplace_back("growth rate Gamma(t) must be nonnegative");
    if (lower_bound(gamma) < 0.0) problems.emplace_back("competition gamma(t) must be nonnegative");
    for (std::size_t k = 0; k < releases.size(); ++k) {
        if (releases[k].alpha < 0.0) problems.emplace_back("release masses must be nonnegative");
        if (k > 0 && !(releases[k].t > releases[k - 1].t)) problems.emplace_back("release times must increase strictly");
    }
    if (release_cells == 0 || release_cells + 1 > static_cast<std::size_t>(grid.cells())) problems.emplace_back("release window does not fit the grid");
    for (std::size_t j = 0; j < grid.nodes() && j < mu_Ms.values.size() && mu_Ms.grid == grid && mu_M.grid == grid; ++j)
        if (mu_Ms[j] < mu_M[j]) {
            spdlog::warn("sterile-male mortality is below the wild-male mortality at a = {}", grid.age(j));
            break;
        }
    if (!problems.empty()) throw ValidationError(std::move(problems));
}

double fertility_modulated(double beta0, double m, double m_s, double iota, double delta) {
    if (m < 0.0 || m_s < 0.0) throw DomainError("fertility_modulated: male densities must be nonnegative");
    return beta0 * m / (m + iota) * std::exp(-delta * m_s);
}

double fertility_modulated(const MosquitoSpec& spec, double a, double m, double m_s) {
    return fertility_modulated(spec.beta0.at(a), m, m_s, spec.iota, spec.delta);
}

double mating_probability(double males, double sterile_males) {
    if (males < 0.0 || sterile_males < 0.0) throw DomainError("mating_probability: negative male totals");
    return males / (1.0 + males + sterile_males);
}

double mating_probability(const PopulationState& s) {
    return mating_probability(s.total(genetic::M), s.total(genetic::Ms));
}

namespace {

void require_step(const AgeGrid& grid, double dt) {
    if (std::abs(dt - grid.step()) > 1e-12 * grid.step())
        throw ConfigError("time step must equal the age step");
}

// Shift one compartment along the characteristics with per-age mortality and a uniform
// signed rate, then set the newborn value.
void march(std::span<const double> x, std::span<double> y, std::span<const double> mu, double rate, double birth,
           double dt) {
    const std::size_t n = x.size() - 1;
    for (std::size_t j = 0; j < n; ++j) y[j + 1] = x[j] * std::exp(-(0.5 * (mu[j] + mu[j + 1]) + rate) * dt);
    y[0] = birth;
    y[n] = 0.0;
}

void audit(const PopulationState& s) {
    for (std::size_t i = 0; i < s.rows(); ++i)
        for (double v : s.row(i))
            if (!(v >= 0.0))
                throw InvariantError("negative density " + std::to_string(v) + " in compartment " + std::to_string(i) +
                                     " at t = " + std::to_string(s.t));
}

double aquatic_load(const MosquitoSpec& spec, std::span<const double> I) {
    const AgeGrid& g = spec.grid;
    const auto count = std::min(g.nearest_node(spec.tau) + 1, g.nodes());
    return trapezoid_prefix(I, g.step(), count);
}

std::vector<double> aquatic_mortality(const MosquitoSpec& spec, double p) {
    std::vector<double> mu(spec.grid.nodes());
    for (std::size_t j = 0; j < mu.size(); ++j) mu[j] = spec.mu0[j] + spec.mu1[j] * p;
    return mu;
}

}  // namespace

PopulationState step_bio(const MosquitoSpec& spec, const PopulationState& s, double dt, double P) {
    require_step(spec.grid, dt);
    if (s.rows() != bio::rows) throw ConfigError("step_bio expects I, F, M rows");
    const double h = spec.grid.step();
    const double t = s.t;
    const double K = eval_time_function(spec.K, t);
    const double G = eval_time_function(spec.Gamma, t);
    const double gam = eval_time_function(spec.gamma, t);

    const auto I = s.row(bio::I), F = s.row(bio::F), M = s.row(bio::M);
    const double totI = trapezoid(I, h), totF = trapezoid(F, h), totM = trapezoid(M, h);
    const double m = trapezoid_product(spec.male_weight.view(), M, h);
    const double sat = m / (m + spec.iota);
    const double emerged = trapezoid_product(spec.emergence.view(), I, h);

    PopulationState next(spec.grid, bio::rows, t + dt);
    march(I, next.row(bio::I), aquatic_mortality(spec, aquatic_load(spec, I)), P - G + G * gam / K * totI,
          sat * trapezoid_product(spec.beta0.view(), F, h), dt);
    march(F, next.row(bio::F), spec.mu_F.view(), gam * totF, spec.r * emerged, dt);
    march(M, next.row(bio::M), spec.mu_M.view(), gam * totM, (1.0 - spec.r) * emerged, dt);
    audit(next);
    return next;
}

PopulationState step_genetic(const MosquitoSpec& spec, const PopulationState& s, double dt) {
    require_step(spec.grid, dt);
    if (s.rows() != genetic::rows) throw ConfigError("step_genetic expects I, Fj, Fa, M, Ms rows");
    const double h = spec.grid.step();
    const double t = s.t;
    const double K = eval_time_function(spec.K, t);
    const double G = eval_time_function(spec.Gamma, t);
    const double gam = eval_time_function(spec.gamma, t);

    const auto I = s.row(genetic::I), Fj = s.row(genetic::Fj), Fa = s.row(genetic::Fa);
    const auto M = s.row(genetic::M), Ms = s.row(genetic::Ms);
    const double m = trapezoid_product(spec.male_weight.view(), M, h);
    const double ms = trapezoid_product(spec.male_weight.view(), Ms, h);
    const double births = fertility_modulated(1.0, m, ms, spec.iota, spec.delta) * trapezoid_product(spec.beta0.view(), Fa, h);
    const double emerged = trapezoid_product(spec.emergence.view(), I, h);
    const double totFj = trapezoid(Fj, h), totFa = trapezoid(Fa, h), totM = trapezoid(M, h), totMs = trapezoid(Ms, h);
    const double mating = mating_probability(totM, totMs);

    PopulationState next(spec.grid, genetic::rows, t + dt);
    march(I, next.row(genetic::I), aquatic_mortality(spec, aquatic_load(spec, I)), -G + G * births / K, births, dt);
    march(Fj, next.row(genetic::Fj), spec.mu_Fj.view(), gam * totFj, spec.r * emerged, dt);
    march(Fa, next.row(genetic::Fa), spec.mu_Fa.view(), gam * totFa, mating * totFj, dt);
    march(M, next.row(genetic::M), spec.mu_M.view(), gam * totMs, (1.0 - spec.r) * emerged, dt);
    march(Ms, next.row(genetic::Ms), spec.mu_Ms.view(), gam * totM, 0.0, dt);
    audit(next);
    return next;
}

void inject_release(const MosquitoSpec& spec, PopulationState& s, double alpha) {
    if (alpha < 0.0) throw DomainError("release mass must be nonnegative");
    const std::size_t w = spec.release_cells;
    if (w + 1 >= s.grid().nodes()) throw ConfigError("release window does not fit the grid");
    // Interior nodes carry full trapezoid weight, so the total rises by exactly alpha.
    const double level = alpha / (static_cast<double>(w) * spec.grid.step());
    auto row = s.row(genetic::Ms);
    for (std::size_t j = 1; j <= w; ++j) row[j] += level;
}

namespace {

double bisect(double lo, double hi, const auto& f, int iterations = 200) {
    double flo = f(lo);
    for (int it = 0; it < iterations; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double fm = f(mid);
        if (fm == 0.0) return mid;
        if ((fm < 0.0) == (flo < 0.0)) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
        if (hi - lo <= 1e-16 * std::max(1.0, std::abs(mid))) break;
    }
    return 0.5 * (lo + hi);
}

// Loss exponent zeta of an adult compartment: zeta = gamma * newborn * int exp(-int (mu + zeta)).
double adult_exponent(const KernelSample& mu, double gamma, double newborn) {
    if (gamma == 0.0 || newborn == 0.0) return 0.0;
    const double h = mu.grid.step();
    auto g = [&](double z) { return z - gamma * newborn * trapezoid(survival_profile(mu, z), h); };
    double hi = gamma * newborn * trapezoid(survival_profile(mu, 0.0), h);
    return bisect(0.0, hi, g);
}

struct InnerSolution {
    double p = 0.0, k = 0.0, I0 = 0.0, F0 = 0.0, M0 = 0.0, zF = 0.0, zM = 0.0, m = 0.0;
    std::vector<double> Ishape, Fshape, Mshape;
    double residual = std::numeric_limits<double>::quiet_NaN();
};

InnerSolution inner_solve(const MosquitoSpec& spec, double P_star, double zeta_I) {
    const double Ks = spec.K_star(), Gs = spec.Gamma_star(), gs = spec.gamma_star();
    const double h = spec.grid.step();
    InnerSolution s;
    s.k = Ks / (Gs * gs) * (zeta_I + Gs - P_star);
    if (!(s.k > 0.0)) return s;
    auto shape_for = [&](double p) {
        KernelSample mu(spec.grid, aquatic_mortality(spec, p));
        return survival_profile(mu, zeta_I);
    };
    auto fixed_point = [&](double p) {
        const auto sh = shape_for(p);
        return p - s.k * aquatic_load(spec, sh) / trapezoid(sh, h);
    };
    s.p = bisect(0.0, s.k, fixed_point);
    s.Ishape = shape_for(s.p);
    s.I0 = s.k / trapezoid(s.Ishape, h);
    const double emerged = s.I0 * trapezoid_product(spec.emergence.view(), s.Ishape, h);
    s.F0 = spec.r * emerged;
    s.M0 = (1.0 - spec.r) * emerged;
    s.zF = adult_exponent(spec.mu_F, gs, s.F0);
    s.zM = adult_exponent(spec.mu_M, gs, s.M0);
    s.Fshape = survival_profile(spec.mu_F, s.zF);
    s.Mshape = survival_profile(spec.mu_M, s.zM);
    s.m = s.M0 * trapezoid_product(spec.male_weight.view(), s.Mshape, h);
    const double beta_f = s.m / (s.m + spec.iota) * trapezoid_product(spec.beta0.view(), s.Fshape, h);
    s.residual = spec.r * trapezoid_product(spec.emergence.view(), s.Ishape, h) * beta_f - 1.0;
    return s;
}

}  // namespace

MosquitoEquilibrium mosquito_equilibrium(const MosquitoSpec& spec, double P_star) {
    spec.validate();
    if (!(P_star > 0.0)) throw InfeasibleError("equilibrium control P* must be positive");
    const double Gs = spec.Gamma_star(), gs = spec.gamma_star();
    if (!(Gs > 0.0 && gs > 0.0)) throw InfeasibleError("mean growth and competition rates must be positive");
    const double min_mu = *std::ranges::min_element(spec.mu0.values);
    const double lo = std::max(P_star - Gs, -min_mu) + 1e-9;
    auto R = [&](double z) { return inner_solve(spec, P_star, z).residual; };

    // Below the stable root the residual may first climb out of -1 through an Allee-type
    // threshold; the stable equilibrium is the first crossing from positive to negative.
    double a = lo, fa = R(a);
    double width = 1e-3 * std::max(1.0, Gs);
    double b = a + width, fb = R(b);
    for (int it = 0; !(std::isfinite(fa) && std::isfinite(fb) && fa > 0.0 && fb <= 0.0); ++it) {
        if (it > 600) throw InfeasibleError("mosquito equilibrium: the coupled residual never turns from positive to negative");
        a = b;
        fa = fb;
        width *= 1.1;
        b = a + width;
        fb = R(b);
    }
    const double zeta_I = bisect(a, b, [&](double z) { return R(z); });
    const auto s = inner_solve(spec, P_star, zeta_I);
    if (!(std::abs(s.residual) <= 1e-10)) throw NumericError("mosquito equilibrium residual above 1e-10");

    MosquitoEquilibrium eq;
    eq.zeta_I = zeta_I;
    eq.zeta_F = s.zF;
    eq.zeta_M = s.zM;
    eq.p_star = s.p;
    eq.m_star = s.m;
    eq.k_I = s.k;
    eq.P_star = P_star;
    eq.K_star = spec.K_star();
    eq.Gamma_star = Gs;
    eq.gamma_star = gs;
    eq.residual = s.residual;
    eq.I0 = s.I0;
    eq.F0 = s.F0;
    eq.M0 = s.M0;
    eq.I = s.Ishape;
    eq.F = s.Fshape;
    eq.M = s.Mshape;
    for (double& v : eq.I) v *= s.I0;
    for (double& v : eq.F) v *= s.F0;
    for (double& v : eq.M) v *= s.M0;
    if (!(P_star < zeta_I + Gs) || !(eq.I0 > 0.0))
        throw InfeasibleError("P* lies outside (0, zeta_I + Gamma*)");
    return eq;
}

PopulationState bio_state(const MosquitoEquilibrium& eq, const AgeGrid& grid) {
    PopulationState s(grid, bio::rows);
    std::ranges::copy(eq.I, s.row(bio::I).begin());
    std::ranges::copy(eq.F, s.row(bio::F).begin());
    std::ranges::copy(eq.M, s.row(bio::M).begin());
    return s;
}

double control_P(double t, const MosquitoEquilibrium& eq, const MosquitoSpec& spec) {
    const double K = eval_time_function(spec.K, t);
    const double G = eval_time_function(spec.Gamma, t);
    const double gam = eval_time_function(spec.gamma, t);
    return eq.P_star + eq.k_I * (eq.Gamma_star * eq.gamma_star / eq.K_star - G * gam / K) - (eq.Gamma_star - G);
}

Matrix2 q_matrix(double Gamma, double gamma, double K) {
    const double D = Gamma + gamma - 2.0 * K;
    if (D == 0.0) throw DomainError("q_matrix: Gamma + gamma - 2K vanishes");
    const double off = -Gamma * gamma / D;
    return Matrix2{{{Gamma * Gamma * gamma / (K * D), off}, {off, Gamma * gamma * gamma / (K * D)}}};
}

double lambda_min_closed_form(double Gamma, double gamma, double K) {
    const double D = Gamma + gamma - 2.0 * K;
    if (D == 0.0) throw DomainError("lambda_min: Gamma + gamma - 2K vanishes");
    const double diff = Gamma - gamma;
    return 2.0 * Gamma * gamma / K * (Gamma * gamma - K * K) /
           (D * (Gamma + gamma) + std::sqrt(D * D * (diff * diff + 4.0 * K * K)));
}

StabilityCondition stability_condition(double Gamma, double gamma, double K) {
    StabilityCondition c;
    c.holds = gamma > 0.0 && K * K / gamma < Gamma;
    if (Gamma + gamma - 2.0 * K == 0.0) {
        c.degenerate = true;
        c.lambda_min = std::numeric_limits<double>::quiet_NaN();
        return c;
    }
    c.lambda_min = lambda_min_closed_form(Gamma, gamma, K);
    return c;
}

StabilityCondition stability_condition(const MosquitoSpec& spec, double t) {
    return stability_condition(eval_time_function(spec.Gamma, t), eval_time_function(spec.gamma, t),
                               eval_time_function(spec.K, t));
}

double lyapunov_VI(double eta_I, double k_I) { return k_I * (std::expm1(eta_I) - eta_I); }

double lyapunov_V_delay(double eta_I, double k_I, std::span<const double> psi_I, double gamma1, double sigma,
                        double da) {
    if (!(sigma > 0.0)) throw DomainError("lyapunov_V_delay: sigma must be positive");
    return lyapunov_VI(eta_I, k_I) + gamma1 / sigma * h_integral(g_functional(psi_I, da, sigma));
}

Strategy parse_strategy(const std::string& name) {
    if (name == "none") return Strategy::none;
    if (name == "bio") return Strategy::bio;
    if (name == "bio-static") return Strategy::bio_static;
    if (name == "genetic") return Strategy::genetic;
    throw ConfigError("unknown strategy '" + name + "' (none, bio, bio-static, genetic)");
}

const char* to_string(Strategy s) {
    switch (s) {
        case Strategy::none: return "none";
        case Strategy::bio: return "bio";
        case Strategy::bio_static: return "bio-static";
        case Strategy::genetic: return "genetic";
    }
    return "?";
}

StrategyRun run_strategy(const MosquitoSpec& spec, Strategy strategy, const StrategyOptions& opts) {
    spec.validate();
    if (!(opts.horizon > 0.0)) throw DomainError("run_strategy: horizon must be positive");
    const MosquitoEquilibrium eq = mosquito_equilibrium(spec, opts.P_star);
    const AgeGrid& g = spec.grid;
    const double dt = g.step();
    const std::size_t steps = step_count(opts.horizon, dt);
    const bool gen = strategy == Strategy::genetic;

    PopulationState state = gen ? PopulationState(g, genetic::rows) : bio_state(eq, g);
    if (gen) {
        std::ranges::copy(eq.I, state.row(genetic::I).begin());
        std::ranges::copy(eq.F, state.row(genetic::Fj).begin());
        std::ranges::copy(eq.F, state.row(genetic::Fa).begin());
        std::ranges::copy(eq.M, state.row(genetic::M).begin());
    }
    for (std::size_t i = 0; i < state.rows(); ++i)
        for (double& v : state.row(i)) v *= opts.initial_scale;

    std::vector<std::string> labels = gen ? std::vector<std::string>{"I", "Fj", "Fa", "M", "Ms"}
                                          : std::vector<std::string>{"I", "F", "M"};
    Recorder rec(std::move(labels), {opts.stride, opts.snapshot_every});
    StrategyRun run;
    run.strategy = strategy;
    std::size_t next_release = 0;
    std::size_t condition_steps = 0;
    double prev_V = std::numeric_limits<double>::quiet_NaN();

    for (std::size_t k = 0;; ++k) {
        if (gen) {
            while (next_release < spec.releases.size() && spec.releases[next_release].t < state.t + 0.5 * dt) {
                inject_release(spec, state, spec.releases[next_release].alpha);
                ++next_release;
            }
        }
        const double totI = state.total(0);
        const double eta = std::log(totI / eq.k_I);
        const double V = lyapunov_VI(eta, eq.k_I);
        double raw = 0.0;
        switch (strategy) {
            case Strategy::bio: raw = control_P(state.t, eq, spec); break;
            case Strategy::bio_static: raw = eq.P_star; break;
            default: break;
        }
        const double P = applied_control(raw);
        if (P != raw) {
            if (run.certificate.clamp_events == 0) spdlog::warn("control P clamped at zero from t = {}", state.t);
            ++run.certificate.clamp_events;
        }
        const auto cond = stability_condition(spec, state.t);
        condition_steps += cond.holds;
        run.in_feasible_set.push_back(cond.holds && raw >= 0.0);
        run.eta_I.push_back(eta);
        run.recruitment.push_back(state.row(0)[0]);
        if (gen) run.mating.push_back(mating_probability(state));
        if (std::isfinite(prev_V)) {
            const double rise = V - prev_V;
            run.certificate.worst_lyapunov_rise = std::max(run.certificate.worst_lyapunov_rise, rise);
            if (rise > opts.lyapunov_slack * dt * dt) run.certificate.lyapunov_monotone = false;
        }
        prev_V = V;
        rec.observe(k, state, P, V);
        if (k == steps) break;
        state = gen ? step_genetic(spec, state, dt) : step_bio(spec, state, dt, P);
    }
    run.out = std::move(rec).finish();
    run.out.final_state = state;
    run.certificate.max_positivity_violation = std::max(0.0, -run.out.positivity.min_value);
    run.certificate.condition_fraction = static_cast<double>(condition_steps) / static_cast<double>(steps + 1);
    run.final_relative_gap = std::abs(state.total(0) - eq.k_I) / eq.k_I;
    if (run.certificate.clamp_events > 0)
        spdlog::info("control P was clamped on {} of {} steps", run.certificate.clamp_events, steps + 1);
    return run;
}

}  // namespace agepop
