#include "agepop/run.hpp"

#include "agepop/backstepping.hpp"
#include "agepop/equilibrium.hpp"
#include "agepop/errors.hpp"

#include <fmt/format.h>
#include <json.hpp>
#include <openssl/evp.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <thread>

namespace agepop {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr double nan = std::numeric_limits<double>::quiet_NaN();

template <class F>
auto stage(const char* name, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const StageError&) {
        throw;
    } catch (const InfeasibleError& e) {
        throw StageError(name, e.what(), true);
    } catch (const ValidationError& e) {
        std::string all;
        for (const auto& p : e.problems()) all += (all.empty() ? "" : "; ") + p;
        throw StageError(name, all);
    } catch (const std::exception& e) {
        throw StageError(name, e.what());
    }
}

// Columnar numeric table with a header row.
struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;

    std::size_t column(const std::string& name) const {
        const auto it = std::ranges::find(header, name);
        if (it == header.end()) throw ConfigError("column '" + name + "' not found");
        return static_cast<std::size_t>(it - header.begin());
    }
    std::vector<double> values(std::size_t c) const {
        std::vector<double> v;
        v.reserve(rows.size());
        for (const auto& r : rows) v.push_back(r.at(c));
        return v;
    }
};

// %.17g round-trips every double, so equal runs give byte-identical files.
std::string to_csv(const Table& t) {
    fmt::memory_buffer buf;
    for (std::size_t c = 0; c < t.header.size(); ++c) fmt::format_to(std::back_inserter(buf), "{}{}", c ? "," : "", t.header[c]);
    buf.push_back('\n');
    for (const auto& r : t.rows) {
        for (std::size_t c = 0; c < r.size(); ++c) fmt::format_to(std::back_inserter(buf), "{}{:.17g}", c ? "," : "", r[c]);
        buf.push_back('\n');
    }
    return fmt::to_string(buf);
}

std::string read_text(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw ConfigError("cannot read " + p.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + p.string());
    out << text;
}

Table parse_csv(const std::string& text, const std::string& what) {
    Table t;
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw ConfigError(what + " is empty");
    {
        std::istringstream h(line);
        for (std::string cell; std::getline(h, cell, ',');) t.header.push_back(cell);
    }
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<double> row;
        std::istringstream r(line);
        for (std::string cell; std::getline(r, cell, ',');) {
            char* end = nullptr;
            row.push_back(std::strtod(cell.c_str(), &end));
            if (end == cell.c_str()) throw ConfigError(what + ": malformed value '" + cell + "'");
        }
        if (row.size() != t.header.size()) throw ConfigError(what + ": ragged row");
        t.rows.push_back(std::move(row));
    }
    return t;
}

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json report_json(const PropertyReport& r) {
    json j{{"name", r.name},
           {"pass", r.pass},
           {"skipped", r.skipped},
           {"residual", number_or_null(r.residual)},
           {"tolerance", number_or_null(r.tolerance)},
           {"t", number_or_null(r.t)},
           {"a", number_or_null(r.a)},
           {"note", r.note}};
    if (r.species >= 0) j["species"] = r.species;
    return j;
}

// First sampled time after which the deviation stays at or below tol.
double time_to_tolerance(std::span<const double> t, std::span<const double> deviation, double tol) {
    if (deviation.empty() || !(deviation.back() <= tol)) return nan;
    std::size_t k = deviation.size();
    while (k > 0 && deviation[k - 1] <= tol) --k;
    return t[k];
}

double min_vdot_margin(std::span<const double> t, std::span<const double> V, double slack) {
    double m = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k + 1 < V.size(); ++k) {
        if (std::isnan(V[k]) || std::isnan(V[k + 1])) continue;
        const double dt = t[k + 1] - t[k];
        m = std::min(m, slack * dt - (V[k + 1] - V[k]) / dt);
    }
    return std::isfinite(m) ? m : nan;
}

Table totals_table(const SimOutput& out, const char* control_name, const char* lyapunov_name) {
    Table t;
    t.header.push_back("t");
    for (const auto& l : out.labels) t.header.push_back(l);
    t.header.push_back(control_name);
    t.header.push_back(lyapunov_name);
    for (std::size_t k = 0; k < out.times.size(); ++k) {
        std::vector<double> row{out.times[k]};
        row.insert(row.end(), out.totals[k].begin(), out.totals[k].end());
        row.push_back(out.control[k]);
        row.push_back(out.lyapunov[k]);
        t.rows.push_back(std::move(row));
    }
    return t;
}

// Long format: one line per (snapshot, age node).
Table profiles_table(const SimOutput& out) {
    Table t;
    t.header = {"t", "a"};
    for (const auto& l : out.labels) t.header.push_back(l);
    for (const auto& s : out.snapshots)
        for (std::size_t j = 0; j < s.grid().nodes(); ++j) {
            std::vector<double> row{s.t, s.grid().age(j)};
            for (std::size_t i = 0; i < s.rows(); ++i) row.push_back(s.row(i)[j]);
            t.rows.push_back(std::move(row));
        }
    return t;
}

struct Product {
    RunSummary summary;
    std::vector<std::pair<std::string, std::string>> files;  // name, contents
    json certificate = json::object();
};

void finish_summary(RunSummary& s) {
    const bool all = std::ranges::all_of(s.certificates, [](const auto& r) { return r.pass; });
    s.exit_code = all ? kExitOk : kExitCertificate;
}

PopulationState initial_from_profiles(const Scenario& s, std::size_t rows) {
    const AgeGrid g = s.grid();
    PopulationState x(g, rows);
    const auto shapes = s.initial.profiles;
    for (std::size_t i = 0; i < rows; ++i) {
        const auto k = make_kernel(g, shapes.at(i));
        std::ranges::copy(k.values, x.row(i).begin());
    }
    return x;
}

PopulationState initial_from_equilibrium(const Scenario& s, const Equilibrium& eq) {
    PopulationState x = equilibrium_state(eq);
    std::mt19937_64 rng(s.seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    const auto& scales = s.initial.scales;
    for (std::size_t i = 0; i < x.rows(); ++i) {
        const double scale = scales.size() == 1 ? scales[0] : scales.at(i);
        for (double& v : x.row(i)) v *= scale * (1.0 + s.initial.noise * unit(rng));
    }
    return x;
}

Product run_linear(const Scenario& s) {
    const auto net = stage("setup", [&] { return build_network(s); });
    const auto& species = net.species.front();
    const auto x0 = stage("setup", [&] { return initial_from_profiles(s, 1); });
    const auto out = stage("simulate", [&] {
        return simulate(net, x0, s.horizon, {}, {s.output.stride, s.output.snapshot_every});
    });

    Product p;
    stage("verify", [&] {
        const Tolerances& tol = s.tolerances;
        p.summary.certificates.push_back(check_positivity(out, tol));
        const double r0 = net_reproduction(species);
        auto threshold = check_r0_threshold(species, r0, tol);
        if (threshold.skipped) p.summary.diagnostics.push_back(threshold);
        else p.summary.certificates.push_back(threshold);

        const CharacteristicsOracle oracle(species, kernel_function(s.grid(), s.initial.profiles.front()), s.horizon);
        const auto& fin = *out.final_state;
        auto oracle_report = check_oracle_equivalence(fin.row(0), oracle.profile(s.grid(), fin.t), s.grid().step(),
                                                      tol.oracle_l1);
        oracle_report.t = fin.t;
        p.summary.certificates.push_back(oracle_report);
        p.certificate["net_reproduction"] = r0;
        p.certificate["classification"] = to_string(classify(r0, tol.r0_critical));
    });

    p.summary.max_u = 0.0;
    p.summary.converged = std::ranges::all_of(p.summary.certificates, [](const auto& r) { return r.pass; });
    p.files.emplace_back("totals.csv", to_csv(totals_table(out, "u", "V")));
    if (!out.snapshots.empty()) p.files.emplace_back("profiles.csv", to_csv(profiles_table(out)));
    p.certificate["max_positivity_violation"] = std::max(0.0, -out.positivity.min_value);
    return p;
}

Product run_general(const Scenario& s) {
    const auto net = stage("setup", [&] { return build_network(s); });
    const auto x0 = stage("setup", [&] { return initial_from_profiles(s, net.size()); });
    const double u = s.open_loop_control;
    const ControlPolicy policy = [u](const PopulationState&) { return ControlSample{u, std::nullopt}; };
    const auto out = stage("simulate", [&] {
        return simulate(net, x0, s.horizon, policy, {s.output.stride, s.output.snapshot_every});
    });

    Product p;
    p.summary.certificates.push_back(check_positivity(out, s.tolerances));
    for (std::size_t i = 0; i < net.size(); ++i) {
        PropertyReport r;
        r.name = "r0-isolated";
        r.species = static_cast<int>(i);
        r.residual = net_reproduction(net.species[i]);
        r.pass = true;
        r.note = "net reproduction without predators or control";
        p.summary.diagnostics.push_back(r);
    }
    p.summary.max_u = u;
    p.summary.converged = p.summary.certificates.front().pass;
    p.files.emplace_back("totals.csv", to_csv(totals_table(out, "u", "V")));
    if (!out.snapshots.empty()) p.files.emplace_back("profiles.csv", to_csv(profiles_table(out)));
    p.certificate["max_positivity_violation"] = std::max(0.0, -out.positivity.min_value);
    return p;
}

ControllerConfig synthesize(const Scenario& s, const Equilibrium& eq) {
    const auto& c = *s.controller;
    const CyclicSystem sys = CyclicSystem::from(eq);
    ControllerConfig cfg = derive_config(sys, c.theta, c.terminal_gain);
    if (!c.gains.empty()) {
        if (c.gains.size() + 1 != sys.size())
            throw ConfigError("controller.gains needs " + std::to_string(sys.size() - 1) + " values");
        cfg.gains = c.gains;
    }
    if (c.u_max) {
        if (!(*c.u_max > eq.u_star)) throw ConfigError("controller.u_max must exceed u*");
        cfg.u_max = *c.u_max;
    }
    cfg.eps_z = c.eps_z;
    return cfg;
}

struct CyclicSetup {
    GeneralNetworkSpec net;
    Equilibrium eq;
    ControllerConfig cfg;
};

CyclicSetup cyclic_setup(const Scenario& s) {
    auto net = stage("setup", [&] { return build_network(s); });
    auto eq = stage("equilibrium", [&] { return build_equilibrium(net, s.controller->u_star); });
    auto cfg = stage("controller", [&] { return synthesize(s, eq); });
    return {std::move(net), std::move(eq), std::move(cfg)};
}

Product run_cyclic(const Scenario& s) {
    const auto [net, eq, cfg] = cyclic_setup(s);
    const CyclicSystem sys = CyclicSystem::from(eq);
    const std::size_t n = sys.size();
    const auto x0 = stage("setup", [&] {
        return s.initial.kind == InitialRecipe::Kind::equilibrium ? initial_from_equilibrium(s, eq)
                                                                   : initial_from_profiles(s, n);
    });

    // Every step of the closed loop, before thinning.
    struct Sample {
        double t;
        std::vector<double> eta, z;
        double u, V, vdot_model;
        bool clamped, guarded;
    };
    std::vector<Sample> trace;
    const ControlPolicy policy = [&, prev = eq.u_star](const PopulationState& state) mutable {
        const ReducedState red = to_reduced(state, eq);
        const ControlDecision d = control_law(red.eta, sys, cfg, prev);
        prev = d.u;
        const double V = lyapunov_VN(red.eta, sys, cfg);
        const auto rate = reduced_rhs(red.eta, sys, d.u);
        trace.push_back({state.t, red.eta, z_coordinates(red.eta), d.u, V,
                         lyapunov_VN_derivative(red.eta, rate, sys, cfg), d.clamped, d.guarded});
        return ControlSample{d.u, V};
    };
    const auto out = stage("simulate", [&] {
        return simulate(net, x0, s.horizon, policy, {s.output.stride, s.output.snapshot_every});
    });

    Product p;
    const Tolerances& tol = s.tolerances;
    std::vector<double> t, V, zlast, eta_norm, u;
    for (const auto& r : trace) {
        t.push_back(r.t);
        V.push_back(r.V);
        zlast.push_back(r.z.back());
        double m = 0.0;
        for (double e : r.eta) m = std::max(m, std::abs(e));
        eta_norm.push_back(m);
        u.push_back(r.u);
    }

    stage("verify", [&] {
        p.summary.certificates.push_back(check_positivity(out, tol));
        p.summary.certificates.push_back(check_lyapunov_monotone(t, V, tol.lyapunov_slack));
        const auto star = equilibrium_state(eq);
        const auto& fin = *out.final_state;
        PropertyReport conv;
        conv.name = "convergence";
        conv.tolerance = s.convergence_l1;
        conv.t = fin.t;
        for (std::size_t i = 0; i < n; ++i) {
            const auto r = check_oracle_equivalence(fin.row(i), star.row(i), s.grid().step(), s.convergence_l1);
            if (r.residual >= conv.residual) {
                conv.residual = r.residual;
                conv.species = static_cast<int>(i);
                conv.a = r.a;
            }
        }
        conv.pass = conv.residual <= s.convergence_l1;
        conv.note = "largest L1 relative distance to the equilibrium profiles";
        p.summary.certificates.push_back(conv);

        // Sign invariance is a property of the reduced model; the PDE run reports it only.
        p.summary.diagnostics.push_back(check_sign_invariance(t, zlast, eta_norm, tol));
        const auto stab = stability_report(net, eq);
        PropertyReport r0;
        r0.name = "equilibrium-r0";
        r0.pass = true;
        r0.residual = *std::ranges::max_element(stab.r0);
        r0.tolerance = 1.0;
        for (std::size_t i = 0; i < stab.r0.size(); ++i)
            r0.note += fmt::format("{}R0_{} = {:.6g} ({})", i ? ", " : "", i + 1, stab.r0[i],
                                   to_string(stab.classification[i]));
        p.summary.diagnostics.push_back(r0);
    });

    const std::size_t clamps = std::ranges::count_if(trace, [](const auto& r) { return r.clamped; });
    const std::size_t guards = std::ranges::count_if(trace, [](const auto& r) { return r.guarded; });
    p.summary.converged = p.summary.certificates.back().pass;
    p.summary.time_to_tolerance = time_to_tolerance(t, eta_norm, s.convergence_l1);
    p.summary.max_u = *std::ranges::max_element(u);
    p.summary.min_vdot_margin = min_vdot_margin(t, V, tol.lyapunov_slack);

    Table traj;
    traj.header = {"t"};
    for (std::size_t i = 0; i < n; ++i) traj.header.push_back("eta_" + std::to_string(i + 1));
    for (std::size_t i = 0; i + 1 < n; ++i) traj.header.push_back("z_" + std::to_string(i + 1));
    for (const char* c : {"u", "V", "Vdot_analytic", "Vdot_numeric", "zlast_sign"}) traj.header.push_back(c);
    const std::size_t stride = std::max<std::size_t>(1, s.output.stride);
    for (std::size_t k = 0; k < trace.size(); k += stride) {
        const auto& r = trace[k];
        std::vector<double> row{r.t};
        row.insert(row.end(), r.eta.begin(), r.eta.end());
        row.insert(row.end(), r.z.begin(), r.z.end());
        const std::size_t k2 = k + 1 < trace.size() ? k + 1 : k;
        const std::size_t k1 = k2 == k ? (k > 0 ? k - 1 : k) : k;
        const double vdot = k2 > k1 ? (trace[k2].V - trace[k1].V) / (trace[k2].t - trace[k1].t) : nan;
        const double zl = r.z.back();
        row.insert(row.end(), {r.u, r.V, r.vdot_model, vdot, static_cast<double>((zl > 0.0) - (zl < 0.0))});
        traj.rows.push_back(std::move(row));
    }

    p.files.emplace_back("totals.csv", to_csv(totals_table(out, "u", "V")));
    p.files.emplace_back("trajectory.csv", to_csv(traj));
    if (!out.snapshots.empty()) p.files.emplace_back("profiles.csv", to_csv(profiles_table(out)));
    p.certificate["lyapunov_monotone"] = p.summary.certificates[1].pass;
    p.certificate["max_positivity_violation"] = std::max(0.0, -out.positivity.min_value);
    p.certificate["clamp_events"] = clamps;
    p.certificate["guard_events"] = guards;
    return p;
}

Table series_table(const StrategyRun& run, std::size_t stride, double dt) {
    Table t;
    t.header = {"t", "recruitment", "eta_I", "in_feasible_set"};
    const bool mating = !run.mating.empty();
    if (mating) t.header.push_back("mating");
    for (std::size_t k = 0; k < run.recruitment.size(); k += stride) {
        std::vector<double> row{static_cast<double>(k) * dt, run.recruitment[k], run.eta_I[k],
                                run.in_feasible_set[k] ? 1.0 : 0.0};
        if (mating) row.push_back(run.mating[k]);
        t.rows.push_back(std::move(row));
    }
    return t;
}

Product run_mosquito(const Scenario& s) {
    const auto& m = *s.mosquito;
    const auto spec = stage("setup", [&] {
        auto sp = build_mosquito(s);
        sp.validate();
        return sp;
    });
    const auto eq = stage("equilibrium", [&] { return mosquito_equilibrium(spec, m.P_star); });
    StrategyOptions opts;
    opts.horizon = s.horizon;
    opts.P_star = m.P_star;
    opts.initial_scale = m.initial_scale;
    opts.lyapunov_slack = s.tolerances.lyapunov_slack;
    opts.stride = s.output.stride;
    opts.snapshot_every = s.output.snapshot_every;
    const auto run = stage("simulate", [&] { return run_strategy(spec, m.strategy, opts); });
    std::optional<StrategyRun> twin;
    if (m.uncontrolled_twin)
        twin = stage("simulate", [&] {
            if (m.strategy != Strategy::genetic) return run_strategy(spec, Strategy::none, opts);
            MosquitoSpec bare = spec;
            bare.releases.clear();
            return run_strategy(bare, Strategy::genetic, opts);
        });

    const double dt = spec.grid.step();
    const std::size_t stride = std::max<std::size_t>(1, s.output.stride);
    std::vector<double> t(run.eta_I.size()), V(run.eta_I.size()), gap(run.eta_I.size());
    for (std::size_t k = 0; k < t.size(); ++k) {
        t[k] = static_cast<double>(k) * dt;
        V[k] = lyapunov_VI(run.eta_I[k], eq.k_I);
        gap[k] = std::abs(std::expm1(run.eta_I[k]));
    }

    Product p;
    const Tolerances& tol = s.tolerances;
    stage("verify", [&] {
        p.summary.certificates.push_back(check_positivity(run.out, tol));
        auto mono = check_lyapunov_monotone(t, V, tol.lyapunov_slack);
        PropertyReport conv;
        conv.name = "convergence";
        conv.residual = run.final_relative_gap;
        conv.tolerance = s.convergence_l1;
        conv.t = s.horizon;
        conv.pass = conv.residual <= conv.tolerance;
        conv.note = "|int I - k_I| / k_I at the horizon";
        if (m.strategy == Strategy::bio) {
            p.summary.certificates.push_back(mono);
            p.summary.certificates.push_back(conv);
        } else {
            p.summary.diagnostics.push_back(mono);
            p.summary.diagnostics.push_back(conv);
        }
        if (twin && m.strategy == Strategy::genetic && !spec.releases.empty()) {
            PropertyReport sup;
            sup.name = "release-suppression";
            const double with = trapezoid(run.recruitment, dt), without = trapezoid(twin->recruitment, dt);
            sup.residual = with / without;
            sup.tolerance = 1.0;
            sup.pass = with < without;
            sup.note = "integrated recruitment relative to the run without releases";
            p.summary.certificates.push_back(sup);
        }
        if (twin) {
            // Oscillation of the aquatic total over the last lifespan, relative to its mean.
            auto amplitude = [&](const StrategyRun& r) {
                double lo = std::numeric_limits<double>::infinity(), hi = -lo, sum = 0.0;
                std::size_t count = 0;
                for (std::size_t k = 0; k < r.out.times.size(); ++k)
                    if (r.out.times[k] >= s.horizon - s.max_age - 1e-12) {
                        const double v = r.out.totals[k][0];
                        lo = std::min(lo, v);
                        hi = std::max(hi, v);
                        sum += v;
                        ++count;
                    }
                return count ? (hi - lo) / (sum / static_cast<double>(count)) : nan;
            };
            PropertyReport osc;
            osc.name = "oscillation-amplitude";
            osc.residual = amplitude(run);
            osc.tolerance = amplitude(*twin);
            osc.pass = true;
            osc.note = "controlled (residual) and uncontrolled (tolerance) relative swing of int I over the last lifespan";
            p.summary.diagnostics.push_back(osc);
        }
    });

    p.summary.converged = run.final_relative_gap <= s.convergence_l1;
    p.summary.time_to_tolerance = time_to_tolerance(t, gap, s.convergence_l1);
    p.summary.max_u = *std::ranges::max_element(run.out.control);
    p.summary.min_vdot_margin = min_vdot_margin(t, V, tol.lyapunov_slack);

    p.files.emplace_back("totals.csv", to_csv(totals_table(run.out, "P", "V_I")));
    p.files.emplace_back("series.csv", to_csv(series_table(run, stride, dt)));
    if (!run.out.snapshots.empty()) p.files.emplace_back("profiles.csv", to_csv(profiles_table(run.out)));
    if (twin) {
        p.files.emplace_back("totals_uncontrolled.csv", to_csv(totals_table(twin->out, "P", "V_I")));
        p.files.emplace_back("series_uncontrolled.csv", to_csv(series_table(*twin, stride, dt)));
        if (!twin->out.snapshots.empty())
            p.files.emplace_back("profiles_uncontrolled.csv", to_csv(profiles_table(twin->out)));
    }
    const auto& c = run.certificate;
    p.certificate["strategy"] = to_string(m.strategy);
    p.certificate["lyapunov_monotone"] = c.lyapunov_monotone;
    p.certificate["max_positivity_violation"] = c.max_positivity_violation;
    p.certificate["stability_condition_fraction_of_time"] = c.condition_fraction;
    p.certificate["worst_lyapunov_rise"] = c.worst_lyapunov_rise;
    p.certificate["clamp_events"] = c.clamp_events;
    p.certificate["final_relative_gap"] = run.final_relative_gap;
    p.certificate["k_I"] = eq.k_I;
    return p;
}

Product execute(const Scenario& s) {
    Product p;
    switch (s.kind) {
        case ModelKind::linear_demographic: p = run_linear(s); break;
        case ModelKind::general_network: p = run_general(s); break;
        case ModelKind::cyclic: p = run_cyclic(s); break;
        case ModelKind::mosquito_bio:
        case ModelKind::mosquito_genetic: p = run_mosquito(s); break;
    }
    finish_summary(p.summary);
    return p;
}

}  // namespace

std::string sha256_hex(std::string_view data) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1)
        throw NumericError("SHA-256 digest failed");
    std::string hex;
    for (unsigned int i = 0; i < len; ++i) hex += fmt::format("{:02x}", digest[i]);
    return hex;
}

RunSummary run_in_memory(const Scenario& s) { return execute(s).summary; }

RunSummary run(const Scenario& s, const fs::path& out_dir) {
    Product p = execute(s);
    stage("write", [&] {
        fs::create_directories(out_dir);
        const std::string config = dump_scenario(s);
        p.files.emplace_back("scenario.json", config);

        json cert = p.certificate;
        cert["scenario"] = s.name;
        cert["kind"] = kind_name(s.kind, s.species.size());
        cert["pass"] = p.summary.exit_code == kExitOk;
        cert["checks"] = json::array();
        for (const auto& r : p.summary.certificates) cert["checks"].push_back(report_json(r));
        cert["diagnostics"] = json::array();
        for (const auto& r : p.summary.diagnostics) cert["diagnostics"].push_back(report_json(r));
        p.files.emplace_back("certificate.json", cert.dump(2) + "\n");

        json manifest{{"scenario", s.name},
                      {"kind", kind_name(s.kind, s.species.size())},
                      {"seed", s.seed},
                      {"config_sha256", sha256_hex(config)},
                      {"exit_code", p.summary.exit_code},
                      {"versions",
                       {{"agepop", kVersion},
                        {"schema", kSchemaVersion},
                        {"nlohmann_json", fmt::format("{}.{}.{}", NLOHMANN_JSON_VERSION_MAJOR,
                                                      NLOHMANN_JSON_VERSION_MINOR, NLOHMANN_JSON_VERSION_PATCH)},
                        {"compiler", __VERSION__}}}};
        json files = json::object();
        for (const auto& [name, body] : p.files) {
            write_text(out_dir / name, body);
            files[name] = sha256_hex(body);
        }
        manifest["files"] = std::move(files);
        write_text(out_dir / "manifest.json", manifest.dump(2) + "\n");
    });
    for (const auto& r : p.summary.certificates) spdlog::debug("{}", format_report(r));
    for (const auto& r : p.summary.diagnostics) spdlog::debug("(diagnostic) {}", format_report(r));
    return p.summary;
}

std::string equilibrium_report(const Scenario& s) {
    json j{{"kind", kind_name(s.kind, s.species.size())}};
    switch (s.kind) {
        case ModelKind::linear_demographic:
        case ModelKind::general_network: {
            const auto net = stage("setup", [&] { return build_network(s); });
            json arr = json::array();
            for (const auto& sp : net.species) {
                const double r0 = net_reproduction(sp);
                json e{{"net_reproduction", r0}, {"classification", to_string(classify(r0))}};
                e["zeta"] = stage("equilibrium", [&] { return number_or_null(solve_zeta(sp.fertility, sp.mortality)); });
                arr.push_back(std::move(e));
            }
            j["species"] = std::move(arr);
            break;
        }
        case ModelKind::cyclic: {
            const auto net = stage("setup", [&] { return build_network(s); });
            const auto eq = stage("equilibrium", [&] { return build_equilibrium(net, s.controller->u_star); });
            const auto stab = stage("equilibrium", [&] { return stability_report(net, eq); });
            j["u_star"] = eq.u_star;
            json arr = json::array();
            for (std::size_t i = 0; i < eq.species.size(); ++i)
                arr.push_back({{"zeta", eq.species[i].zeta},
                               {"lambda", eq.species[i].lambda},
                               {"newborn", eq.species[i].newborn},
                               {"r0", stab.r0[i]},
                               {"classification", to_string(stab.classification[i])}});
            j["species"] = std::move(arr);
            j["all_r0_below_one"] = stab.all_below_one;
            break;
        }
        case ModelKind::mosquito_bio:
        case ModelKind::mosquito_genetic: {
            const auto spec = stage("setup", [&] { return build_mosquito(s); });
            const auto eq = stage("equilibrium", [&] { return mosquito_equilibrium(spec, s.mosquito->P_star); });
            j.update(json{{"P_star", eq.P_star},       {"zeta_I", eq.zeta_I}, {"zeta_F", eq.zeta_F},
                          {"zeta_M", eq.zeta_M},       {"p_star", eq.p_star}, {"m_star", eq.m_star},
                          {"k_I", eq.k_I},             {"K_star", eq.K_star}, {"Gamma_star", eq.Gamma_star},
                          {"gamma_star", eq.gamma_star}, {"residual", eq.residual}, {"I0", eq.I0},
                          {"F0", eq.F0},               {"M0", eq.M0}});
            break;
        }
    }
    return j.dump(2) + "\n";
}

std::string controller_report(const Scenario& s) {
    json j{{"kind", kind_name(s.kind, s.species.size())}};
    if (s.kind == ModelKind::cyclic) {
        const auto [net, eq, cfg] = cyclic_setup(s);
        const CyclicSystem sys = CyclicSystem::from(eq);
        j.update(json{{"u_star", eq.u_star},
                      {"lambda", sys.lambda},
                      {"theta", cfg.theta},
                      {"gains", cfg.gains},
                      {"terminal_gain", cfg.terminal_gain},
                      {"u_min", cfg.u_min},
                      {"u_max", cfg.u_max},
                      {"eps_z", cfg.eps_z}});
        const auto x0 = stage("setup", [&] {
            return s.initial.kind == InitialRecipe::Kind::equilibrium ? initial_from_equilibrium(s, eq)
                                                                       : initial_from_profiles(s, sys.size());
        });
        const auto red = stage("controller", [&] { return to_reduced(x0, eq); });
        const auto feas = feasible_set_check(red.eta, sys, cfg, std::nullopt);
        j["initial"] = {{"eta", red.eta},
                        {"u", feas.u},
                        {"V", feas.V},
                        {"inside_feasible_set", feas.inside},
                        {"singular", feas.singular}};
    } else if (s.kind == ModelKind::mosquito_bio || s.kind == ModelKind::mosquito_genetic) {
        const auto spec = stage("setup", [&] { return build_mosquito(s); });
        const auto eq = stage("equilibrium", [&] { return mosquito_equilibrium(spec, s.mosquito->P_star); });
        const double dt = spec.grid.step();
        const std::size_t steps = step_count(s.horizon, dt);
        std::size_t holds = 0;
        double worst = std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k <= steps; ++k) {
            const auto c = stability_condition(spec, static_cast<double>(k) * dt);
            holds += c.holds;
            if (!c.degenerate) worst = std::min(worst, c.lambda_min);
        }
        j.update(json{{"P_star", eq.P_star},
                      {"k_I", eq.k_I},
                      {"feedforward_at_zero", control_P(0.0, eq, spec)},
                      {"stability_condition_fraction_of_time",
                       static_cast<double>(holds) / static_cast<double>(steps + 1)},
                      {"min_lambda", number_or_null(worst)}});
    } else {
        throw StageError("controller", "no feedback law for " + kind_name(s.kind, s.species.size()) + " scenarios");
    }
    return j.dump(2) + "\n";
}

std::size_t default_workers() {
    if (const char* env = std::getenv("AGEPOP_WORKERS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && *end == '\0' && v > 0) return static_cast<std::size_t>(v);
        spdlog::warn("ignoring AGEPOP_WORKERS='{}', expected a positive integer", env);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

std::vector<SweepRow> sweep(const Scenario& base, const std::string& parameter, const std::vector<double>& values,
                            std::size_t workers) {
    std::vector<SweepRow> rows(values.size());
    if (values.empty()) return rows;
    {
        Scenario probe = base;
        set_parameter(probe, parameter, values.front());
    }
    if (workers == 0) workers = default_workers();
    workers = std::min(workers, values.size());

    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t k = next++; k < values.size(); k = next++) {
            SweepRow& row = rows[k];
            row.parameter = parameter;
            row.value = values[k];
            try {
                Scenario cell = base;
                set_parameter(cell, parameter, values[k]);
                cell = parse_scenario(dump_scenario(cell));
                row.summary = run_in_memory(cell);
                row.status = row.summary.exit_code == kExitOk ? "ok" : "certificate-failed";
                for (const auto& r : row.summary.certificates)
                    if (!r.pass) row.message += (row.message.empty() ? "" : "; ") + r.name;
            } catch (const StageError& e) {
                row.status = e.infeasible() ? "infeasible" : "failed";
                row.summary.exit_code = kExitStage;
                row.message = e.what();
            } catch (const ValidationError& e) {
                row.status = "failed";
                row.summary.exit_code = kExitStage;
                for (const auto& p : e.problems()) row.message += (row.message.empty() ? "" : "; ") + p;
            } catch (const std::exception& e) {
                row.status = "failed";
                row.summary.exit_code = kExitStage;
                row.message = e.what();
            }
        }
    };
    {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    }
    return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
    std::string out = "parameter,value,status,converged,time_to_tolerance,max_u,min_vdot_margin,message\n";
    for (const auto& r : rows) {
        std::string msg = r.message;
        std::ranges::replace(msg, '"', '\'');
        out += fmt::format("{},{:.17g},{},{},{:.17g},{:.17g},{:.17g},\"{}\"\n", r.parameter, r.value, r.status,
                           r.summary.converged ? 1 : 0, r.summary.time_to_tolerance, r.summary.max_u,
                           r.summary.min_vdot_margin, msg);
    }
    return out;
}

namespace {

std::string dat_header(const std::vector<std::string>& cols) {
    std::string h = "#";
    for (const auto& c : cols) h += " " + c;
    return h + "\n";
}

std::string to_dat(const Table& t) {
    fmt::memory_buffer buf;
    fmt::format_to(std::back_inserter(buf), "{}", dat_header(t.header));
    for (const auto& r : t.rows) {
        for (std::size_t c = 0; c < r.size(); ++c) fmt::format_to(std::back_inserter(buf), "{}{:.17g}", c ? " " : "", r[c]);
        buf.push_back('\n');
    }
    return fmt::to_string(buf);
}

// pm3d-style grid: "t a value" triples, one block per snapshot separated by a blank line.
std::string heatmap(const Table& profiles, std::size_t column) {
    fmt::memory_buffer buf;
    fmt::format_to(std::back_inserter(buf), "# t a {}\n", profiles.header[column]);
    for (std::size_t k = 0; k < profiles.rows.size(); ++k) {
        const auto& r = profiles.rows[k];
        if (k > 0 && r[0] != profiles.rows[k - 1][0]) buf.push_back('\n');
        fmt::format_to(std::back_inserter(buf), "{:.17g} {:.17g} {:.17g}\n", r[0], r[1], r[column]);
    }
    return fmt::to_string(buf);
}

}  // namespace

std::vector<fs::path> emit_plotdata(const fs::path& run_dir) {
    return stage("plotdata", [&] {
        const fs::path totals_path = run_dir / "totals.csv";
        if (!fs::exists(totals_path)) throw ConfigError("missing run artifact " + totals_path.string());
        const fs::path dir = run_dir / "plot";
        fs::create_directories(dir);
        std::vector<fs::path> written;
        auto emit = [&](const std::string& name, const std::string& body) {
            write_text(dir / name, body);
            written.push_back(dir / name);
        };

        const Table totals = parse_csv(read_text(totals_path), "totals.csv");
        emit("totals.dat", to_dat(totals));
        for (const std::string suffix : {"", "_uncontrolled"}) {
            const fs::path prof = run_dir / ("profiles" + suffix + ".csv");
            if (!fs::exists(prof)) continue;
            const Table t = parse_csv(read_text(prof), prof.filename().string());
            for (std::size_t c = 2; c < t.header.size(); ++c)
                emit("heatmap" + suffix + "_" + t.header[c] + ".dat", heatmap(t, c));
        }

        const fs::path twin_path = run_dir / "totals_uncontrolled.csv";
        if (fs::exists(twin_path)) {
            const Table twin = parse_csv(read_text(twin_path), "totals_uncontrolled.csv");
            emit("controlled_totals.dat", to_dat(totals));
            emit("uncontrolled_totals.dat", to_dat(twin));
            // Aquatic totals side by side on the shared time axis.
            Table paired;
            paired.header = {"t", "I_controlled", "I_uncontrolled"};
            const std::size_t ci = totals.column("I"), ui = twin.column("I");
            for (std::size_t k = 0; k < std::min(totals.rows.size(), twin.rows.size()); ++k)
                paired.rows.push_back({totals.rows[k][0], totals.rows[k][ci], twin.rows[k][ui]});
            emit("paired_totals.dat", to_dat(paired));
        }
        return written;
    });
}

bool VerifyResult::pass() const {
    return std::ranges::all_of(checks, [](const auto& r) { return r.pass; });
}

VerifyResult verify_run_dir(const fs::path& run_dir) {
    VerifyResult v;
    const fs::path manifest_path = run_dir / "manifest.json";
    if (!fs::exists(manifest_path)) throw StageError("verify", "missing run artifact " + manifest_path.string());
    const json manifest = json::parse(read_text(manifest_path));

    PropertyReport integrity;
    integrity.name = "manifest-integrity";
    std::size_t bad = 0;
    for (const auto& [name, digest] : manifest.at("files").items()) {
        const fs::path f = run_dir / name;
        if (!fs::exists(f) || sha256_hex(read_text(f)) != digest.get<std::string>()) {
            ++bad;
            integrity.note += (integrity.note.empty() ? "" : ", ") + name;
        }
    }
    integrity.residual = static_cast<double>(bad);
    integrity.pass = bad == 0;
    if (integrity.pass) integrity.note = std::to_string(manifest.at("files").size()) + " files match their digests";
    else integrity.note = "changed or missing: " + integrity.note;
    v.checks.push_back(integrity);

    Tolerances tol;
    bool lyapunov_gated = false;
    if (fs::exists(run_dir / "scenario.json")) {
        const Scenario s = stage("verify", [&] { return load_scenario(run_dir / "scenario.json"); });
        tol = s.tolerances;
        lyapunov_gated = s.kind == ModelKind::cyclic || (s.mosquito && s.mosquito->strategy == Strategy::bio);
    }

    PropertyReport pos;
    pos.name = "positivity";
    pos.tolerance = tol.positivity;
    if (fs::exists(run_dir / "profiles.csv")) {
        const Table t = parse_csv(read_text(run_dir / "profiles.csv"), "profiles.csv");
        double worst = 0.0;
        for (const auto& r : t.rows)
            for (std::size_t c = 2; c < r.size(); ++c)
                if (r[c] < worst) {
                    worst = r[c];
                    pos.t = r[0];
                    pos.a = r[1];
                    pos.species = static_cast<int>(c - 2);
                }
        pos.residual = std::max(0.0, -worst);
        pos.note = "profile snapshots";
    } else {
        const json cert = json::parse(read_text(run_dir / "certificate.json"));
        pos.residual = cert.value("max_positivity_violation", 0.0);
        pos.note = "running audit recorded in the certificate";
    }
    pos.pass = pos.residual <= tol.positivity;
    v.checks.push_back(pos);

    const Table totals = parse_csv(read_text(run_dir / "totals.csv"), "totals.csv");
    const std::string vcol = totals.header.back();
    auto mono = check_lyapunov_monotone(totals.values(0), totals.values(totals.header.size() - 1), tol.lyapunov_slack);
    mono.note = vcol + " column, " + mono.note;
    (lyapunov_gated ? v.checks : v.diagnostics).push_back(mono);

    if (fs::exists(run_dir / "trajectory.csv")) {
        const Table traj = parse_csv(read_text(run_dir / "trajectory.csv"), "trajectory.csv");
        std::vector<double> zlast = traj.values(traj.column("zlast_sign")), norm(traj.rows.size(), 0.0);
        for (std::size_t k = 0; k < traj.rows.size(); ++k) {
            for (std::size_t c = 0; c < traj.header.size(); ++c)
                if (traj.header[c].rfind("eta_", 0) == 0) norm[k] = std::max(norm[k], std::abs(traj.rows[k][c]));
        }
        // Only signs are stored, so a floor of one half flags exact zeros and nothing else.
        Tolerances signs = tol;
        signs.sign_floor = 0.5;
        auto r = check_sign_invariance(traj.values(0), zlast, norm, signs);
        r.note += " (from stored signs)";
        v.diagnostics.push_back(r);
    }

    const json cert = json::parse(read_text(run_dir / "certificate.json"));
    PropertyReport stored;
    stored.name = "stored-certificate";
    stored.pass = cert.value("pass", false);
    stored.note = "pass flag written by the run";
    v.checks.push_back(stored);
    return v;
}

}  // namespace agepop
