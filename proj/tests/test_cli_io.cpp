#include "agepop/errors.hpp"
#include "agepop/run.hpp"
#include "agepop/scenario.hpp"

#include <doctest.h>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace agepop;
namespace fs = std::filesystem;

namespace {

const fs::path kScenarios = AGEPOP_SCENARIO_DIR;

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / "agepop_cli_io" / name;
    fs::remove_all(p);
    return p;
}

std::vector<std::string> problems_of(const std::string& text) {
    try {
        parse_scenario(text);
    } catch (const ValidationError& e) {
        return e.problems();
    }
    return {};
}

bool mentions(const std::vector<std::string>& problems, const std::string& needle) {
    return std::ranges::any_of(problems, [&](const auto& p) { return p.find(needle) != std::string::npos; });
}

const char* kMinimalLinear = R"({
  "schema_version": 1,
  "kind": "linear-demographic",
  "grid": {"max_age": 2.0, "cells": 40},
  "horizon": 1.0,
  "species": [{"mortality": 0.5, "fertility": {"type": "window", "lo": 0.5, "hi": 1.5, "height": 1.0}}],
  "initial": {"type": "profiles", "profiles": [1.0]}
})";

}  // namespace

TEST_CASE("loading scenario files") {
    SUBCASE("minimal linear-demographic file") {
        const auto s = parse_scenario(kMinimalLinear);
        CHECK(s.kind == ModelKind::linear_demographic);
        CHECK(s.cells == 40);
        CHECK(s.species.size() == 1);
        CHECK(std::get<ConstantForm>(s.species[0].mortality).value == 0.5);
        CHECK(s.output.stride == 1);
    }
    SUBCASE("missing fertility is named") {
        auto j = nlohmann::json::parse(kMinimalLinear);
        j["species"][0].erase("fertility");
        const auto p = problems_of(j.dump());
        REQUIRE(p.size() == 1);
        CHECK(p[0] == "species[0].fertility: missing kernel");
    }
    SUBCASE("every problem is reported, not just the first") {
        auto j = nlohmann::json::parse(kMinimalLinear);
        j["schema_version"] = 7;
        j["horizon"] = -1.0;
        j["grid"]["cells"] = 0;
        j["species"][0].erase("mortality");
        j["colour"] = "blue";
        const auto p = problems_of(j.dump());
        CHECK(p.size() == 5);
        CHECK(mentions(p, "schema_version"));
        CHECK(mentions(p, "horizon: must be positive"));
        CHECK(mentions(p, "grid.cells"));
        CHECK(mentions(p, "species[0].mortality: missing kernel"));
        CHECK(mentions(p, "colour: unknown field"));
    }
    SUBCASE("syntax errors") {
        const auto p = problems_of("{ \"schema_version\": 1, ");
        REQUIRE(p.size() == 1);
        CHECK(p[0].rfind("parse error", 0) == 0);
    }
    SUBCASE("kind-specific completeness") {
        auto j = nlohmann::json::parse(kMinimalLinear);
        j["kind"] = "cyclic-2";
        const auto p = problems_of(j.dump());
        CHECK(mentions(p, "kind names 2 species"));
        CHECK(mentions(p, "species[0].interaction: missing kernel"));
        CHECK(mentions(p, "controller: is required"));
        CHECK(mentions(problems_of(R"({"schema_version": 1, "kind": "cyclic-x"})"), "unknown model kind"));
    }
    SUBCASE("sampled kernels must match the grid") {
        auto j = nlohmann::json::parse(kMinimalLinear);
        j["species"][0]["mortality"] = {{"type", "sampled"}, {"values", {0.1, 0.2}}};
        CHECK(mentions(problems_of(j.dump()), "has 2 values, the grid has 41 nodes"));
        j["species"][0]["mortality"] = {{"type", "constant"}, {"value", -0.1}};
        CHECK(mentions(problems_of(j.dump()), "negative values"));
    }
    SUBCASE("mosquito model checks are merged in") {
        auto j = nlohmann::json::parse(slurp(kScenarios / "mosquito-bio.json"));
        j["mosquito"]["tau"] = 50.0;
        j["mosquito"]["strategy"] = "genetic";
        const auto p = problems_of(j.dump());
        CHECK(mentions(p, "needs a mosquito-genetic scenario"));
    }
}

TEST_CASE("every reference scenario loads and round-trips through save") {
    for (const char* name :
         {"linear-demographic", "cyclic-3", "general-network", "mosquito-bio", "mosquito-genetic"}) {
        CAPTURE(name);
        const auto s = load_scenario(kScenarios / (std::string(name) + ".json"));
        CHECK(s.name == name);
        const fs::path saved = scratch(std::string(name) + ".json");
        fs::create_directories(saved.parent_path());
        save_scenario(s, saved);
        const auto back = load_scenario(saved);
        CHECK(dump_scenario(back) == dump_scenario(s));
    }
    // Field by field on the cyclic reference, independent of the writer.
    const auto raw = nlohmann::json::parse(slurp(kScenarios / "cyclic-3.json"));
    const auto s = parse_scenario(dump_scenario(load_scenario(kScenarios / "cyclic-3.json")));
    CHECK(s.kind == ModelKind::cyclic);
    CHECK(s.species.size() == 3);
    CHECK(s.max_age == raw["grid"]["max_age"].get<double>());
    CHECK(s.horizon == raw["horizon"].get<double>());
    CHECK(s.seed == raw["seed"].get<std::uint64_t>());
    CHECK(s.controller->u_star == raw["controller"]["u_star"].get<double>());
    CHECK(s.initial.scales == raw["initial"]["scales"].get<std::vector<double>>());
    for (std::size_t i = 0; i < 3; ++i) {
        const auto w = std::get<WindowForm>(s.species[i].fertility);
        CHECK(w.height == raw["species"][i]["fertility"]["height"].get<double>());
    }
}

TEST_CASE("run pipelines") {
    SUBCASE("cyclic-3 reference passes its certificates") {
        const fs::path dir = scratch("cyclic");
        const auto r = run(load_scenario(kScenarios / "cyclic-3.json"), dir);
        CHECK(r.exit_code == kExitOk);
        for (const auto& c : r.certificates) CHECK_MESSAGE(c.pass, format_report(c));
        for (const char* f : {"totals.csv", "trajectory.csv", "profiles.csv", "certificate.json", "manifest.json",
                              "scenario.json"})
            CHECK(fs::exists(dir / f));
        const auto cert = nlohmann::json::parse(slurp(dir / "certificate.json"));
        CHECK(cert["pass"] == true);
        CHECK(cert["lyapunov_monotone"] == true);
        CHECK(cert["max_positivity_violation"] == 0.0);
        const auto manifest = nlohmann::json::parse(slurp(dir / "manifest.json"));
        CHECK(manifest["config_sha256"] == sha256_hex(slurp(dir / "scenario.json")));
        CHECK(manifest["seed"] == 7);
        CHECK(slurp(dir / "trajectory.csv").rfind("t,eta_1,eta_2,eta_3,z_1,z_2,u,V,Vdot_analytic,Vdot_numeric,zlast_sign\n", 0) == 0);
    }
    SUBCASE("infeasible u* stops at the equilibrium stage") {
        auto s = load_scenario(kScenarios / "cyclic-3.json");
        s.controller->u_star = 5.0;
        const fs::path dir = scratch("infeasible");
        try {
            run(s, dir);
            FAIL("run accepted an infeasible u*");
        } catch (const StageError& e) {
            CHECK(e.stage() == "equilibrium");
            CHECK(e.infeasible());
            CHECK(std::string(e.what()).rfind("equilibrium: ", 0) == 0);
        }
        CHECK_FALSE(fs::exists(dir / "manifest.json"));
    }
    SUBCASE("mosquito bio certificate") {
        const fs::path dir = scratch("bio");
        const auto r = run(load_scenario(kScenarios / "mosquito-bio.json"), dir);
        CHECK(r.exit_code == kExitOk);
        const auto cert = nlohmann::json::parse(slurp(dir / "certificate.json"));
        REQUIRE(cert.contains("lyapunov_monotone"));
        CHECK(cert["lyapunov_monotone"] == true);
        CHECK(cert.contains("stability_condition_fraction_of_time"));
        CHECK(cert["max_positivity_violation"] == 0.0);
        CHECK(fs::exists(dir / "totals_uncontrolled.csv"));
    }
    SUBCASE("sha256 digest") {
        CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
        CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}

TEST_CASE("same scenario and seed give byte-identical CSV files") {
    for (const char* name : {"cyclic-3", "mosquito-genetic"}) {
        CAPTURE(name);
        const auto s = load_scenario(kScenarios / (std::string(name) + ".json"));
        const fs::path a = scratch(std::string(name) + "_a"), b = scratch(std::string(name) + "_b");
        run(s, a);
        run(s, b);
        for (const auto& entry : fs::directory_iterator(a))
            if (entry.path().extension() == ".csv") CHECK(slurp(entry.path()) == slurp(b / entry.path().filename()));
    }
    // The seed drives the perturbation of the initial data.
    auto s = load_scenario(kScenarios / "cyclic-3.json");
    const fs::path a = scratch("seed_a"), b = scratch("seed_b");
    run(s, a);
    s.seed += 1;
    run(s, b);
    CHECK(slurp(a / "totals.csv") != slurp(b / "totals.csv"));
}

TEST_CASE("parameter sweeps") {
    const auto cyclic = load_scenario(kScenarios / "cyclic-3.json");
    SUBCASE("theta on cyclic-3") {
        const auto rows = sweep(cyclic, "controller.theta", {0.5, 1.0, 2.0}, 3);
        REQUIRE(rows.size() == 3);
        for (std::size_t k = 0; k < 3; ++k) {
            CHECK(rows[k].value == std::vector<double>{0.5, 1.0, 2.0}[k]);
            CHECK(rows[k].status == "ok");
            CHECK(rows[k].summary.converged);
            CHECK(std::isfinite(rows[k].summary.time_to_tolerance));
        }
        // Concurrency does not change results.
        const auto serial = sweep(cyclic, "controller.theta", {0.5, 1.0, 2.0}, 1);
        CHECK(sweep_csv(serial) == sweep_csv(rows));
    }
    SUBCASE("P* beyond the feasible range is flagged, the sweep continues") {
        const auto bio = load_scenario(kScenarios / "mosquito-bio.json");
        const auto rows = sweep(bio, "mosquito.P_star", {1.5, 50.0}, 2);
        REQUIRE(rows.size() == 2);
        CHECK(rows[0].status == "ok");
        CHECK(rows[1].status == "infeasible");
        CHECK(rows[1].message.rfind("equilibrium:", 0) == 0);
    }
    SUBCASE("invalid cells are failures") {
        const auto rows = sweep(cyclic, "controller.theta", {-1.0, 1.0}, 2);
        CHECK(rows[0].status == "failed");
        CHECK(rows[1].status == "ok");
    }
    SUBCASE("empty value list") {
        const auto rows = sweep(cyclic, "controller.theta", {});
        CHECK(rows.empty());
        CHECK(sweep_csv(rows) == "parameter,value,status,converged,time_to_tolerance,max_u,min_vdot_margin,message\n");
    }
    SUBCASE("unknown parameter") {
        CHECK_THROWS_AS(sweep(cyclic, "controller.colour", {1.0}), ConfigError);
    }
}

TEST_CASE("plot data") {
    SUBCASE("headers and snapshot count") {
        const auto s = load_scenario(kScenarios / "cyclic-3.json");
        const fs::path dir = scratch("plot_cyclic");
        run(s, dir);
        const auto files = emit_plotdata(dir);
        CHECK(files.size() == 4);  // totals plus one heat map per species
        for (const auto& f : files) {
            CHECK(fs::exists(f));
            CHECK(slurp(f).rfind("# t ", 0) == 0);
        }
        // One block per snapshot, blocks separated by single blank lines.
        const std::string heat = slurp(dir / "plot" / "heatmap_x1.dat");
        const auto lines = static_cast<std::size_t>(std::ranges::count(heat, '\n'));
        const std::size_t steps = step_count(s.horizon, s.grid().step());
        const std::size_t snapshots = steps / s.output.snapshot_every + 1;
        CHECK(lines == 1 + snapshots * s.grid().nodes() + (snapshots - 1));
    }
    SUBCASE("controlled and uncontrolled mosquito runs are paired") {
        const fs::path dir = scratch("plot_bio");
        run(load_scenario(kScenarios / "mosquito-bio.json"), dir);
        emit_plotdata(dir);
        for (const char* f : {"controlled_totals.dat", "uncontrolled_totals.dat", "paired_totals.dat",
                              "heatmap_I.dat", "heatmap_uncontrolled_I.dat"})
            CHECK(fs::exists(dir / "plot" / f));
        std::istringstream paired(slurp(dir / "plot" / "paired_totals.dat"));
        std::string line;
        std::getline(paired, line);
        CHECK(line == "# t I_controlled I_uncontrolled");
        double t, controlled, uncontrolled;
        std::size_t rows = 0;
        double lo = 1e300, hi = -1e300;
        while (paired >> t >> controlled >> uncontrolled) {
            ++rows;
            if (t >= 40.0) {
                lo = std::min(lo, uncontrolled);
                hi = std::max(hi, uncontrolled);
            }
        }
        CHECK(rows == 50.0 / 0.05 / 5 + 1);
        CHECK(hi - lo > 0.1 * lo);
    }
    SUBCASE("missing artifacts") {
        const fs::path dir = scratch("empty");
        fs::create_directories(dir);
        try {
            emit_plotdata(dir);
            FAIL("plot data from an empty directory");
        } catch (const StageError& e) {
            CHECK(e.stage() == "plotdata");
        }
    }
}

TEST_CASE("verifying run directories") {
    const fs::path dir = scratch("verify");
    run(load_scenario(kScenarios / "cyclic-3.json"), dir);
    auto v = verify_run_dir(dir);
    CHECK(v.pass());
    CHECK(v.checks.front().name == "manifest-integrity");
    CHECK(std::ranges::any_of(v.diagnostics, [](const auto& r) { return r.name == "sign-invariance"; }));

    std::ofstream(dir / "totals.csv", std::ios::app) << "99,1,1,1,0,0\n";
    v = verify_run_dir(dir);
    CHECK_FALSE(v.pass());
    CHECK_FALSE(v.checks.front().pass);
    CHECK(v.checks.front().note.find("totals.csv") != std::string::npos);

    CHECK_THROWS_AS(verify_run_dir(scratch("nothing")), StageError);
}

TEST_CASE("kind names") {
    CHECK(parse_kind("cyclic-7").species == 7);
    CHECK(kind_name(ModelKind::cyclic, 4) == "cyclic-4");
    CHECK_THROWS_AS(parse_kind("cyclic-1"), ConfigError);
    CHECK_THROWS_AS(parse_kind("predator-prey"), ConfigError);
    Scenario s = parse_scenario(kMinimalLinear);
    CHECK_THROWS_AS(set_parameter(s, "controller.theta", 1.0), ConfigError);
    set_parameter(s, "horizon", 3.0);
    CHECK(s.horizon == 3.0);
}
