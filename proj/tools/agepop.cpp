#include "agepop/errors.hpp"
#include "agepop/run.hpp"
#include "agepop/scenario.hpp"

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <fstream>
#include <iostream>
#include <sstream>

namespace {

using namespace agepop;

Scenario load_or_report(const std::string& path) {
    try {
        return load_scenario(path);
    } catch (const ValidationError& e) {
        for (const auto& p : e.problems()) std::cerr << "load: " << p << "\n";
        throw StageError("load", std::to_string(e.problems().size()) + " problem(s) in " + path);
    }
}

std::vector<double> parse_values(const std::string& text) {
    std::vector<double> out;
    std::istringstream in(text);
    for (std::string cell; std::getline(in, cell, ',');) {
        if (cell.empty()) continue;
        std::size_t used = 0;
        out.push_back(std::stod(cell, &used));
        if (used != cell.size()) throw ConfigError("bad sweep value '" + cell + "'");
    }
    return out;
}

int simulate_into(const Scenario& s, const std::string& out_dir) {
    const RunSummary r = run(s, out_dir);
    for (const auto& c : r.certificates) std::cout << format_report(c) << "\n";
    for (const auto& c : r.diagnostics) std::cout << "  " << format_report(c) << "\n";
    return r.exit_code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Age-structured population dynamics: simulation, control synthesis and verification"};
    app.require_subcommand(1);
    std::string level = "warn";
    app.add_option("--log-level", level, "trace, debug, info, warn, error or off")->capture_default_str();

    std::string scenario_path, out_dir, strategy, param, values_text;
    std::vector<std::string> run_dirs;

    auto* sim = app.add_subcommand("simulate", "Run the full pipeline of a scenario and write its artifacts");
    sim->add_option("--scenario", scenario_path, "Scenario file")->required()->check(CLI::ExistingFile);
    sim->add_option("--out", out_dir, "Output directory")->required();

    auto* eq = app.add_subcommand("equilibrium", "Print the equilibrium of a scenario as JSON");
    eq->add_option("--scenario", scenario_path, "Scenario file")->required()->check(CLI::ExistingFile);

    auto* syn = app.add_subcommand("synthesize-control", "Print the synthesized feedback law as JSON");
    syn->add_option("--scenario", scenario_path, "Scenario file")->required()->check(CLI::ExistingFile);

    auto* mos = app.add_subcommand("mosquito", "Run a mosquito scenario under a chosen strategy");
    mos->add_option("--scenario", scenario_path, "Scenario file")->required()->check(CLI::ExistingFile);
    mos->add_option("--strategy", strategy, "none, bio, bio-static or genetic")->required();
    mos->add_option("--out", out_dir, "Output directory")->required();

    auto* ver = app.add_subcommand("verify", "Re-check the artifacts of finished runs");
    ver->add_option("rundirs", run_dirs, "Run directories")->required()->check(CLI::ExistingDirectory);

    auto* swp = app.add_subcommand("sweep", "Run a scenario over a list of parameter values");
    swp->add_option("--scenario", scenario_path, "Scenario file")->required()->check(CLI::ExistingFile);
    swp->add_option("--param", param, "Parameter path, e.g. controller.theta or mosquito.P_star")->required();
    swp->add_option("--values", values_text, "Comma-separated values")->required();
    swp->add_option("--out", out_dir, "Write sweep.csv here instead of standard output");

    auto* plot = app.add_subcommand("plotdata", "Write gnuplot data files for finished runs");
    plot->add_option("rundirs", run_dirs, "Run directories")->required()->check(CLI::ExistingDirectory);

    CLI11_PARSE(app, argc, argv);
    spdlog::set_level(spdlog::level::from_str(level));

    try {
        if (*sim) return simulate_into(load_or_report(scenario_path), out_dir);
        if (*eq) {
            std::cout << equilibrium_report(load_or_report(scenario_path));
            return kExitOk;
        }
        if (*syn) {
            std::cout << controller_report(load_or_report(scenario_path));
            return kExitOk;
        }
        if (*mos) {
            Scenario s = load_or_report(scenario_path);
            if (!s.mosquito) throw StageError("setup", "scenario is not a mosquito scenario");
            const Strategy st = parse_strategy(strategy);
            if ((st == Strategy::genetic) != (s.kind == ModelKind::mosquito_genetic))
                throw StageError("setup", "strategy '" + strategy + "' does not match the scenario kind");
            s.mosquito->strategy = st;
            return simulate_into(s, out_dir);
        }
        if (*ver) {
            int status = kExitOk;
            for (const auto& dir : run_dirs) {
                const VerifyResult v = verify_run_dir(dir);
                std::cout << dir << "\n";
                for (const auto& r : v.checks) std::cout << "  " << format_report(r) << "\n";
                for (const auto& r : v.diagnostics) std::cout << "  (diagnostic) " << format_report(r) << "\n";
                if (!v.pass()) status = kExitCertificate;
            }
            return status;
        }
        if (*swp) {
            const Scenario s = load_or_report(scenario_path);
            const auto rows = sweep(s, param, parse_values(values_text));
            const std::string table = sweep_csv(rows);
            if (out_dir.empty()) {
                std::cout << table;
            } else {
                std::filesystem::create_directories(out_dir);
                std::ofstream(std::filesystem::path(out_dir) / "sweep.csv") << table;
            }
            return kExitOk;
        }
        if (*plot) {
            for (const auto& dir : run_dirs)
                for (const auto& f : emit_plotdata(dir)) std::cout << f.string() << "\n";
            return kExitOk;
        }
    } catch (const StageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitStage;
    } catch (const std::exception& e) {
        std::cerr << "error: setup: " << e.what() << "\n";
        return kExitStage;
    }
    return kExitOk;
}
