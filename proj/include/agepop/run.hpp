#pragma once

#include "agepop/scenario.hpp"
#include "agepop/verification.hpp"

#include <filesystem>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace agepop {

inline constexpr const char* kVersion = "0.1.0";

// Failure of one pipeline stage: setup, equilibrium, controller, simulate, verify, write,
// plotdata. The stage name prefixes the message.
class StageError : public std::runtime_error {
public:
    StageError(std::string stage, const std::string& what, bool infeasible = false)
        : std::runtime_error(stage + ": " + what), stage_(std::move(stage)), infeasible_(infeasible) {}
    const std::string& stage() const noexcept { return stage_; }
    bool infeasible() const noexcept { return infeasible_; }

private:
    std::string stage_;
    bool infeasible_;
};

// Exit statuses shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitCertificate = 1;  // pipeline finished, a gating check failed
inline constexpr int kExitStage = 2;        // a stage failed before verification

struct RunSummary {
    static constexpr double nan = std::numeric_limits<double>::quiet_NaN();

    int exit_code = kExitOk;
    std::vector<PropertyReport> certificates;  // gate the exit status
    std::vector<PropertyReport> diagnostics;   // reported only
    bool converged = false;
    double time_to_tolerance = nan;  // first time after which the deviation stays within tolerance
    double max_u = nan;
    double min_vdot_margin = nan;  // min over steps of slack dt - (V(t + dt) - V(t)) / dt
};

// Executes the pipeline for the scenario's model kind and writes every artifact into
// out_dir. Throws StageError on a stage failure.
RunSummary run(const Scenario& s, const std::filesystem::path& out_dir);

// Pipeline without artifacts; used by sweeps that only need the summary.
RunSummary run_in_memory(const Scenario& s);

// JSON reports printed by the equilibrium and synthesize-control subcommands.
std::string equilibrium_report(const Scenario& s);
std::string controller_report(const Scenario& s);

struct SweepRow {
    std::string parameter;
    double value = 0.0;
    std::string status;  // ok, certificate-failed, infeasible, failed
    RunSummary summary;
    std::string message;
};

// Runs one scenario per value on a pool of AGEPOP_WORKERS threads (default: hardware
// concurrency). Rows keep the order of `values`. Cell failures are recorded, never thrown.
std::vector<SweepRow> sweep(const Scenario& base, const std::string& parameter, const std::vector<double>& values,
                            std::size_t workers = 0);
std::string sweep_csv(const std::vector<SweepRow>& rows);
std::size_t default_workers();

// Writes gnuplot-ready columnar files under run_dir/plot and returns their paths.
std::vector<std::filesystem::path> emit_plotdata(const std::filesystem::path& run_dir);

struct VerifyResult {
    std::vector<PropertyReport> checks;
    std::vector<PropertyReport> diagnostics;
    bool pass() const;
};

// Re-reads the artifacts of a finished run and re-checks them against the tolerances of
// the scenario copy stored in the run directory.
VerifyResult verify_run_dir(const std::filesystem::path& run_dir);

std::string sha256_hex(std::string_view data);

}  // namespace agepop
