#pragma once

// Runs a built-in case end to end and writes plot-ready output files.

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>

#include "vem/builtins.hpp"

namespace vem {

/// Everything a run can override; unset fields take the case defaults.
struct RunConfig {
    std::string case_name;
    std::optional<std::size_t> nodes;
    std::optional<double> gain_k;    // uniform gain, replaces the case's gain vector
    std::optional<double> gain_ktf;
    std::optional<Method> method;
    std::optional<double> rel_tol;
    std::optional<double> abs_tol;
    std::optional<double> tau_max;  // default: the case's published horizon
    double residual_tol = 1e-6;
    double snapshot_every = 1.0;
    GuessKind guess = GuessKind::Published;
    std::filesystem::path out_dir = ".";
};

struct RunSummary {
    std::string case_name;
    Termination status = Termination::TauMax;
    double tau = 0.0;
    double final_residual = 0.0;
    double final_J = 0.0;
    std::optional<double> final_J1;
    std::optional<double> final_tf;
    std::optional<double> max_error;  // over every component, when a closed form exists
    std::optional<double> tf_error;   // |tf - reference_tf|
    std::optional<double> transversality;
    bool descent_ok = true;
    std::size_t state_dimension = 0;
    EvolveStats stats;
    double wall_time = 0.0;  // seconds
};

/// Options the config resolves to against its case.
EvolveOptions resolve_options(const RunConfig& cfg, const BenchmarkCase& c);

/// Solves the case and writes snapshots.csv, diagnostics.csv and
/// summary.json into cfg.out_dir (created when missing). Throws UsageError
/// for bad configs or an unwritable directory; solver errors propagate.
RunSummary run(const RunConfig& cfg);

/// Process exit status for a finished run: 0 when converged or when a
/// user-supplied tau_max was reached, 2 when the default horizon ran out.
int exit_status(const RunSummary& s, const RunConfig& cfg);

/// Boundary spec as the JSON text used in run configs and describe output:
/// {"initial": [{"fixed": true, "value": 0}, {"fixed": false}], "terminal": [...]}.
std::string boundary_to_json(const BoundarySpec& b);
/// Inverse of boundary_to_json; throws UsageError on malformed text.
BoundarySpec boundary_from_json(const std::string& text);

/// Human-readable description of a case at `nodes` (default N when unset).
std::string describe(const BenchmarkCase& c, std::optional<std::size_t> nodes = {});

}  // namespace vem
