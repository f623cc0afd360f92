#pragma once

#include <string>
#include <utility>
#include <vector>

#include "otmin/solver.hpp"

namespace otmin {

enum class Command { SolveNu, SolveMu, SolveJoint, SolveBarrier, Analytic, Validate };

/// Where a measure comes from: a named density, a measure CSV, or the
/// closed-form quadratic-interaction pair.
struct SourceSpec {
    enum class Kind { Uniform, Gaussian, Csv, Analytic } kind = Kind::Uniform;
    std::vector<double> center;  // gaussian
    double sigma = 0.3;          // gaussian
    std::string path;            // csv
};

struct KernelSpec {
    std::string name = "quadratic";  // quadratic | power | custom
    double lambda = 1.0;
    double q = 1.0;  // power exponent: V(s) = lambda/2 * s^q
    std::vector<std::pair<double, double>> table;  // custom
};

struct RunConfig {
    Command command = Command::SolveJoint;
    GridSpec domain;
    KernelSpec kernel;
    double local_coeff = 1.0;  // f(t) = local_coeff/2 * t^2
    SolverConfig solver;
    SourceSpec mu_source, nu_source;
    std::string output_dir;
};

/// Parses the JSON run configuration; unknown or out-of-range keys raise
/// ConfigError naming the offending key. `overrides` entries look like
/// "solver.fw_tol=1e-6" and are applied before parsing.
RunConfig parse_run_config(const std::string& json_text,
                           const std::vector<std::string>& overrides = {});
RunConfig load_run_config(const std::string& path,
                          const std::vector<std::string>& overrides = {});

// Exit statuses (documented in --help).
constexpr int kExitConverged = 0;
constexpr int kExitConfig = 1;
constexpr int kExitIterationLimit = 2;
constexpr int kExitFileIo = 3;
constexpr int kExitStalled = 4;
constexpr int kExitInfeasible = 5;
constexpr int kExitNoConvergence = 6;
constexpr int kExitUnderflow = 7;
constexpr int kExitBarrierBreach = 8;
constexpr int kExitSizeGuard = 9;
constexpr int kExitInvalidFunctional = 10;
constexpr int kExitAnalyticRefusal = 11;
constexpr int kExitInternal = 12;

/// Executes the command and writes report.json, trace.csv, mu.csv, nu.csv,
/// potentials.csv and plan.csv (exact mode) into output_dir. Returns the exit
/// status for the termination state; throws on hard errors.
int execute(const RunConfig& cfg);

/// execute() with all library errors mapped to their exit statuses; the
/// diagnostic goes to stderr.
int execute_catching(const RunConfig& cfg);

InteractionKernel make_kernel(const KernelSpec& spec, const GridSpec& grid);

}  // namespace otmin
