#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "otmin/functionals.hpp"
#include "otmin/measure.hpp"
#include "otmin/transport.hpp"

namespace otmin {

enum class LineSearchKind { GoldenSection, FixedSchedule };
enum class Termination { Converged, IterationLimit, Stalled };

struct SolverConfig {
    int max_outer_iter = 3000;
    double fw_tol = 1e-7;
    LineSearchKind line_search = LineSearchKind::GoldenSection;
    TransportMethod transport_method = TransportMethod::Exact;
    double entropic_epsilon = 1e-3;         // absolute regularization strength
    std::optional<double> barrier_delta;    // delta_eps on A(nu)
    std::optional<double> prox_weight;      // eps on W2^2(nu, nu_bar)
    std::uint64_t seed = 0;
    int multi_start = 3;    // 1: provided init only; 2: + center atom; 3: + seeded random
    bool away_steps = true; // pair the FW vertex step with away steps over the active set
    double support_threshold = 1e-6;  // relative mass cutoff defining "support"
    int max_sweeps = 30;              // alternating sweeps in solve_joint
    int line_search_probes = 20;
};

/// Stationarity certificate: on the discrete support the score psi + T_nu
/// should sit at a constant m, and nowhere fall below it.
struct OptimalityReport {
    double m_constant = 0;
    double support_violation = 0;  // max over support of |score - m|
    double global_violation = 0;   // max(0, m - min over all nodes of score)
    double support_threshold = 0;
};

struct IterationRecord {
    int iter = 0;
    double objective = 0;  // after this iteration's step
    double gap = 0;        // FW gap at the start of the iteration
    double step = 0;       // accepted step length
    double max_density = 0;
    Vector barycenter;
};

struct LinfBoundCheck {
    double observed_max_density = 0;
    double theoretical_bound = 0;  // 2^d M (1 + ||V||_C2)^d; +inf when no kernel applies
    bool pass = true;
};

struct SolverReport {
    explicit SolverReport(GridMeasure nu) : final_nu(std::move(nu)) {}

    std::vector<double> objective_trace;  // non-increasing up to 1e-12 per step
    std::vector<IterationRecord> iterations;
    GridMeasure final_nu;
    std::optional<GridMeasure> final_mu;
    OptimalityReport optimality;
    LinfBoundCheck linf_bound_check;
    Termination termination = Termination::IterationLimit;
    double final_objective = 0;
    /// Stationarity gap recomputed from a fresh exact transport solve with the
    /// certificate dual selection; carries an O(h) discretization floor.
    double final_gap = 0;
    /// The solver's own gap at termination (its linearization oracle). With
    /// the entropic transport oracle the objective is smooth and this gap
    /// honestly reaches fw_tol; the exact oracle has kinks.
    double termination_gap = 0;
    int start_index = 0;  // which multi-start won
    int sweeps = 0;       // alternating sweeps performed (solve_joint)

    // barrier mode
    std::optional<double> prox_w2;       // W2(final nu, nu_bar)
    std::optional<double> barrier_term;  // delta_eps * A(final nu)

    // joint mode
    std::optional<OptimalityReport> mu_optimality;
    std::optional<double> barycenter_distance;
    std::optional<double> homothety_ratio;        // fitted ratio nu vs mu (quadratic kernel)
    std::optional<double> homothety_residual_w1;  // W1(nu, fitted homothety image of mu)
};

struct FwDirection {
    GridMeasure vertex;
    int vertex_index = 0;
    double gap = 0;
};

/// Conditional-gradient direction for the score psi + T: single-atom vertex at
/// the argmin (lowest index on ties) and the stationarity gap
/// <psi + T, nu> - min(psi + T).
FwDirection fw_direction(const GridMeasure& nu, const Vector& psi, const Vector& T);

/// min over nu of 1/2 W2^2(mu, nu) + G(nu) by conditional gradient.
SolverReport solve_nu(const GridMeasure& mu, const InteractionKernel& ker,
                      const SolverConfig& cfg, const GridMeasure& init);

/// Barrier-regularized problem: 1/2 W2^2(mu, nu) + G(nu) + delta A(nu)
/// + eps W2^2(nu, nu_bar), iterates kept strictly positive. Starts from
/// nu_bar. With delta = eps = 0 this reduces to solve_nu started at nu_bar.
SolverReport solve_nu_barrier(const GridMeasure& mu, const InteractionKernel& ker,
                              const GridMeasure& nu_bar, const SolverConfig& cfg);

/// min over mu of 1/2 W2^2(mu, nu) + F(mu); strictly convex, single start.
SolverReport solve_mu(const GridMeasure& nu, const LocalFunctional& loc,
                      const SolverConfig& cfg, const GridMeasure& init);

/// Block-coordinate descent on 1/2 W2^2(mu, nu) + F(mu) + G(nu),
/// mu-step first in every sweep.
SolverReport solve_joint(const InteractionKernel& ker, const LocalFunctional& loc,
                         const SolverConfig& cfg, const GridMeasure& init_mu,
                         const GridMeasure& init_nu);

/// Stationarity residuals of nu against mu from a fresh exact transport solve.
OptimalityReport optimality_report(const GridMeasure& nu, const GridMeasure& mu,
                                   const InteractionKernel& ker, double support_threshold);

/// Shared residual computation: m is the nu-weighted mean of the score over
/// the support (weights above support_threshold * max weight).
OptimalityReport stationarity_from_score(const Vector& weights, const Vector& score,
                                         double support_threshold);

/// 1/2 W2^2(mu, nu) + F(mu) + G(nu), exact transport.
double joint_objective(const GridMeasure& mu, const GridMeasure& nu,
                       const InteractionKernel& ker, const LocalFunctional& loc);

}  // namespace otmin
