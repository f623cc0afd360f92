#pragma once

#include <iosfwd>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include "otmin/measure.hpp"

namespace otmin {

/// Dense matrix of pairwise transport costs between two node sets.
/// Factories tag the matrix as Monge when both grids are 1d and the cost is
/// |x-y|^p with p >= 1; on sorted nodes the north-west-corner coupling is then
/// already optimal and solve_exact takes an O(n+m) route.
class CostMatrix {
public:
    /// c(x,y) = 1/2 |x-y|^2  (the cost used throughout the solver).
    static CostMatrix half_squared(const GridSpec& source, const GridSpec& target);
    /// c(x,y) = |x-y|^p, p >= 1 (Wasserstein-p ground cost).
    static CostMatrix power(const GridSpec& source, const GridSpec& target, double p);
    static CostMatrix from_matrix(Matrix entries);

    int rows() const { return static_cast<int>(entries_.rows()); }
    int cols() const { return static_cast<int>(entries_.cols()); }
    double operator()(int i, int j) const { return entries_(i, j); }
    const Matrix& matrix() const { return entries_; }
    bool monge_1d() const { return monge_1d_; }

private:
    explicit CostMatrix(Matrix m, bool monge) : entries_(std::move(m)), monge_1d_(monge) {}
    Matrix entries_;
    bool monge_1d_ = false;
};

struct TransportPlan {
    Matrix coupling;          // rows x cols, nonnegative, marginals = weights
    double cost_value = 0.0;  // sum coupling .* cost
    GridSpec source_spec;
    GridSpec target_spec;
};

/// Kantorovich dual pair. psi lives on source nodes, psi_c on target nodes,
/// psi[i] + psi_c[j] <= cost(i,j). Potentials returned by the solvers are
/// gauge-normalized so psi vanishes at the first source node carrying mass.
struct DualPotentials {
    Vector psi;
    Vector psi_c;
    bool is_c_concave = false;
};

enum class TransformDirection { SourceToTarget, TargetToSource };

/// chi^c(y) = min_x cost(x,y) - chi(x), minimized exactly over the node set.
/// SourceToTarget maps source-side values to target-side values.
Vector c_transform(const Vector& values, const CostMatrix& cost, TransformDirection dir);

/// Same conjugation but minimized only over nodes carrying mass. Dual values
/// are pinned by the transport problem only on the supports; this completion
/// extends them maximally off-support, the selection the stationarity
/// certificate needs (potentials there come from marginals with full support).
Vector support_restricted_c_transform(const Vector& values, const Vector& mass,
                                      const CostMatrix& cost, TransformDirection dir);

/// The same support-restricted conjugate for sorted 1d grids with cost
/// 1/2 |x-y|^2, computed as the lower envelope of equal-curvature parabolas
/// in O(n + m). values/mass live on `target`, the result on `source`.
Vector support_restricted_conjugate_1d(const Vector& values, const Vector& mass,
                                       const GridSpec& source, const GridSpec& target);

/// Exact solution of the discrete transportation problem (dense bipartite,
/// transportation simplex). Guard: rows*cols <= 1e6.
std::pair<TransportPlan, DualPotentials>
solve_exact(const GridMeasure& mu, const GridMeasure& nu, const CostMatrix& cost);

struct EntropicOptions {
    double epsilon = 1e-2;
    int max_iter = 50000;
    // L1 marginal error of the unrounded plan. After rounding the marginals
    // are exact and the cost error is bounded by ||C||_inf * tol, so tol can
    // stay modest; cost ties (regular grids) slow Sinkhorn to O(1/k) and make
    // very small tolerances expensive.
    double tol = 1e-6;
};

/// Log-domain Sinkhorn. The returned plan is rounded to exact marginals and
/// the dual pair is repaired by a c-transform pass so it is feasible.
std::pair<TransportPlan, DualPotentials>
solve_entropic(const GridMeasure& mu, const GridMeasure& nu, const CostMatrix& cost,
               const EntropicOptions& opts);

struct DisplacementMap {
    Matrix targets;              // one row per source node (barycentric projection)
    std::vector<bool> defined;   // false for zero-mass rows
    bool pure = false;           // every massive row has a single positive entry
};

DisplacementMap displacement_map(const TransportPlan& plan);

enum class TransportMethod { Exact, Entropic };

double wasserstein(const GridMeasure& mu, const GridMeasure& nu, double p,
                   TransportMethod method,
                   const std::optional<EntropicOptions>& entropic = std::nullopt);

/// Monotone-coupling route for sorted 1d grids with cost (half?1/2:1)|x-y|^p.
/// O(n+m); used by the solver inner loops and as an independent cross-check
/// of the general simplex.
double monotone_1d_cost(const GridSpec& src, const Vector& src_w,
                        const GridSpec& tgt, const Vector& tgt_w,
                        double p, bool half);

struct Monotone1dSolution {
    double cost = 0.0;
    Vector psi;    // staircase duals, psi[0] = 0 gauge
    Vector psi_c;
};

Monotone1dSolution monotone_1d_solve(const GridSpec& src, const Vector& src_w,
                                     const GridSpec& tgt, const Vector& tgt_w,
                                     double p, bool half);

/// Solver-facing raw-weight entry points: exact optimum without plan assembly
/// or dual post-processing. Weights may contain zeros.
double exact_cost_raw(const Vector& a, const Vector& b, const CostMatrix& cost);
std::pair<Vector, Vector> exact_duals_raw(const Vector& a, const Vector& b,
                                          const CostMatrix& cost);

/// Warm-startable log-domain Sinkhorn state for the solver inner loops. The
/// scaling potentials persist across calls, so successive solves for nearby
/// marginals converge in a few sweeps. Zero weights are handled in log space
/// (their potentials sit at -inf and the corresponding plan rows vanish).
class SinkhornState {
public:
    SinkhornState(const CostMatrix& cost, double epsilon);

    /// Cost of the marginal-rounded plan after iterating to tol. With
    /// best_effort the sweep budget is spent and the current state is used
    /// without throwing; rounding makes the marginals exact either way.
    double solve_cost(const Vector& a, const Vector& b, double tol, int max_sweeps,
                      bool best_effort = false);
    /// Source-side potential (raw log-potential; zero-mass rows filled by the
    /// tight completion against g).
    Vector source_potential(const Vector& a, const Vector& b, double tol, int max_sweeps);
    double last_marginal_error() const { return last_error_; }

private:
    void iterate(const Vector& a, const Vector& b, double tol, int max_sweeps,
                 bool best_effort = false);
    const CostMatrix& cost_;
    double eps_;
    Vector f_, g_;
    double last_error_ = std::numeric_limits<double>::infinity();
};

/// Sparse triplet export: header then `i, j, mass` rows for positive entries.
void write_plan_csv(const TransportPlan& plan, std::ostream& out);
void write_potentials_csv(const Vector& psi, std::ostream& out);

}  // namespace otmin
