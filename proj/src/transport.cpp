#include "otmin/transport.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <limits>
#include <ostream>

namespace otmin {

namespace {

constexpr double kMarginalTol = 1e-9;
constexpr long long kLpSizeGuard = 1000000;

double pair_cost(const GridSpec& src, int i, const GridSpec& tgt, int j, double p, bool half) {
    double d2 = 0;
    for (int a = 0; a < src.dim(); ++a) {
        const double d = src.node_coord(i, a) - tgt.node_coord(j, a);
        d2 += d * d;
    }
    double c;
    if (p == 2.0) c = d2;
    else if (p == 1.0) c = std::sqrt(d2);
    else c = std::pow(d2, 0.5 * p);
    return half ? 0.5 * c : c;
}

Matrix build_cost(const GridSpec& src, const GridSpec& tgt, double p, bool half) {
    Matrix m(src.num_nodes(), tgt.num_nodes());
    for (int i = 0; i < src.num_nodes(); ++i)
        for (int j = 0; j < tgt.num_nodes(); ++j) m(i, j) = pair_cost(src, i, tgt, j, p, half);
    return m;
}

struct BasisCell {
    int i, j;
    double flow;
};

/// North-west-corner walk. Emits exactly R+C-1 cells forming a staircase
/// spanning tree; the terminal cell absorbs floating-point drift between the
/// two total masses. cb(i, j, flow) is called in creation order.
template <typename F>
void northwest_walk(const Vector& a, const Vector& b, F&& cb) {
    const int R = static_cast<int>(a.size());
    const int C = static_cast<int>(b.size());
    int i = 0, j = 0;
    double ra = a[0], rb = b[0];
    while (true) {
        double f = std::min(ra, rb);
        if (i == R - 1 && j == C - 1) f = std::max(ra, 0.0);
        cb(i, j, f);
        ra -= f;
        rb -= f;
        if (i == R - 1 && j == C - 1) break;
        if (i == R - 1) {
            ++j;
            rb = b[j];
        } else if (j == C - 1) {
            ++i;
            ra = a[i];
        } else if (ra <= 0.0) {  // min() makes the smaller side exactly zero
            ++i;
            ra = a[i];
        } else {
            ++j;
            rb = b[j];
        }
    }
}

/// Dense transportation simplex (MODI). Starts from a given spanning-tree
/// basis, prices with Dantzig's rule (lowest flat index on ties) and falls
/// back to Bland's rule after a long degenerate streak so termination is
/// guaranteed. Single-threaded, deterministic.
class TransportSimplex {
public:
    TransportSimplex(const Vector& a, const Vector& b, const Matrix& C,
                     std::vector<BasisCell> basis)
        : C_(C), R_(static_cast<int>(a.size())), Cn_(static_cast<int>(b.size())),
          cells_(std::move(basis)), row_adj_(R_), col_adj_(Cn_) {
        for (int k = 0; k < static_cast<int>(cells_.size()); ++k) {
            row_adj_[cells_[k].i].push_back(k);
            col_adj_[cells_[k].j].push_back(k);
        }
        u_.resize(R_);
        v_.resize(Cn_);
        tol_ = 1e-11 * (1.0 + C_.cwiseAbs().maxCoeff());
    }

    void run() {
        long long pivots = 0;
        int degenerate_streak = 0;
        bool bland = false;
        while (true) {
            compute_potentials();
            int ei, ej;
            if (!find_entering(bland, ei, ej)) return;  // optimal
            const double theta = pivot(ei, ej);
            if (theta <= 0.0) {
                if (++degenerate_streak > 200) bland = true;
            } else {
                degenerate_streak = 0;
            }
            if (++pivots > 2000000)
                throw Error("transportation simplex: pivot limit exceeded");
        }
    }

    const std::vector<BasisCell>& cells() const { return cells_; }
    const Vector& u() const { return u_; }
    const Vector& v() const { return v_; }

private:
    void compute_potentials() {
        // Propagate u_i + v_j = C_ij over the basis tree, rooted at row 0.
        visited_row_.assign(R_, false);
        visited_col_.assign(Cn_, false);
        std::deque<int> queue;  // node ids: rows [0,R), cols [R, R+Cn)
        u_[0] = 0.0;
        visited_row_[0] = true;
        queue.push_back(0);
        while (!queue.empty()) {
            const int node = queue.front();
            queue.pop_front();
            if (node < R_) {
                for (int k : row_adj_[node]) {
                    const int j = cells_[k].j;
                    if (!visited_col_[j]) {
                        v_[j] = C_(node, j) - u_[node];
                        visited_col_[j] = true;
                        queue.push_back(R_ + j);
                    }
                }
            } else {
                const int j = node - R_;
                for (int k : col_adj_[j]) {
                    const int i = cells_[k].i;
                    if (!visited_row_[i]) {
                        u_[i] = C_(i, j) - v_[j];
                        visited_row_[i] = true;
                        queue.push_back(i);
                    }
                }
            }
        }
        for (int i = 0; i < R_; ++i)
            if (!visited_row_[i]) throw Error("transportation simplex: basis is not spanning");
        for (int j = 0; j < Cn_; ++j)
            if (!visited_col_[j]) throw Error("transportation simplex: basis is not spanning");
    }

    bool find_entering(bool bland, int& ei, int& ej) const {
        double best = -tol_;
        ei = -1;
        ej = -1;
        for (int i = 0; i < R_; ++i) {
            const double ui = u_[i];
            for (int j = 0; j < Cn_; ++j) {
                const double rc = C_(i, j) - ui - v_[j];
                if (rc < best) {
                    best = rc;
                    ei = i;
                    ej = j;
                    if (bland) return true;  // first negative in flat order
                }
            }
        }
        return ei >= 0;
    }

    // Finds the unique tree path from row node ei to col node ej, applies the
    // alternating flow change and swaps entering/leaving cells.
    double pivot(int ei, int ej) {
        parent_cell_.assign(R_ + Cn_, -1);
        parent_node_.assign(R_ + Cn_, -1);
        std::deque<int> queue;
        std::vector<char> seen(R_ + Cn_, 0);
        seen[ei] = 1;
        queue.push_back(ei);
        const int target = R_ + ej;
        while (!queue.empty()) {
            const int node = queue.front();
            queue.pop_front();
            if (node == target) break;
            const auto& adj = node < R_ ? row_adj_[node] : col_adj_[node - R_];
            for (int k : adj) {
                const int other = node < R_ ? R_ + cells_[k].j : cells_[k].i;
                if (!seen[other]) {
                    seen[other] = 1;
                    parent_cell_[other] = k;
                    parent_node_[other] = node;
                    queue.push_back(other);
                }
            }
        }
        if (!seen[target]) throw Error("transportation simplex: disconnected basis");

        // Walk back from col ej to row ei; cells alternate -,+,-,...
        path_.clear();
        for (int node = target; node != ei; node = parent_node_[node]) path_.push_back(parent_cell_[node]);

        // Leaving cell: exact minimum flow among negative positions, lowest
        // flat index on exact ties (deterministic).
        double theta = std::numeric_limits<double>::infinity();
        for (size_t l = 0; l < path_.size(); l += 2) theta = std::min(theta, cells_[path_[l]].flow);
        theta = std::max(theta, 0.0);
        int leaving = -1;
        long long leaving_flat = -1;
        for (size_t l = 0; l < path_.size(); l += 2) {
            const BasisCell& c = cells_[path_[l]];
            if (c.flow <= theta) {
                const long long flat = static_cast<long long>(c.i) * Cn_ + c.j;
                if (leaving < 0 || flat < leaving_flat) {
                    leaving = path_[l];
                    leaving_flat = flat;
                }
            }
        }

        for (size_t l = 0; l < path_.size(); ++l) {
            if (l % 2 == 0) cells_[path_[l]].flow -= theta;
            else cells_[path_[l]].flow += theta;
        }
        cells_[leaving].flow = 0.0;

        // Replace the leaving cell in place; adjacency lists follow.
        const BasisCell old = cells_[leaving];
        detach(leaving, old.i, old.j);
        cells_[leaving] = BasisCell{ei, ej, theta};
        row_adj_[ei].push_back(leaving);
        col_adj_[ej].push_back(leaving);
        return theta;
    }

    void detach(int cell_id, int i, int j) {
        auto& ra = row_adj_[i];
        ra.erase(std::find(ra.begin(), ra.end(), cell_id));
        auto& ca = col_adj_[j];
        ca.erase(std::find(ca.begin(), ca.end(), cell_id));
    }

    const Matrix& C_;
    int R_, Cn_;
    std::vector<BasisCell> cells_;
    std::vector<std::vector<int>> row_adj_, col_adj_;
    Vector u_, v_;
    std::vector<char> visited_row_, visited_col_;
    std::vector<int> parent_cell_, parent_node_, path_;
    double tol_ = 0;
};

std::vector<BasisCell> northwest_basis(const Vector& a, const Vector& b) {
    std::vector<BasisCell> cells;
    cells.reserve(a.size() + b.size() - 1);
    northwest_walk(a, b, [&](int i, int j, double f) { cells.push_back(BasisCell{i, j, f}); });
    return cells;
}

struct GeneralSolution {
    double cost = 0;
    Vector psi, psi_c;       // full-size duals, tight completion at stripped nodes
    std::vector<int> rows, cols;
    std::vector<BasisCell> cells;  // stripped indices
};

// Strips zero-mass nodes, solves the reduced dense problem, re-embeds duals.
GeneralSolution general_exact(const Vector& a, const Vector& b, const CostMatrix& cost) {
    const int R = static_cast<int>(a.size());
    const int C = static_cast<int>(b.size());
    GeneralSolution out;
    for (int i = 0; i < R; ++i)
        if (a[i] > 0.0) out.rows.push_back(i);
    for (int j = 0; j < C; ++j)
        if (b[j] > 0.0) out.cols.push_back(j);
    const int Rs = static_cast<int>(out.rows.size());
    const int Cs = static_cast<int>(out.cols.size());
    Vector as(Rs), bs(Cs);
    Matrix Cs_mat(Rs, Cs);
    for (int i = 0; i < Rs; ++i) as[i] = a[out.rows[i]];
    for (int j = 0; j < Cs; ++j) bs[j] = b[out.cols[j]];
    for (int i = 0; i < Rs; ++i)
        for (int j = 0; j < Cs; ++j) Cs_mat(i, j) = cost(out.rows[i], out.cols[j]);

    TransportSimplex simplex(as, bs, Cs_mat, northwest_basis(as, bs));
    simplex.run();
    out.cells = simplex.cells();
    for (const BasisCell& c : out.cells)
        if (c.flow > 0.0) out.cost += c.flow * Cs_mat(c.i, c.j);

    out.psi.setConstant(R, std::numeric_limits<double>::infinity());
    out.psi_c.setConstant(C, std::numeric_limits<double>::infinity());
    for (int i = 0; i < Rs; ++i) out.psi[out.rows[i]] = simplex.u()[i];
    for (int j = 0; j < Cs; ++j) out.psi_c[out.cols[j]] = simplex.v()[j];
    for (int i = 0; i < R; ++i) {
        if (std::isinf(out.psi[i])) {
            double best = std::numeric_limits<double>::infinity();
            for (int j : out.cols) best = std::min(best, cost(i, j) - out.psi_c[j]);
            out.psi[i] = best;
        }
    }
    for (int j = 0; j < C; ++j) {
        if (std::isinf(out.psi_c[j])) {
            double best = std::numeric_limits<double>::infinity();
            for (int i = 0; i < R; ++i) best = std::min(best, cost(i, j) - out.psi[i]);
            out.psi_c[j] = best;
        }
    }
    return out;
}

// Staircase duals along the north-west-corner path of a Monge-tagged matrix.
void staircase_duals(const Vector& a, const Vector& b, const CostMatrix& cost,
                     Vector& psi, Vector& psi_c) {
    psi.resize(a.size());
    psi_c.resize(b.size());
    int prev_i = -1;
    northwest_walk(a, b, [&](int i, int j, double) {
        const double c = cost(i, j);
        if (prev_i < 0) {
            psi[i] = 0.0;
            psi_c[j] = c;
        } else if (i == prev_i) {
            psi_c[j] = c - psi[i];
        } else {
            psi[i] = c - psi_c[j];
        }
        prev_i = i;
    });
}

void gauge_normalize(const GridMeasure& mu, Vector& psi, Vector& psi_c) {
    for (int i = 0; i < mu.size(); ++i) {
        if (mu.weight(i) > 0.0) {
            const double k = psi[i];
            psi.array() -= k;
            psi_c.array() += k;
            return;
        }
    }
}

}  // namespace

CostMatrix CostMatrix::half_squared(const GridSpec& source, const GridSpec& target) {
    const bool monge = source.dim() == 1 && target.dim() == 1;
    return CostMatrix(build_cost(source, target, 2.0, true), monge);
}

CostMatrix CostMatrix::power(const GridSpec& source, const GridSpec& target, double p) {
    if (p < 1.0) throw Error("CostMatrix::power: p must be >= 1");
    const bool monge = source.dim() == 1 && target.dim() == 1;
    return CostMatrix(build_cost(source, target, p, false), monge);
}

CostMatrix CostMatrix::from_matrix(Matrix entries) {
    if ((entries.array() < 0).any()) throw Error("CostMatrix: negative entries");
    return CostMatrix(std::move(entries), false);
}

Vector c_transform(const Vector& values, const CostMatrix& cost, TransformDirection dir) {
    if (dir == TransformDirection::SourceToTarget) {
        if (values.size() != cost.rows()) throw Error("c_transform: size mismatch");
        Vector out(cost.cols());
        for (int j = 0; j < cost.cols(); ++j) {
            double best = std::numeric_limits<double>::infinity();
            for (int i = 0; i < cost.rows(); ++i) best = std::min(best, cost(i, j) - values[i]);
            out[j] = best;
        }
        return out;
    }
    if (values.size() != cost.cols()) throw Error("c_transform: size mismatch");
    Vector out(cost.rows());
    for (int i = 0; i < cost.rows(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (int j = 0; j < cost.cols(); ++j) best = std::min(best, cost(i, j) - values[j]);
        out[i] = best;
    }
    return out;
}

Vector support_restricted_c_transform(const Vector& values, const Vector& mass,
                                      const CostMatrix& cost, TransformDirection dir) {
    if (mass.size() != values.size())
        throw Error("support_restricted_c_transform: mass/value size mismatch");
    if (dir == TransformDirection::SourceToTarget) {
        if (values.size() != cost.rows()) throw Error("support_restricted_c_transform: size mismatch");
        Vector out(cost.cols());
        for (int j = 0; j < cost.cols(); ++j) {
            double best = std::numeric_limits<double>::infinity();
            for (int i = 0; i < cost.rows(); ++i)
                if (mass[i] > 0.0) best = std::min(best, cost(i, j) - values[i]);
            out[j] = best;
        }
        return out;
    }
    if (values.size() != cost.cols()) throw Error("support_restricted_c_transform: size mismatch");
    Vector out(cost.rows());
    for (int i = 0; i < cost.rows(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (int j = 0; j < cost.cols(); ++j)
            if (mass[j] > 0.0) best = std::min(best, cost(i, j) - values[j]);
        out[i] = best;
    }
    return out;
}

std::pair<TransportPlan, DualPotentials>
solve_exact(const GridMeasure& mu, const GridMeasure& nu, const CostMatrix& cost) {
    const int R = mu.size(), C = nu.size();
    if (cost.rows() != R || cost.cols() != C) throw Error("solve_exact: cost size mismatch");
    if (static_cast<long long>(R) * C > kLpSizeGuard)
        throw SizeGuardExceeded("solve_exact: rows*cols exceeds the exact-LP guard");
    if (std::abs(mu.weights().sum() - nu.weights().sum()) > kMarginalTol)
        throw InfeasibleMarginals("solve_exact: total masses differ");

    const Vector& a = mu.weights();
    const Vector& b = nu.weights();

    Matrix coupling = Matrix::Zero(R, C);
    Vector psi(R), psi_c(C);

    if (cost.monge_1d()) {
        // Sorted 1d nodes with a convex |x-y|^p cost: the north-west-corner
        // coupling is optimal. Run the simplex from it anyway; it certifies
        // optimality in a single pricing pass and repairs any tie pathology.
        TransportSimplex simplex(a, b, cost.matrix(), northwest_basis(a, b));
        simplex.run();
        for (const BasisCell& c : simplex.cells()) coupling(c.i, c.j) += c.flow;
        psi = simplex.u();
        psi_c = simplex.v();
    } else {
        GeneralSolution sol = general_exact(a, b, cost);
        for (const BasisCell& c : sol.cells)
            coupling(sol.rows[c.i], sol.cols[c.j]) += c.flow;
        psi = std::move(sol.psi);
        psi_c = std::move(sol.psi_c);
    }

    // Double c-transform: keeps the dual value optimal, makes psi c-concave
    // and psi_c its exact transform.
    psi_c = c_transform(psi, cost, TransformDirection::SourceToTarget);
    psi = c_transform(psi_c, cost, TransformDirection::TargetToSource);
    psi_c = c_transform(psi, cost, TransformDirection::SourceToTarget);
    gauge_normalize(mu, psi, psi_c);

    TransportPlan plan{std::move(coupling), 0.0, mu.grid(), nu.grid()};
    plan.cost_value = (plan.coupling.array() * cost.matrix().array()).sum();

    const double dual = psi.dot(a) + psi_c.dot(b);
    if (std::abs(plan.cost_value - dual) > 1e-8 * (1.0 + std::abs(plan.cost_value)))
        throw Error("solve_exact: primal/dual mismatch after termination");

    return {std::move(plan), DualPotentials{std::move(psi), std::move(psi_c), true}};
}

std::pair<TransportPlan, DualPotentials>
solve_entropic(const GridMeasure& mu, const GridMeasure& nu, const CostMatrix& cost,
               const EntropicOptions& opts) {
    const int R = mu.size(), C = nu.size();
    if (cost.rows() != R || cost.cols() != C) throw Error("solve_entropic: cost size mismatch");
    if (opts.epsilon <= 0) throw Error("solve_entropic: epsilon must be positive");
    if (std::abs(mu.weights().sum() - nu.weights().sum()) > kMarginalTol)
        throw InfeasibleMarginals("solve_entropic: total masses differ");

    std::vector<int> rows, cols;
    for (int i = 0; i < R; ++i)
        if (mu.weight(i) > 0.0) rows.push_back(i);
    for (int j = 0; j < C; ++j)
        if (nu.weight(j) > 0.0) cols.push_back(j);
    const int Rs = static_cast<int>(rows.size());
    const int Cs = static_cast<int>(cols.size());

    Vector a(Rs), b(Cs), log_a(Rs), log_b(Cs);
    Matrix Cm(Rs, Cs);
    for (int i = 0; i < Rs; ++i) {
        a[i] = mu.weight(rows[i]);
        log_a[i] = std::log(a[i]);
    }
    for (int j = 0; j < Cs; ++j) {
        b[j] = nu.weight(cols[j]);
        log_b[j] = std::log(b[j]);
    }
    for (int i = 0; i < Rs; ++i)
        for (int j = 0; j < Cs; ++j) Cm(i, j) = cost(rows[i], cols[j]);

    const double eps = opts.epsilon;
    Vector f = Vector::Zero(Rs), g = Vector::Zero(Cs);
    Vector t(std::max(Rs, Cs));

    auto lse_rows = [&](Vector& out) {
        // out[i] = log sum_j exp((g_j - C_ij)/eps)
        for (int i = 0; i < Rs; ++i) {
            double mx = -std::numeric_limits<double>::infinity();
            for (int j = 0; j < Cs; ++j) {
                t[j] = (g[j] - Cm(i, j)) / eps;
                mx = std::max(mx, t[j]);
            }
            double s = 0;
            for (int j = 0; j < Cs; ++j) s += std::exp(t[j] - mx);
            out[i] = mx + std::log(s);
        }
    };
    auto lse_cols = [&](Vector& out) {
        for (int j = 0; j < Cs; ++j) {
            double mx = -std::numeric_limits<double>::infinity();
            for (int i = 0; i < Rs; ++i) {
                t[i] = (f[i] - Cm(i, j)) / eps;
                mx = std::max(mx, t[i]);
            }
            double s = 0;
            for (int i = 0; i < Rs; ++i) s += std::exp(t[i] - mx);
            out[j] = mx + std::log(s);
        }
    };

    Vector lse(std::max(Rs, Cs));
    double marginal_error = std::numeric_limits<double>::infinity();
    bool converged = false;
    for (int it = 0; it < opts.max_iter; ++it) {
        lse_rows(lse);
        for (int i = 0; i < Rs; ++i) f[i] = eps * (log_a[i] - lse[i]);
        lse_cols(lse);
        for (int j = 0; j < Cs; ++j) g[j] = eps * (log_b[j] - lse[j]);
        if (!f.allFinite() || !g.allFinite())
            throw NumericalUnderflow("solve_entropic: potentials left representable range; raise epsilon");
        if (it % 10 == 9 || it == opts.max_iter - 1) {
            // Columns are exact right after the g update; measure the row error.
            marginal_error = 0;
            for (int i = 0; i < Rs; ++i) {
                double s = 0;
                for (int j = 0; j < Cs; ++j) s += std::exp((f[i] + g[j] - Cm(i, j)) / eps);
                marginal_error += std::abs(s - a[i]);
            }
            if (marginal_error <= opts.tol) {
                converged = true;
                break;
            }
        }
    }
    if (!converged)
        throw NoConvergence("solve_entropic: marginal error above tol after max_iter",
                            marginal_error);

    Matrix gamma(Rs, Cs);
    for (int i = 0; i < Rs; ++i)
        for (int j = 0; j < Cs; ++j) gamma(i, j) = std::exp((f[i] + g[j] - Cm(i, j)) / eps);

    // Round to exact marginals: scale rows down, then columns, then spread the
    // leftover mass as a rank-one correction.
    for (int i = 0; i < Rs; ++i) {
        const double s = gamma.row(i).sum();
        if (s > a[i]) gamma.row(i) *= a[i] / s;
    }
    for (int j = 0; j < Cs; ++j) {
        const double s = gamma.col(j).sum();
        if (s > b[j]) gamma.col(j) *= b[j] / s;
    }
    Vector er = a - gamma.rowwise().sum();
    Vector ec = b - gamma.colwise().sum().transpose();
    const double leftover = er.sum();
    if (leftover > 0) gamma += er * ec.transpose() / leftover;

    TransportPlan plan{Matrix::Zero(R, C), 0.0, mu.grid(), nu.grid()};
    for (int i = 0; i < Rs; ++i)
        for (int j = 0; j < Cs; ++j) plan.coupling(rows[i], cols[j]) = gamma(i, j);
    plan.cost_value = (plan.coupling.array() * cost.matrix().array()).sum();

    // psi = raw log-potential on massive nodes, tight completion elsewhere;
    // one c-transform pass makes (psi, psi_c) feasible.
    Vector psi(R);
    psi.setConstant(std::numeric_limits<double>::infinity());
    for (int i = 0; i < Rs; ++i) psi[rows[i]] = f[i];
    for (int i = 0; i < R; ++i) {
        if (std::isinf(psi[i])) {
            double best = std::numeric_limits<double>::infinity();
            for (int j = 0; j < Cs; ++j) best = std::min(best, cost(i, cols[j]) - g[j]);
            psi[i] = best;
        }
    }
    Vector psi_c = c_transform(psi, cost, TransformDirection::SourceToTarget);
    gauge_normalize(mu, psi, psi_c);

    return {std::move(plan), DualPotentials{std::move(psi), std::move(psi_c), false}};
}

DisplacementMap displacement_map(const TransportPlan& plan) {
    const int R = static_cast<int>(plan.coupling.rows());
    const int C = static_cast<int>(plan.coupling.cols());
    const int dim = plan.target_spec.dim();
    DisplacementMap out;
    out.targets = Matrix::Zero(R, dim);
    out.defined.assign(R, false);
    out.pure = true;
    for (int i = 0; i < R; ++i) {
        double mass = 0;
        int positive = 0;
        Vector acc = Vector::Zero(dim);
        for (int j = 0; j < C; ++j) {
            const double m = plan.coupling(i, j);
            if (m > 0.0) {
                ++positive;
                mass += m;
                for (int a = 0; a < dim; ++a) acc[a] += m * plan.target_spec.node_coord(j, a);
            }
        }
        if (mass > 0.0) {
            out.defined[i] = true;
            out.targets.row(i) = (acc / mass).transpose();
            if (positive > 1) out.pure = false;
        }
    }
    return out;
}

double wasserstein(const GridMeasure& mu, const GridMeasure& nu, double p,
                   TransportMethod method, const std::optional<EntropicOptions>& entropic) {
    if (p < 1.0) throw Error("wasserstein: p must be >= 1");
    const CostMatrix cost = CostMatrix::power(mu.grid(), nu.grid(), p);
    double c;
    if (method == TransportMethod::Exact) {
        c = solve_exact(mu, nu, cost).first.cost_value;
    } else {
        EntropicOptions opts = entropic.value_or(EntropicOptions{});
        if (!entropic) {
            const double d = std::max(mu.grid().diameter(), nu.grid().diameter());
            opts.epsilon = 1e-3 * d * d;
        }
        c = solve_entropic(mu, nu, cost, opts).first.cost_value;
    }
    return std::pow(std::max(c, 0.0), 1.0 / p);
}

double monotone_1d_cost(const GridSpec& src, const Vector& src_w,
                        const GridSpec& tgt, const Vector& tgt_w, double p, bool half) {
    if (src.dim() != 1 || tgt.dim() != 1) throw Error("monotone_1d_cost: grids must be 1d");
    double total = 0;
    northwest_walk(src_w, tgt_w, [&](int i, int j, double f) {
        if (f > 0.0) total += f * pair_cost(src, i, tgt, j, p, half);
    });
    return total;
}

Monotone1dSolution monotone_1d_solve(const GridSpec& src, const Vector& src_w,
                                     const GridSpec& tgt, const Vector& tgt_w,
                                     double p, bool half) {
    if (src.dim() != 1 || tgt.dim() != 1) throw Error("monotone_1d_solve: grids must be 1d");
    Monotone1dSolution sol;
    sol.psi.resize(src.num_nodes());
    sol.psi_c.resize(tgt.num_nodes());
    // The staircase visits every row and column in order; complementary
    // slackness along it determines both potentials from psi[0] = 0.
    int prev_i = -1;
    northwest_walk(src_w, tgt_w, [&](int i, int j, double f) {
        if (f > 0.0) sol.cost += f * pair_cost(src, i, tgt, j, p, half);
        const double c = pair_cost(src, i, tgt, j, p, half);
        if (prev_i < 0) {
            sol.psi[i] = 0.0;
            sol.psi_c[j] = c;
        } else if (i == prev_i) {
            sol.psi_c[j] = c - sol.psi[i];
        } else {
            sol.psi[i] = c - sol.psi_c[j];
        }
        prev_i = i;
    });
    return sol;
}

double exact_cost_raw(const Vector& a, const Vector& b, const CostMatrix& cost) {
    if (std::abs(a.sum() - b.sum()) > kMarginalTol)
        throw InfeasibleMarginals("exact_cost_raw: total masses differ");
    if (cost.monge_1d()) {
        double total = 0;
        northwest_walk(a, b, [&](int i, int j, double f) {
            if (f > 0.0) total += f * cost(i, j);
        });
        return total;
    }
    return general_exact(a, b, cost).cost;
}

std::pair<Vector, Vector> exact_duals_raw(const Vector& a, const Vector& b,
                                          const CostMatrix& cost) {
    if (std::abs(a.sum() - b.sum()) > kMarginalTol)
        throw InfeasibleMarginals("exact_duals_raw: total masses differ");
    if (cost.monge_1d()) {
        Vector psi, psi_c;
        staircase_duals(a, b, cost, psi, psi_c);
        return {std::move(psi), std::move(psi_c)};
    }
    GeneralSolution sol = general_exact(a, b, cost);
    return {std::move(sol.psi), std::move(sol.psi_c)};
}

Vector support_restricted_conjugate_1d(const Vector& values, const Vector& mass,
                                       const GridSpec& source, const GridSpec& target) {
    if (source.dim() != 1 || target.dim() != 1)
        throw Error("support_restricted_conjugate_1d: grids must be 1d");
    if (values.size() != target.num_nodes() || mass.size() != values.size())
        throw Error("support_restricted_conjugate_1d: size mismatch");
    std::vector<int> support;
    support.reserve(mass.size());
    for (int j = 0; j < mass.size(); ++j)
        if (mass[j] > 0.0) support.push_back(j);
    if (support.empty()) throw Error("support_restricted_conjugate_1d: empty support");

    auto center = [&](int j) { return target.node_coord(j, 0); };
    // x beyond which parabola k beats parabola j (centers z_j < z_k); two
    // equal-curvature parabolas cross exactly once
    auto crossing = [&](int j, int k) {
        const double zj = center(j), zk = center(k);
        return (zk * zk - zj * zj + 2.0 * (values[j] - values[k])) / (2.0 * (zk - zj));
    };
    std::vector<int> hull;
    std::vector<double> from;  // hull[i] wins for x >= from[i]
    for (int j : support) {
        double x = -std::numeric_limits<double>::infinity();
        while (!hull.empty()) {
            x = crossing(hull.back(), j);
            if (x <= from.back()) {
                hull.pop_back();
                from.pop_back();
            } else {
                break;
            }
        }
        hull.push_back(j);
        from.push_back(hull.size() == 1 ? -std::numeric_limits<double>::infinity() : x);
    }
    const int n = source.num_nodes();
    Vector out(n);
    size_t k = 0;
    for (int i = 0; i < n; ++i) {
        const double x = source.node_coord(i, 0);
        while (k + 1 < hull.size() && from[k + 1] <= x) ++k;
        const double d = x - center(hull[k]);
        out[i] = 0.5 * d * d - values[hull[k]];
    }
    return out;
}

SinkhornState::SinkhornState(const CostMatrix& cost, double epsilon)
    : cost_(cost), eps_(epsilon) {
    if (epsilon <= 0) throw Error("SinkhornState: epsilon must be positive");
    f_ = Vector::Zero(cost.rows());
    g_ = Vector::Zero(cost.cols());
}

void SinkhornState::iterate(const Vector& a, const Vector& b, double tol, int max_sweeps,
                            bool best_effort) {
    const int R = cost_.rows(), C = cost_.cols();
    if (a.size() != R || b.size() != C) throw Error("SinkhornState: weight size mismatch");
    const double neg_inf = -std::numeric_limits<double>::infinity();
    Vector log_a(R), log_b(C);
    for (int i = 0; i < R; ++i) log_a[i] = a[i] > 0 ? std::log(a[i]) : neg_inf;
    for (int j = 0; j < C; ++j) log_b[j] = b[j] > 0 ? std::log(b[j]) : neg_inf;

    last_error_ = std::numeric_limits<double>::infinity();
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        for (int i = 0; i < R; ++i) {
            if (log_a[i] == neg_inf) {
                f_[i] = neg_inf;
                continue;
            }
            double mx = neg_inf;
            for (int j = 0; j < C; ++j) mx = std::max(mx, (g_[j] - cost_(i, j)) / eps_);
            if (mx == neg_inf)
                throw NumericalUnderflow("SinkhornState: no admissible column mass");
            double s = 0;
            for (int j = 0; j < C; ++j) s += std::exp((g_[j] - cost_(i, j)) / eps_ - mx);
            f_[i] = eps_ * (log_a[i] - mx - std::log(s));
            if (std::isnan(f_[i]) || f_[i] == std::numeric_limits<double>::infinity())
                throw NumericalUnderflow("SinkhornState: potential left representable range");
        }
        for (int j = 0; j < C; ++j) {
            if (log_b[j] == neg_inf) {
                g_[j] = neg_inf;
                continue;
            }
            double mx = neg_inf;
            for (int i = 0; i < R; ++i) mx = std::max(mx, (f_[i] - cost_(i, j)) / eps_);
            if (mx == neg_inf)
                throw NumericalUnderflow("SinkhornState: no admissible row mass");
            double s = 0;
            for (int i = 0; i < R; ++i) s += std::exp((f_[i] - cost_(i, j)) / eps_ - mx);
            g_[j] = eps_ * (log_b[j] - mx - std::log(s));
            if (std::isnan(g_[j]) || g_[j] == std::numeric_limits<double>::infinity())
                throw NumericalUnderflow("SinkhornState: potential left representable range");
        }
        if (sweep % 5 == 4 || sweep == max_sweeps - 1) {
            // columns are exact after the g update; row error measures progress
            double err = 0;
            for (int i = 0; i < R; ++i) {
                if (log_a[i] == neg_inf) continue;
                double s = 0;
                for (int j = 0; j < C; ++j) {
                    const double e = (f_[i] + g_[j] - cost_(i, j)) / eps_;
                    if (e > -700) s += std::exp(e);
                }
                err += std::abs(s - a[i]);
            }
            last_error_ = err;
            if (err <= tol) return;
        }
    }
    if (!best_effort)
        throw NoConvergence("SinkhornState: marginal error above tol after max sweeps",
                            last_error_);
}

double SinkhornState::solve_cost(const Vector& a, const Vector& b, double tol, int max_sweeps,
                                 bool best_effort) {
    iterate(a, b, tol, max_sweeps, best_effort);
    const int R = cost_.rows(), C = cost_.cols();
    Matrix gamma(R, C);
    for (int i = 0; i < R; ++i)
        for (int j = 0; j < C; ++j) {
            const double e = (f_[i] + g_[j] - cost_(i, j)) / eps_;
            gamma(i, j) = e > -700 ? std::exp(e) : 0.0;
        }
    for (int i = 0; i < R; ++i) {
        const double s = gamma.row(i).sum();
        if (s > a[i] && s > 0) gamma.row(i) *= a[i] / s;
    }
    for (int j = 0; j < C; ++j) {
        const double s = gamma.col(j).sum();
        if (s > b[j] && s > 0) gamma.col(j) *= b[j] / s;
    }
    Vector er = a - gamma.rowwise().sum();
    Vector ec = b - gamma.colwise().sum().transpose();
    const double leftover = er.sum();
    if (leftover > 0) gamma += er * ec.transpose() / leftover;
    return (gamma.array() * cost_.matrix().array()).sum();
}

Vector SinkhornState::source_potential(const Vector& a, const Vector& b, double tol,
                                       int max_sweeps) {
    iterate(a, b, tol, max_sweeps);
    Vector psi = f_;
    for (int i = 0; i < cost_.rows(); ++i) {
        if (std::isinf(psi[i])) {
            double best = std::numeric_limits<double>::infinity();
            for (int j = 0; j < cost_.cols(); ++j)
                if (!std::isinf(g_[j])) best = std::min(best, cost_(i, j) - g_[j]);
            psi[i] = best;
        }
    }
    return psi;
}

void write_plan_csv(const TransportPlan& plan, std::ostream& out) {
    out << "i,j,mass\n";
    char buf[64];
    for (int i = 0; i < plan.coupling.rows(); ++i) {
        for (int j = 0; j < plan.coupling.cols(); ++j) {
            const double m = plan.coupling(i, j);
            if (m > 0.0) {
                std::snprintf(buf, sizeof(buf), "%d,%d,%.17g\n", i, j, m);
                out << buf;
            }
        }
    }
}

void write_potentials_csv(const Vector& psi, std::ostream& out) {
    out << "index,psi\n";
    char buf[48];
    for (int i = 0; i < psi.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%d,%.17g\n", i, psi[i]);
        out << buf;
    }
}

}  // namespace otmin
