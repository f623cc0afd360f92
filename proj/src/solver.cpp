#include "otmin/solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace otmin {

namespace {

constexpr double kTraceSlack = 1e-12;        // accepted per-step objective slack
constexpr double kStallStep = 1e-14;         // line-search step treated as a stall
constexpr double kPositivityFloor = 1e-300;  // barrier breach threshold (density)
// Marginal tolerances for the warm in-loop Sinkhorn: probes only feed the
// line search (the rounding step bounds the cost error by ||C|| * tol), duals
// feed the score and deserve more accuracy.
constexpr double kSinkhornProbeTol = 1e-6;
constexpr int kSinkhornProbeSweeps = 20;  // best effort; rounding fixes marginals
constexpr double kSinkhornDualTol = 1e-7;
constexpr int kSinkhornSweeps = 50000;
constexpr int kResyncPeriod = 128;

double golden_ratio() { return 0.5 * (std::sqrt(5.0) - 1.0); }

/// Transport cost/dual oracle for the inner loops with cost 1/2 |x-y|^2.
/// Exact 1d uses the monotone O(n+m) route; exact in higher dimension runs
/// the stripped simplex on a cached cost matrix; entropic keeps warm
/// log-domain scalings across calls.
///
/// The returned psi is always the maximal feasible completion against psi_c
/// restricted to supp(b). The transport cost is piecewise linear in the
/// weights, and this selection realizes the exact one-sided derivative for
/// adding mass at any node, which keeps the FW gap honest at dual-degenerate
/// kinks.
class HalfCostOracle {
public:
    HalfCostOracle(const GridSpec& src, const GridSpec& tgt, TransportMethod method, double eps)
        : src_(src), tgt_(tgt), method_(method),
          monotone_(method == TransportMethod::Exact && src.dim() == 1 && tgt.dim() == 1) {
        if (!monotone_) cost_.emplace(CostMatrix::half_squared(src, tgt));
        if (method == TransportMethod::Entropic) {
            // separate warm states: probes churn over wildly different
            // marginals, the dual state follows accepted iterates only
            probe_state_.emplace(*cost_, eps);
            dual_state_.emplace(*cost_, eps);
        }
    }

    double cost(const Vector& a, const Vector& b) {
        if (method_ == TransportMethod::Entropic)
            return probe_state_->solve_cost(a, b, kSinkhornProbeTol, kSinkhornProbeSweeps,
                                            /*best_effort=*/true);
        if (monotone_) return monotone_1d_cost(src_, a, tgt_, b, 2.0, true);
        return exact_cost_raw(a, b, *cost_);
    }

    /// Source-side dual, gauge psi = 0 at the first node with mass.
    Vector psi(const Vector& a, const Vector& b) {
        Vector p;
        if (method_ == TransportMethod::Entropic) {
            p = dual_state_->source_potential(a, b, kSinkhornDualTol, kSinkhornSweeps);
        } else if (monotone_) {
            const Monotone1dSolution sol = monotone_1d_solve(src_, a, tgt_, b, 2.0, true);
            p = support_restricted_conjugate_1d(sol.psi_c, b, src_, tgt_);
        } else {
            const auto duals = exact_duals_raw(a, b, *cost_);
            p = support_restricted_c_transform(duals.second, b, *cost_,
                                               TransformDirection::TargetToSource);
        }
        for (int i = 0; i < a.size(); ++i) {
            if (a[i] > 0.0) {
                p.array() -= p[i];
                break;
            }
        }
        return p;
    }

private:
    GridSpec src_, tgt_;
    TransportMethod method_;
    bool monotone_;
    std::optional<CostMatrix> cost_;
    std::optional<SinkhornState> probe_state_, dual_state_;
};

int argmin_lowest(const Vector& s) {
    int best = 0;
    for (int i = 1; i < s.size(); ++i)
        if (s[i] < s[best]) best = i;
    return best;
}

int argmax_active_lowest(const Vector& s, const Vector& w) {
    int best = -1;
    for (int i = 0; i < s.size(); ++i) {
        if (w[i] > 0.0 && (best < 0 || s[i] > s[best])) best = i;
    }
    return best;
}

/// One conditional-gradient move. from < 0: vertex step toward `to`
/// (x = (1-t) w + t e_to). to < 0: away step from `from` (x = (1+t) w -
/// t e_from). Both set: pairwise mass shift (x = w + t (e_to - e_from)).
struct Move {
    int from = -1;
    int to = -1;
};

std::vector<int> grid_neighbors(const GridSpec& g, int i) {
    std::vector<int> out;
    if (g.dim() == 1) {
        if (i > 0) out.push_back(i - 1);
        if (i + 1 < g.num_nodes()) out.push_back(i + 1);
    } else {
        const int ny = g.points(1);
        const int ix = i / ny, iy = i % ny;
        if (iy > 0) out.push_back(i - 1);
        if (iy + 1 < ny) out.push_back(i + 1);
        if (ix > 0) out.push_back(i - ny);
        if (ix + 1 < g.points(0)) out.push_back(i + ny);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Problem definitions for the conditional-gradient driver. Each problem owns
// the incremental caches required to price a probe in O(n).
// ---------------------------------------------------------------------------

/// min over nu of cost(nu -> mu) + G(nu) [+ barrier terms].
class NuProblem {
public:
    NuProblem(const GridMeasure& mu, const InteractionKernel& ker, const GridSpec& grid,
              const SolverConfig& cfg)
        : mu_w_(mu.weights()), ker_(ker), grid_(grid), vol_(grid.cell_volume()),
          oracle_(grid, mu.grid(), cfg.transport_method, cfg.entropic_epsilon) {}

    /// Optional barrier mode: adds delta A(nu) + eps W2^2(nu, nu_bar).
    /// density_cap mirrors the positivity step cap on the other side: no step
    /// may push a node's density past the cap (iterates track the
    /// regularized problem's density bound, which its minimizers satisfy).
    void enable_barrier(const GridMeasure& nu_bar, double delta, double eps,
                        const SolverConfig& cfg, double density_cap) {
        barrier_ = true;
        delta_ = delta;
        prox_eps_ = eps;
        nu_bar_w_ = nu_bar.weights();
        cap_mass_ = density_cap * vol_;
        prox_oracle_.emplace(grid_, nu_bar.grid(), cfg.transport_method, cfg.entropic_epsilon);
    }

    const GridSpec& grid() const { return grid_; }

    void sync(const Vector& w) {
        k_ = kernel_times(w);
        g_val_ = w.dot(k_);
        since_sync_ = 0;
    }

    double objective(const Vector& w) {
        double obj = oracle_.cost(w, mu_w_) + g_val_;
        if (barrier_) obj += delta_ * barrier_value(w) + prox_eps_ * 2.0 * prox_oracle_->cost(w, nu_bar_w_);
        return obj;
    }

    Vector score(const Vector& w) {
        Vector s = oracle_.psi(w, mu_w_) + 2.0 * k_;
        if (barrier_) {
            for (int i = 0; i < s.size(); ++i) s[i] += delta_ * barrier_a_prime(w[i] / vol_);
            if (prox_eps_ != 0.0) s += 2.0 * prox_eps_ * prox_oracle_->psi(w, nu_bar_w_);
        }
        return s;
    }

    double t_cap(const Vector& w, const Move& m) const {
        if (m.from < 0) {  // vertex step
            double cap = barrier_ ? 1.0 - 1e-6 : 1.0;
            if (barrier_ && std::isfinite(cap_mass_)) {
                // (1-t) w_b + t <= allowed, never forcing below current
                const double allowed = std::max(w[m.to], cap_mass_);
                if (w[m.to] < 1.0 - 1e-12)
                    cap = std::min(cap, std::max(0.0, (allowed - w[m.to]) / (1.0 - w[m.to])));
            }
            return cap;
        }
        const double wa = w[m.from];
        if (m.to < 0) {  // away step
            if (wa >= 1.0 - 1e-12) return 0.0;
            const double cap = wa / (1.0 - wa);
            return std::min(barrier_ ? 0.999 * cap : cap, 1e6);
        }
        double cap = barrier_ ? 0.999 * wa : wa;  // pairwise shift
        if (barrier_ && std::isfinite(cap_mass_)) {
            const double allowed = std::max(w[m.to], cap_mass_);
            cap = std::min(cap, std::max(0.0, allowed - w[m.to]));
        }
        return cap;
    }

    double probe(const Vector& w, const Move& m, double t) {
        build(w, m, t);
        return transport_terms(scratch_) + g_along(m, t);
    }

    void accept(Vector& w, const Move& m, double t) {
        const double g_new = g_along(m, t);
        build(w, m, t);
        w = scratch_;
        if (m.from < 0) {
            k_ = (1 - t) * k_ + t * ker_.kernel_column(m.to);
        } else if (m.to < 0) {
            k_ = (1 + t) * k_ - t * ker_.kernel_column(m.from);
        } else {
            k_ += t * (ker_.kernel_column(m.to) - ker_.kernel_column(m.from));
        }
        g_val_ = g_new;
        after_accept(w);
    }

private:
    // quadratic form along the three move families, from the cached k = K w
    double g_along(const Move& m, double t) const {
        if (m.from < 0) {
            return (1 - t) * (1 - t) * g_val_ + 2 * t * (1 - t) * k_[m.to] +
                   t * t * ker_.kernel(m.to, m.to);
        }
        if (m.to < 0) {
            return (1 + t) * (1 + t) * g_val_ - 2 * t * (1 + t) * k_[m.from] +
                   t * t * ker_.kernel(m.from, m.from);
        }
        const double cross = ker_.kernel(m.to, m.to) - 2 * ker_.kernel(m.from, m.to) +
                             ker_.kernel(m.from, m.from);
        return g_val_ + 2 * t * (k_[m.to] - k_[m.from]) + t * t * cross;
    }

    Vector kernel_times(const Vector& w) const {
        if (ker_.has_matrix()) return ker_.kernel_matrix() * w;
        const int n = static_cast<int>(w.size());
        Vector out(n);
        for (int i = 0; i < n; ++i) {
            double acc = 0;
            for (int j = 0; j < n; ++j) acc += ker_.kernel(i, j) * w[j];
            out[i] = acc;
        }
        return out;
    }

    double transport_terms(const Vector& w) {
        double v = oracle_.cost(w, mu_w_);
        if (barrier_)
            v += delta_ * barrier_value(w) + prox_eps_ * 2.0 * prox_oracle_->cost(w, nu_bar_w_);
        return v;
    }

    double barrier_value(const Vector& w) const {
        double total = 0;
        for (int i = 0; i < w.size(); ++i) {
            const double d = w[i] / vol_;
            if (d <= 0.0) return std::numeric_limits<double>::infinity();
            total += barrier_a(d) * vol_;
        }
        return total;
    }

    void build(const Vector& w, const Move& m, double t) {
        if (m.from < 0) {
            scratch_ = (1 - t) * w;
            scratch_[m.to] += t;
            return;
        }
        if (m.to < 0) {
            scratch_ = (1 + t) * w;
        } else {
            scratch_ = w;
            scratch_[m.to] += t;
        }
        scratch_[m.from] = std::max(scratch_[m.from] - t, 0.0);
        if (scratch_[m.from] < 1e-15) scratch_[m.from] = 0.0;  // drop, no dust
    }

    void after_accept(Vector& w) {
        if (barrier_) {
            for (int i = 0; i < w.size(); ++i)
                if (w[i] / vol_ < kPositivityFloor)
                    throw BarrierBreach("solve_nu_barrier: density fell below the positivity floor");
        }
        if (++since_sync_ >= kResyncPeriod) {
            w /= w.sum();
            sync(w);
        }
    }

    Vector mu_w_;
    const InteractionKernel& ker_;
    GridSpec grid_;
    double vol_;
    HalfCostOracle oracle_;

    bool barrier_ = false;
    double delta_ = 0, prox_eps_ = 0;
    double cap_mass_ = std::numeric_limits<double>::infinity();
    Vector nu_bar_w_;
    std::optional<HalfCostOracle> prox_oracle_;

    Vector k_;         // K * w
    double g_val_ = 0; // w^T K w
    Vector scratch_;
    int since_sync_ = 0;
};

/// min over mu of cost(mu -> nu) + F(mu).
class MuProblem {
public:
    MuProblem(const GridMeasure& nu, const LocalFunctional& loc, const GridSpec& grid,
              const SolverConfig& cfg)
        : nu_w_(nu.weights()), loc_(loc), grid_(grid), vol_(grid.cell_volume()),
          oracle_(grid, nu.grid(), cfg.transport_method, cfg.entropic_epsilon) {}

    const GridSpec& grid() const { return grid_; }

    void sync(const Vector&) {}

    double objective(const Vector& w) { return oracle_.cost(w, nu_w_) + f_value(w); }

    Vector score(const Vector& w) {
        Vector s = oracle_.psi(w, nu_w_);
        for (int i = 0; i < s.size(); ++i) s[i] += loc_.f_prime(w[i] / vol_);
        return s;
    }

    double t_cap(const Vector& w, const Move& m) const {
        if (m.from < 0) return 1.0;
        const double wa = w[m.from];
        if (m.to < 0) {
            if (wa >= 1.0 - 1e-12) return 0.0;
            return std::min(wa / (1.0 - wa), 1e6);
        }
        return wa;
    }

    double probe(const Vector& w, const Move& m, double t) {
        build(w, m, t);
        return oracle_.cost(scratch_, nu_w_) + f_value(scratch_);
    }

    void accept(Vector& w, const Move& m, double t) {
        build(w, m, t);
        w = scratch_;
    }

private:
    void build(const Vector& w, const Move& m, double t) {
        if (m.from < 0) {
            scratch_ = (1 - t) * w;
            scratch_[m.to] += t;
            return;
        }
        if (m.to < 0) {
            scratch_ = (1 + t) * w;
        } else {
            scratch_ = w;
            scratch_[m.to] += t;
        }
        scratch_[m.from] = std::max(scratch_[m.from] - t, 0.0);
        if (scratch_[m.from] < 1e-15) scratch_[m.from] = 0.0;
    }

    double f_value(const Vector& w) const {
        double total = 0;
        for (int i = 0; i < w.size(); ++i) total += loc_.f(w[i] / vol_) * vol_;
        return total;
    }

    Vector nu_w_;
    const LocalFunctional& loc_;
    GridSpec grid_;
    double vol_;
    HalfCostOracle oracle_;
    Vector scratch_;
};

struct FwOutcome {
    Vector w;
    Termination termination = Termination::IterationLimit;
    double objective = 0;
    double gap = 0;
    int iterations = 0;
    std::vector<double> objective_trace;
    std::vector<IterationRecord> trace;
};

struct LineSearchResult {
    double t = 0;
    double value = 0;
};

template <typename F>
LineSearchResult golden_section(F&& f, double cap, int probes, double f0) {
    LineSearchResult best{0.0, f0};
    auto consider = [&](double t) {
        const double v = f(t);
        if (v < best.value) best = {t, v};
    };
    if (cap <= 0) return best;
    consider(cap);
    // geometric ladder: the transport term is piecewise linear in t with
    // kinks that can sit many orders of magnitude below the cap
    consider(1e-2 * cap);
    consider(1e-3 * cap);
    consider(1e-4 * cap);
    consider(1e-5 * cap);
    consider(1e-6 * cap);
    consider(1e-7 * cap);
    int budget = std::max(probes - 7, 2);
    const double phi = golden_ratio();
    double a = 0, b = cap;
    double x1 = b - phi * (b - a), x2 = a + phi * (b - a);
    double f1 = f(x1), f2 = f(x2);
    if (f1 < best.value) best = {x1, f1};
    if (f2 < best.value) best = {x2, f2};
    budget -= 2;
    while (budget-- > 0) {
        if (f1 <= f2) {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - phi * (b - a);
            f1 = f(x1);
            if (f1 < best.value) best = {x1, f1};
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + phi * (b - a);
            f2 = f(x2);
            if (f2 < best.value) best = {x2, f2};
        }
    }
    return best;
}

template <typename F>
LineSearchResult fixed_schedule(F&& f, double cap, int iter, double f0) {
    LineSearchResult best{0.0, f0};
    double t = std::min(cap, 2.0 / (iter + 2.0));
    for (int halving = 0; halving < 4 && t > 0; ++halving, t *= 0.5) {
        const double v = f(t);
        if (v <= f0) return {t, v};
    }
    return best;
}

/// Conditional-gradient loop shared by the nu/mu/barrier solvers. The FW
/// vertex realizes the stationarity gap; per iteration the vertex step, the
/// away step over the active set and the pairwise shift between them are all
/// line-searched and the best achieved decrease wins.
template <typename Problem>
FwOutcome run_fw(Problem& prob, Vector w, const SolverConfig& cfg) {
    prob.sync(w);
    FwOutcome out;
    double obj = prob.objective(w);
    out.objective_trace.push_back(obj);
    int stall = 0;
    int progress_stall = 0;

    auto record = [&](int iter, double gap, double step) {
        IterationRecord r;
        r.iter = iter;
        r.objective = obj;
        r.gap = gap;
        r.step = step;
        r.max_density = w.maxCoeff() / prob.grid().cell_volume();
        const GridSpec& g = prob.grid();
        r.barycenter = Vector::Zero(g.dim());
        for (int i = 0; i < w.size(); ++i)
            for (int a = 0; a < g.dim(); ++a) r.barycenter[a] += w[i] * g.node_coord(i, a);
        out.trace.push_back(std::move(r));
    };

    auto try_move = [&](const Move& m, int iter) -> LineSearchResult {
        const double cap = prob.t_cap(w, m);
        if (cap <= 0) return LineSearchResult{0.0, obj};
        auto f = [&](double t) { return prob.probe(w, m, t); };
        return cfg.line_search == LineSearchKind::GoldenSection
                   ? golden_section(f, cap, cfg.line_search_probes, obj)
                   : fixed_schedule(f, cap, iter, obj);
    };
    auto acceptable = [&](const LineSearchResult& ls) {
        return ls.t > 0 && ls.value <= obj + kTraceSlack * (1.0 + std::abs(obj));
    };

    // Exchange/drop probes beyond the scored moves. The scored directions can
    // misprice descent at kinks of the piecewise-linear transport term, and a
    // vanishing first-order gap can hide finite-step descent when G is
    // concave along the segment; these probes ask the true objective
    // directly. The targeted variant line-searches only the most promising
    // candidates by score; the thorough variant sweeps every active node and
    // serves as the convergence check.
    auto rescue = [&](int iter, double& taken, const Vector& s, bool thorough) -> bool {
        double best_dec = 0;
        Move best_move;
        double best_t = 0, best_val = obj;
        auto consider = [&](const Move& m) {
            const LineSearchResult ls = try_move(m, iter);
            if (acceptable(ls) && obj - ls.value > best_dec) {
                best_dec = obj - ls.value;
                best_move = m;
                best_t = ls.t;
                best_val = ls.value;
            }
        };
        if (thorough) {
            for (int i = 0; i < w.size(); ++i) {
                if (w[i] <= 0.0) continue;
                for (int j : grid_neighbors(prob.grid(), i)) consider(Move{i, j});
                consider(Move{i, -1});  // drop: drains low-mass stragglers
            }
        } else {
            const double sw = s.dot(w);
            std::vector<std::pair<double, Move>> cand;
            for (int i = 0; i < w.size(); ++i) {
                if (w[i] <= 0.0) continue;
                const double drop_pred = (s[i] - sw) * w[i];
                if (drop_pred > 0) cand.push_back({drop_pred, Move{i, -1}});
                for (int j : grid_neighbors(prob.grid(), i)) {
                    const double pred = (s[i] - s[j]) * w[i];
                    if (pred > 0) cand.push_back({pred, Move{i, j}});
                }
            }
            const size_t keep = std::min<size_t>(8, cand.size());
            std::partial_sort(cand.begin(), cand.begin() + keep, cand.end(),
                              [](const auto& x, const auto& y) { return x.first > y.first; });
            for (size_t k = 0; k < keep; ++k) consider(cand[k].second);
        }
        if (best_dec <= 0) return false;
        prob.accept(w, best_move, best_t);
        obj = std::min(best_val, obj);
        taken = best_t;
        return true;
    };

    for (int iter = 0; iter < cfg.max_outer_iter; ++iter) {
        out.iterations = iter + 1;
        const Vector s = prob.score(w);
        const int b = argmin_lowest(s);
        const double gap = s.dot(w) - s[b];
        out.gap = gap;

        bool stepped = false;
        double taken = 0;

        if (gap > cfg.fw_tol) {
            int a = -1;
            if (cfg.away_steps) a = argmax_active_lowest(s, w);
            // Line-search every candidate family and keep the best achieved
            // decrease; predicted slopes are unreliable at transport kinks.
            std::vector<Move> candidates{Move{-1, b}};
            if (a >= 0) {
                candidates.push_back(Move{a, -1});
                if (a != b) candidates.push_back(Move{a, b});
            }
            Move best_move;
            double best_t = 0, best_val = obj;
            for (const Move& m : candidates) {
                const LineSearchResult ls = try_move(m, iter);
                if (acceptable(ls) && ls.value < best_val) {
                    best_val = ls.value;
                    best_move = m;
                    best_t = ls.t;
                }
                if (cfg.line_search == LineSearchKind::FixedSchedule && best_t > 0) break;
            }
            if (best_t > 0) {
                prob.accept(w, best_move, best_t);
                obj = std::min(best_val, obj);
                taken = best_t;
                stepped = true;
            }
        }

        if (!stepped && cfg.line_search == LineSearchKind::GoldenSection) {
            // Thorough only when it matters: proving convergence, or as the
            // last attempt before declaring a stall. The entropic surrogate
            // is smooth, so its score predictions already rank moves well.
            const bool thorough = (gap <= cfg.fw_tol || stall >= 2) &&
                                  cfg.transport_method == TransportMethod::Exact;
            stepped = rescue(iter, taken, s, thorough);
        }

        if (!stepped && gap <= cfg.fw_tol) {
            record(iter, gap, 0.0);
            out.termination = Termination::Converged;
            break;
        }

        const double decrease = out.objective_trace.back() - obj;
        stall = stepped && taken >= kStallStep ? 0 : stall + 1;
        progress_stall = decrease <= kTraceSlack * (1.0 + std::abs(obj)) ? progress_stall + 1 : 0;
        out.objective_trace.push_back(obj);
        record(iter, gap, taken);

        if (stall >= 3 || progress_stall >= 5) {
            out.termination = Termination::Stalled;
            break;
        }
    }
    out.w = std::move(w);
    out.objective = obj;
    return out;
}

std::vector<Vector> build_starts(const GridMeasure& init, const SolverConfig& cfg) {
    std::vector<Vector> starts{init.weights()};
    const GridSpec& g = init.grid();
    if (cfg.multi_start >= 2) {
        Vector c(g.dim());
        for (int a = 0; a < g.dim(); ++a) c[a] = 0.5 * (g.lower(a) + g.upper(a));
        Vector w = Vector::Zero(g.num_nodes());
        w[g.nearest_node(c)] = 1.0;
        starts.push_back(std::move(w));
    }
    std::mt19937_64 rng(cfg.seed);
    std::exponential_distribution<double> exp1(1.0);
    for (int k = 3; k <= cfg.multi_start; ++k) {
        Vector w(g.num_nodes());
        for (int i = 0; i < w.size(); ++i) w[i] = exp1(rng);
        starts.push_back(w / w.sum());
    }
    return starts;
}

GridMeasure measure_from_raw(const GridSpec& g, Vector w) {
    for (int i = 0; i < w.size(); ++i) w[i] = std::max(w[i], 0.0);
    return GridMeasure::from_weights(g, std::move(w));
}

double pow_dim(double x, int d) { return d == 1 ? x : x * x; }

/// Potential for the stationarity certificate: psi pinned on supp(nu) by the
/// exact solve, completed off-support as the conjugate of psi_c over supp(mu).
Vector certificate_psi(const GridMeasure& nu, const GridMeasure& mu, const CostMatrix& cm) {
    const auto [plan, duals] = solve_exact(nu, mu, cm);
    return support_restricted_c_transform(duals.psi_c, mu.weights(), cm,
                                          TransformDirection::TargetToSource);
}

/// Fills optimality residuals, final gap and the density-bound check from a
/// fresh exact transport solve.
void finalize_nu_report(SolverReport& rep, const GridMeasure& mu, const InteractionKernel& ker,
                        const SolverConfig& cfg) {
    const GridMeasure& nu = rep.final_nu;
    const CostMatrix cm = CostMatrix::half_squared(nu.grid(), mu.grid());
    const Vector score = certificate_psi(nu, mu, cm) + interaction_potential(nu, ker);
    rep.optimality = stationarity_from_score(nu.weights(), score, cfg.support_threshold);
    rep.final_gap = score.dot(nu.weights()) - score.minCoeff();

    const double m_bound = linf_density(mu);
    const int d = nu.grid().dim();
    const double bound = pow_dim(2.0, d) * m_bound * pow_dim(1.0 + ker.c2_norm(), d);
    rep.linf_bound_check.observed_max_density = linf_density(nu);
    rep.linf_bound_check.theoretical_bound = bound;
    rep.linf_bound_check.pass =
        rep.linf_bound_check.observed_max_density <= bound * (1.0 + 1e-12);
}

void finalize_mu_report(SolverReport& rep, const GridMeasure& nu, const LocalFunctional& loc,
                        const SolverConfig& cfg) {
    const GridMeasure& mu = *rep.final_mu;
    const CostMatrix cm = CostMatrix::half_squared(mu.grid(), nu.grid());
    Vector score = certificate_psi(mu, nu, cm);
    const double vol = mu.grid().cell_volume();
    for (int i = 0; i < score.size(); ++i) score[i] += loc.f_prime(mu.weight(i) / vol);
    rep.mu_optimality = stationarity_from_score(mu.weights(), score, cfg.support_threshold);
}

}  // namespace

FwDirection fw_direction(const GridMeasure& nu, const Vector& psi, const Vector& T) {
    if (psi.size() != nu.size() || T.size() != nu.size())
        throw Error("fw_direction: score size mismatch");
    const Vector s = psi + T;
    const int b = argmin_lowest(s);
    return FwDirection{GridMeasure::atom(nu.grid(), b), b, s.dot(nu.weights()) - s[b]};
}

OptimalityReport stationarity_from_score(const Vector& weights, const Vector& score,
                                         double support_threshold) {
    OptimalityReport rep;
    rep.support_threshold = support_threshold;
    const double cutoff = support_threshold * weights.maxCoeff();
    double mass = 0, mean = 0;
    for (int i = 0; i < weights.size(); ++i) {
        if (weights[i] > cutoff) {
            mass += weights[i];
            mean += weights[i] * score[i];
        }
    }
    rep.m_constant = mass > 0 ? mean / mass : 0.0;
    for (int i = 0; i < weights.size(); ++i) {
        if (weights[i] > cutoff)
            rep.support_violation = std::max(rep.support_violation,
                                             std::abs(score[i] - rep.m_constant));
    }
    rep.global_violation = std::max(0.0, rep.m_constant - score.minCoeff());
    return rep;
}

OptimalityReport optimality_report(const GridMeasure& nu, const GridMeasure& mu,
                                   const InteractionKernel& ker, double support_threshold) {
    const CostMatrix cm = CostMatrix::half_squared(nu.grid(), mu.grid());
    const Vector score = certificate_psi(nu, mu, cm) + interaction_potential(nu, ker);
    return stationarity_from_score(nu.weights(), score, support_threshold);
}

double joint_objective(const GridMeasure& mu, const GridMeasure& nu,
                       const InteractionKernel& ker, const LocalFunctional& loc) {
    const CostMatrix cm = CostMatrix::half_squared(mu.grid(), nu.grid());
    return exact_cost_raw(mu.weights(), nu.weights(), cm) + eval_F(mu, loc) + eval_G(nu, ker);
}

SolverReport solve_nu(const GridMeasure& mu, const InteractionKernel& ker,
                      const SolverConfig& cfg, const GridMeasure& init) {
    if (!ker.grid().same_grid(init.grid()))
        throw Error("solve_nu: kernel grid does not match the iterate grid");
    std::optional<FwOutcome> best;
    int best_start = 0;
    const auto starts = build_starts(init, cfg);
    for (size_t k = 0; k < starts.size(); ++k) {
        NuProblem prob(mu, ker, init.grid(), cfg);
        FwOutcome out = run_fw(prob, starts[k], cfg);
        if (!best || out.objective < best->objective) {
            best = std::move(out);
            best_start = static_cast<int>(k);
        }
    }
    SolverReport rep(measure_from_raw(init.grid(), best->w));
    rep.objective_trace = std::move(best->objective_trace);
    rep.iterations = std::move(best->trace);
    rep.termination = best->termination;
    rep.termination_gap = best->gap;
    rep.final_objective = best->objective;
    rep.start_index = best_start;
    finalize_nu_report(rep, mu, ker, cfg);
    return rep;
}

SolverReport solve_nu_barrier(const GridMeasure& mu, const InteractionKernel& ker,
                              const GridMeasure& nu_bar, const SolverConfig& cfg) {
    if (!ker.grid().same_grid(nu_bar.grid()))
        throw Error("solve_nu_barrier: kernel grid does not match nu_bar grid");
    const double delta = cfg.barrier_delta.value_or(0.0);
    const double eps = cfg.prox_weight.value_or(0.0);
    if (delta < 0 || eps < 0) throw Error("solve_nu_barrier: negative regularization weights");

    if (delta == 0.0 && eps == 0.0) {
        SolverReport rep = solve_nu(mu, ker, cfg, nu_bar);
        rep.prox_w2 = wasserstein(rep.final_nu, nu_bar, 2.0, TransportMethod::Exact);
        rep.barrier_term = 0.0;
        return rep;
    }

    if (nu_bar.weights().minCoeff() <= 0.0)
        throw Error("solve_nu_barrier: nu_bar must be strictly positive everywhere");

    NuProblem prob(mu, ker, nu_bar.grid(), cfg);
    const int d = nu_bar.grid().dim();
    const double density_bound = pow_dim(2.0, d) * linf_density(mu) *
                                 pow_dim(1.0 + ker.c2_norm(), d);
    prob.enable_barrier(nu_bar, delta, eps, cfg,
                        density_bound * (1.0 + nu_bar.grid().max_spacing()));
    FwOutcome out = run_fw(prob, nu_bar.weights(), cfg);

    SolverReport rep(measure_from_raw(nu_bar.grid(), out.w));
    rep.objective_trace = std::move(out.objective_trace);
    rep.iterations = std::move(out.trace);
    rep.termination = out.termination;
    rep.termination_gap = out.gap;
    rep.final_objective = out.objective;
    rep.prox_w2 = wasserstein(rep.final_nu, nu_bar, 2.0, TransportMethod::Exact);
    rep.barrier_term = delta * eval_A(rep.final_nu, true);
    finalize_nu_report(rep, mu, ker, cfg);
    return rep;
}

SolverReport solve_mu(const GridMeasure& nu, const LocalFunctional& loc,
                      const SolverConfig& cfg, const GridMeasure& init) {
    // F is strictly convex in our instances, so multi-start buys nothing here.
    MuProblem prob(nu, loc, init.grid(), cfg);
    FwOutcome out = run_fw(prob, init.weights(), cfg);
    SolverReport rep(nu);
    rep.final_mu = measure_from_raw(init.grid(), out.w);
    rep.objective_trace = std::move(out.objective_trace);
    rep.iterations = std::move(out.trace);
    rep.termination = out.termination;
    rep.termination_gap = out.gap;
    rep.final_objective = out.objective;
    rep.final_gap = out.gap;
    finalize_mu_report(rep, nu, loc, cfg);
    rep.optimality = *rep.mu_optimality;  // the mu-side certificate is the meaningful one here
    rep.linf_bound_check.observed_max_density = linf_density(*rep.final_mu);
    rep.linf_bound_check.theoretical_bound = std::numeric_limits<double>::infinity();
    rep.linf_bound_check.pass = true;
    return rep;
}

namespace {

double fitted_variance(const GridMeasure& m) {
    const Vector b = barycenter(m);
    return second_moment(m) - b.squaredNorm();
}

}  // namespace

SolverReport solve_joint(const InteractionKernel& ker, const LocalFunctional& loc,
                         const SolverConfig& cfg, const GridMeasure& init_mu,
                         const GridMeasure& init_nu) {
    if (!ker.grid().same_grid(init_nu.grid()))
        throw Error("solve_joint: kernel grid does not match nu grid");

    SolverConfig sub = cfg;
    sub.multi_start = 1;

    struct JointState {
        Vector mu_w, nu_w;
        double objective = 0;
        Termination term = Termination::IterationLimit;
        int sweeps = 0;
        double last_nu_gap = 0;
        std::vector<double> trace;
    };

    const auto nu_starts = build_starts(init_nu, cfg);
    const auto mu_starts = build_starts(init_mu, cfg);

    std::optional<JointState> best;
    int best_start = 0;
    for (size_t k = 0; k < nu_starts.size(); ++k) {
        // Pair each nu start with the provided mu init except for the random
        // start, which perturbs both.
        JointState st;
        st.mu_w = k < mu_starts.size() && k == 2 ? mu_starts[k] : init_mu.weights();
        st.nu_w = nu_starts[k];
        GridMeasure mu_cur = measure_from_raw(init_mu.grid(), st.mu_w);
        GridMeasure nu_cur = measure_from_raw(init_nu.grid(), st.nu_w);
        st.objective = joint_objective(mu_cur, nu_cur, ker, loc);
        st.trace.push_back(st.objective);

        for (int sweep = 0; sweep < cfg.max_sweeps; ++sweep) {
            st.sweeps = sweep + 1;
            // mu-step first: the strictly convex block stabilizes the sweep.
            MuProblem mu_prob(nu_cur, loc, init_mu.grid(), sub);
            FwOutcome mu_out = run_fw(mu_prob, st.mu_w, sub);
            st.mu_w = mu_out.w;
            mu_cur = measure_from_raw(init_mu.grid(), st.mu_w);

            NuProblem nu_prob(mu_cur, ker, init_nu.grid(), sub);
            FwOutcome nu_out = run_fw(nu_prob, st.nu_w, sub);
            st.nu_w = nu_out.w;
            st.last_nu_gap = nu_out.gap;
            nu_cur = measure_from_raw(init_nu.grid(), st.nu_w);

            const double obj = joint_objective(mu_cur, nu_cur, ker, loc);
            const double decrease = st.objective - obj;
            st.objective = std::min(st.objective, obj);
            st.trace.push_back(st.objective);
            if (decrease < cfg.fw_tol) {
                st.term = Termination::Converged;
                break;
            }
        }
        if (!best || st.objective < best->objective) {
            best = std::move(st);
            best_start = static_cast<int>(k);
        }
    }

    SolverReport rep(measure_from_raw(init_nu.grid(), best->nu_w));
    rep.final_mu = measure_from_raw(init_mu.grid(), best->mu_w);
    rep.objective_trace = std::move(best->trace);
    rep.termination = best->term;
    rep.termination_gap = best->last_nu_gap;
    rep.final_objective = best->objective;
    rep.start_index = best_start;
    rep.sweeps = best->sweeps;

    finalize_nu_report(rep, *rep.final_mu, ker, cfg);
    finalize_mu_report(rep, rep.final_nu, loc, cfg);

    const Vector bar_mu = barycenter(*rep.final_mu);
    const Vector bar_nu = barycenter(rep.final_nu);
    rep.barycenter_distance = (bar_mu - bar_nu).norm();

    // Homothety fit: the contraction ratio between the second central moments,
    // plus the W1 mismatch between nu and the fitted image of mu.
    const double var_mu = fitted_variance(*rep.final_mu);
    const double var_nu = fitted_variance(rep.final_nu);
    if (var_mu > 0) {
        const double ratio = std::sqrt(std::max(var_nu, 0.0) / var_mu);
        rep.homothety_ratio = ratio;
        const GridSpec& g = rep.final_nu.grid();
        Vector push = Vector::Zero(g.num_nodes());
        for (int i = 0; i < rep.final_mu->size(); ++i) {
            const Vector img = bar_nu + ratio * (rep.final_mu->grid().node(i) - bar_mu);
            push[g.nearest_node(img)] += rep.final_mu->weight(i);
        }
        const GridMeasure pushed = GridMeasure::from_weights(g, std::move(push));
        rep.homothety_residual_w1 =
            wasserstein(rep.final_nu, pushed, 1.0, TransportMethod::Exact);
    }
    return rep;
}

}  // namespace otmin
