#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "otmin/analytic.hpp"
#include "otmin/solver.hpp"
#include "oracles.hpp"

using namespace otmin;

namespace {

void check_monotone(const std::vector<double>& trace) {
    for (size_t k = 1; k < trace.size(); ++k)
        CHECK(trace[k] <= trace[k - 1] + 1e-12 * (1 + std::abs(trace[k - 1])));
}

SolverConfig quick_config() {
    SolverConfig cfg;
    cfg.max_outer_iter = 1500;
    cfg.fw_tol = 1e-9;
    cfg.multi_start = 1;
    return cfg;
}

}  // namespace

TEST_CASE("fw_direction basics") {
    const GridSpec g = GridSpec::interval(-0.5, 4.5, 5);  // integer nodes
    const GridMeasure uni = GridMeasure::uniform(g);

    // constant score: zero gap, tie broken to node 0
    const Vector c = Vector::Constant(5, 2.0);
    const FwDirection d0 = fw_direction(uni, c, Vector::Zero(5));
    CHECK(d0.vertex_index == 0);
    CHECK(d0.gap == doctest::Approx(0.0).scale(1));
    CHECK(d0.vertex.weight(0) == 1.0);

    // mu an atom at node 3, no interaction: the vertex chases the atom
    const GridMeasure atom = GridMeasure::atom(g, 3);
    const auto [plan, duals] = solve_exact(uni, atom, CostMatrix::half_squared(g, g));
    const FwDirection d1 = fw_direction(uni, duals.psi, Vector::Zero(5));
    CHECK(d1.vertex_index == 3);
    CHECK(d1.gap > 0);
}

TEST_CASE("fw gap is tiny on the sampled closed-form pair") {
    const GridSpec g = GridSpec::interval(-2, 2, 200);
    const double lambda = 1.0;
    const QuadraticInstance inst = QuadraticInstance::make(lambda, g);
    const GridMeasure mu = sample_mu(inst);
    const GridMeasure nu = sample_nu(inst);
    const InteractionKernel ker = InteractionKernel::quadratic(lambda, g);
    // psi completed over supp(mu): off-support dual values are not pinned by
    // the LP, and the certificate needs the maximal selection there
    const CostMatrix cm = CostMatrix::half_squared(g, g);
    const auto [plan, duals] = solve_exact(nu, mu, cm);
    const Vector psi = support_restricted_c_transform(duals.psi_c, mu.weights(), cm,
                                                      TransformDirection::TargetToSource);
    const FwDirection d = fw_direction(nu, psi, interaction_potential(nu, ker));
    CHECK(d.gap <= 0.05);
}

TEST_CASE("solve_nu matches an exhaustive simplex scan on 3 nodes") {
    const GridSpec g = GridSpec::interval(0, 1, 3);
    std::mt19937_64 rng(19);
    const GridMeasure mu = oracle::random_measure(g, rng);
    const InteractionKernel ker = InteractionKernel::quadratic(1.0, g);
    const CostMatrix cost = CostMatrix::half_squared(g, g);

    double scan_min = std::numeric_limits<double>::infinity();
    const int steps = 200;
    for (int i = 0; i <= steps; ++i) {
        for (int j = 0; j + i <= steps; ++j) {
            Vector w(3);
            w << double(i) / steps, double(j) / steps, double(steps - i - j) / steps;
            const double obj = exact_cost_raw(w, mu.weights(), cost) +
                               w.dot(ker.kernel_matrix() * w);
            scan_min = std::min(scan_min, obj);
        }
    }

    SolverConfig cfg = quick_config();
    cfg.multi_start = 3;
    const SolverReport rep = solve_nu(mu, ker, cfg, GridMeasure::uniform(g));
    CHECK(rep.final_objective <= scan_min + 1e-3);
    check_monotone(rep.objective_trace);
}

TEST_CASE("solve_mu matches an exhaustive simplex scan on 3 nodes") {
    const GridSpec g = GridSpec::interval(0, 1, 3);
    std::mt19937_64 rng(23);
    const GridMeasure nu = oracle::random_measure(g, rng);
    const LocalFunctional loc = LocalFunctional::quadratic(1.0);
    const CostMatrix cost = CostMatrix::half_squared(g, g);
    const double vol = g.cell_volume();

    double scan_min = std::numeric_limits<double>::infinity();
    const int steps = 200;
    for (int i = 0; i <= steps; ++i) {
        for (int j = 0; j + i <= steps; ++j) {
            Vector w(3);
            w << double(i) / steps, double(j) / steps, double(steps - i - j) / steps;
            double obj = exact_cost_raw(w, nu.weights(), cost);
            for (int k = 0; k < 3; ++k) obj += 0.5 * (w[k] / vol) * (w[k] / vol) * vol;
            scan_min = std::min(scan_min, obj);
        }
    }

    const SolverReport rep = solve_mu(nu, loc, quick_config(), GridMeasure::uniform(g));
    CHECK(rep.final_objective <= scan_min + 1e-3);
    check_monotone(rep.objective_trace);
}

TEST_CASE("solver preserves data symmetry") {
    // lambda < 1/2 keeps the barycentric part strictly convex: the symmetric
    // optimum is unique, so the solver has to return to symmetry.
    const GridSpec g = GridSpec::interval(-1, 1, 21);  // odd: unique center node
    const GridMeasure mu = GridMeasure::uniform(g);
    const InteractionKernel ker = InteractionKernel::quadratic(0.4, g);
    SolverConfig cfg = quick_config();
    cfg.max_outer_iter = 4000;
    const SolverReport rep = solve_nu(mu, ker, cfg, GridMeasure::uniform(g));
    CHECK(std::abs(barycenter(rep.final_nu)[0]) <= 0.5 * g.max_spacing());
    const Vector& w = rep.final_nu.weights();
    double asym = 0;
    for (int i = 0; i < 21; ++i) asym = std::max(asym, std::abs(w[i] - w[20 - i]));
    CHECK(asym <= 0.02 * w.maxCoeff());
}

TEST_CASE("solve_nu recovers the homothety image of the closed-form mu") {
    const GridSpec g = GridSpec::interval(-2, 2, 64);
    const double lambda = 1.0;
    const QuadraticInstance inst = QuadraticInstance::make(lambda, g);
    const GridMeasure mu = sample_mu(inst);
    const GridMeasure nu_expect = sample_nu(inst);
    const InteractionKernel ker = InteractionKernel::quadratic(lambda, g);
    SolverConfig cfg = quick_config();
    cfg.max_outer_iter = 4000;
    cfg.fw_tol = 1e-10;
    const SolverReport rep = solve_nu(mu, ker, cfg, GridMeasure::uniform(g));
    CHECK(l1_distance(rep.final_nu, nu_expect) <= 4 * g.max_spacing());
    CHECK(rep.linf_bound_check.pass);
}

TEST_CASE("solve_mu recovers the truncated parabola") {
    const GridSpec g = GridSpec::interval(-2, 2, 64);
    const double lambda = 1.0;
    const QuadraticInstance inst = QuadraticInstance::make(lambda, g);
    const GridMeasure nu = sample_nu(inst);
    const GridMeasure mu_expect = sample_mu(inst);
    SolverConfig cfg = quick_config();
    cfg.max_outer_iter = 6000;
    cfg.fw_tol = 1e-10;
    const SolverReport rep = solve_mu(nu, LocalFunctional::quadratic(1.0), cfg,
                                      GridMeasure::uniform(g));
    REQUIRE(rep.final_mu.has_value());
    CHECK(l1_distance(*rep.final_mu, mu_expect) <= 4 * g.max_spacing());

    // stationarity: f'(u) + phi constant on the bulk of the support (a mass
    // cutoff of 1e-3 relative keeps solver crumbs out of the certificate)
    const Vector scored = [&] {
        const CostMatrix cm = CostMatrix::half_squared(g, g);
        const auto [plan, duals] = solve_exact(*rep.final_mu, nu, cm);
        Vector s = support_restricted_c_transform(duals.psi_c, nu.weights(), cm,
                                                  TransformDirection::TargetToSource);
        for (int i = 0; i < s.size(); ++i) s[i] += rep.final_mu->density(i);
        return s;
    }();
    const OptimalityReport strict =
        stationarity_from_score(rep.final_mu->weights(), scored, 1e-3);
    CHECK(strict.support_violation <= 0.1);

    // optimality shape: symmetric and decreasing away from the center
    const Vector& w = rep.final_mu->weights();
    const int mid = 32;
    CHECK(w[mid - 1] >= w[mid + 8]);
}

TEST_CASE("solve_mu against a central atom spreads symmetrically") {
    const GridSpec g = GridSpec::interval(-1, 1, 21);  // odd: unique center node
    const GridMeasure nu = GridMeasure::atom(g, 10);
    SolverConfig cfg = quick_config();
    cfg.max_outer_iter = 2500;
    const SolverReport rep =
        solve_mu(nu, LocalFunctional::quadratic(1.0), cfg, GridMeasure::uniform(g));
    const Vector& w = rep.final_mu->weights();
    CHECK(std::abs(barycenter(*rep.final_mu)[0]) <= 0.5 * g.max_spacing());
    // density peaks in the middle and decreases outward on each side
    const double peak = w.maxCoeff();
    CHECK(w[10] >= 0.9 * peak);
    for (int i = 0; i < 9; ++i) {
        CHECK(w[i] <= w[i + 1] + 0.02 * peak);
        CHECK(w[20 - i] <= w[19 - i] + 0.02 * peak);
    }
    // symmetric within loose solver tolerance
    double asym = 0;
    for (int i = 0; i < 21; ++i) asym = std::max(asym, std::abs(w[i] - w[20 - i]));
    CHECK(asym <= 0.05 * peak);
}

TEST_CASE("solve_joint finds the shared-barycenter homothetic pair") {
    const GridSpec g = GridSpec::interval(-2, 2, 100);
    const double lambda = 0.5;
    const InteractionKernel ker = InteractionKernel::quadratic(lambda, g);
    const LocalFunctional loc = LocalFunctional::quadratic(1.0);
    SolverConfig cfg = quick_config();
    cfg.max_outer_iter = 2500;
    cfg.fw_tol = 1e-9;
    cfg.max_sweeps = 25;
    const SolverReport rep =
        solve_joint(ker, loc, cfg, GridMeasure::uniform(g), GridMeasure::uniform(g));
    REQUIRE(rep.final_mu.has_value());
    const double h = g.max_spacing();
    CHECK(*rep.barycenter_distance <= 2 * h);
    REQUIRE(rep.homothety_ratio.has_value());
    CHECK(std::abs(*rep.homothety_ratio - 0.5) <= 0.05 * 0.5);
    // nu is W1-close to the contraction image of mu
    REQUIRE(rep.homothety_residual_w1.has_value());
    CHECK(*rep.homothety_residual_w1 <= 4 * h);
    const ParabolaFit fit = fit_parabola(*rep.final_mu, 0.1);
    const double expect_coeff = lambda / (2 * lambda + 1);
    CHECK(std::abs(fit.coeff - expect_coeff) <= 0.10 * expect_coeff);
    check_monotone(rep.objective_trace);
}

TEST_CASE("barrier solver with zero weights reduces to solve_nu") {
    const GridSpec g = GridSpec::interval(-1, 1, 17);
    std::mt19937_64 rng(31);
    const GridMeasure mu = oracle::random_smooth_measure(g, rng);
    const GridMeasure nu_bar = oracle::random_smooth_measure(g, rng);
    const InteractionKernel ker = InteractionKernel::quadratic(0.8, g);
    SolverConfig cfg = quick_config();
    cfg.max_outer_iter = 300;
    cfg.barrier_delta = 0.0;
    cfg.prox_weight = 0.0;
    const SolverReport a = solve_nu_barrier(mu, ker, nu_bar, cfg);
    const SolverReport b = solve_nu(mu, ker, cfg, nu_bar);
    REQUIRE(a.objective_trace.size() == b.objective_trace.size());
    for (size_t k = 0; k < a.objective_trace.size(); ++k)
        CHECK(a.objective_trace[k] == b.objective_trace[k]);
}

TEST_CASE("barrier solver keeps iterates strictly positive and bounded") {
    const GridSpec g = GridSpec::interval(-1, 1, 33);
    std::mt19937_64 rng(37);
    const GridMeasure mu = oracle::random_smooth_measure(g, rng);
    const GridMeasure nu_bar = oracle::random_smooth_measure(g, rng);
    const InteractionKernel ker = InteractionKernel::quadratic(1.2, g);
    SolverConfig cfg = quick_config();
    cfg.max_outer_iter = 400;
    cfg.prox_weight = 0.1;
    cfg.barrier_delta = 0.01 / eval_A(nu_bar, true);
    const SolverReport rep = solve_nu_barrier(mu, ker, nu_bar, cfg);
    CHECK(rep.final_nu.weights().minCoeff() > 0.0);
    CHECK(rep.linf_bound_check.pass);
    CHECK(rep.prox_w2.has_value());
    CHECK(rep.barrier_term.has_value());
    check_monotone(rep.objective_trace);
    // every recorded iterate respects the density bound up to grid slack
    const double bound = rep.linf_bound_check.theoretical_bound;
    for (const auto& r : rep.iterations)
        CHECK(r.max_density <= bound * (1 + g.max_spacing()) + g.max_spacing());
    CHECK_THROWS_AS(
        solve_nu_barrier(mu, ker, GridMeasure::atom(g, 3), cfg), Error);
}

TEST_CASE("prox distance shrinks along an epsilon sweep") {
    const GridSpec g = GridSpec::interval(-2, 2, 48);
    const double lambda = 1.0;
    const QuadraticInstance inst = QuadraticInstance::make(lambda, g);
    const GridMeasure mu = sample_mu(inst);
    const InteractionKernel ker = InteractionKernel::quadratic(lambda, g);
    SolverConfig base = quick_config();
    base.max_outer_iter = 2500;
    base.fw_tol = 1e-10;

    // nu_bar: the solver's own unregularized minimizer
    const GridMeasure nu_bar = solve_nu(mu, ker, base, GridMeasure::uniform(g)).final_nu;
    const GridMeasure uni = GridMeasure::uniform(g);

    double prev = std::numeric_limits<double>::infinity();
    for (double eps : {0.1, 0.05, 0.025}) {
        const double theta = eps * eps;
        const GridMeasure nu_bar_eps = GridMeasure::from_weights(
            g, (1 - theta) * nu_bar.weights() + theta * uni.weights());
        SolverConfig cfg = base;
        cfg.prox_weight = eps;
        cfg.barrier_delta = eps * eps / eval_A(nu_bar_eps, true);
        const SolverReport rep = solve_nu_barrier(mu, ker, nu_bar_eps, cfg);
        const double w2 = wasserstein(rep.final_nu, nu_bar, 2.0, TransportMethod::Exact);
        CHECK(w2 <= prev + 1e-9);
        prev = w2;
    }
}

TEST_CASE("optimality report") {
    const GridSpec g = GridSpec::interval(-1, 1, 15);
    const InteractionKernel ker = InteractionKernel::quadratic(1.0, g);

    // nu = mu = same atom: psi = 0 is optimal, score minimized at the atom
    const GridMeasure atom = GridMeasure::atom(g, 7);
    const OptimalityReport rep = optimality_report(atom, atom, ker, 1e-6);
    CHECK(rep.support_violation == doctest::Approx(0.0).scale(1));
    CHECK(rep.global_violation == doctest::Approx(0.0).scale(1));

    // random non-optimal nu: strictly positive gap, consistent with fw_direction
    std::mt19937_64 rng(41);
    const GridMeasure mu = oracle::random_measure(g, rng);
    const GridMeasure nu = oracle::random_measure(g, rng);
    const auto [plan, duals] = solve_exact(nu, mu, CostMatrix::half_squared(g, g));
    const Vector score = duals.psi + interaction_potential(nu, ker);
    const FwDirection d = fw_direction(nu, duals.psi, interaction_potential(nu, ker));
    CHECK(d.gap > 0);

    // gap decomposition: off-support mean deviation plus the global violation
    const OptimalityReport st = stationarity_from_score(nu.weights(), score, 1e-6);
    const double cutoff = 1e-6 * nu.weights().maxCoeff();
    double off_support = 0;
    for (int i = 0; i < nu.size(); ++i)
        if (nu.weight(i) <= cutoff) off_support += nu.weight(i) * (score[i] - st.m_constant);
    const double recomposed = off_support + (st.m_constant - score.minCoeff());
    CHECK(d.gap == doctest::Approx(recomposed).epsilon(1e-10));
}

TEST_CASE("scaling covariance of the nu problem under domain dilation") {
    std::mt19937_64 rng(43);
    const int n = 25;
    const Vector shape = oracle::random_simplex_point(n, rng);
    const double sigma = 2.0;

    const GridSpec g1 = GridSpec::interval(-1, 1, n);
    const GridSpec g2 = GridSpec::interval(-sigma, sigma, n);
    const GridMeasure mu1 = GridMeasure::from_weights(g1, shape);
    const GridMeasure mu2 = GridMeasure::from_weights(g2, shape);
    const InteractionKernel k1 = InteractionKernel::quadratic(1.0, g1);
    const InteractionKernel k2 = InteractionKernel::quadratic(1.0, g2);

    SolverConfig c1 = quick_config();
    c1.max_outer_iter = 600;
    SolverConfig c2 = c1;
    c2.fw_tol = c1.fw_tol * sigma * sigma;

    const SolverReport r1 = solve_nu(mu1, k1, c1, GridMeasure::uniform(g1));
    const SolverReport r2 = solve_nu(mu2, k2, c2, GridMeasure::uniform(g2));
    CHECK(r2.final_objective ==
          doctest::Approx(sigma * sigma * r1.final_objective).epsilon(1e-6));
}

TEST_CASE("fixed-schedule line search stalls at optimality instead of looping") {
    const GridSpec g = GridSpec::interval(0, 1, 9);
    std::mt19937_64 rng(47);
    const GridMeasure mu = oracle::random_measure(g, rng);
    const InteractionKernel ker = InteractionKernel::quadratic(0.5, g);
    SolverConfig cfg = quick_config();
    cfg.line_search = LineSearchKind::FixedSchedule;
    cfg.fw_tol = 1e-300;  // unreachable: force the stall path
    cfg.max_outer_iter = 100000;
    const SolverReport rep = solve_nu(mu, ker, cfg, GridMeasure::uniform(g));
    CHECK(rep.termination == Termination::Stalled);
}

TEST_CASE("multi-start reports the winning start") {
    const GridSpec g = GridSpec::interval(-1, 1, 11);
    std::mt19937_64 rng(53);
    const GridMeasure mu = oracle::random_measure(g, rng);
    const InteractionKernel ker = InteractionKernel::quadratic(2.0, g);
    SolverConfig cfg = quick_config();
    cfg.multi_start = 3;
    cfg.max_outer_iter = 400;
    const SolverReport rep = solve_nu(mu, ker, cfg, GridMeasure::uniform(g));
    CHECK(rep.start_index >= 0);
    CHECK(rep.start_index < 3);
    CHECK(std::abs(rep.final_nu.weights().sum() - 1.0) <= 1e-12);
    CHECK(rep.final_nu.weights().minCoeff() >= 0.0);
}

TEST_CASE("entropic transport inside the solver") {
    const GridSpec g = GridSpec::box2d(-1, -1, 1, 1, 6, 6);
    std::mt19937_64 rng(59);
    const GridMeasure mu = oracle::random_smooth_measure(g, rng);
    const GridMeasure nu_bar = oracle::random_smooth_measure(g, rng);
    const InteractionKernel ker = InteractionKernel::quadratic(1.0, g);
    SolverConfig cfg = quick_config();
    cfg.transport_method = TransportMethod::Entropic;
    cfg.entropic_epsilon = 5e-3 * g.diameter() * g.diameter();
    cfg.max_outer_iter = 60;
    cfg.line_search_probes = 12;
    cfg.prox_weight = 0.1;
    cfg.barrier_delta = 0.01 / eval_A(nu_bar, true);
    const SolverReport rep = solve_nu_barrier(mu, ker, nu_bar, cfg);
    CHECK(rep.final_nu.weights().minCoeff() > 0.0);
    check_monotone(rep.objective_trace);
}
