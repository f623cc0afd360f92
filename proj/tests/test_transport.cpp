#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "otmin/transport.hpp"
#include "oracles.hpp"

using namespace otmin;

namespace {

// Grid with integer nodes 0..n-1.
GridSpec integer_grid(int n) { return GridSpec::interval(-0.5, n - 0.5, n); }

GridMeasure two_atoms(const GridSpec& g, int i, int j) {
    Vector w = Vector::Zero(g.num_nodes());
    w[i] = 0.5;
    w[j] = 0.5;
    return GridMeasure::from_weights(g, w);
}

void check_plan(const TransportPlan& plan, const GridMeasure& mu, const GridMeasure& nu) {
    for (int i = 0; i < mu.size(); ++i)
        CHECK(std::abs(plan.coupling.row(i).sum() - mu.weight(i)) <= 1e-9);
    for (int j = 0; j < nu.size(); ++j)
        CHECK(std::abs(plan.coupling.col(j).sum() - nu.weight(j)) <= 1e-9);
    CHECK(plan.coupling.minCoeff() >= -1e-15);
}

void check_duals(const TransportPlan& plan, const DualPotentials& d, const CostMatrix& cost,
                 const GridMeasure& mu, const GridMeasure& nu) {
    // feasibility
    for (int i = 0; i < cost.rows(); ++i)
        for (int j = 0; j < cost.cols(); ++j)
            CHECK(d.psi[i] + d.psi_c[j] <= cost(i, j) + 1e-9);
    // zero duality gap
    const double dual = d.psi.dot(mu.weights()) + d.psi_c.dot(nu.weights());
    CHECK(std::abs(dual - plan.cost_value) <= 1e-8 * (1 + std::abs(plan.cost_value)));
    // complementary slackness
    for (int i = 0; i < cost.rows(); ++i)
        for (int j = 0; j < cost.cols(); ++j)
            if (plan.coupling(i, j) > 1e-12)
                CHECK(std::abs(d.psi[i] + d.psi_c[j] - cost(i, j)) <= 1e-8);
    // gauge: psi vanishes at the first source node carrying mass
    for (int i = 0; i < mu.size(); ++i) {
        if (mu.weight(i) > 0) {
            CHECK(d.psi[i] == doctest::Approx(0.0).scale(1));
            break;
        }
    }
}

}  // namespace

TEST_CASE("identical measures transport for free") {
    std::mt19937_64 rng(5);
    const GridSpec g = GridSpec::interval(0, 1, 12);
    const GridMeasure m = oracle::random_measure(g, rng);
    const CostMatrix cost = CostMatrix::half_squared(g, g);
    const auto [plan, duals] = solve_exact(m, m, cost);
    CHECK(plan.cost_value == doctest::Approx(0.0).scale(1));
    check_plan(plan, m, m);
    check_duals(plan, duals, cost, m, m);
}

TEST_CASE("single atom pair: cost is half squared distance") {
    const GridSpec g = integer_grid(6);
    const GridMeasure mu = GridMeasure::atom(g, 1);
    const GridMeasure nu = GridMeasure::atom(g, 4);
    const auto [plan, duals] = solve_exact(mu, nu, CostMatrix::half_squared(g, g));
    CHECK(plan.cost_value == doctest::Approx(0.5 * 9.0));
}

TEST_CASE("two-atom instance matches the enumerated polytope optimum") {
    // mu = (d0 + d2)/2, nu = (d1 + d3)/2: monotone pairing costs 1/2.
    const GridSpec g = integer_grid(4);
    const GridMeasure mu = two_atoms(g, 0, 2);
    const GridMeasure nu = two_atoms(g, 1, 3);
    const CostMatrix cost = CostMatrix::half_squared(g, g);
    const auto [plan, duals] = solve_exact(mu, nu, cost);
    CHECK(plan.cost_value == doctest::Approx(0.5));
    check_plan(plan, mu, nu);
    check_duals(plan, duals, cost, mu, nu);

    // displacement map: barycentric projection lands on the paired nodes
    const DisplacementMap dmap = displacement_map(plan);
    CHECK(dmap.pure);
    CHECK(dmap.defined[0]);
    CHECK_FALSE(dmap.defined[1]);
    CHECK(dmap.targets(0, 0) == doctest::Approx(1.0));
    CHECK(dmap.targets(2, 0) == doctest::Approx(3.0));
}

TEST_CASE("brute force equivalence on random small instances") {
    std::mt19937_64 rng(42);
    std::uniform_int_distribution<int> size(1, 3);
    std::uniform_real_distribution<double> coord(-2.0, 2.0);
    for (int trial = 0; trial < 120; ++trial) {
        const int R = size(rng), C = size(rng);
        Vector a = oracle::random_simplex_point(R, rng);
        Vector b = oracle::random_simplex_point(C, rng);
        Matrix cm(R, C);
        for (int i = 0; i < R; ++i)
            for (int j = 0; j < C; ++j) {
                const double d = coord(rng) - coord(rng);
                cm(i, j) = 0.5 * d * d;
            }
        const double expect = oracle::brute_force_transport(a, b, cm);
        const GridSpec gs = integer_grid(R), gt = integer_grid(C);
        const auto [plan, duals] = solve_exact(GridMeasure::from_weights(gs, a),
                                               GridMeasure::from_weights(gt, b),
                                               CostMatrix::from_matrix(cm));
        CHECK(std::abs(plan.cost_value - expect) <= 1e-10 * (1 + std::abs(expect)));
    }
}

TEST_CASE("monotone 1d route agrees with the general simplex") {
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 40; ++trial) {
        const int n = 3 + trial % 13, m = 2 + (trial * 7) % 11;
        const GridSpec gs = GridSpec::interval(-1.0, 1.0, n);
        const GridSpec gt = GridSpec::interval(-0.7, 1.4, m);
        Vector a = oracle::random_simplex_point(n, rng);
        Vector b = oracle::random_simplex_point(m, rng);
        const CostMatrix monge = CostMatrix::half_squared(gs, gt);
        REQUIRE(monge.monge_1d());
        const CostMatrix plain = CostMatrix::from_matrix(monge.matrix());
        REQUIRE_FALSE(plain.monge_1d());

        const double fast = monotone_1d_cost(gs, a, gt, b, 2.0, true);
        const double general = exact_cost_raw(a, b, plain);
        CHECK(fast == doctest::Approx(general).epsilon(1e-12));

        // staircase duals are optimal: dual value equals primal, feasible
        const auto [psi, psi_c] = exact_duals_raw(a, b, monge);
        CHECK(psi.dot(a) + psi_c.dot(b) == doctest::Approx(fast).epsilon(1e-10));
        double min_rc = 0;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < m; ++j)
                min_rc = std::min(min_rc, monge(i, j) - psi[i] - psi_c[j]);
        CHECK(min_rc >= -1e-9);
    }
}

TEST_CASE("c-transform basics") {
    const GridSpec g = GridSpec::interval(0, 1, 8);
    const CostMatrix cost = CostMatrix::half_squared(g, g);

    // zero transforms to zero on a shared grid (minimizer x = y)
    const Vector zero = Vector::Zero(8);
    CHECK((c_transform(zero, cost, TransformDirection::SourceToTarget).array() == 0).all());

    // constants conjugate to their negation
    const Vector k = Vector::Constant(8, 3.25);
    const Vector kc = c_transform(k, cost, TransformDirection::SourceToTarget);
    for (int j = 0; j < 8; ++j) CHECK(kc[j] == doctest::Approx(-3.25));
}

TEST_CASE("double c-transform dominates and triple stabilizes") {
    std::mt19937_64 rng(21);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const GridSpec gs = GridSpec::interval(-1, 1, 9);
    const GridSpec gt = GridSpec::interval(0, 2, 7);
    const CostMatrix cost = CostMatrix::half_squared(gs, gt);
    for (int trial = 0; trial < 25; ++trial) {
        Vector chi(9);
        for (int i = 0; i < 9; ++i) chi[i] = gauss(rng);
        const Vector chi_c = c_transform(chi, cost, TransformDirection::SourceToTarget);
        const Vector chi_cc = c_transform(chi_c, cost, TransformDirection::TargetToSource);
        for (int i = 0; i < 9; ++i) CHECK(chi_cc[i] >= chi[i] - 1e-14);
        const Vector chi_ccc = c_transform(chi_cc, cost, TransformDirection::SourceToTarget);
        for (int j = 0; j < 7; ++j)
            CHECK(chi_ccc[j] == doctest::Approx(chi_c[j]).epsilon(1e-14).scale(1));
    }
}

TEST_CASE("parabola-envelope conjugate matches the dense support-restricted transform") {
    std::mt19937_64 rng(83);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (int trial = 0; trial < 60; ++trial) {
        const int n = 5 + trial % 21, m = 4 + (trial * 3) % 17;
        const GridSpec gs = GridSpec::interval(-1.3, 0.9, n);
        const GridSpec gt = GridSpec::interval(-0.8, 1.6, m);
        Vector vals(m), mass(m);
        for (int j = 0; j < m; ++j) {
            vals[j] = gauss(rng);
            mass[j] = unif(rng) < 0.35 ? 0.0 : unif(rng);
        }
        if (mass.sum() == 0) mass[m / 2] = 1.0;
        const Vector fast = support_restricted_conjugate_1d(vals, mass, gs, gt);
        const Vector dense = support_restricted_c_transform(
            vals, mass, CostMatrix::half_squared(gs, gt), TransformDirection::TargetToSource);
        for (int i = 0; i < n; ++i)
            CHECK(fast[i] == doctest::Approx(dense[i]).epsilon(1e-13).scale(1));
    }
}

TEST_CASE("entropic solver approaches the exact optimum") {
    const GridSpec g = integer_grid(4);
    const GridMeasure mu = two_atoms(g, 0, 2);
    const GridMeasure nu = two_atoms(g, 1, 3);
    const CostMatrix cost = CostMatrix::half_squared(g, g);
    EntropicOptions opts;
    opts.epsilon = 1e-3;
    opts.tol = 1e-4;  // tied costs: Sinkhorn converges O(1/k) here
    opts.max_iter = 200000;
    const auto [plan, duals] = solve_entropic(mu, nu, cost, opts);
    CHECK(std::abs(plan.cost_value - 0.5) <= 1e-2);
    check_plan(plan, mu, nu);
    // duals feasible and psi_c is the exact transform of psi
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) CHECK(duals.psi[i] + duals.psi_c[j] <= cost(i, j) + 1e-9);
    const Vector expect = c_transform(duals.psi, cost, TransformDirection::SourceToTarget);
    for (int j = 0; j < 4; ++j) CHECK(duals.psi_c[j] == doctest::Approx(expect[j]));
}

TEST_CASE("entropic diagonal case keeps cost near zero") {
    const GridSpec g = GridSpec::interval(0, 1, 16);
    const GridMeasure u = GridMeasure::uniform(g);
    const CostMatrix cost = CostMatrix::half_squared(g, g);
    EntropicOptions opts;
    opts.epsilon = 5e-4;
    const auto [plan, duals] = solve_entropic(u, u, cost, opts);
    CHECK(plan.cost_value <= opts.epsilon * std::log(16.0));
    // mass concentrates on the diagonal
    double diag = 0;
    for (int i = 0; i < 16; ++i) diag += plan.coupling(i, i);
    CHECK(diag >= 0.9);
}

TEST_CASE("entropic error paths") {
    const GridSpec g = GridSpec::interval(0, 1, 6);
    std::mt19937_64 rng(71);
    const GridMeasure x = oracle::random_measure(g, rng);
    const GridMeasure y = oracle::random_measure(g, rng);
    const CostMatrix cost = CostMatrix::half_squared(g, g);
    EntropicOptions strict;
    strict.epsilon = 1e-4;
    strict.max_iter = 3;
    strict.tol = 1e-14;
    try {
        solve_entropic(x, y, cost, strict);
        FAIL("expected NoConvergence");
    } catch (const NoConvergence& e) {
        CHECK(e.last_marginal_error > 0.0);  // the last error rides along
    }
}

TEST_CASE("wasserstein distances") {
    const GridSpec g = integer_grid(8);
    std::mt19937_64 rng(77);
    const GridMeasure m = oracle::random_measure(g, rng);
    CHECK(wasserstein(m, m, 2.0, TransportMethod::Exact) == doctest::Approx(0.0).scale(1));

    const GridMeasure a0 = GridMeasure::atom(g, 0);
    const GridMeasure a5 = GridMeasure::atom(g, 5);
    CHECK(wasserstein(a0, a5, 1.0, TransportMethod::Exact) == doctest::Approx(5.0));
    CHECK(wasserstein(a0, a5, 2.0, TransportMethod::Exact) == doctest::Approx(5.0));

    // translation invariance: shift both measures by two grid cells
    const GridMeasure b0 = GridMeasure::atom(g, 2);
    const GridMeasure b5 = GridMeasure::atom(g, 7);
    CHECK(wasserstein(b0, b5, 2.0, TransportMethod::Exact) ==
          doctest::Approx(wasserstein(a0, a5, 2.0, TransportMethod::Exact)));

    // p = 2 consistency with the half-squared solver
    const GridMeasure x = oracle::random_measure(g, rng);
    const GridMeasure y = oracle::random_measure(g, rng);
    const double w2 = wasserstein(x, y, 2.0, TransportMethod::Exact);
    const double half = solve_exact(x, y, CostMatrix::half_squared(g, g)).first.cost_value;
    CHECK(w2 * w2 == doctest::Approx(2.0 * half).epsilon(1e-9));
}

TEST_CASE("metric axioms on random triples") {
    std::mt19937_64 rng(13);
    const GridSpec g = GridSpec::interval(-1, 1, 10);
    for (int trial = 0; trial < 15; ++trial) {
        const GridMeasure x = oracle::random_measure(g, rng);
        const GridMeasure y = oracle::random_measure(g, rng);
        const GridMeasure z = oracle::random_measure(g, rng);
        for (double p : {1.0, 2.0}) {
            const double xy = wasserstein(x, y, p, TransportMethod::Exact);
            const double yx = wasserstein(y, x, p, TransportMethod::Exact);
            CHECK(std::abs(xy - yx) <= 1e-10);
            const double xz = wasserstein(x, z, p, TransportMethod::Exact);
            const double zy = wasserstein(z, y, p, TransportMethod::Exact);
            CHECK(xy <= xz + zy + 1e-8);
        }
        CHECK(wasserstein(x, x, 2.0, TransportMethod::Exact) <= 1e-12);
    }
}

TEST_CASE("psi from solve_exact is grid-Lipschitz with constant below 2D") {
    std::mt19937_64 rng(31);
    const GridSpec g = GridSpec::interval(-1, 1, 24);
    const double D = g.diameter();
    for (int trial = 0; trial < 10; ++trial) {
        const GridMeasure x = oracle::random_measure(g, rng);
        const GridMeasure y = oracle::random_measure(g, rng);
        const auto [plan, duals] = solve_exact(x, y, CostMatrix::half_squared(g, g));
        double lip = 0;
        for (int i = 0; i + 1 < g.num_nodes(); ++i)
            lip = std::max(lip, std::abs(duals.psi[i + 1] - duals.psi[i]) / g.spacing(0));
        CHECK(lip <= 2 * D + g.spacing(0));
    }
}

TEST_CASE("2d exact transport against brute force") {
    std::mt19937_64 rng(55);
    const GridSpec g = GridSpec::box2d(0, 0, 1, 1, 2, 2);  // 4 nodes
    for (int trial = 0; trial < 30; ++trial) {
        Vector a = oracle::random_simplex_point(4, rng);
        Vector b = oracle::random_simplex_point(4, rng);
        const CostMatrix cost = CostMatrix::half_squared(g, g);
        REQUIRE_FALSE(cost.monge_1d());
        const auto [plan, duals] = solve_exact(GridMeasure::from_weights(g, a),
                                               GridMeasure::from_weights(g, b), cost);
        const double expect = oracle::brute_force_transport(a, b, cost.matrix());
        CHECK(plan.cost_value == doctest::Approx(expect).epsilon(1e-10));
    }
}

TEST_CASE("size guard and infeasibility errors") {
    const GridSpec big = GridSpec::interval(0, 1, 1001);
    const GridSpec big2 = GridSpec::interval(0, 1, 1000);
    const CostMatrix cost = CostMatrix::half_squared(big, big2);
    CHECK_THROWS_AS(solve_exact(GridMeasure::uniform(big), GridMeasure::uniform(big2), cost),
                    SizeGuardExceeded);

    const GridSpec g = GridSpec::interval(0, 1, 4);
    Vector bad = Vector::Constant(4, 0.25);
    bad[0] += 1e-6;  // bypass the measure normalizer via raw entry point
    CHECK_THROWS_AS(exact_cost_raw(bad, Vector::Constant(4, 0.25),
                                   CostMatrix::half_squared(g, g)),
                    InfeasibleMarginals);
}

TEST_CASE("plan and potentials csv export") {
    const GridSpec g = integer_grid(3);
    const GridMeasure mu = GridMeasure::atom(g, 0);
    const GridMeasure nu = GridMeasure::atom(g, 2);
    const auto [plan, duals] = solve_exact(mu, nu, CostMatrix::half_squared(g, g));
    std::ostringstream p, q;
    write_plan_csv(plan, p);
    write_potentials_csv(duals.psi, q);
    CHECK(p.str().substr(0, 9) == "i,j,mass\n");
    CHECK(p.str().find("0,2,1\n") != std::string::npos);
    CHECK(q.str().substr(0, 10) == "index,psi\n");
}
