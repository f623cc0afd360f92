#include "otmin/functionals.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace otmin {

namespace {

constexpr int kKernelSamplePoints = 1024;
constexpr int kDenseKernelGuard = 1 << 14;
constexpr double kPositivityFloor = 1e-300;

double c2_magnitude(const std::function<double(double)>& v,
                    const std::function<double(double)>& vp,
                    const std::function<double(double)>& vpp, double s, double diam) {
    // Chain rule for x -> V(|x-y|^2): gradient 2V'(s)(x-y), Hessian
    // 2V'(s) I + 4V''(s) (x-y)(x-y)^T with s = |x-y|^2 <= D^2.
    const double c0 = std::abs(v(s));
    const double c1 = 2.0 * std::abs(vp(s)) * diam;
    const double c2 = std::abs(2.0 * vp(s) + 4.0 * s * vpp(s));
    return std::max({c0, c1, c2});
}

double sampled_c2_norm(const std::function<double(double)>& v,
                       const std::function<double(double)>& vp,
                       const std::function<double(double)>& vpp, double diam) {
    const double d2 = diam * diam;
    double best = 0;
    for (int k = 0; k < kKernelSamplePoints; ++k) {
        const double s = (k + 0.5) / kKernelSamplePoints * d2;
        best = std::max(best, c2_magnitude(v, vp, vpp, s, diam));
    }
    return best;
}

}  // namespace

InteractionKernel::InteractionKernel(std::function<double(double)> v,
                                     std::function<double(double)> vp,
                                     std::function<double(double)> vpp, const GridSpec& spec)
    : v_(std::move(v)), vp_(std::move(vp)), vpp_(std::move(vpp)), spec_(spec) {
    const double d2 = spec.diameter() * spec.diameter();
    for (int k = 0; k < kKernelSamplePoints; ++k) {
        const double s = (k + 0.5) / kKernelSamplePoints * d2;
        const double vs = v_(s);
        const double vps = vp_(s);
        if (!(vs >= -1e-12))
            throw InvalidKernel("interaction kernel: V must be nonnegative on [0, D^2]");
        if (!(vps > 0.0))
            throw InvalidKernel("interaction kernel: V' must be strictly positive on (0, D^2]");
        // Audit the supplied derivative against a central difference.
        const double delta = 1e-6 * (1.0 + s);
        if (s - delta > 0) {
            const double fd = (v_(s + delta) - v_(s - delta)) / (2 * delta);
            if (std::abs(fd - vps) > 1e-4 * (1.0 + std::abs(vps)))
                throw InvalidKernel("interaction kernel: V' inconsistent with V");
        }
    }
    c2_norm_ = sampled_c2_norm(v_, vp_, vpp_, spec.diameter());

    const int n = spec_.num_nodes();
    if (n <= kDenseKernelGuard) {
        Matrix K(n, n);
        for (int i = 0; i < n; ++i) {
            K(i, i) = v_(0.0);
            for (int j = i + 1; j < n; ++j) {
                const double k = v_(node_sqdist(i, j));
                K(i, j) = k;
                K(j, i) = k;
            }
        }
        matrix_ = std::make_shared<const Matrix>(std::move(K));
    }
}

double InteractionKernel::node_sqdist(int i, int j) const {
    double d2 = 0;
    for (int a = 0; a < spec_.dim(); ++a) {
        const double d = spec_.node_coord(i, a) - spec_.node_coord(j, a);
        d2 += d * d;
    }
    return d2;
}

const Matrix& InteractionKernel::kernel_matrix() const {
    if (!matrix_) throw Error("interaction kernel: matrix not cached (grid above dense guard)");
    return *matrix_;
}

double InteractionKernel::kernel(int i, int j) const {
    if (matrix_) return (*matrix_)(i, j);
    return v_(node_sqdist(i, j));
}

Vector InteractionKernel::kernel_column(int j) const {
    if (matrix_) return matrix_->col(j);
    Vector col(spec_.num_nodes());
    for (int i = 0; i < spec_.num_nodes(); ++i) col[i] = v_(node_sqdist(i, j));
    return col;
}

InteractionKernel InteractionKernel::quadratic(double lambda, const GridSpec& spec) {
    if (lambda <= 0) throw InvalidKernel("quadratic kernel: lambda must be positive");
    return InteractionKernel([lambda](double s) { return 0.5 * lambda * s; },
                             [lambda](double) { return 0.5 * lambda; },
                             [](double) { return 0.0; }, spec);
}

InteractionKernel InteractionKernel::power(double lambda, double q, const GridSpec& spec) {
    if (lambda <= 0) throw InvalidKernel("power kernel: lambda must be positive");
    if (q < 1.0) throw InvalidKernel("power kernel: exponent must be >= 1");
    return InteractionKernel(
        [lambda, q](double s) { return 0.5 * lambda * std::pow(s, q); },
        [lambda, q](double s) { return 0.5 * lambda * q * std::pow(s, q - 1.0); },
        [lambda, q](double s) {
            return q == 1.0 ? 0.0 : 0.5 * lambda * q * (q - 1.0) * std::pow(s, q - 2.0);
        },
        spec);
}

InteractionKernel InteractionKernel::custom(const std::vector<std::pair<double, double>>& table,
                                            const GridSpec& spec) {
    if (table.size() < 2) throw InvalidKernel("custom kernel: need at least two (s, V) pairs");
    std::vector<double> s, y;
    for (const auto& p : table) {
        if (!s.empty() && p.first <= s.back())
            throw InvalidKernel("custom kernel: abscissae must be strictly increasing");
        s.push_back(p.first);
        y.push_back(p.second);
    }
    const int n = static_cast<int>(s.size());

    // Fritsch-Carlson monotone cubic slopes.
    std::vector<double> h(n - 1), delta(n - 1), m(n);
    for (int k = 0; k + 1 < n; ++k) {
        h[k] = s[k + 1] - s[k];
        delta[k] = (y[k + 1] - y[k]) / h[k];
    }
    m[0] = delta[0];
    m[n - 1] = delta[n - 2];
    for (int k = 1; k + 1 < n; ++k)
        m[k] = delta[k - 1] * delta[k] <= 0 ? 0.0 : 0.5 * (delta[k - 1] + delta[k]);
    for (int k = 0; k + 1 < n; ++k) {
        if (delta[k] == 0) {
            m[k] = m[k + 1] = 0;
            continue;
        }
        const double alpha = m[k] / delta[k], beta = m[k + 1] / delta[k];
        const double r = alpha * alpha + beta * beta;
        if (r > 9.0) {
            const double tau = 3.0 / std::sqrt(r);
            m[k] = tau * alpha * delta[k];
            m[k + 1] = tau * beta * delta[k];
        }
    }

    struct Spline {
        std::vector<double> s, y, m;
        int cell(double x) const {
            const int n = static_cast<int>(s.size());
            if (x <= s.front()) return 0;
            if (x >= s[n - 2]) return n - 2;
            int lo = 0, hi = n - 2;
            while (lo < hi) {
                const int mid = (lo + hi + 1) / 2;
                if (s[mid] <= x) lo = mid;
                else hi = mid - 1;
            }
            return lo;
        }
        double eval(double x) const {
            const int k = cell(x);
            const double h = s[k + 1] - s[k], t = (x - s[k]) / h;
            const double h00 = (1 + 2 * t) * (1 - t) * (1 - t), h10 = t * (1 - t) * (1 - t);
            const double h01 = t * t * (3 - 2 * t), h11 = t * t * (t - 1);
            return h00 * y[k] + h10 * h * m[k] + h01 * y[k + 1] + h11 * h * m[k + 1];
        }
        double deriv(double x) const {
            const int k = cell(x);
            const double h = s[k + 1] - s[k], t = (x - s[k]) / h;
            const double d00 = 6 * t * t - 6 * t, d10 = 3 * t * t - 4 * t + 1;
            const double d01 = 6 * t - 6 * t * t, d11 = 3 * t * t - 2 * t;
            return (d00 * y[k] + d01 * y[k + 1]) / h + d10 * m[k] + d11 * m[k + 1];
        }
        double second(double x) const {
            const int k = cell(x);
            const double h = s[k + 1] - s[k], t = (x - s[k]) / h;
            const double e00 = 12 * t - 6, e10 = 6 * t - 4;
            const double e01 = 6 - 12 * t, e11 = 6 * t - 2;
            return (e00 * y[k] + e01 * y[k + 1]) / (h * h) + (e10 * m[k] + e11 * m[k + 1]) / h;
        }
    };
    auto sp = std::make_shared<Spline>(Spline{std::move(s), std::move(y), std::move(m)});
    return InteractionKernel([sp](double x) { return sp->eval(x); },
                            [sp](double x) { return sp->deriv(x); },
                            [sp](double x) { return sp->second(x); }, spec);
}

InteractionKernel InteractionKernel::from_functions(std::function<double(double)> v,
                                                    std::function<double(double)> v_prime,
                                                    std::function<double(double)> v_second,
                                                    const GridSpec& spec) {
    return InteractionKernel(std::move(v), std::move(v_prime), std::move(v_second), spec);
}

LocalFunctional::LocalFunctional(std::function<double(double)> f, std::function<double(double)> fp)
    : f_(std::move(f)), fp_(std::move(fp)) {
    if (std::abs(f_(0.0)) > 1e-14)
        throw InvalidLocalFunctional("local functional: f(0) must be 0");
}

LocalFunctional LocalFunctional::quadratic(double coeff) {
    if (coeff <= 0) throw InvalidLocalFunctional("quadratic local functional: coeff must be positive");
    return LocalFunctional([coeff](double t) { return 0.5 * coeff * t * t; },
                           [coeff](double t) { return coeff * t; });
}

LocalFunctional LocalFunctional::from_functions(std::function<double(double)> f,
                                                std::function<double(double)> f_prime) {
    return LocalFunctional(std::move(f), std::move(f_prime));
}

double eval_F(const GridMeasure& m, const LocalFunctional& loc) {
    const double vol = m.grid().cell_volume();
    const double max_density = linf_density(m);
    // Midpoint convexity audit on [0, 2 * max density].
    const int probes = 16;
    for (int k = 0; k < probes; ++k) {
        const double t0 = 2.0 * max_density * k / probes;
        const double t1 = 2.0 * max_density * (k + 1) / probes;
        const double lhs = loc.f(0.5 * (t0 + t1));
        const double rhs = 0.5 * (loc.f(t0) + loc.f(t1));
        if (lhs > rhs + 1e-9 * (1.0 + std::abs(rhs)))
            throw InvalidLocalFunctional("local functional: f fails midpoint convexity");
    }
    double total = 0;
    for (int i = 0; i < m.size(); ++i) total += loc.f(m.weight(i) / vol) * vol;
    return total;
}

double eval_G(const GridMeasure& m, const InteractionKernel& ker) {
    if (!ker.grid().same_grid(m.grid()))
        throw Error("eval_G: kernel grid does not match measure grid");
    const Vector& w = m.weights();
    if (ker.has_matrix()) return w.dot(ker.kernel_matrix() * w);
    const int n = m.size();
    double total = 0;
    for (int i = 0; i < n; ++i) {
        if (w[i] == 0) continue;
        double row = 0;
        for (int j = 0; j < n; ++j) row += ker.kernel(i, j) * w[j];
        total += w[i] * row;
    }
    return total;
}

Vector interaction_potential(const GridMeasure& m, const InteractionKernel& ker) {
    if (!ker.grid().same_grid(m.grid()))
        throw Error("interaction_potential: kernel grid does not match measure grid");
    const Vector& w = m.weights();
    if (ker.has_matrix()) return 2.0 * (ker.kernel_matrix() * w);
    const int n = m.size();
    Vector t(n);
    for (int i = 0; i < n; ++i) {
        double acc = 0;
        for (int j = 0; j < n; ++j) acc += ker.kernel(i, j) * w[j];
        t[i] = 2.0 * acc;
    }
    return t;
}

double barrier_a(double t) { return t * t + 1.0 / t; }
double barrier_a_prime(double t) { return 2.0 * t - 1.0 / (t * t); }

double eval_A(const GridMeasure& m, bool epsilon_mode) {
    const double vol = m.grid().cell_volume();
    const double floor = epsilon_mode ? kPositivityFloor : 0.0;
    double total = 0;
    for (int i = 0; i < m.size(); ++i) {
        const double d = m.weight(i) / vol;
        if (d <= floor) return std::numeric_limits<double>::infinity();
        total += barrier_a(d) * vol;
    }
    return total;
}

double c2_bound(const InteractionKernel& ker, const GridSpec& spec) {
    return sampled_c2_norm([&](double s) { return ker.v(s); },
                           [&](double s) { return ker.v_prime(s); },
                           [&](double s) { return ker.v_second(s); }, spec.diameter());
}

}  // namespace otmin
