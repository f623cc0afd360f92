#pragma once

#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "otmin/measure.hpp"

namespace otmin {

/// Interaction kernel V applied to squared distances: G(nu) = sum_ij w_i w_j
/// V(|x_i-x_j|^2). Construction validates V >= 0 and V' > 0 on a 1024-point
/// sample of (0, D^2] and audits the supplied derivatives against finite
/// differences. The n x n kernel matrix is cached densely for n <= 2^14 and
/// evaluated on the fly above that.
class InteractionKernel {
public:
    static InteractionKernel quadratic(double lambda, const GridSpec& spec);
    /// V(s) = (lambda/2) s^q, q >= 1.
    static InteractionKernel power(double lambda, double q, const GridSpec& spec);
    /// Tabulated (s, V) pairs, monotone cubic (Fritsch-Carlson) interpolation.
    static InteractionKernel custom(const std::vector<std::pair<double, double>>& table,
                                    const GridSpec& spec);
    static InteractionKernel from_functions(std::function<double(double)> v,
                                            std::function<double(double)> v_prime,
                                            std::function<double(double)> v_second,
                                            const GridSpec& spec);

    double v(double s) const { return v_(s); }
    double v_prime(double s) const { return vp_(s); }
    double v_second(double s) const { return vpp_(s); }
    /// Max over s in [0, D^2] of the C0/C1/C2 magnitudes of x -> V(|x-y|^2).
    double c2_norm() const { return c2_norm_; }

    const GridSpec& grid() const { return spec_; }
    bool has_matrix() const { return matrix_ != nullptr; }
    const Matrix& kernel_matrix() const;
    double kernel(int i, int j) const;
    Vector kernel_column(int j) const;

private:
    InteractionKernel(std::function<double(double)> v, std::function<double(double)> vp,
                      std::function<double(double)> vpp, const GridSpec& spec);
    double node_sqdist(int i, int j) const;

    std::function<double(double)> v_, vp_, vpp_;
    GridSpec spec_;
    double c2_norm_ = 0;
    std::shared_ptr<const Matrix> matrix_;  // null on the lazy path
};

/// Local congestion term F(mu) = sum_i f(density_i) * cell_volume for a convex
/// f with f(0) = 0.
class LocalFunctional {
public:
    /// f(t) = (coeff/2) t^2  (F = coeff/2 * ||mu||_L2^2).
    static LocalFunctional quadratic(double coeff = 1.0);
    static LocalFunctional from_functions(std::function<double(double)> f,
                                          std::function<double(double)> f_prime);

    double f(double t) const { return f_(t); }
    double f_prime(double t) const { return fp_(t); }

private:
    LocalFunctional(std::function<double(double)> f, std::function<double(double)> fp);
    std::function<double(double)> f_, fp_;
};

double eval_F(const GridMeasure& m, const LocalFunctional& loc);

double eval_G(const GridMeasure& m, const InteractionKernel& ker);

/// T_nu[i] = 2 sum_j V(|x_i-x_j|^2) w_j, the first variation of eval_G.
Vector interaction_potential(const GridMeasure& m, const InteractionKernel& ker);

/// Barrier A(nu) = sum_i a(density_i) * cell_volume with a(t) = t^2 + 1/t.
/// Returns +infinity when any density is zero (or, in epsilon_mode, below the
/// positivity floor 1e-300). The sentinel is a value, never combined blindly.
double eval_A(const GridMeasure& m, bool epsilon_mode = false);
double barrier_a(double t);
double barrier_a_prime(double t);

/// Recomputes the kernel's C2 magnitude over [0, D^2] of the given grid.
double c2_bound(const InteractionKernel& ker, const GridSpec& spec);

}  // namespace otmin
