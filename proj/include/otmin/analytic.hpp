#pragma once

#include "otmin/measure.hpp"

namespace otmin {

/// Closed-form minimizing pair for quadratic interaction V(s) = (lambda/2) s
/// together with quadratic congestion f(t) = t^2/2. mu is a truncated
/// paraboloid of radius r around the shared barycenter, nu its homothety
/// image with ratio 1/(2 lambda + 1). Only the interior-support regime is
/// representable: construction refuses a support ball touching the boundary.
struct QuadraticInstance {
    double lambda = 0;
    GridSpec spec;
    Vector center;
    double radius = 0;         // support radius of mu
    double normalization = 0;  // peak density c = lambda r^2 / (2 lambda + 1)
    double ratio = 0;          // homothety ratio 1/(2 lambda + 1)

    static QuadraticInstance make(double lambda, const GridSpec& spec);
    static QuadraticInstance make(double lambda, const GridSpec& spec, const Vector& center);
};

/// Unique r with unit mass:
///   d=1: r = (3(2l+1)/(4l))^(1/3),  d=2: r = (2(2l+1)/(pi l))^(1/4).
double radius_from_mass(double lambda, int d);

double mu_density(const QuadraticInstance& inst, const Vector& x);
double nu_density(const QuadraticInstance& inst, const Vector& x);

GridMeasure sample_mu(const QuadraticInstance& inst);
GridMeasure sample_nu(const QuadraticInstance& inst);

/// Optimal maps between the pair: s contracts mu onto nu, t expands back.
struct HomothetyMaps {
    Vector center;
    double ratio;  // contraction ratio of s
    Vector s(const Vector& x) const { return center + ratio * (x - center); }
    Vector t(const Vector& y) const { return center + (y - center) / ratio; }
};

HomothetyMaps transport_maps(const QuadraticInstance& inst);

struct LipschitzCheck {
    double lip_constant = 0;        // discrete Lipschitz constant of sampled u
    double gradient_bound = 0;      // 2 lambda r / (2 lambda + 1)
    double conservative_bound = 0;  // 2 lambda D / (2 lambda + 1)
    double inf_u = 0;
    bool remark_inequality_holds = false;  // 1 <= (inf u + 2l/(2l+1) D) |Omega|
    bool discontinuity_flag = false;       // u positive somewhere on the box edge
};

LipschitzCheck lipschitz_bound_check(const QuadraticInstance& inst, const GridSpec& spec);

/// Least-squares fit of density(x) ~ peak - coeff * |x - barycenter|^2 over
/// the nodes with density above rel_cutoff * max density.
struct ParabolaFit {
    double peak = 0;
    double coeff = 0;
    int support_nodes = 0;
};

ParabolaFit fit_parabola(const GridMeasure& m, double rel_cutoff = 0.1);

}  // namespace otmin
