#include "otmin/analytic.hpp"

#include <cmath>

namespace otmin {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

double radius_from_mass(double lambda, int d) {
    if (lambda <= 0) throw Error("radius_from_mass: lambda must be positive");
    if (d == 1) return std::cbrt(3.0 * (2.0 * lambda + 1.0) / (4.0 * lambda));
    if (d == 2) return std::pow(2.0 * (2.0 * lambda + 1.0) / (kPi * lambda), 0.25);
    throw Error("radius_from_mass: d must be 1 or 2");
}

QuadraticInstance QuadraticInstance::make(double lambda, const GridSpec& spec) {
    Vector c(spec.dim());
    for (int a = 0; a < spec.dim(); ++a) c[a] = 0.5 * (spec.lower(a) + spec.upper(a));
    return make(lambda, spec, c);
}

QuadraticInstance QuadraticInstance::make(double lambda, const GridSpec& spec,
                                          const Vector& center) {
    if (lambda <= 0) throw Error("QuadraticInstance: lambda must be positive");
    if (center.size() != spec.dim()) throw Error("QuadraticInstance: center dimension mismatch");
    QuadraticInstance inst;
    inst.lambda = lambda;
    inst.spec = spec;
    inst.center = center;
    inst.radius = radius_from_mass(lambda, spec.dim());
    inst.normalization = lambda * inst.radius * inst.radius / (2.0 * lambda + 1.0);
    inst.ratio = 1.0 / (2.0 * lambda + 1.0);
    for (int a = 0; a < spec.dim(); ++a) {
        if (center[a] - inst.radius < spec.lower(a) || center[a] + inst.radius > spec.upper(a))
            throw SupportTouchesBoundary(
                "QuadraticInstance: the support ball of mu is not inside the domain");
    }
    return inst;
}

double mu_density(const QuadraticInstance& inst, const Vector& x) {
    const double r2 = (x - inst.center).squaredNorm();
    const double coeff = inst.lambda / (2.0 * inst.lambda + 1.0);
    return coeff * std::max(0.0, inst.radius * inst.radius - r2);
}

double nu_density(const QuadraticInstance& inst, const Vector& x) {
    // Pushforward of mu under the contraction s: v(x) = (2l+1)^d u(center +
    // (2l+1)(x-center)).
    const double scale = 1.0 / inst.ratio;
    const Vector pre = inst.center + scale * (x - inst.center);
    double jac = scale;
    if (inst.spec.dim() == 2) jac *= scale;
    return jac * mu_density(inst, pre);
}

GridMeasure sample_mu(const QuadraticInstance& inst) {
    return build_from_density(inst.spec, [&](const Vector& x) { return mu_density(inst, x); });
}

GridMeasure sample_nu(const QuadraticInstance& inst) {
    return build_from_density(inst.spec, [&](const Vector& x) { return nu_density(inst, x); });
}

HomothetyMaps transport_maps(const QuadraticInstance& inst) {
    return HomothetyMaps{inst.center, inst.ratio};
}

LipschitzCheck lipschitz_bound_check(const QuadraticInstance& inst, const GridSpec& spec) {
    LipschitzCheck out;
    const double l = inst.lambda;
    out.gradient_bound = 2.0 * l * inst.radius / (2.0 * l + 1.0);
    out.conservative_bound = 2.0 * l * spec.diameter() / (2.0 * l + 1.0);

    // Discrete Lipschitz constant over axis-adjacent node pairs.
    const int n = spec.num_nodes();
    double lip = 0;
    double inf_u = std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i) {
        const double ui = mu_density(inst, spec.node(i));
        inf_u = std::min(inf_u, ui);
        if (spec.dim() == 1) {
            if (i + 1 < n) {
                const double uj = mu_density(inst, spec.node(i + 1));
                lip = std::max(lip, std::abs(uj - ui) / spec.spacing(0));
            }
        } else {
            const int ny = spec.points(1);
            if ((i % ny) + 1 < ny) {
                const double uj = mu_density(inst, spec.node(i + 1));
                lip = std::max(lip, std::abs(uj - ui) / spec.spacing(1));
            }
            if (i + ny < n) {
                const double uj = mu_density(inst, spec.node(i + ny));
                lip = std::max(lip, std::abs(uj - ui) / spec.spacing(0));
            }
        }
    }
    out.lip_constant = lip;
    out.inf_u = inf_u;

    double volume = 1.0;
    for (int a = 0; a < spec.dim(); ++a) volume *= spec.upper(a) - spec.lower(a);
    out.remark_inequality_holds =
        1.0 <= (inf_u + out.conservative_bound) * volume + 1e-12;

    // Would nu jump at the image of the boundary? Only when u is positive on
    // the boundary itself, which the interior-support construction excludes.
    double boundary_max = 0;
    for (int i = 0; i < n; ++i) {
        bool on_edge = false;
        if (spec.dim() == 1) {
            on_edge = i == 0 || i == n - 1;
        } else {
            const int ny = spec.points(1), nx = spec.points(0);
            const int ix = i / ny, iy = i % ny;
            on_edge = ix == 0 || ix == nx - 1 || iy == 0 || iy == ny - 1;
        }
        if (on_edge) boundary_max = std::max(boundary_max, mu_density(inst, spec.node(i)));
    }
    out.discontinuity_flag = boundary_max > 0;
    return out;
}

ParabolaFit fit_parabola(const GridMeasure& m, double rel_cutoff) {
    const GridSpec& g = m.grid();
    const Vector center = barycenter(m);
    const double cutoff = rel_cutoff * linf_density(m);
    // Normal equations for density ~ peak - coeff * r2.
    double n = 0, sr = 0, srr = 0, su = 0, sru = 0;
    int count = 0;
    for (int i = 0; i < m.size(); ++i) {
        const double u = m.density(i);
        if (u <= cutoff) continue;
        const double r2 = (g.node(i) - center).squaredNorm();
        n += 1;
        sr += r2;
        srr += r2 * r2;
        su += u;
        sru += r2 * u;
        ++count;
    }
    ParabolaFit fit;
    fit.support_nodes = count;
    const double det = n * srr - sr * sr;
    if (count >= 3 && std::abs(det) > 1e-300) {
        fit.peak = (su * srr - sru * sr) / det;
        fit.coeff = (fit.peak * sr - sru) / srr;
    }
    return fit;
}

}  // namespace otmin
