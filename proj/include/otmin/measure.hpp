#pragma once

#include <Eigen/Core>
#include <array>
#include <functional>
#include <iosfwd>
#include <string>

#include "otmin/errors.hpp"

namespace otmin {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Regular cell-centered grid over an axis-aligned box in R^d, d in {1,2}.
/// Node i sits at lower + (i + 1/2) * spacing per axis, so nodes never touch
/// the boundary. Node indices are lexicographic in (x, y): index = ix*ny + iy.
class GridSpec {
public:
    GridSpec() = default;  // empty placeholder; use the factories
    static GridSpec interval(double lower, double upper, int points);
    static GridSpec box2d(double lx, double ly, double ux, double uy, int nx, int ny);

    int dim() const { return dim_; }
    int num_nodes() const { return num_nodes_; }
    int points(int axis) const { return n_[axis]; }
    double lower(int axis) const { return lower_[axis]; }
    double upper(int axis) const { return upper_[axis]; }
    double spacing(int axis) const { return spacing_[axis]; }
    double max_spacing() const;
    double cell_volume() const { return cell_volume_; }
    /// Euclidean length of the box diagonal |upper - lower|.
    double diameter() const;

    double node_coord(int i, int axis) const;
    Vector node(int i) const;
    /// All node coordinates as an (num_nodes x dim) matrix.
    Matrix nodes() const;
    /// Index of the node closest to point p.
    int nearest_node(const Vector& p) const;

    bool same_grid(const GridSpec& other) const;

private:
    int dim_ = 0;
    int num_nodes_ = 0;
    std::array<int, 2> n_{0, 0};
    std::array<double, 2> lower_{0, 0};
    std::array<double, 2> upper_{0, 0};
    std::array<double, 2> spacing_{0, 0};
    double cell_volume_ = 0;
};

/// Probability measure on a GridSpec: one nonnegative weight (mass) per node,
/// summing to 1. Densities are derived as weight / cell_volume. Immutable.
class GridMeasure {
public:
    /// Negative entries are rejected; totals farther than 1e-12 from 1 are
    /// renormalized silently.
    static GridMeasure from_weights(const GridSpec& spec, Vector weights);
    static GridMeasure uniform(const GridSpec& spec);
    static GridMeasure atom(const GridSpec& spec, int node);

    const GridSpec& grid() const { return spec_; }
    const Vector& weights() const { return weights_; }
    double weight(int i) const { return weights_[i]; }
    double density(int i) const { return weights_[i] / spec_.cell_volume(); }
    Vector densities() const { return weights_ / spec_.cell_volume(); }
    int size() const { return static_cast<int>(weights_.size()); }

private:
    GridMeasure(const GridSpec& spec, Vector w) : spec_(spec), weights_(std::move(w)) {}
    GridSpec spec_;
    Vector weights_;
};

constexpr double kMassTolerance = 1e-12;

/// Samples density_fn at the grid nodes, multiplies by cell volume and
/// renormalizes to unit mass.
GridMeasure build_from_density(const GridSpec& spec,
                               const std::function<double(const Vector&)>& density_fn);

Vector barycenter(const GridMeasure& m);
double second_moment(const GridMeasure& m);
double linf_density(const GridMeasure& m);

/// L1 distance between densities on a shared grid: integral of |u_a - u_b|,
/// equal to the total-variation-style sum of |weight differences|.
double l1_distance(const GridMeasure& a, const GridMeasure& b);

/// CSV layout: header, then one row per node: index, x, (y,), weight, density.
void write_measure_csv(const GridMeasure& m, std::ostream& out);
void write_measure_csv(const GridMeasure& m, const std::string& path);
GridMeasure read_measure_csv(std::istream& in);
GridMeasure read_measure_csv(const std::string& path);

}  // namespace otmin
