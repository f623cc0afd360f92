#include "otmin/measure.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <vector>

namespace otmin {

namespace {

void format_g17(std::string& out, double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    out += buf;
}

}  // namespace

GridSpec GridSpec::interval(double lower, double upper, int points) {
    if (!(upper > lower)) throw Error("GridSpec: upper must exceed lower");
    if (points < 1) throw Error("GridSpec: need at least one node per axis");
    GridSpec s;
    s.dim_ = 1;
    s.n_ = {points, 1};
    s.lower_ = {lower, 0.0};
    s.upper_ = {upper, 0.0};
    s.spacing_ = {(upper - lower) / points, 0.0};
    s.cell_volume_ = s.spacing_[0];
    s.num_nodes_ = points;
    return s;
}

GridSpec GridSpec::box2d(double lx, double ly, double ux, double uy, int nx, int ny) {
    if (!(ux > lx) || !(uy > ly)) throw Error("GridSpec: upper must exceed lower");
    if (nx < 1 || ny < 1) throw Error("GridSpec: need at least one node per axis");
    GridSpec s;
    s.dim_ = 2;
    s.n_ = {nx, ny};
    s.lower_ = {lx, ly};
    s.upper_ = {ux, uy};
    s.spacing_ = {(ux - lx) / nx, (uy - ly) / ny};
    s.cell_volume_ = s.spacing_[0] * s.spacing_[1];
    s.num_nodes_ = nx * ny;
    return s;
}

double GridSpec::max_spacing() const {
    return dim_ == 1 ? spacing_[0] : std::max(spacing_[0], spacing_[1]);
}

double GridSpec::diameter() const {
    double d2 = 0;
    for (int a = 0; a < dim_; ++a) {
        const double e = upper_[a] - lower_[a];
        d2 += e * e;
    }
    return std::sqrt(d2);
}

double GridSpec::node_coord(int i, int axis) const {
    const int idx = dim_ == 1 ? i : (axis == 0 ? i / n_[1] : i % n_[1]);
    return lower_[axis] + (idx + 0.5) * spacing_[axis];
}

Vector GridSpec::node(int i) const {
    Vector p(dim_);
    for (int a = 0; a < dim_; ++a) p[a] = node_coord(i, a);
    return p;
}

Matrix GridSpec::nodes() const {
    Matrix out(num_nodes_, dim_);
    for (int i = 0; i < num_nodes_; ++i)
        for (int a = 0; a < dim_; ++a) out(i, a) = node_coord(i, a);
    return out;
}

int GridSpec::nearest_node(const Vector& p) const {
    std::array<int, 2> idx{0, 0};
    for (int a = 0; a < dim_; ++a) {
        int k = static_cast<int>(std::floor((p[a] - lower_[a]) / spacing_[a]));
        idx[a] = std::min(std::max(k, 0), n_[a] - 1);
    }
    return dim_ == 1 ? idx[0] : idx[0] * n_[1] + idx[1];
}

bool GridSpec::same_grid(const GridSpec& o) const {
    if (dim_ != o.dim_) return false;
    for (int a = 0; a < dim_; ++a) {
        if (n_[a] != o.n_[a] || lower_[a] != o.lower_[a] || upper_[a] != o.upper_[a])
            return false;
    }
    return true;
}

GridMeasure GridMeasure::from_weights(const GridSpec& spec, Vector weights) {
    if (weights.size() != spec.num_nodes())
        throw Error("GridMeasure: weight count does not match grid");
    for (int i = 0; i < weights.size(); ++i) {
        if (weights[i] < 0.0)
            throw NegativeDensity("GridMeasure: negative weight at node " + std::to_string(i));
        if (!std::isfinite(weights[i]))
            throw Error("GridMeasure: non-finite weight at node " + std::to_string(i));
    }
    const double total = weights.sum();
    if (total <= 0.0) throw AllZeroDensity("GridMeasure: total mass is zero");
    if (std::abs(total - 1.0) > kMassTolerance) weights /= total;
    return GridMeasure(spec, std::move(weights));
}

GridMeasure GridMeasure::uniform(const GridSpec& spec) {
    return from_weights(spec, Vector::Constant(spec.num_nodes(), 1.0 / spec.num_nodes()));
}

GridMeasure GridMeasure::atom(const GridSpec& spec, int node) {
    Vector w = Vector::Zero(spec.num_nodes());
    w[node] = 1.0;
    return from_weights(spec, std::move(w));
}

GridMeasure build_from_density(const GridSpec& spec,
                               const std::function<double(const Vector&)>& density_fn) {
    Vector w(spec.num_nodes());
    for (int i = 0; i < spec.num_nodes(); ++i) {
        const double d = density_fn(spec.node(i));
        if (d < 0.0)
            throw NegativeDensity("build_from_density: negative density at node " +
                                  std::to_string(i));
        w[i] = d * spec.cell_volume();
    }
    if (w.sum() <= 0.0)
        throw AllZeroDensity("build_from_density: density vanishes at every grid node");
    return GridMeasure::from_weights(spec, std::move(w));
}

Vector barycenter(const GridMeasure& m) {
    const GridSpec& g = m.grid();
    Vector b = Vector::Zero(g.dim());
    for (int i = 0; i < m.size(); ++i)
        for (int a = 0; a < g.dim(); ++a) b[a] += m.weight(i) * g.node_coord(i, a);
    return b;
}

double second_moment(const GridMeasure& m) {
    const GridSpec& g = m.grid();
    double s = 0;
    for (int i = 0; i < m.size(); ++i) {
        double n2 = 0;
        for (int a = 0; a < g.dim(); ++a) {
            const double c = g.node_coord(i, a);
            n2 += c * c;
        }
        s += m.weight(i) * n2;
    }
    return s;
}

double linf_density(const GridMeasure& m) {
    return m.weights().maxCoeff() / m.grid().cell_volume();
}

double l1_distance(const GridMeasure& a, const GridMeasure& b) {
    if (!a.grid().same_grid(b.grid())) throw Error("l1_distance: measures live on different grids");
    return (a.weights() - b.weights()).cwiseAbs().sum();
}

void write_measure_csv(const GridMeasure& m, std::ostream& out) {
    const GridSpec& g = m.grid();
    std::string line;
    out << (g.dim() == 1 ? "index,x,weight,density\n" : "index,x,y,weight,density\n");
    for (int i = 0; i < m.size(); ++i) {
        line.clear();
        line += std::to_string(i);
        for (int a = 0; a < g.dim(); ++a) {
            line += ',';
            format_g17(line, g.node_coord(i, a));
        }
        line += ',';
        format_g17(line, m.weight(i));
        line += ',';
        format_g17(line, m.density(i));
        line += '\n';
        out << line;
    }
}

void write_measure_csv(const GridMeasure& m, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot open for writing: " + path);
    write_measure_csv(m, f);
}

namespace {

std::vector<double> split_csv_row(const std::string& line) {
    std::vector<double> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(std::stod(cell));
    return out;
}

}  // namespace

GridMeasure read_measure_csv(std::istream& in) {
    std::string header;
    if (!std::getline(in, header)) throw IoError("measure CSV: empty stream");
    int dim;
    if (header == "index,x,weight,density") dim = 1;
    else if (header == "index,x,y,weight,density") dim = 2;
    else throw IoError("measure CSV: unrecognized header '" + header + "'");

    std::vector<double> xs, ys, ws;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto row = split_csv_row(line);
        if (static_cast<int>(row.size()) != dim + 3)
            throw IoError("measure CSV: wrong column count in row");
        xs.push_back(row[1]);
        if (dim == 2) ys.push_back(row[2]);
        ws.push_back(row[dim + 1]);
    }
    const int n = static_cast<int>(ws.size());
    if (n == 0) throw IoError("measure CSV: no data rows");

    // Reconstruct the regular grid from node coordinates and validate that
    // they are affine in the index.
    GridSpec spec = GridSpec::interval(0, 1, 1);
    if (dim == 1) {
        const double h = n > 1 ? xs[1] - xs[0] : 1.0;
        if (h <= 0) throw IoError("measure CSV: nodes not increasing");
        spec = GridSpec::interval(xs[0] - 0.5 * h, xs[0] - 0.5 * h + n * h, n);
    } else {
        int ny = 1;
        while (ny < n && std::abs(ys[ny] - ys[0]) > 1e-12 * (1 + std::abs(ys[0]))) ++ny;
        // ys cycles with period ny along the x-major enumeration
        if (n % ny != 0) throw IoError("measure CSV: irregular 2d node layout");
        const int nx = n / ny;
        const double hy = ny > 1 ? ys[1] - ys[0] : 1.0;
        const double hx = nx > 1 ? xs[ny] - xs[0] : 1.0;
        if (hx <= 0 || hy <= 0) throw IoError("measure CSV: nodes not increasing");
        spec = GridSpec::box2d(xs[0] - 0.5 * hx, ys[0] - 0.5 * hy,
                               xs[0] - 0.5 * hx + nx * hx, ys[0] - 0.5 * hy + ny * hy,
                               nx, ny);
    }
    for (int i = 0; i < n; ++i) {
        const double tol = 1e-9 * (1 + spec.max_spacing());
        if (std::abs(spec.node_coord(i, 0) - xs[i]) > tol ||
            (dim == 2 && std::abs(spec.node_coord(i, 1) - ys[i]) > tol))
            throw IoError("measure CSV: node coordinates are not a regular grid");
    }
    Vector w(n);
    for (int i = 0; i < n; ++i) w[i] = ws[i];
    return GridMeasure::from_weights(spec, std::move(w));
}

GridMeasure read_measure_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open for reading: " + path);
    return read_measure_csv(f);
}

}  // namespace otmin
