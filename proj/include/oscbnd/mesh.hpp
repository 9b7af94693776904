#pragma once

// Structured, boundary-fitted triangulations of the limit rectangle, the
// perturbed domain and the truncated cell strip.
//
// All meshes are (ncols x nrows) quad grids mapped to the physical domain and
// split into triangles.  Quads left of a period centre use the "/" diagonal and
// quads right of it the "\" diagonal, so every mesh is mirror symmetric about
// each period centre and each period boundary.

#include <oscbnd/error.hpp>
#include <oscbnd/profile.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

namespace oscbnd {

struct Point {
    double x = 0.0;
    double y = 0.0;
};

enum class BoundaryTag { GammaEps, Gamma0, Gamma1, Gamma2eps, Gamma3eps, StripBottom, StripTop, StripSideL, StripSideR };

inline const char* tag_name(BoundaryTag t) {
    switch (t) {
    case BoundaryTag::GammaEps: return "GammaEps";
    case BoundaryTag::Gamma0: return "Gamma0";
    case BoundaryTag::Gamma1: return "Gamma1";
    case BoundaryTag::Gamma2eps: return "Gamma2eps";
    case BoundaryTag::Gamma3eps: return "Gamma3eps";
    case BoundaryTag::StripBottom: return "StripBottom";
    case BoundaryTag::StripTop: return "StripTop";
    case BoundaryTag::StripSideL: return "StripSideL";
    case BoundaryTag::StripSideR: return "StripSideR";
    }
    return "?";
}

struct BoundaryEdge {
    int a;
    int b;
    BoundaryTag tag;
};

/// Index layout of a structured mesh: vertex (col, row) has index
/// row * (ncols + 1) + col.
struct GridLayout {
    int ncols = 0;
    int nrows = 0;
    int cols_per_period = 0;  // diagonal pattern period
    int index(int col, int row) const { return row * (ncols + 1) + col; }
    bool slash(int col) const { return (col % cols_per_period) < cols_per_period / 2; }
};

struct Mesh {
    std::vector<Point> vertices;
    std::vector<std::array<int, 3>> triangles;
    std::vector<BoundaryEdge> boundary_edges;
    std::optional<GridLayout> grid;

    std::size_t num_vertices() const { return vertices.size(); }
    std::size_t num_triangles() const { return triangles.size(); }

    double signed_area(std::size_t t) const {
        const auto& tri = triangles[t];
        const Point& a = vertices[static_cast<std::size_t>(tri[0])];
        const Point& b = vertices[static_cast<std::size_t>(tri[1])];
        const Point& c = vertices[static_cast<std::size_t>(tri[2])];
        return 0.5 * ((b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y));
    }
    double total_area() const {
        double s = 0.0;
        for (std::size_t t = 0; t < triangles.size(); ++t) s += signed_area(t);
        return s;
    }
    /// Sorted unique vertex indices on edges carrying any of the given tags.
    std::vector<int> tagged_vertices(std::initializer_list<BoundaryTag> tags) const {
        return tagged_vertices(std::vector<BoundaryTag>(tags));
    }
    std::vector<int> tagged_vertices(const std::vector<BoundaryTag>& tags) const {
        std::vector<int> v;
        for (const auto& e : boundary_edges)
            if (std::find(tags.begin(), tags.end(), e.tag) != tags.end()) {
                v.push_back(e.a);
                v.push_back(e.b);
            }
        std::sort(v.begin(), v.end());
        v.erase(std::unique(v.begin(), v.end()), v.end());
        return v;
    }
};

/// eps = 1/(2N+1) built from the integer period count only.
class EpsilonParam {
public:
    explicit EpsilonParam(int n) : n_(n) {
        if (n < 1) throw Error("EpsilonParam: N must be a positive integer");
    }
    int N() const { return n_; }
    int periods() const { return 2 * n_ + 1; }
    double eps() const { return 1.0 / static_cast<double>(periods()); }

private:
    int n_;
};

struct MeshOptions {
    int cells_per_half_period = 8;
    double h_bulk = 1.0 / 32.0;
    double grading = 1.15;
    int layer_rows = 0;           // rows across the oscillation layer; 0 -> cells_per_half_period
    double first_spacing = 0.0;   // first row spacing above x2 = 0 (in the mesh's own units); 0 -> column width
    int refine = 0;               // uniform bisections of the parameter grid
    std::vector<double> rows_above;  // explicit row heights above 0 (strip units); overrides grading
};

namespace detail {

/// Heights 0 = y_0 < y_1 < ... < y_m = top with spacing growing geometrically
/// from `first` by `grading` and capped at `cap`.
inline std::vector<double> graded_rows(double first, double grading, double cap, double top) {
    if (!(first > 0.0) || !(cap > 0.0) || grading < 1.0 || !(top > 0.0)) throw Error("graded_rows: bad parameters");
    std::vector<double> y{0.0};
    double s = std::min(first, cap);
    while (y.back() + s < top - 0.5 * s) {
        y.push_back(y.back() + s);
        s = std::min(s * grading, cap);
    }
    y.push_back(top);
    return y;
}

inline std::vector<double> bisect(const std::vector<double>& y, int times) {
    std::vector<double> out = y;
    for (int r = 0; r < times; ++r) {
        std::vector<double> next;
        next.reserve(2 * out.size());
        for (std::size_t i = 0; i + 1 < out.size(); ++i) {
            next.push_back(out[i]);
            next.push_back(0.5 * (out[i] + out[i + 1]));
        }
        next.push_back(out.back());
        out = std::move(next);
    }
    return out;
}

struct GridTags {
    BoundaryTag bottom, top, left, right;
};

/// Builds the triangulation of a (ncols x nrows) grid given the vertex map.
template <class VertexMap>
Mesh structured_mesh(int ncols, int nrows, int cols_per_period, VertexMap&& vertex_at, GridTags tags) {
    Mesh m;
    GridLayout g{ncols, nrows, cols_per_period};
    m.vertices.reserve(static_cast<std::size_t>((ncols + 1) * (nrows + 1)));
    for (int j = 0; j <= nrows; ++j)
        for (int i = 0; i <= ncols; ++i) m.vertices.push_back(vertex_at(i, j));
    m.triangles.reserve(static_cast<std::size_t>(2 * ncols * nrows));
    for (int j = 0; j < nrows; ++j)
        for (int i = 0; i < ncols; ++i) {
            const int v00 = g.index(i, j), v10 = g.index(i + 1, j), v01 = g.index(i, j + 1), v11 = g.index(i + 1, j + 1);
            if (g.slash(i)) {
                m.triangles.push_back({v00, v10, v11});
                m.triangles.push_back({v00, v11, v01});
            } else {
                m.triangles.push_back({v00, v10, v01});
                m.triangles.push_back({v10, v11, v01});
            }
        }
    for (int i = 0; i < ncols; ++i) m.boundary_edges.push_back({g.index(i, 0), g.index(i + 1, 0), tags.bottom});
    for (int j = 0; j < nrows; ++j) m.boundary_edges.push_back({g.index(ncols, j), g.index(ncols, j + 1), tags.right});
    for (int i = ncols; i > 0; --i) m.boundary_edges.push_back({g.index(i, nrows), g.index(i - 1, nrows), tags.top});
    for (int j = nrows; j > 0; --j) m.boundary_edges.push_back({g.index(0, j), g.index(0, j - 1), tags.left});
    m.grid = g;
    for (std::size_t t = 0; t < m.triangles.size(); ++t)
        if (!(m.signed_area(t) > 0.0)) throw Error("mesh: nonpositive triangle area");
    return m;
}

} // namespace detail

/// Limit domain (-1/2,1/2) x (0,1); bottom Gamma0, top Gamma1, sides Gamma2eps / Gamma3eps.
inline Mesh mesh_limit_domain(double h) {
    if (!(h > 0.0 && h < 1.0)) throw Error("mesh_limit_domain: need 0 < h < 1");
    int n = static_cast<int>(std::ceil(1.0 / h - 1e-9));
    if (n % 2) ++n;  // even column count keeps the mesh symmetric about x1 = 0
    const double dx = 1.0 / n;
    return detail::structured_mesh(
        n, n, n, [&](int i, int j) { return Point{-0.5 + i * dx, j * dx}; },
        {BoundaryTag::Gamma0, BoundaryTag::Gamma1, BoundaryTag::Gamma2eps, BoundaryTag::Gamma3eps});
}

/// Row heights above x2 = 0 of the perturbed-domain mesh (before refinement).
inline std::vector<double> perturbed_rows_above(const EpsilonParam& eps, const MeshOptions& o) {
    const double dx = eps.eps() / (2.0 * o.cells_per_half_period);
    const double first = o.first_spacing > 0.0 ? o.first_spacing : dx;
    return detail::graded_rows(first, o.grading, o.h_bulk, 1.0);
}

/// Perturbed domain: rectangle (-1/2,1/2) x (0,1) plus the layer
/// eps F(x1/eps) < x2 <= 0.  Columns are aligned with the 2N+1 periods.
inline Mesh mesh_perturbed_domain(const Profile& p, const EpsilonParam& eps, const MeshOptions& o) {
    if (o.cells_per_half_period < 4) throw Error("mesh_perturbed_domain: cells_per_half_period must be >= 4");
    const int r = 1 << o.refine;
    const int cpp = 2 * o.cells_per_half_period * r;
    const int ncols = eps.periods() * cpp;
    const int nlayer = (o.layer_rows > 0 ? o.layer_rows : o.cells_per_half_period) * r;
    const std::vector<double> above = detail::bisect(perturbed_rows_above(eps, o), o.refine);
    const int nrows = nlayer + static_cast<int>(above.size()) - 1;
    const double e = eps.eps();
    const double dx = 1.0 / ncols;
    Mesh m = detail::structured_mesh(
        ncols, nrows, cpp,
        [&](int i, int j) {
            // x1 from the integer column index so period boundaries are exact.
            const double x1 = -0.5 + i * dx;
            if (j <= nlayer) {
                const double t = static_cast<double>(j) / nlayer;
                const double xi1 = (static_cast<double>(i) / cpp) - 0.5 * eps.periods();
                return Point{x1, e * p(xi1) * (1.0 - t)};
            }
            return Point{x1, above[static_cast<std::size_t>(j - nlayer)]};
        },
        {BoundaryTag::GammaEps, BoundaryTag::Gamma1, BoundaryTag::Gamma2eps, BoundaryTag::Gamma3eps});
    return m;
}

struct StripOptions {
    int cells_per_half_period = 8;
    double grading = 1.15;
    double cap = 0.25;            // maximal row spacing
    int layer_rows = 0;           // 0 -> cells_per_half_period
    double first_spacing = 0.0;   // 0 -> column width
    int refine = 0;
    std::vector<double> rows_above;  // explicit heights 0 = y_0 < ... < y_m = T; overrides grading
};

/// Truncated cell strip: one period xi1 in (-1/2,1/2), F(xi1) < xi2 < T.
inline Mesh mesh_strip(const Profile& p, double T, const StripOptions& o) {
    if (T < 3.0 && o.rows_above.empty()) throw Error("mesh_strip: need T >= 3");
    if (o.grading < 1.0) throw Error("mesh_strip: grading must be >= 1");
    if (o.cells_per_half_period < 2) throw Error("mesh_strip: cells_per_half_period must be >= 2");
    const int r = 1 << o.refine;
    const int ncols = 2 * o.cells_per_half_period * r;
    const int nlayer = (o.layer_rows > 0 ? o.layer_rows : o.cells_per_half_period) * r;
    std::vector<double> above;
    if (!o.rows_above.empty()) {
        above = o.rows_above;
        if (above.front() != 0.0) throw Error("mesh_strip: explicit rows must start at 0");
        for (std::size_t i = 1; i < above.size(); ++i)
            if (!(above[i] > above[i - 1])) throw Error("mesh_strip: explicit rows must increase");
    } else {
        const double first = o.first_spacing > 0.0 ? o.first_spacing : 1.0 / (2.0 * o.cells_per_half_period);
        above = detail::graded_rows(first, o.grading, o.cap, T);
    }
    above = detail::bisect(above, o.refine);
    const int nrows = nlayer + static_cast<int>(above.size()) - 1;
    return detail::structured_mesh(
        ncols, nrows, ncols,
        [&](int i, int j) {
            const double xi1 = static_cast<double>(i) / ncols - 0.5;
            if (j <= nlayer) {
                const double t = static_cast<double>(j) / nlayer;
                return Point{xi1, p(xi1) * (1.0 - t)};
            }
            return Point{xi1, above[static_cast<std::size_t>(j - nlayer)]};
        },
        {BoundaryTag::StripBottom, BoundaryTag::StripTop, BoundaryTag::StripSideL, BoundaryTag::StripSideR});
}

/// Number of layer rows (below xi2 = 0 / x2 = 0) of a structured mesh built above.
inline int layer_row_count(int cells_per_half_period, int layer_rows, int refine) {
    return (layer_rows > 0 ? layer_rows : cells_per_half_period) * (1 << refine);
}

struct MeshCheck {
    bool positive_areas = true;
    bool conforming = true;       // interior edges shared by exactly two triangles
    bool boundary_matches = true; // tagged edges == edges with one triangle
    std::string message;
    bool ok() const { return positive_areas && conforming && boundary_matches; }
};

inline MeshCheck check_mesh(const Mesh& m) {
    MeshCheck c;
    for (std::size_t t = 0; t < m.triangles.size(); ++t)
        if (!(m.signed_area(t) > 0.0)) {
            c.positive_areas = false;
            c.message = "triangle " + std::to_string(t) + " has nonpositive area";
        }
    std::map<std::pair<int, int>, int> count;
    for (const auto& tri : m.triangles)
        for (int k = 0; k < 3; ++k) {
            int a = tri[static_cast<std::size_t>(k)], b = tri[static_cast<std::size_t>((k + 1) % 3)];
            if (a > b) std::swap(a, b);
            ++count[{a, b}];
        }
    std::map<std::pair<int, int>, int> tagged;
    for (const auto& e : m.boundary_edges) ++tagged[{std::min(e.a, e.b), std::max(e.a, e.b)}];
    for (const auto& [edge, n] : count) {
        if (n > 2) {
            c.conforming = false;
            c.message = "edge shared by more than two triangles";
        }
        const bool on_boundary = tagged.count(edge) > 0;
        if ((n == 1) != on_boundary) {
            c.boundary_matches = false;
            c.message = "boundary edge set does not match the topological boundary";
        }
    }
    for (const auto& [edge, n] : tagged)
        if (n != 1 || !count.count(edge)) {
            c.boundary_matches = false;
            c.message = "tagged edge not in mesh or tagged twice";
        }
    return c;
}

/// Plain-text export: "vertices n" / "x y" lines, "triangles m" / "i j k",
/// "bedges b" / "i j tag".
inline void write_mesh(std::ostream& os, const Mesh& m) {
    char buf[96];
    os << "vertices " << m.vertices.size() << '\n';
    for (const auto& v : m.vertices) {
        std::snprintf(buf, sizeof buf, "%.17g %.17g\n", v.x, v.y);
        os << buf;
    }
    os << "triangles " << m.triangles.size() << '\n';
    for (const auto& t : m.triangles) os << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
    os << "bedges " << m.boundary_edges.size() << '\n';
    for (const auto& e : m.boundary_edges) os << e.a << ' ' << e.b << ' ' << tag_name(e.tag) << '\n';
}

/// Locates points in a structured mesh whose columns are uniform in x and
/// whose rows are straight within each column.
class GridLocator {
public:
    explicit GridLocator(const Mesh& m) : mesh_(&m) {
        if (!m.grid) throw Error("GridLocator: mesh has no grid layout");
        g_ = *m.grid;
        x0_ = m.vertices[static_cast<std::size_t>(g_.index(0, 0))].x;
        x1_ = m.vertices[static_cast<std::size_t>(g_.index(g_.ncols, 0))].x;
    }

    struct Hit {
        int triangle = -1;
        std::array<double, 3> bary{};  // barycentric weights of the triangle's vertices
    };

    double y_min(double x) const { return row_height(column(x), 0, x); }
    double y_max(double x) const { return row_height(column(x), g_.nrows, x); }

    /// Triangle containing (x, y); points slightly outside are clamped.
    Hit locate(double x, double y) const {
        const int i = column(x);
        int lo = 0, hi = g_.nrows;  // row_height(lo) <= y < row_height(hi)
        if (y <= row_height(i, 0, x)) hi = 1;
        else if (y >= row_height(i, g_.nrows, x)) lo = g_.nrows - 1;
        else
            while (hi - lo > 1) {
                const int mid = (lo + hi) / 2;
                if (row_height(i, mid, x) <= y) lo = mid;
                else hi = mid;
            }
        if (hi - lo > 1) hi = lo + 1;
        const int j = lo;
        const int quad = 2 * (j * g_.ncols + i);
        // Pick the half of the quad by the sign relative to its diagonal.
        const auto& v = mesh_->vertices;
        const int v00 = g_.index(i, j), v10 = g_.index(i + 1, j), v01 = g_.index(i, j + 1), v11 = g_.index(i + 1, j + 1);
        int t = quad;
        if (g_.slash(i)) {
            // diagonal v00 -> v11; first triangle lies below it
            if (orient(v[static_cast<std::size_t>(v00)], v[static_cast<std::size_t>(v11)], {x, y}) > 0.0) t = quad + 1;
        } else {
            // diagonal v10 -> v01; first triangle lies below it, on its left
            if (orient(v[static_cast<std::size_t>(v10)], v[static_cast<std::size_t>(v01)], {x, y}) < 0.0) t = quad + 1;
        }
        Hit h;
        h.triangle = t;
        h.bary = barycentric(static_cast<std::size_t>(t), x, y);
        return h;
    }

    std::array<double, 3> barycentric(std::size_t t, double x, double y) const {
        const auto& tri = mesh_->triangles[t];
        const Point& a = mesh_->vertices[static_cast<std::size_t>(tri[0])];
        const Point& b = mesh_->vertices[static_cast<std::size_t>(tri[1])];
        const Point& c = mesh_->vertices[static_cast<std::size_t>(tri[2])];
        const double det = (b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y);
        const double l1 = ((x - a.x) * (c.y - a.y) - (c.x - a.x) * (y - a.y)) / det;
        const double l2 = ((b.x - a.x) * (y - a.y) - (x - a.x) * (b.y - a.y)) / det;
        return {1.0 - l1 - l2, l1, l2};
    }

    const Mesh& mesh() const { return *mesh_; }

private:
    int column(double x) const {
        const double s = (x - x0_) / (x1_ - x0_) * g_.ncols;
        return std::clamp(static_cast<int>(std::floor(s)), 0, g_.ncols - 1);
    }
    double row_height(int i, int j, double x) const {
        const Point& a = mesh_->vertices[static_cast<std::size_t>(g_.index(i, j))];
        const Point& b = mesh_->vertices[static_cast<std::size_t>(g_.index(i + 1, j))];
        const double t = (x - a.x) / (b.x - a.x);
        return (1.0 - t) * a.y + t * b.y;
    }
    static double orient(const Point& a, const Point& b, const Point& p) {
        return (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
    }

    const Mesh* mesh_;
    GridLayout g_;
    double x0_ = 0.0, x1_ = 1.0;
};

} // namespace oscbnd
