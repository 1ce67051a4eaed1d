#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <utility>
#include <vector>

#include "bldg/common.hpp"

namespace bldg {

// Planar metric coordinates (one UTM zone assumed; no reprojection here).
struct Point {
    double x = 0.0;
    double y = 0.0;
};

inline bool finite(const Point& p) { return std::isfinite(p.x) && std::isfinite(p.y); }

inline double distance(const Point& a, const Point& b) {
    return std::hypot(a.x - b.x, a.y - b.y);
}

// Ring of >= 3 vertices, implicitly closed (no repeated closing vertex).
struct Polygon {
    std::vector<Point> ring;

    void validate() const {
        require(ring.size() >= 3, "polygon needs >= 3 vertices, got ", ring.size());
        for (const auto& p : ring)
            require(finite(p), "polygon vertex is not finite");
        for (std::size_t i = 0; i < ring.size(); ++i) {
            const Point& a = ring[i];
            const Point& b = ring[(i + 1) % ring.size()];
            require(a.x != b.x || a.y != b.y, "polygon has consecutive duplicate vertices");
        }
    }
};

struct Envelope {
    Point min;
    Point max;

    void validate() const {
        require(finite(min) && finite(max), "envelope corner is not finite");
        require(min.x <= max.x && min.y <= max.y, "envelope min exceeds max");
    }

    double width() const { return max.x - min.x; }
    double height() const { return max.y - min.y; }

    bool contains(const Envelope& other) const {
        return min.x <= other.min.x && min.y <= other.min.y &&
               max.x >= other.max.x && max.y >= other.max.y;
    }
};

// Axis-aligned bounding box of the vertices, expanded by `buffer` meters on
// all four sides.
inline Envelope buffered_envelope(const Polygon& polygon, double buffer) {
    polygon.validate();
    require(buffer >= 0.0, "buffer must be >= 0, got ", buffer);
    Envelope env{polygon.ring.front(), polygon.ring.front()};
    for (const Point& p : polygon.ring) {
        env.min.x = std::min(env.min.x, p.x);
        env.min.y = std::min(env.min.y, p.y);
        env.max.x = std::max(env.max.x, p.x);
        env.max.y = std::max(env.max.y, p.y);
    }
    env.min.x -= buffer;
    env.min.y -= buffer;
    env.max.x += buffer;
    env.max.y += buffer;
    return env;
}

inline Point centroid(const Envelope& env) {
    env.validate();
    return {(env.min.x + env.max.x) * 0.5, (env.min.y + env.max.y) * 0.5};
}

struct Triangulation {
    std::vector<Point> points;
    std::vector<std::array<int, 3>> triangles;
};

// Twice the signed area of (a, b, c); > 0 for counterclockwise order.
inline double orient2d(const Point& a, const Point& b, const Point& c) {
    return (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
}

// In-circle determinant for a counterclockwise triangle (a, b, c) and query
// point d; > 0 when d lies strictly inside the circumcircle.
inline double incircle_det(const Point& a, const Point& b, const Point& c, const Point& d) {
    const double adx = a.x - d.x, ady = a.y - d.y;
    const double bdx = b.x - d.x, bdy = b.y - d.y;
    const double cdx = c.x - d.x, cdy = c.y - d.y;
    const double ad = adx * adx + ady * ady;
    const double bd = bdx * bdx + bdy * bdy;
    const double cd = cdx * cdx + cdy * cdy;
    return adx * (bdy * cd - bd * cdy) - ady * (bdx * cd - bd * cdx) + ad * (bdx * cdy - bdy * cdx);
}

namespace detail {

constexpr double kPredicateTol = 1e-12;

struct BwTriangle {
    int a, b, c;  // counterclockwise
    bool alive = true;
};

}  // namespace detail

// Incremental Bowyer-Watson over a super-triangle. Points are inserted in
// input order; cocircular ties resolve by that order (either diagonal of a
// cocircular quad is valid output). Inputs are mean-centered before any
// predicate is evaluated so UTM-scale offsets do not degrade the
// determinant tolerance.
inline Triangulation delaunay(std::span<const Point> points) {
    const int n = static_cast<int>(points.size());
    if (n < 3) throw DegenerateGeometry(concat("delaunay needs >= 3 points, got ", n));
    for (const Point& p : points)
        require(finite(p), "delaunay: point is not finite");

    Point mean{0.0, 0.0};
    for (const Point& p : points) {
        mean.x += p.x;
        mean.y += p.y;
    }
    mean.x /= n;
    mean.y /= n;

    std::vector<Point> pts(points.size() + 3);
    double radius = 0.0;
    for (int i = 0; i < n; ++i) {
        pts[i] = {points[i].x - mean.x, points[i].y - mean.y};
        radius = std::max(radius, std::max(std::abs(pts[i].x), std::abs(pts[i].y)));
    }

    {
        // Degeneracy screen: duplicates and all-collinear sets are rejected.
        std::vector<int> order(n);
        for (int i = 0; i < n; ++i) order[i] = i;
        std::sort(order.begin(), order.end(), [&](int i, int j) {
            return pts[i].x != pts[j].x ? pts[i].x < pts[j].x : pts[i].y < pts[j].y;
        });
        for (int i = 0; i + 1 < n; ++i) {
            const Point& a = pts[order[i]];
            const Point& b = pts[order[i + 1]];
            if (a.x == b.x && a.y == b.y)
                throw DegenerateGeometry("delaunay: duplicate points");
        }
        const double scale = std::max(radius, 1.0);
        const double span_tol = scale * scale * detail::kPredicateTol;
        bool non_collinear = false;
        for (int i = 2; i < n && !non_collinear; ++i)
            non_collinear = std::abs(orient2d(pts[order[0]], pts[order[n - 1]], pts[order[i - 1]])) > span_tol;
        if (!non_collinear) throw DegenerateGeometry("delaunay: all points collinear");
    }

    const double r = std::max(radius, 1.0) * 16.0;
    pts[n] = {0.0, 4.0 * r};
    pts[n + 1] = {-4.0 * r, -4.0 * r};
    pts[n + 2] = {4.0 * r, -4.0 * r};

    std::vector<detail::BwTriangle> tris;
    tris.push_back({n, n + 1, n + 2});

    std::vector<int> bad;
    std::vector<std::pair<int, int>> boundary;
    for (int ip = 0; ip < n; ++ip) {
        const Point& p = pts[ip];
        bad.clear();
        for (int t = 0; t < static_cast<int>(tris.size()); ++t) {
            if (!tris[t].alive) continue;
            if (incircle_det(pts[tris[t].a], pts[tris[t].b], pts[tris[t].c], p) > detail::kPredicateTol)
                bad.push_back(t);
        }
        // Cavity boundary: directed edges of bad triangles whose reverse is
        // not produced by another bad triangle.
        boundary.clear();
        for (int t : bad) {
            const std::array<std::pair<int, int>, 3> edges{
                std::pair{tris[t].a, tris[t].b}, {tris[t].b, tris[t].c}, {tris[t].c, tris[t].a}};
            for (const auto& e : edges) {
                bool shared = false;
                for (int u : bad) {
                    if (u == t) continue;
                    const auto& q = tris[u];
                    if ((q.a == e.second && q.b == e.first) || (q.b == e.second && q.c == e.first) ||
                        (q.c == e.second && q.a == e.first)) {
                        shared = true;
                        break;
                    }
                }
                if (!shared) boundary.push_back(e);
            }
        }
        for (int t : bad) tris[t].alive = false;
        for (const auto& e : boundary) {
            detail::BwTriangle t{e.first, e.second, ip};
            if (orient2d(pts[t.a], pts[t.b], pts[t.c]) < 0.0) std::swap(t.b, t.c);
            tris.push_back(t);
        }
    }

    Triangulation out;
    out.points.assign(points.begin(), points.end());
    for (const auto& t : tris) {
        if (!t.alive || t.a >= n || t.b >= n || t.c >= n) continue;
        std::array<int, 3> tri{t.a, t.b, t.c};
        if (orient2d(pts[tri[0]], pts[tri[1]], pts[tri[2]]) <= 0.0) std::swap(tri[1], tri[2]);
        out.triangles.push_back(tri);
    }
    std::sort(out.triangles.begin(), out.triangles.end(), [](const auto& s, const auto& t) {
        auto key = [](const std::array<int, 3>& x) {
            std::array<int, 3> k = x;
            std::sort(k.begin(), k.end());
            return k;
        };
        return key(s) < key(t);
    });
    return out;
}

// Unique undirected edges (i < j), sorted lexicographically.
inline std::vector<std::pair<int, int>> triangulation_edges(const Triangulation& t) {
    const int n = static_cast<int>(t.points.size());
    std::vector<std::pair<int, int>> edges;
    edges.reserve(t.triangles.size() * 3);
    for (const auto& tri : t.triangles) {
        for (int k = 0; k < 3; ++k) {
            int i = tri[k];
            int j = tri[(k + 1) % 3];
            require(i >= 0 && i < n && j >= 0 && j < n, "triangulation vertex index out of range");
            require(i != j, "triangulation has a degenerate edge");
            if (i > j) std::swap(i, j);
            edges.emplace_back(i, j);
        }
    }
    std::sort(edges.begin(), edges.end());
    edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
    return edges;
}

}  // namespace bldg
