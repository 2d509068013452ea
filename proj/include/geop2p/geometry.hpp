#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace geop2p {

// 2-D point. Coordinates are plain doubles; all comparisons in this
// module are exact, never epsilon-based, so that zone assignment is
// deterministic.
struct Point {
    double x = 0.0;
    double y = 0.0;

    friend bool operator==(const Point&, const Point&) = default;
};

inline bool is_finite(const Point& p) {
    return std::isfinite(p.x) && std::isfinite(p.y);
}

// Axis-aligned rectangle with half-open containment: a point belongs to
// the rect iff min <= p < max on both axes. Sibling zones that share an
// edge therefore never both contain a boundary point.
struct Rect {
    Point min;
    Point max;

    friend bool operator==(const Rect&, const Rect&) = default;

    double width() const { return max.x - min.x; }
    double height() const { return max.y - min.y; }
    double area() const { return width() * height(); }
    Point center() const { return {(min.x + max.x) / 2.0, (min.y + max.y) / 2.0}; }
};

inline bool is_valid(const Rect& r) {
    return is_finite(r.min) && is_finite(r.max) && r.min.x < r.max.x && r.min.y < r.max.y;
}

struct Circle {
    Point center;
    double radius = 0.0;

    friend bool operator==(const Circle&, const Circle&) = default;
};

double distance(const Point& p, const Point& q);

// Half-open: min inclusive, max exclusive.
bool rect_contains_point(const Rect& r, const Point& p);

// Like rect_contains_point, but edges of `r` that coincide with the far
// edges of `universe` are treated as closed. The universe has no sibling
// to claim its boundary, so peers sitting exactly on its max edges must
// still belong somewhere.
bool rect_contains_point_in(const Rect& r, const Point& p, const Rect& universe);

// True iff the intersection has positive area; edge-adjacent rects do
// not intersect.
bool rect_intersects_rect(const Rect& a, const Rect& b);

// True iff some point of the (half-open) rect lies inside the closed
// disc. Exact: clamps the center into the rect and compares distances.
bool circle_intersects_rect(const Circle& c, const Rect& r);

// Closed disc: boundary points are contained.
bool circle_contains_point(const Circle& c, const Point& p);

} // namespace geop2p
