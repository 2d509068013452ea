#include "geop2p/geometry.hpp"

#include <algorithm>

namespace geop2p {

double distance(const Point& p, const Point& q) {
    return std::hypot(p.x - q.x, p.y - q.y);
}

bool rect_contains_point(const Rect& r, const Point& p) {
    return p.x >= r.min.x && p.x < r.max.x && p.y >= r.min.y && p.y < r.max.y;
}

bool rect_contains_point_in(const Rect& r, const Point& p, const Rect& universe) {
    const bool in_x = (p.x >= r.min.x && p.x < r.max.x) ||
                      (p.x == r.max.x && r.max.x == universe.max.x && p.x >= r.min.x);
    const bool in_y = (p.y >= r.min.y && p.y < r.max.y) ||
                      (p.y == r.max.y && r.max.y == universe.max.y && p.y >= r.min.y);
    return in_x && in_y;
}

bool rect_intersects_rect(const Rect& a, const Rect& b) {
    return a.min.x < b.max.x && b.min.x < a.max.x &&
           a.min.y < b.max.y && b.min.y < a.max.y;
}

bool circle_intersects_rect(const Circle& c, const Rect& r) {
    if (rect_contains_point(r, c.center))
        return true;
    const double cx = std::clamp(c.center.x, r.min.x, r.max.x);
    const double cy = std::clamp(c.center.y, r.min.y, r.max.y);
    return distance({cx, cy}, c.center) < c.radius;
}

bool circle_contains_point(const Circle& c, const Point& p) {
    return distance(c.center, p) <= c.radius;
}

} // namespace geop2p
