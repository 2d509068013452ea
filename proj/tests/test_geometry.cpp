#include <doctest.h>

#include <cmath>
#include <vector>

#include "geop2p/geometry.hpp"
#include "geop2p/rng.hpp"

using namespace geop2p;

namespace {
const Rect unit{{0, 0}, {1, 1}};
}

TEST_CASE("rect_contains_point is half-open") {
    CHECK(rect_contains_point(unit, {0.5, 0.5}));
    CHECK_FALSE(rect_contains_point(unit, {1.0, 0.5}));
    CHECK(rect_contains_point(unit, {0.0, 0.0}));
    CHECK_FALSE(rect_contains_point(unit, {0.5, 1.0}));
}

TEST_CASE("universe far edges are closed for containment") {
    const Rect universe{{0, 0}, {4, 4}};
    const Rect corner{{2, 2}, {4, 4}};
    CHECK(rect_contains_point_in(corner, {4.0, 3.0}, universe));
    CHECK(rect_contains_point_in(corner, {4.0, 4.0}, universe));
    CHECK_FALSE(rect_contains_point_in(corner, {4.0, 1.0}, universe));
    // interior rect: no closure
    const Rect inner{{0, 0}, {2, 2}};
    CHECK_FALSE(rect_contains_point_in(inner, {2.0, 1.0}, universe));
}

TEST_CASE("rect_intersects_rect wants positive overlap") {
    CHECK(rect_intersects_rect(unit, unit));
    CHECK_FALSE(rect_intersects_rect(unit, Rect{{1, 0}, {2, 1}}));
    CHECK(rect_intersects_rect(Rect{{0, 0}, {2, 2}}, Rect{{1, 1}, {3, 3}}));
}

TEST_CASE("rect_intersects_rect symmetric and reflexive on random rects") {
    Rng rng(7);
    for (int i = 0; i < 200; ++i) {
        auto mk = [&] {
            const double x0 = rng.uniform(0, 10), y0 = rng.uniform(0, 10);
            return Rect{{x0, y0}, {x0 + rng.uniform(0.01, 5), y0 + rng.uniform(0.01, 5)}};
        };
        const Rect a = mk(), b = mk();
        CHECK(rect_intersects_rect(a, a));
        CHECK(rect_intersects_rect(a, b) == rect_intersects_rect(b, a));
    }
}

TEST_CASE("circle_intersects_rect basics") {
    CHECK(circle_intersects_rect(Circle{{0.5, 0.5}, 1.0}, unit));
    CHECK_FALSE(circle_intersects_rect(Circle{{3, 3}, 0.5}, unit));
    // clamp (2,0.5) -> (1,0.5), distance 1.0 < 1.01
    CHECK(circle_intersects_rect(Circle{{2, 0.5}, 1.01}, unit));
    CHECK_FALSE(circle_intersects_rect(Circle{{2, 0.5}, 1.0}, unit));
}

TEST_CASE("circle_intersects_rect agrees with dense sampling") {
    Rng rng(11);
    for (int trial = 0; trial < 60; ++trial) {
        const double x0 = rng.uniform(0, 4), y0 = rng.uniform(0, 4);
        const Rect r{{x0, y0}, {x0 + rng.uniform(0.05, 2), y0 + rng.uniform(0.05, 2)}};
        const Circle c{{rng.uniform(0, 6), rng.uniform(0, 6)}, rng.uniform(0.05, 2)};
        bool sampled_hit = false;
        const int n = 64;
        for (int i = 0; i < n && !sampled_hit; ++i)
            for (int j = 0; j < n && !sampled_hit; ++j) {
                const Point p{r.min.x + (r.max.x - r.min.x) * i / n,
                              r.min.y + (r.max.y - r.min.y) * j / n};
                if (circle_contains_point(c, p)) sampled_hit = true;
            }
        if (sampled_hit)
            CHECK(circle_intersects_rect(c, r));
        // the converse may differ only within one sample cell of the boundary
    }
}

TEST_CASE("circle_contains_point closed boundary") {
    const Circle c{{0, 0}, 1};
    CHECK(circle_contains_point(c, {0, 0}));
    CHECK(circle_contains_point(c, {1, 0}));
    CHECK_FALSE(circle_contains_point(c, {1, 1}));
}

TEST_CASE("distance") {
    CHECK(distance({0, 0}, {0, 0}) == 0.0);
    CHECK(distance({0, 0}, {3, 4}) == 5.0);
    CHECK(distance({1, 1}, {2, 2}) == doctest::Approx(std::sqrt(2.0)));
}

TEST_CASE("half-open cuts partition a rect") {
    Rng rng(23);
    for (int trial = 0; trial < 100; ++trial) {
        const Rect r{{rng.uniform(0, 2), rng.uniform(0, 2)},
                     {2.1 + rng.uniform(0, 2), 2.1 + rng.uniform(0, 2)}};
        // random internal cuts along x
        std::vector<double> cuts;
        const int nc = 1 + int(rng.below(3));
        for (int i = 0; i < nc; ++i) cuts.push_back(rng.uniform(r.min.x, r.max.x));
        std::sort(cuts.begin(), cuts.end());
        std::vector<Rect> parts;
        double prev = r.min.x;
        for (double c : cuts) {
            if (c <= prev || c >= r.max.x) continue;
            parts.push_back(Rect{{prev, r.min.y}, {c, r.max.y}});
            prev = c;
        }
        parts.push_back(Rect{{prev, r.min.y}, {r.max.x, r.max.y}});
        for (int i = 0; i < 50; ++i) {
            const Point p{rng.uniform(r.min.x, r.max.x), rng.uniform(r.min.y, r.max.y)};
            int owners = 0;
            for (const Rect& part : parts)
                if (rect_contains_point(part, p)) ++owners;
            CHECK(owners == 1);
        }
    }
}
