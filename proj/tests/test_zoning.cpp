#include <doctest.h>

#include <algorithm>
#include <set>

#include "geop2p/rng.hpp"
#include "geop2p/zoning.hpp"

using namespace geop2p;

namespace {
const Rect universe{{0, 0}, {100, 100}};
}

TEST_CASE("zone id path algebra") {
    const ZoneId z{{2, 0, 1}};
    CHECK(z.parent() == ZoneId{{2, 0}});
    CHECK(z.branch_at(2) == 0);
    CHECK(ZoneId::common_depth(z, ZoneId{{2, 3}}) == 1);
    CHECK(ZoneId{}.is_universe());
    CHECK_THROWS_AS(z.branch_at(4), std::out_of_range);
    CHECK_THROWS_AS(ZoneId{}.parent(), std::out_of_range);
    CHECK(ZoneId{{2, 0}}.is_prefix_of(z));
    CHECK_FALSE(z.is_prefix_of(ZoneId{{2, 0}}));
}

TEST_CASE("zone id wire encoding round-trips") {
    Rng rng(3);
    for (int i = 0; i < 50; ++i) {
        std::vector<std::uint8_t> path;
        const int len = int(rng.below(6));
        for (int j = 0; j < len; ++j) path.push_back(std::uint8_t(rng.below(256)));
        const ZoneId z{path};
        std::vector<std::uint8_t> buf;
        z.encode(buf);
        CHECK(buf.size() == path.size() + 1);
        std::size_t off = 0;
        CHECK(ZoneId::decode(buf, off) == z);
        CHECK(off == buf.size());
    }
}

TEST_CASE("region containment") {
    const Region rect = Region::rectangular(Rect{{0, 0}, {1, 1}});
    CHECK(region_contains_point(rect, {0.5, 0.5}, universe));

    const Region rem = Region::remainder(Rect{{0, 0}, {4, 4}}, {Rect{{0, 0}, {2, 2}}});
    CHECK_FALSE(region_contains_point(rem, {1, 1}, universe));
    CHECK(region_contains_point(rem, {3, 3}, universe));
}

TEST_CASE("region-area intersection, including documented over-approximation") {
    const Region rect = Region::rectangular(Rect{{0, 0}, {1, 1}});
    CHECK(region_intersects_rect(rect, Rect{{0.5, 0}, {2, 1}}));

    const Region rem1 = Region::remainder(Rect{{0, 0}, {4, 4}}, {Rect{{0, 0}, {2, 2}}});
    CHECK_FALSE(region_intersects_rect(rem1, Rect{{0.5, 0.5}, {1, 1}}));

    // query spanning two excluded rects: truly empty intersection but the
    // predicate may (and here does) say true
    const Region rem2 = Region::remainder(
        Rect{{0, 0}, {4, 4}}, {Rect{{0, 0}, {2, 2}}, Rect{{2, 0}, {4, 2}}});
    CHECK(region_intersects_rect(rem2, Rect{{1, 0.5}, {3, 1.5}}));
}

TEST_CASE("region intersect never misses a real intersection (sampled)") {
    Rng rng(17);
    for (int trial = 0; trial < 80; ++trial) {
        const Region rem = Region::remainder(
            Rect{{0, 0}, {8, 8}},
            {Rect{{0, 0}, {rng.uniform(1, 4), rng.uniform(1, 4)}},
             Rect{{rng.uniform(4, 6), 4}, {8, 8}}});
        const double x0 = rng.uniform(0, 7), y0 = rng.uniform(0, 7);
        const Rect area{{x0, y0}, {x0 + rng.uniform(0.1, 3), y0 + rng.uniform(0.1, 3)}};
        bool really = false;
        for (int i = 0; i < 40 && !really; ++i)
            for (int j = 0; j < 40 && !really; ++j) {
                const Point p{area.min.x + (area.max.x - area.min.x) * i / 40,
                              area.min.y + (area.max.y - area.min.y) * j / 40};
                if (region_contains_point(rem, p, Rect{{0, 0}, {8, 8}})) really = true;
            }
        if (really)
            CHECK(region_intersects_rect(rem, area));
    }
}

TEST_CASE("split_zone quantile midpoints") {
    SUBCASE("four peers, two parts, cut at 2") {
        const Rect bounds{{0, 0}, {4, 1}};
        const std::vector<Point> peers{{0.5, 0.5}, {1.5, 0.5}, {2.5, 0.5}, {3.5, 0.5}};
        const auto parts = split_zone(bounds, peers, 2);
        REQUIRE(parts.size() == 2);
        CHECK(parts[0] == Rect{{0, 0}, {2, 1}});
        CHECK(parts[1] == Rect{{2, 0}, {4, 1}});
    }
    SUBCASE("square ties cut along x") {
        const Rect bounds{{0, 0}, {1, 1}};
        const std::vector<Point> peers{{0.25, 0.9}, {0.75, 0.1}};
        const auto parts = split_zone(bounds, peers, 2);
        REQUIRE(parts.size() == 2);
        CHECK(parts[0].max.x == 0.5);
        CHECK(parts[0].max.y == 1.0);
    }
    SUBCASE("longer dimension is y") {
        const Rect bounds{{0, 0}, {1, 4}};
        const std::vector<Point> peers{{0.5, 0.5}, {0.5, 1.5}, {0.5, 2.5}, {0.5, 3.5}};
        const auto parts = split_zone(bounds, peers, 4);
        REQUIRE(parts.size() == 4);
        CHECK(parts[0].max.y == 1.0);
        CHECK(parts[1].max.y == 2.0);
        CHECK(parts[2].max.y == 3.0);
    }
    SUBCASE("coincident quantile neighbours are unsplittable") {
        const Rect bounds{{0, 0}, {4, 1}};
        const std::vector<Point> peers{{1, 0.5}, {1, 0.6}, {1, 0.7}, {3, 0.5}};
        CHECK_THROWS_AS(split_zone(bounds, peers, 2), UnsplittableZone);
    }
}

TEST_CASE("split_zone partitions and balances random inputs") {
    Rng rng(29);
    for (int trial = 0; trial < 100; ++trial) {
        const Rect bounds{{0, 0}, {rng.uniform(1, 20), rng.uniform(1, 20)}};
        const int n = 4 + int(rng.below(40));
        std::vector<Point> peers;
        for (int i = 0; i < n; ++i)
            peers.push_back({rng.uniform(bounds.min.x, bounds.max.x),
                             rng.uniform(bounds.min.y, bounds.max.y)});
        const int m = 2 + int(rng.below(3));
        if (m > n) continue;
        const auto parts = split_zone(bounds, peers, m);
        REQUIRE(int(parts.size()) == m);

        // exact partition of the bounds
        double total = 0;
        for (const Rect& p : parts) total += p.area();
        CHECK(total == doctest::Approx(bounds.area()));

        // every peer in exactly one part; counts balanced within 1
        std::vector<int> counts(parts.size(), 0);
        for (const Point& p : peers) {
            int owner = -1;
            for (std::size_t i = 0; i < parts.size(); ++i)
                if (rect_contains_point(parts[i], p)) {
                    CHECK(owner == -1);
                    owner = int(i);
                }
            REQUIRE(owner >= 0);
            counts[owner]++;
        }
        const auto [lo, hi] = std::minmax_element(counts.begin(), counts.end());
        CHECK(*hi - *lo <= 1);
    }
}

namespace {

int count_in(const std::vector<std::pair<PeerAddr, Point>>& peers, const Rect& r) {
    int n = 0;
    for (const auto& [a, p] : peers)
        if (rect_contains_point(r, p)) ++n;
    return n;
}

} // namespace

TEST_CASE("cluster_zone separates two dense blobs") {
    ZoningConfig cfg;
    cfg.k = 4;
    cfg.theta_h = 12;
    cfg.theta_l = 4;
    cfg.division_mode = DivisionMode::incremental;
    cfg.scheme = Scheme::clustering;

    std::vector<std::pair<PeerAddr, Point>> peers;
    Rng rng(41);
    PeerAddr next = 1;
    for (int i = 0; i < 10; ++i)
        peers.push_back({next++, {rng.uniform(1, 2), rng.uniform(1, 2)}});
    for (int i = 0; i < 10; ++i)
        peers.push_back({next++, {rng.uniform(90, 91), rng.uniform(90, 91)}});
    peers.push_back({next++, {50, 10}});
    peers.push_back({next++, {10, 60}});
    peers.push_back({next++, {70, 55}});

    const auto res = cluster_zone(Region::rectangular(universe), peers, cfg);
    REQUIRE(res.clusters.size() == 2);
    CHECK(res.remainder_peers.size() == 3);
    for (const Rect& c : res.clusters)
        CHECK(count_in(peers, c) == 10);
    CHECK_FALSE(rect_intersects_rect(res.clusters[0], res.clusters[1]));
}

TEST_CASE("cluster_zone soundness on uniform peers") {
    ZoningConfig cfg;
    cfg.k = 4;
    cfg.theta_h = 12;
    cfg.theta_l = 4;
    cfg.division_mode = DivisionMode::incremental;
    cfg.scheme = Scheme::clustering;

    Rng rng(43);
    std::vector<std::pair<PeerAddr, Point>> peers;
    for (PeerAddr a = 1; a <= 30; ++a)
        peers.push_back({a, {rng.uniform(0, 100), rng.uniform(0, 100)}});

    const auto res = cluster_zone(Region::rectangular(universe), peers, cfg);
    REQUIRE(!res.clusters.empty());
    CHECK(res.clusters.size() <= std::size_t(cfg.k - 1));

    std::set<PeerAddr> seen;
    std::size_t clustered = 0;
    for (const Rect& c : res.clusters) {
        const int n = count_in(peers, c);
        CHECK(n >= cfg.theta_l);
        CHECK(n <= cfg.theta_h);
        clustered += n;
        for (const auto& [a, p] : peers)
            if (rect_contains_point(c, p))
                CHECK(seen.insert(a).second); // disjoint clusters
    }
    CHECK(clustered + res.remainder_peers.size() == peers.size());
    for (PeerAddr a : res.remainder_peers)
        CHECK_FALSE(seen.count(a));
}

TEST_CASE("cluster_zone keeps a non-empty remainder even for one tight blob") {
    ZoningConfig cfg;
    cfg.k = 4;
    cfg.theta_h = 12;
    cfg.theta_l = 4;
    cfg.division_mode = DivisionMode::incremental;
    cfg.scheme = Scheme::clustering;

    Rng rng(47);
    std::vector<std::pair<PeerAddr, Point>> peers;
    for (PeerAddr a = 1; a <= 13; ++a)
        peers.push_back({a, {rng.uniform(40, 60), rng.uniform(40, 60)}});

    const auto res = cluster_zone(Region::rectangular(universe), peers, cfg);
    std::size_t clustered = 0;
    for (const Rect& c : res.clusters) {
        CHECK(count_in(peers, c) <= cfg.theta_h);
        clustered += count_in(peers, c);
    }
    CHECK(clustered <= 12);
    CHECK(res.remainder_peers.size() >= 1);
    CHECK(clustered + res.remainder_peers.size() == 13);
}

TEST_CASE("zoning config invariants") {
    ZoningConfig cfg;
    cfg.k = 4;
    cfg.theta_h = 16;
    cfg.theta_l = 4;
    CHECK_NOTHROW(cfg.validate());
    cfg.theta_h = 15;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.division_mode = DivisionMode::incremental;
    cfg.theta_h = 9;
    CHECK_NOTHROW(cfg.validate());
    cfg.theta_h = 8;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.k = 1;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}
