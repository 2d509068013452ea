#include <doctest.h>

#include <algorithm>
#include <set>

#include "geop2p/simnet.hpp"

using namespace geop2p;

namespace {

const Rect kUniverse{{0, 0}, {1000, 1000}};

ZoningConfig cfg_of(int k, int th, int tl, Scheme scheme,
                    DivisionMode mode = DivisionMode::complete) {
    ZoningConfig cfg;
    cfg.k = k;
    cfg.theta_h = th;
    cfg.theta_l = tl;
    cfg.scheme = scheme;
    cfg.division_mode = mode;
    cfg.validate();
    return cfg;
}

Simulator make_sim(const ZoningConfig& cfg, std::uint64_t seed, double t = 1e9) {
    NetModel net;
    ProtocolParams params;
    params.refresh_period = t;
    return Simulator(kUniverse, cfg, net, params, seed);
}

// With an active refresh period, strict quiescence may never occur (the
// per-peer ticks interleave); step by a bounded horizon instead.
void settle(Simulator& sim, double horizon) {
    sim.run_until(sim.now() + horizon);
}

PeerAddr build_overlay(Simulator& sim, const std::vector<Point>& coords,
                       double step = 0.0) {
    const PeerAddr seed_peer = sim.spawn_seed_peer(coords[0]);
    if (step == 0.0)
        sim.run_to_quiescence();
    else
        settle(sim, step);
    for (std::size_t i = 1; i < coords.size(); ++i) {
        sim.spawn_joining_peer(sim.now() + 1.0, coords[i], seed_peer);
        if (step == 0.0)
            sim.run_to_quiescence();
        else
            settle(sim, step);
    }
    return seed_peer;
}

std::vector<Point> uniform_coords(int n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<Point> out;
    for (int i = 0; i < n; ++i)
        out.push_back({rng.uniform(0, 1000), rng.uniform(0, 1000)});
    return out;
}

bool query_exact(Simulator& sim, const Rect& area, double horizon = 0.0) {
    const auto qid = sim.inject_query(sim.now() + 1, kNoPeer,
                                      Message{AreaMsgAll{area, 1, Payload::text("q")}},
                                      "area_all");
    if (horizon == 0.0)
        sim.run_to_quiescence();
    else
        settle(sim, horizon);
    const auto& rec = sim.queries().at(qid);
    std::multiset<PeerAddr> got;
    for (const auto& [p, h] : rec.delivered) got.insert(p);
    return got == std::multiset<PeerAddr>(rec.expected.begin(), rec.expected.end());
}

} // namespace

TEST_CASE("graceful leave purges the departed peer immediately") {
    Simulator sim = make_sim(cfg_of(2, 8, 2, Scheme::splitting), 21);
    build_overlay(sim, {{100, 100}, {200, 200}, {300, 300}});
    sim.schedule_leave(sim.now() + 1, 2, true);
    sim.run_to_quiescence();
    REQUIRE(sim.peers().size() == 2);
    CHECK_FALSE(sim.peers().at(1).table().has_leaf(2));
    CHECK_FALSE(sim.peers().at(3).table().has_leaf(2));
    const auto report = sim.ground_truth().audit_tables(sim.peers(), sim.now(), 1e9);
    INFO(report.summary());
    CHECK(report.ok());
}

TEST_CASE("dropping below theta_L merges into the rect-compatible sibling") {
    Simulator sim = make_sim(cfg_of(2, 8, 3, Scheme::splitting), 22);
    // 10 peers: one split expected, zones of 5
    build_overlay(sim, uniform_coords(10, 2024));
    REQUIRE(sim.ground_truth().max_leaf_depth() == 1);

    // shrink one zone below theta_L = 3
    const ZoneId left = sim.ground_truth().leaf_zone_of(
        sim.peers().at(1).coord());
    std::vector<PeerAddr> members = sim.ground_truth().zone_members(left);
    REQUIRE(members.size() == 5);
    sim.schedule_leave(sim.now() + 1, members[0], true);
    sim.run_to_quiescence();
    sim.schedule_leave(sim.now() + 1, members[1], true);
    sim.run_to_quiescence();
    sim.schedule_leave(sim.now() + 1, members[2], true);
    sim.run_to_quiescence();

    REQUIRE(!sim.merges().empty());
    CHECK(sim.ground_truth().max_leaf_depth() == 0); // retraction: only child folds up
    const auto report = sim.ground_truth().audit_tables(sim.peers(), sim.now(), 1e9);
    INFO(report.summary());
    CHECK(report.ok());
    CHECK(query_exact(sim, kUniverse));
}

TEST_CASE("merging into a subdivided partner collapses it first") {
    Simulator sim = make_sim(cfg_of(2, 8, 3, Scheme::splitting), 23);
    // 4 peers on the left, 4 on the right: split leaves two zones of 4
    std::vector<Point> coords;
    Rng rng(31);
    for (int i = 0; i < 4; ++i)
        coords.push_back({rng.uniform(50, 350), rng.uniform(0, 1000)});
    for (int i = 0; i < 4; ++i)
        coords.push_back({rng.uniform(650, 950), rng.uniform(0, 1000)});
    build_overlay(sim, coords);
    REQUIRE(sim.ground_truth().max_leaf_depth() == 1);

    // grow the right side until it splits again (depth 2 under the right zone)
    std::vector<Point> more;
    for (int i = 0; i < 5; ++i)
        more.push_back({rng.uniform(650, 950), rng.uniform(0, 1000)});
    for (const Point& p : more) {
        sim.spawn_joining_peer(sim.now() + 1.0, p, 1);
        sim.run_to_quiescence();
    }
    REQUIRE(sim.ground_truth().max_leaf_depth() == 2);

    // now drain the left zone below theta_L; its partner is subdivided
    const ZoneId left = sim.ground_truth().leaf_zone_of({100, 500});
    std::vector<PeerAddr> members = sim.ground_truth().zone_members(left);
    REQUIRE(members.size() == 4);
    sim.schedule_leave(sim.now() + 1, members[0], true);
    sim.run_to_quiescence();
    sim.schedule_leave(sim.now() + 1, members[1], true);
    sim.run_to_quiescence();

    CHECK(!sim.collapses().empty());
    CHECK(!sim.merges().empty());
    const auto report = sim.ground_truth().audit_tables(sim.peers(), sim.now(), 1e9);
    INFO(report.summary());
    CHECK(report.ok());
    CHECK(query_exact(sim, kUniverse));
    CHECK(query_exact(sim, Rect{{0, 0}, {500, 500}}));
}

TEST_CASE("crash departure is detected within the refresh period") {
    const double t = 300.0;
    Simulator sim = make_sim(cfg_of(2, 8, 2, Scheme::splitting), 24, t);
    build_overlay(sim, uniform_coords(12, 4242), 120.0);
    const SimTime start = sim.now();

    // pick a peer with zone mates and crash it
    PeerAddr victim = kNoPeer;
    for (const auto& [a, p] : sim.peers())
        if (!p.table().leaf_row().empty()) {
            victim = a;
            break;
        }
    REQUIRE(victim != kNoPeer);
    sim.schedule_leave(start + 1, victim, false);
    sim.run_until(start + 3 * t);

    for (const auto& [a, p] : sim.peers())
        CHECK_FALSE(p.table().has_leaf(victim));
    const auto report = sim.ground_truth().audit_tables(sim.peers(), sim.now(), t);
    INFO(report.summary());
    CHECK(report.ok());
}

TEST_CASE("piggybacked traffic spares buckets from explicit refresh") {
    const double t = 400.0;
    auto run = [&](bool traffic) {
        Simulator sim = make_sim(cfg_of(2, 8, 2, Scheme::splitting), 25, t);
        build_overlay(sim, uniform_coords(12, 777));
        // builds are fast; the first per-peer ticks are still ahead
        if (traffic) {
            for (int i = 0; i < 10; ++i)
                sim.inject_query(sim.now() + 1 + 0.5 * i, kNoPeer,
                                 Message{ZoneBroadcast{1, Payload::text("b")}},
                                 "zone_broadcast");
            sim.run_to_quiescence();
        }
        const std::uint64_t before = sim.sent();
        sim.run_until(sim.now() + 2 * t);
        return sim.sent() - before;
    };
    const std::uint64_t idle = run(false);
    const std::uint64_t busy = run(true);
    CHECK(busy < idle);
}

TEST_CASE("clustering overlay with blobs: audit, remainders, queries") {
    Simulator sim =
        make_sim(cfg_of(4, 12, 3, Scheme::clustering, DivisionMode::incremental), 26);
    Rng rng(41);
    std::vector<Point> coords;
    const Point blobs[3] = {{150, 150}, {800, 200}, {500, 820}};
    for (int i = 0; i < 60; ++i) {
        const Point c = blobs[i % 3];
        coords.push_back({c.x + rng.uniform(-80, 80), c.y + rng.uniform(-80, 80)});
    }
    build_overlay(sim, coords);
    REQUIRE(sim.peers().size() == 60);

    // remainders must exist in the tree
    bool saw_remainder = false;
    for (const SplitEvent& e : sim.splits())
        for (const auto& [b, region] : e.subzones)
            saw_remainder |= region.is_remainder();
    CHECK(saw_remainder);

    const auto report = sim.ground_truth().audit_tables(sim.peers(), sim.now(), 1e9);
    INFO(report.summary());
    CHECK(report.ok());

    Rng qr(43);
    for (int i = 0; i < 25; ++i) {
        const double x0 = qr.uniform(0, 800), y0 = qr.uniform(0, 800);
        CHECK(query_exact(sim, Rect{{x0, y0},
                                    {x0 + qr.uniform(20, 350), y0 + qr.uniform(20, 350)}}));
    }
}

TEST_CASE("cluster underflow merges into the remainder") {
    const double t = 400.0;
    Simulator sim =
        make_sim(cfg_of(4, 12, 3, Scheme::clustering, DivisionMode::incremental), 27, t);
    Rng rng(51);
    std::vector<Point> coords;
    for (int i = 0; i < 26; ++i) {
        const Point c = i % 2 ? Point{200, 200} : Point{750, 750};
        coords.push_back({c.x + rng.uniform(-100, 100), c.y + rng.uniform(-100, 100)});
    }
    build_overlay(sim, coords, 100.0);

    // find a rectangular (cluster) leaf zone and drain it below theta_L
    ZoneId cluster_zone_id;
    std::vector<PeerAddr> members;
    for (const auto& [a, p] : sim.peers()) {
        if (!p.table().self_leaf_boundary().is_remainder() && p.table().depth() >= 1) {
            cluster_zone_id = sim.ground_truth().leaf_zone_of(p.coord());
            members = sim.ground_truth().zone_members(cluster_zone_id);
            if (members.size() >= 3)
                break;
            members.clear();
        }
    }
    REQUIRE(!members.empty());
    while (members.size() > 2) {
        sim.schedule_leave(sim.now() + 1, members.back(), true);
        members.pop_back();
        settle(sim, 200.0);
    }
    REQUIRE(!sim.merges().empty());
    // the surviving column is the remainder, or the last merge folded the
    // zone up into its parent outright
    bool merged_into_remainder = false;
    for (const MergeEvent& e : sim.merges()) {
        const ZoneNode* parent = sim.ground_truth().find(e.parent);
        merged_into_remainder |=
            e.new_region.is_remainder() ||
            (parent && parent->region.bounds == e.new_region.bounds);
    }
    CHECK(merged_into_remainder);
    settle(sim, 2 * t); // let refresh repair stale fronts
    const auto report = sim.ground_truth().audit_tables(sim.peers(), sim.now(), t);
    INFO(report.summary());
    CHECK(report.ok());
    CHECK(query_exact(sim, kUniverse, 200.0));
}

TEST_CASE("join into an empty remainder zone is sponsored from a sibling") {
    const double t = 300.0;
    Simulator sim =
        make_sim(cfg_of(4, 16, 4, Scheme::clustering, DivisionMode::incremental), 28, t);
    Rng rng(61);
    std::vector<Point> coords;
    for (int i = 0; i < 8; ++i)
        coords.push_back({rng.uniform(50, 250), rng.uniform(50, 250)});
    for (int i = 0; i < 9; ++i)
        coords.push_back({rng.uniform(750, 950), rng.uniform(750, 950)});
    build_overlay(sim, coords, 100.0);
    REQUIRE(sim.ground_truth().max_leaf_depth() >= 1);

    // the sprinkle-free division leaves the remainder empty; join into it
    const ZoneId rem = sim.ground_truth().leaf_zone_of({500, 120});
    CHECK(sim.ground_truth().zone_members(rem).empty());

    const PeerAddr novice = sim.spawn_joining_peer(sim.now() + 1, {500, 120}, 1);
    settle(sim, 150.0);
    REQUIRE(sim.ground_truth().is_live(novice));
    CHECK(sim.peers().at(novice).table().self_leaf_boundary().is_remainder());
    CHECK(sim.ground_truth().leaf_zone_of({500, 120}) ==
          sim.peers().at(novice).table().zone_id());

    // let refresh spread the new contact, then queries must see it
    settle(sim, 3 * t);
    CHECK(query_exact(sim, Rect{{450, 70}, {550, 170}}, 200.0));
    CHECK(query_exact(sim, kUniverse, 200.0));
    const auto report = sim.ground_truth().audit_tables(sim.peers(), sim.now(), t);
    INFO(report.summary());
    CHECK(report.ok());
}

TEST_CASE("churn then quiet: tables repair and queries return to exact") {
    const double t = 300.0;
    Simulator sim = make_sim(cfg_of(2, 8, 2, Scheme::splitting), 29, t);
    build_overlay(sim, uniform_coords(30, 9001), 120.0);

    ChurnSpec churn;
    churn.join_rate = 1.0 / t;
    churn.leave_rate = 1.0 / t;
    churn.graceful_fraction = 0.0; // crashes only
    const SimTime start = sim.now() + 1;
    sim.schedule_churn(churn, start, 8 * t);
    sim.run_until(start + 8 * t);

    settle(sim, 2 * t); // quiet period

    const auto report = sim.ground_truth().audit_tables(sim.peers(), sim.now(), t);
    INFO(report.summary());
    CHECK(report.ok());
    Rng qr(71);
    for (int i = 0; i < 15; ++i) {
        const double x0 = qr.uniform(0, 700), y0 = qr.uniform(0, 700);
        CHECK(query_exact(sim,
                          Rect{{x0, y0},
                               {x0 + qr.uniform(50, 300), y0 + qr.uniform(50, 300)}},
                          200.0));
    }
}
