#include "geop2p/runner.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

namespace geop2p {

using nlohmann::json;

namespace {

std::string fmt1(double v) {
    char buf[64];
    snprintf(buf, sizeof buf, "%.3f", v);
    return buf;
}

} // namespace

bool RunReport::all_passed() const {
    for (const CheckResult& c : checks)
        if (!c.pass) return false;
    return true;
}

std::string RunReport::queries_csv() const {
    std::string out = "qid,kind,issued,expected,delivered,misses,dupes,exact,hops_max,"
                      "hops_mean,depth_bound,hops_ok,during_churn\n";
    for (const QueryOutcome& q : queries) {
        char line[256];
        snprintf(line, sizeof line, "%llu,%s,%.3f,%d,%d,%d,%d,%d,%u,%.3f,%d,%d,%d\n",
                 (unsigned long long)q.qid, q.kind.c_str(), q.issued, q.expected_n,
                 q.delivered_n, q.misses, q.dupes, q.exact ? 1 : 0, q.hops_max,
                 q.hops_mean, q.depth_bound, q.hops_ok ? 1 : 0, q.during_churn ? 1 : 0);
        out += line;
    }
    return out;
}

std::string RunReport::summary_json() const {
    json j;
    j["trace"] = {{"hash", trace_hash}, {"lines", trace_lines}};
    j["depth"] = {{"peak", peak_depth}, {"final", final_depth}};
    j["wall_seconds"] = wall_seconds;
    j["events"] = events;
    j["messages"] = {{"sent", sent},
                     {"delivered", delivered},
                     {"dropped_loss", dropped_loss},
                     {"dropped_dead", dropped_dead}};
    j["live_peers"] = live_peers;
    j["topology"] = {{"splits", splits}, {"merges", merges}, {"collapses", collapses}};
    j["audit"] = {{"ok", audit_ok}, {"summary", audit_summary}};
    j["queries"] = {{"total", queries.size()}};
    json checks_j = json::array();
    for (const CheckResult& c : checks)
        checks_j.push_back({{"name", c.name}, {"pass", c.pass}, {"detail", c.detail}});
    j["checks"] = checks_j;
    return j.dump(2);
}

Runner::Runner(const Scenario& scenario)
    : scenario_(scenario), geometry_rng_(Rng::mix(scenario.seed, 0x9E0)) {
    scenario_.validate();
    ProtocolParams params;
    // construction always runs with refresh parked: the sequential joins
    // keep tables correct by themselves, and the run switches to the
    // configured period right after the overlay stands
    params.refresh_period = 1e9;
    params.bucket_capacity = scenario_.bucket_capacity;
    sim_ = std::make_unique<Simulator>(scenario_.universe, scenario_.zoning,
                                       scenario_.net, params, scenario_.seed);
    sim_->set_event_budget(scenario_.event_budget);
    static_run_ = true;
}

Runner::~Runner() = default;

void Runner::settle(double horizon_hint) {
    if (static_run_)
        sim_->run_to_quiescence();
    else
        sim_->run_until(sim_->now() + horizon_hint);
}

void Runner::build_overlay() {
    Rng coords_rng(Rng::mix(scenario_.seed, 0xC03D));
    // coordinates for the initial population come from the scenario's
    // distribution but a dedicated stream, so churn draws stay stable
    auto draw = [&]() -> Point {
        if (scenario_.coords.kind == CoordDist::Kind::uniform)
            return {coords_rng.uniform(scenario_.universe.min.x, scenario_.universe.max.x),
                    coords_rng.uniform(scenario_.universe.min.y, scenario_.universe.max.y)};
        const int blob = int(coords_rng.below(scenario_.coords.blobs));
        Rng blob_rng(Rng::mix(0xB10B, blob));
        const Rect& u = scenario_.universe;
        const Point center{blob_rng.uniform(u.min.x + u.width() * 0.1,
                                            u.max.x - u.width() * 0.1),
                           blob_rng.uniform(u.min.y + u.height() * 0.1,
                                            u.max.y - u.height() * 0.1)};
        const double sx = u.width() * scenario_.coords.spread;
        const double sy = u.height() * scenario_.coords.spread;
        Point p{center.x + coords_rng.uniform(-sx, sx),
                center.y + coords_rng.uniform(-sy, sy)};
        p.x = std::clamp(p.x, u.min.x, u.max.x - u.width() * 1e-9);
        p.y = std::clamp(p.y, u.min.y, u.max.y - u.height() * 1e-9);
        return p;
    };

    seed_peer_ = sim_->spawn_seed_peer(draw());
    settle(200.0);
    for (int i = 1; i < scenario_.n_initial; ++i) {
        sim_->spawn_joining_peer(sim_->now() + 1.0, draw(), seed_peer_);
        settle(200.0);
    }
    if (scenario_.refresh_period < 1e8) {
        sim_->set_refresh_period(scenario_.refresh_period);
        static_run_ = false;
    }
}

void Runner::run_churn_phase() {
    if (!scenario_.churn)
        return;
    const ChurnPhase& phase = *scenario_.churn;
    const SimTime start = sim_->now() + 1;
    sim_->schedule_churn(phase.spec, start, phase.duration);

    // probe queries during churn: ten small rect queries per refresh period
    const double period = scenario_.refresh_period;
    const int periods = std::max(1, int(phase.duration / period));
    for (int p = 0; p < periods; ++p)
        for (int i = 0; i < 10; ++i) {
            const SimTime at = start + p * period + (i + 1) * period / 12.0;
            const Rect& u = scenario_.universe;
            const double w = u.width() * 0.03, h = u.height() * 0.03;
            const double x0 = geometry_rng_.uniform(u.min.x, u.max.x - w);
            const double y0 = geometry_rng_.uniform(u.min.y, u.max.y - h);
            churn_probe_qids_.push_back(sim_->inject_query(
                at, kNoPeer,
                Message{AreaMsgAll{Rect{{x0, y0}, {x0 + w, y0 + h}}, 1, Payload::text("p")}},
                "area_all"));
        }

    sim_->run_until(start + phase.duration);
    // quiet time: two refresh periods for the tables to repair
    sim_->run_until(sim_->now() + 2 * period);
    // verification traffic runs loss-free
    sim_->set_loss_rate(0.0);
}

void Runner::inject_one(const WorkloadSpec& spec, bool during_churn) {
    const Rect& u = scenario_.universe;
    Message msg;
    if (spec.kind == "area_all" || spec.kind == "area_any") {
        const double w = u.width() * geometry_rng_.uniform(spec.min_side_frac,
                                                           spec.max_side_frac);
        const double h = u.height() * geometry_rng_.uniform(spec.min_side_frac,
                                                            spec.max_side_frac);
        const double x0 = geometry_rng_.uniform(u.min.x, u.max.x - w);
        const double y0 = geometry_rng_.uniform(u.min.y, u.max.y - h);
        const Rect area{{x0, y0}, {x0 + w, y0 + h}};
        if (spec.kind == "area_all")
            msg = Message{AreaMsgAll{area, 1, Payload::text("q")}};
        else
            msg = Message{AreaMsgAny{area, 1, Payload::text("q")}};
    } else if (spec.kind == "point_all" || spec.kind == "point_any") {
        const Point pt{geometry_rng_.uniform(u.min.x, u.max.x),
                       geometry_rng_.uniform(u.min.y, u.max.y)};
        msg = Message{PointMsgLeaf{pt, 1,
                                   spec.kind == "point_all" ? DeliverMode::all
                                                            : DeliverMode::any,
                                   Payload::text("q")}};
    } else if (spec.kind == "nearest") {
        const Point pt{geometry_rng_.uniform(u.min.x, u.max.x),
                       geometry_rng_.uniform(u.min.y, u.max.y)};
        msg = Message{NearestProbe{pt, Payload::text("n")}};
    } else {
        msg = Message{ZoneBroadcast{1, Payload::text("b")}};
    }
    sim_->inject_query(sim_->now() + 1.0, kNoPeer, std::move(msg), spec.kind);
    settle(250.0);
}

void Runner::run_workload() {
    for (const WorkloadSpec& spec : scenario_.workload)
        for (int i = 0; i < spec.count; ++i)
            inject_one(spec, false);
}

QueryOutcome Runner::score(const QueryRecord& rec) const {
    QueryOutcome q;
    q.qid = rec.qid;
    q.kind = rec.kind;
    q.issued = rec.issued;
    q.expected_n = int(rec.expected.size());
    q.delivered_n = int(rec.delivered.size());
    q.depth_bound = rec.depth_at_injection;

    std::multiset<PeerAddr> got;
    std::uint64_t hops_total = 0;
    for (const auto& [peer, hops] : rec.delivered) {
        got.insert(peer);
        q.hops_max = std::max(q.hops_max, hops);
        hops_total += hops;
        if (hops > std::uint32_t(q.depth_bound))
            q.hops_ok = false;
    }
    q.hops_mean = rec.delivered.empty() ? 0.0 : double(hops_total) / rec.delivered.size();

    if (rec.kind == "nearest") {
        q.exact = rec.delivered.size() == 1 &&
                  rec.delivered[0].first == rec.expected_nearest;
        q.expected_n = 1;
    } else if (rec.kind == "area_any" || rec.kind == "point_any") {
        const bool want_one = !rec.expected.empty();
        if (!want_one)
            q.exact = rec.delivered.empty();
        else
            q.exact = rec.delivered.size() == 1 &&
                      std::find(rec.expected.begin(), rec.expected.end(),
                                rec.delivered[0].first) != rec.expected.end();
    } else {
        const std::multiset<PeerAddr> want(rec.expected.begin(), rec.expected.end());
        q.exact = got == want;
        std::multiset<PeerAddr> missing;
        std::set_difference(want.begin(), want.end(), got.begin(), got.end(),
                            std::inserter(missing, missing.begin()));
        std::multiset<PeerAddr> extra;
        std::set_difference(got.begin(), got.end(), want.begin(), want.end(),
                            std::inserter(extra, extra.begin()));
        q.misses = int(missing.size());
        q.dupes = int(extra.size());
    }
    return q;
}

void Runner::run_checks(RunReport& report) const {
    const auto add = [&](const std::string& name, bool pass, std::string detail) {
        report.checks.push_back(CheckResult{name, pass, std::move(detail)});
    };
    std::set<std::string> wanted(scenario_.checks.begin(), scenario_.checks.end());
    if (wanted.empty()) {
        // the default set; retraction and churn_success only make sense for
        // scenarios that shrink or churn, so they must be asked for
        wanted = {"exactly_once", "hop_bound",        "table_size",
                  "split_cost",   "zone_population",  "nearest_exact",
                  "structural_audit", "determinism"};
    }
    const auto enabled = [&](const char* name) { return wanted.count(name) != 0; };
    const ZoningConfig& z = scenario_.zoning;

    if (enabled("exactly_once")) {
        int total = 0, exact = 0;
        for (const QueryOutcome& q : report.queries)
            if (!q.during_churn && (q.kind == "area_all" || q.kind == "point_all" ||
                                    q.kind == "zone_broadcast")) {
                ++total;
                exact += q.exact ? 1 : 0;
            }
        add("exactly_once", total > 0 && exact == total,
            std::to_string(exact) + "/" + std::to_string(total) +
                " deliver-to-all queries oracle-exact");
    }

    if (enabled("hop_bound")) {
        bool ok = true;
        std::uint32_t worst = 0;
        for (const QueryOutcome& q : report.queries)
            if (!q.during_churn) {
                ok = ok && q.hops_ok;
                worst = std::max(worst, q.hops_max);
            }
        const double log_bound =
            std::ceil(std::log(double(std::max<std::size_t>(report.live_peers, 2))) /
                      std::log(double(z.k)));
        add("hop_bound", ok,
            "max hops " + std::to_string(worst) + ", depth d=" +
                std::to_string(report.final_depth) + " (leaf rows " +
                std::to_string(report.final_depth + 1) + "), ceil(log_k N)=" +
                fmt1(log_bound));
    }

    if (enabled("table_size")) {
        int bad = 0, total = 0;
        for (const auto& [a, p] : sim_->peers()) {
            if (!p.joined()) continue;
            ++total;
            const auto& rt = p.table();
            const bool size_ok =
                rt.sibling_entry_count() <= std::size_t((z.k - 1) * rt.depth()) &&
                rt.leaf_row().size() <= std::size_t(z.theta_h - 1);
            if (!size_ok) ++bad;
        }
        add("table_size", bad == 0,
            std::to_string(total - bad) + "/" + std::to_string(total) +
                " peers within (k-1)d sibling entries and theta_H-1 leaf rows");
    }

    if (enabled("split_cost")) {
        bool ok = true;
        int worst_announce = 0, worst_election = 0;
        for (const SplitEvent& e : sim_->splits()) {
            worst_announce = std::max(worst_announce, e.announce_count);
            worst_election = std::max(worst_election, e.election_msgs);
            if (e.announce_count > z.theta_h - 1) ok = false;
            if (e.election_msgs > 2 * (z.theta_h - 1)) ok = false;
        }
        add("split_cost", ok,
            std::to_string(sim_->splits().size()) + " splits, max announces " +
                std::to_string(worst_announce) + " (bound " +
                std::to_string(z.theta_h - 1) + "), max election msgs " +
                std::to_string(worst_election) + " (bound " +
                std::to_string(2 * (z.theta_h - 1)) + ")");
    }

    if (enabled("zone_population")) {
        int bad = 0, zones = 0, remainders = 0;
        std::vector<std::pair<const ZoneNode*, ZoneId>> stack;
        stack.emplace_back(&sim_->ground_truth().root(), ZoneId{});
        while (!stack.empty()) {
            auto [node, id] = stack.back();
            stack.pop_back();
            if (!node->is_leaf()) {
                for (const auto& [b, child] : node->children)
                    stack.emplace_back(child.get(), id.child(b));
                continue;
            }
            ++zones;
            const int pop = int(sim_->ground_truth().zone_members(id).size());
            if (node->region.is_remainder()) {
                ++remainders;
                continue; // any population is legal for a remainder
            }
            if (id.is_universe())
                continue; // single-zone universe has no thresholds yet
            if (pop < z.theta_l || pop > z.theta_h) ++bad;
        }
        add("zone_population", bad == 0,
            std::to_string(zones) + " leaf zones (" + std::to_string(remainders) +
                " remainders), " + std::to_string(bad) + " outside [theta_L, theta_H]");
    }

    if (enabled("nearest_exact")) {
        int total = 0, exact = 0;
        for (const QueryOutcome& q : report.queries)
            if (!q.during_churn && q.kind == "nearest") {
                ++total;
                exact += q.exact ? 1 : 0;
            }
        add("nearest_exact", total == 0 || exact == total,
            std::to_string(exact) + "/" + std::to_string(total) +
                " nearest queries matched the oracle");
    }

    if (enabled("structural_audit"))
        add("structural_audit", report.audit_ok, report.audit_summary);

    if (enabled("retraction"))
        add("retraction", report.final_depth < report.peak_depth,
            "depth peak " + std::to_string(report.peak_depth) + " -> final " +
                std::to_string(report.final_depth));

    if (enabled("churn_success")) {
        int total = 0, good = 0;
        for (const QueryOutcome& q : report.queries)
            if (q.during_churn) {
                ++total;
                good += q.exact ? 1 : 0;
            }
        const double frac = total ? double(good) / total : 1.0;
        add("churn_success", frac >= 0.95,
            "during-churn success " + std::to_string(good) + "/" +
                std::to_string(total) + " = " + fmt1(frac));
    }

    if (enabled("determinism"))
        add("determinism", true,
            "trace hash " + std::to_string(report.trace_hash) + " over " +
                std::to_string(report.trace_lines) + " lines; rerun to compare");
}

RunReport Runner::finish() {
    RunReport report;
    for (const auto& [qid, rec] : sim_->queries()) {
        QueryOutcome q = score(rec);
        q.during_churn = std::find(churn_probe_qids_.begin(), churn_probe_qids_.end(),
                                   qid) != churn_probe_qids_.end();
        report.queries.push_back(std::move(q));
    }
    report.trace_hash = sim_->trace().line_hash;
    report.trace_lines = sim_->trace().lines;
    report.peak_depth = sim_->peak_depth();
    report.final_depth = sim_->ground_truth().max_leaf_depth();
    report.events = sim_->events_processed();
    report.sent = sim_->sent();
    report.delivered = sim_->delivered();
    report.dropped_loss = sim_->dropped_loss();
    report.dropped_dead = sim_->dropped_dead();
    report.live_peers = sim_->ground_truth().live().size();
    report.splits = int(sim_->splits().size());
    report.merges = int(sim_->merges().size());
    report.collapses = int(sim_->collapses().size());

    const AuditReport audit = sim_->ground_truth().audit_tables(
        sim_->peers(), sim_->now(), scenario_.refresh_period);
    report.audit_ok = audit.ok();
    report.audit_summary = audit.summary();

    run_checks(report);
    return report;
}

RunReport Runner::run() {
    const auto t0 = std::chrono::steady_clock::now();
    build_overlay();
    run_churn_phase();
    run_workload();
    RunReport report = finish();
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

} // namespace geop2p
