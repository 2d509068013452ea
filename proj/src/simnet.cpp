#include "geop2p/simnet.hpp"

#include <algorithm>
#include <cinttypes>
#include <cstdarg>
#include <cstdio>

namespace geop2p {

namespace {

template <class... Ts> struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts> overloaded(Ts...) -> overloaded<Ts...>;

std::string fmt(const char* f, ...) {
    char buf[512];
    va_list ap;
    va_start(ap, f);
    vsnprintf(buf, sizeof buf, f, ap);
    va_end(ap);
    return buf;
}

} // namespace

void TraceSink::emit(const std::string& line) {
    for (unsigned char c : line)
        line_hash = (line_hash ^ c) * 1099511628211ULL;
    line_hash = (line_hash ^ '\n') * 1099511628211ULL;
    ++lines;
    if (write)
        write(line);
}

Simulator::Simulator(const Rect& universe, const ZoningConfig& cfg, const NetModel& net,
                     const ProtocolParams& params, std::uint64_t seed)
    : universe_(universe), cfg_(cfg), net_(net), params_(params),
      net_rng_(Rng::mix(seed, 0xA11CE)), churn_rng_(Rng::mix(seed, 0xC0FFEE)),
      misc_rng_(Rng::mix(seed, 0xD1CE)), gt_(universe) {
    params_.max_delay = net_.delay.max();
    params_.mean_delay = net_.delay.mean();
}

std::string Simulator::fmt_time() const {
    return fmt("%.6f", now_);
}

void Simulator::schedule(SimTime at, EventBody body, bool periodic) {
    if (at < now_)
        throw RejectedPastEvent{};
    const bool pending = !periodic;
    if (pending)
        ++pending_nonperiodic_;
    queue_.push(Event{at, next_seq_++, std::move(body), pending});
}

PeerAddr Simulator::spawn_seed_peer(Point coord) {
    const PeerAddr addr = next_addr_++;
    auto [it, ok] = peers_.emplace(
        addr, Peer(addr, coord, universe_, cfg_, params_, net_rng_.next(), true));
    gt_.peer_joined(addr, coord, now_);
    trace_.emit(fmt("%" PRIu64 "\t%s\tJOIN\t%" PRIu64 "\t%.17g\t%.17g", next_seq_,
                    fmt_time().c_str(), addr, coord.x, coord.y));
    dispatch_outputs(addr, it->second.init(now_));
    return addr;
}

PeerAddr Simulator::spawn_joining_peer(SimTime at, Point coord, PeerAddr bootstrap) {
    const PeerAddr addr = next_addr_++;
    schedule(at, EvStartJoin{addr, coord, bootstrap, 0});
    return addr;
}

void Simulator::schedule_leave(SimTime at, PeerAddr addr, bool graceful) {
    schedule(at, EvLeave{addr, graceful});
}

void Simulator::schedule_churn(const ChurnSpec& spec, SimTime start, double duration) {
    if (spec.join_rate > 0) {
        const double gap = 1.0 / spec.join_rate;
        for (double t = start + gap * churn_rng_.uniform(0.5, 1.5); t < start + duration;
             t += gap * churn_rng_.uniform(0.5, 1.5))
            schedule(t, EvChurnJoin{draw_coord(spec.coords)});
    }
    if (spec.leave_rate > 0) {
        const double gap = 1.0 / spec.leave_rate;
        for (double t = start + gap * churn_rng_.uniform(0.5, 1.5); t < start + duration;
             t += gap * churn_rng_.uniform(0.5, 1.5)) {
            const bool graceful = churn_rng_.chance(spec.graceful_fraction);
            schedule(t, EvLeave{kNoPeer, graceful}); // target drawn when it fires
        }
    }
}

Point Simulator::draw_coord(const CoordDist& dist) {
    if (dist.kind == CoordDist::Kind::uniform)
        return Point{churn_rng_.uniform(universe_.min.x, universe_.max.x),
                     churn_rng_.uniform(universe_.min.y, universe_.max.y)};
    // clustered: pick a blob center deterministically from the blob index
    const int blob = static_cast<int>(churn_rng_.below(dist.blobs));
    Rng blob_rng(Rng::mix(0xB10B, blob));
    const Point center{blob_rng.uniform(universe_.min.x + universe_.width() * 0.1,
                                        universe_.max.x - universe_.width() * 0.1),
                       blob_rng.uniform(universe_.min.y + universe_.height() * 0.1,
                                        universe_.max.y - universe_.height() * 0.1)};
    const double sx = universe_.width() * dist.spread;
    const double sy = universe_.height() * dist.spread;
    Point p{center.x + churn_rng_.uniform(-sx, sx), center.y + churn_rng_.uniform(-sy, sy)};
    p.x = std::clamp(p.x, universe_.min.x, universe_.max.x - universe_.width() * 1e-9);
    p.y = std::clamp(p.y, universe_.min.y, universe_.max.y - universe_.height() * 1e-9);
    return p;
}

PeerAddr Simulator::random_live_peer() {
    const auto& live = gt_.live();
    if (live.empty())
        return kNoPeer;
    auto it = live.begin();
    std::advance(it, misc_rng_.below(live.size()));
    return it->first;
}

std::uint64_t Simulator::inject_query(SimTime at, PeerAddr issuer, Message query,
                                      const std::string& kind) {
    const std::uint64_t qid = next_qid_++;
    QueryRecord rec;
    rec.qid = qid;
    rec.kind = kind;
    query_log_.emplace(qid, std::move(rec));
    schedule(at, EvInject{issuer, std::move(query), qid});
    return qid;
}

void Simulator::set_refresh_period(double t) {
    params_.refresh_period = t;
    std::vector<PeerAddr> addrs;
    for (const auto& [a, p] : peers_)
        addrs.push_back(a);
    for (PeerAddr a : addrs) {
        auto it = peers_.find(a);
        if (it != peers_.end())
            dispatch_outputs(a, it->second.set_refresh_period(now_, t));
    }
}

void Simulator::run_until(SimTime t_end) {
    while (!queue_.empty() && queue_.top().at <= t_end)
        step();
    now_ = std::max(now_, t_end);
}

void Simulator::run_to_quiescence() {
    while (pending_nonperiodic_ > 0 && !queue_.empty())
        step();
}

void Simulator::step() {
    if (++events_ > event_budget_)
        throw EventBudgetExceeded{};
    Event ev = queue_.top();
    queue_.pop();
    if (ev.counts_as_pending)
        --pending_nonperiodic_;
    now_ = ev.at;
    process(ev);
}

void Simulator::process(const Event& ev) {
    std::visit(
        overloaded{
            [&](const EvDeliver& e) {
                auto it = peers_.find(e.to);
                if (it == peers_.end()) {
                    ++dropped_dead_;
                    trace_.emit(fmt("%" PRIu64 "\t%s\tDROP_DEAD\t%" PRIu64 "\t%" PRIu64
                                    "\t%s",
                                    ev.seq, fmt_time().c_str(), e.meta.from, e.to,
                                    message_tag(e.msg)));
                    return;
                }
                ++delivered_;
                trace_.emit(fmt("%" PRIu64 "\t%s\tDLVR\t%" PRIu64 "\t%" PRIu64
                                "\t%s\t%" PRIu64 "\t%u\t%d",
                                ev.seq, fmt_time().c_str(), e.meta.from, e.to,
                                message_tag(e.msg), e.meta.qid, e.meta.hops,
                                e.meta.level_hint));
                dispatch_outputs(e.to, it->second.on_message(now_, e.meta, e.msg));
            },
            [&](const EvTimer& e) {
                auto it = peers_.find(e.peer);
                if (it == peers_.end())
                    return;
                dispatch_outputs(e.peer, it->second.on_timer(now_, e.token));
            },
            [&](const EvStartJoin& e) {
                PeerAddr bootstrap = e.bootstrap;
                if (!gt_.is_live(bootstrap))
                    bootstrap = random_live_peer();
                if (bootstrap == kNoPeer) {
                    ++join_failures_;
                    return;
                }
                auto it = peers_.find(e.addr);
                if (it == peers_.end())
                    it = peers_
                             .emplace(e.addr, Peer(e.addr, e.coord, universe_, cfg_,
                                                   params_, net_rng_.next(), false))
                             .first;
                join_attempts_[e.addr] = e.attempt;
                dispatch_outputs(e.addr, it->second.start_join(now_, bootstrap));
            },
            [&](const EvLeave& e) {
                PeerAddr target = e.addr;
                if (target == kNoPeer)
                    target = random_live_peer();
                if (target == kNoPeer || !peers_.count(target))
                    return;
                trace_.emit(fmt("%" PRIu64 "\t%s\tLEAVE\t%" PRIu64 "\t%d", ev.seq,
                                fmt_time().c_str(), target, e.graceful ? 1 : 0));
                if (!e.graceful) {
                    remove_peer(target, false);
                    return;
                }
                auto it = peers_.find(target);
                dispatch_outputs(target, it->second.request_leave(now_));
            },
            [&](const EvChurnJoin& e) {
                const PeerAddr bootstrap = random_live_peer();
                if (bootstrap == kNoPeer)
                    return;
                const PeerAddr addr = next_addr_++;
                auto it = peers_.emplace(addr, Peer(addr, e.coord, universe_, cfg_,
                                                    params_, net_rng_.next(), false))
                              .first;
                join_attempts_[addr] = 0;
                dispatch_outputs(addr, it->second.start_join(now_, bootstrap));
            },
            [&](const EvInject& e) {
                PeerAddr issuer = e.issuer;
                if (issuer == kNoPeer || !gt_.is_live(issuer))
                    issuer = random_live_peer();
                auto it = peers_.find(issuer);
                if (it == peers_.end())
                    return;
                QueryRecord& rec = query_log_.at(e.qid);
                rec.issued = now_;
                rec.issuer = issuer;
                rec.depth_at_injection = gt_.max_leaf_depth() + 1;
                std::string geom = "-";
                const auto geom_of = [](const AreaShape& a) {
                    if (const Rect* r = std::get_if<Rect>(&a))
                        return fmt("rect\t%.17g\t%.17g\t%.17g\t%.17g", r->min.x, r->min.y,
                                   r->max.x, r->max.y);
                    const Circle& c = std::get<Circle>(a);
                    return fmt("circle\t%.17g\t%.17g\t%.17g", c.center.x, c.center.y,
                               c.radius);
                };
                if (const auto* probe = std::get_if<NearestProbe>(&e.query.body)) {
                    rec.expected_nearest = gt_.brute_nearest(probe->point);
                    geom = fmt("point\t%.17g\t%.17g", probe->point.x, probe->point.y);
                } else if (const auto* aa = std::get_if<AreaMsgAll>(&e.query.body)) {
                    rec.expected = gt_.brute_range(aa->area);
                    geom = geom_of(aa->area);
                } else if (const auto* an = std::get_if<AreaMsgAny>(&e.query.body)) {
                    rec.expected = gt_.brute_range(an->area);
                    geom = geom_of(an->area);
                } else if (const auto* pm = std::get_if<PointMsgLeaf>(&e.query.body)) {
                    rec.expected = gt_.zone_members(gt_.leaf_zone_of(pm->point));
                    geom = fmt("point\t%.17g\t%.17g", pm->point.x, pm->point.y);
                } else if (std::get_if<ZoneBroadcast>(&e.query.body)) {
                    for (const auto& [a, p] : gt_.live())
                        rec.expected.push_back(a);
                }
                trace_.emit(fmt("%" PRIu64 "\t%s\tQUERY\t%" PRIu64 "\t%s\t%" PRIu64 "\t%s",
                                ev.seq, fmt_time().c_str(), e.qid, rec.kind.c_str(),
                                issuer, geom.c_str()));
                dispatch_outputs(issuer, it->second.inject(now_, e.query, e.qid));
            },
        },
        ev.body);
}

void Simulator::record_delivery(PeerAddr who, const AppDelivery& d) {
    trace_.emit(fmt("%" PRIu64 "\t%s\tAPP\t%" PRIu64 "\t%" PRIu64 "\t%u", next_seq_,
                    fmt_time().c_str(), d.qid, who, d.hops));
    auto it = query_log_.find(d.qid);
    if (it != query_log_.end())
        it->second.delivered.emplace_back(who, d.hops);
}

void Simulator::remove_peer(PeerAddr addr, bool graceful) {
    peers_.erase(addr);
    gt_.peer_left(addr, now_);
    (void)graceful;
}

void Simulator::dispatch_outputs(PeerAddr who, Outputs&& out) {
    for (const std::string& a : out.audits) {
        audit_notes_.push_back(std::to_string(who) + ":" + a);
        trace_.emit(fmt("%" PRIu64 "\t%s\tNOTE\t%" PRIu64 "\t%s", next_seq_,
                        fmt_time().c_str(), who, a.c_str()));
    }
    for (const AppDelivery& d : out.deliveries)
        record_delivery(who, d);
    for (const TopoEvent& t : out.topo) {
        gt_.apply(t);
        peak_depth_ = std::max(peak_depth_, gt_.max_leaf_depth());
        std::visit(overloaded{
                       [&](const SplitEvent& e) {
                           splits_.push_back(e);
                           trace_.emit(fmt("%" PRIu64 "\t%s\tSPLIT\t%s\t%d\t%d",
                                           next_seq_, fmt_time().c_str(),
                                           e.zone.to_string().c_str(), e.announce_count,
                                           e.election_msgs));
                       },
                       [&](const MergeEvent& e) {
                           merges_.push_back(e);
                           trace_.emit(fmt("%" PRIu64 "\t%s\tMERGE\t%s\t%d\t%d",
                                           next_seq_, fmt_time().c_str(),
                                           e.parent.to_string().c_str(),
                                           e.removed_branch, e.surviving_branch));
                       },
                       [&](const CollapseEvent& e) {
                           collapses_.push_back(e);
                           trace_.emit(fmt("%" PRIu64 "\t%s\tCOLLAPSE\t%s\t%zu",
                                           next_seq_, fmt_time().c_str(),
                                           e.zone.to_string().c_str(),
                                           e.members.size()));
                       },
                   },
                   t);
    }
    for (const TimerReq& t : out.timers)
        schedule(now_ + t.delay, EvTimer{who, t.token, t.periodic_refresh},
                 t.periodic_refresh);
    for (OutMsg& s : out.sends) {
        ++sent_;
        trace_.emit(fmt("%" PRIu64 "\t%s\tSEND\t%" PRIu64 "\t%" PRIu64 "\t%s\t%" PRIu64
                        "\t%u\t%d",
                        next_seq_, fmt_time().c_str(), who, s.to, message_tag(s.msg),
                        s.qid, s.hops, s.level_hint));
        if (net_.loss_rate > 0 && net_rng_.chance(net_.loss_rate)) {
            ++dropped_loss_;
            trace_.emit(fmt("%" PRIu64 "\t%s\tDROP_LOSS\t%" PRIu64 "\t%" PRIu64 "\t%s",
                            next_seq_, fmt_time().c_str(), who, s.to,
                            message_tag(s.msg)));
            continue;
        }
        const double delay = net_.delay.kind == DelaySpec::Kind::fixed
                                 ? net_.delay.lo
                                 : net_rng_.uniform(net_.delay.lo, net_.delay.hi);
        MsgMeta meta{who, s.hops, s.qid, s.level_hint, s.zone_tag};
        schedule(now_ + delay, EvDeliver{s.to, meta, std::move(s.msg)});
    }

    if (out.joined_now) {
        auto it = peers_.find(who);
        if (it != peers_.end()) {
            gt_.peer_joined(who, it->second.coord(), now_);
            trace_.emit(fmt("%" PRIu64 "\t%s\tJOIN\t%" PRIu64 "\t%.17g\t%.17g", next_seq_,
                            fmt_time().c_str(), who, it->second.coord().x,
                            it->second.coord().y));
        }
    }
    if (out.join_failed) {
        const int attempt = ++join_attempts_[who];
        auto it = peers_.find(who);
        if (it != peers_.end() && attempt < 3) {
            const PeerAddr bootstrap = random_live_peer();
            if (bootstrap != kNoPeer && bootstrap != who) {
                dispatch_outputs(who, it->second.start_join(now_, bootstrap));
                return;
            }
        }
        ++join_failures_;
        trace_.emit(fmt("%" PRIu64 "\t%s\tJOIN_FAIL\t%" PRIu64, next_seq_,
                        fmt_time().c_str(), who));
        peers_.erase(who);
    }
    if (out.left)
        remove_peer(who, true);
}

} // namespace geop2p
