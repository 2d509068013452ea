#include "geop2p/peer.hpp"

#include <algorithm>
#include <cassert>

namespace geop2p {

namespace {

// Large enough that a zone broadcast carrying it never forwards again;
// used for point-to-point relays of boxed control messages.
constexpr int kDeliverOnlyLevel = 1 << 20;

template <class... Ts> struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts> overloaded(Ts...) -> overloaded<Ts...>;

} // namespace

Peer::Peer(PeerAddr addr, Point coord, const Rect& universe, const ZoningConfig& cfg,
           const ProtocolParams& params, std::uint64_t rng_seed, bool bootstrap_seed)
    : addr_(addr), coord_(coord), universe_(universe), cfg_(cfg), params_(params),
      rt_(addr, coord, Region::rectangular(universe), params.bucket_capacity),
      rng_(Rng::mix(rng_seed, addr)), joined_(bootstrap_seed) {}

std::uint64_t Peer::new_op(OpState st) {
    const std::uint64_t id = next_op_++;
    ops_.emplace(id, Op{std::move(st), 0});
    return id;
}

std::uint64_t Peer::token_of(std::uint64_t op_id) const {
    const auto it = ops_.find(op_id);
    const std::uint32_t epoch = it == ops_.end() ? 0 : it->second.epoch;
    return (op_id << 16) | (epoch & 0xffff);
}

void Peer::arm(Outputs& out, std::uint64_t op_id, double delay, bool periodic) {
    out.timers.push_back(TimerReq{delay, token_of(op_id), periodic});
}

void Peer::audit(Outputs& out, const std::string& what) {
    out.audits.push_back(what);
}

void Peer::send_routed(Outputs& out, PeerAddr to, Message msg, const MsgMeta& meta) {
    const int lvl = routed_level(msg);
    std::optional<std::uint8_t> tag;
    if (lvl >= 2 && static_cast<std::size_t>(lvl - 1) <= rt_.depth())
        tag = static_cast<std::uint8_t>(self_branch(lvl - 1));
    out.sends.push_back(OutMsg{to, std::move(msg), meta.hops + 1, meta.qid, lvl, tag});
}

void Peer::send_direct(Outputs& out, PeerAddr to, Message msg, const MsgMeta& meta,
                       int level_hint, std::optional<std::uint8_t> tag) {
    out.sends.push_back(OutMsg{to, std::move(msg), meta.hops + 1, meta.qid, level_hint, tag});
}

bool Peer::busy_topology() const {
    return election_op_.has_value() || merge_op_.has_value() || !collapse_member_.empty();
}

// Every received message is evidence of liveness: refresh the sender's
// leaf entry, bring it to the front of whatever bucket holds it, or learn
// it as a new contact from the level/zone-id tag it carries.
void Peer::piggyback(SimTime now, const MsgMeta& meta) {
    if (meta.from == kNoPeer || meta.from == addr_ || !joined_)
        return;
    rt_.refresh_leaf(meta.from, now);
    if (auto slot = rt_.find_addr_slot(meta.from)) {
        rt_.touch(meta.from, slot->first, slot->second, now);
        return;
    }
    if (meta.level_hint < 2 || !meta.zone_tag)
        return;
    const int row = meta.level_hint - 1;
    if (row < 1 || row > static_cast<int>(rt_.depth()))
        return; // leaf-level tag or deeper than we are; nothing to learn
    const int col = *meta.zone_tag;
    if (col == self_branch(row))
        return;
    const auto& r = rt_.row(row);
    if (!r.count(col))
        return; // stale topology tag; refresh will repair the sender
    rt_.touch(meta.from, row, col, now);
}

Outputs Peer::init(SimTime now) {
    Outputs out;
    if (joined_) {
        const std::uint64_t tick = new_op(RefreshTickOp{});
        arm(out, tick, params_.refresh_period / 2.0, true);
    }
    return out;
}

Outputs Peer::set_refresh_period(SimTime now, double t) {
    params_.refresh_period = t;
    // orphan any previously armed tick; its timer dies on the epoch check
    for (auto it = ops_.begin(); it != ops_.end();) {
        if (std::holds_alternative<RefreshTickOp>(it->second.state))
            it = ops_.erase(it);
        else
            ++it;
    }
    Outputs out;
    if (joined_) {
        const std::uint64_t tick = new_op(RefreshTickOp{});
        arm(out, tick, params_.refresh_period / 2.0, true);
    }
    return out;
}

Outputs Peer::start_join(SimTime now, PeerAddr bootstrap) {
    Outputs out;
    const std::uint64_t op = new_op(JoinOp{bootstrap});
    join_op_ = op;
    MsgMeta meta{addr_, 0, 0, 0, std::nullopt};
    send_direct(out, bootstrap,
                Message{PointMsgLeaf{coord_, 1, DeliverMode::any,
                                     Payload::box(Message{JoinRequest{coord_, addr_}})}},
                meta);
    arm(out, op, 16.0 * params_.max_delay);
    return out;
}

Outputs Peer::inject(SimTime now, const Message& query, std::uint64_t qid) {
    MsgMeta meta{addr_, 0, qid, routed_level(query), std::nullopt};
    if (const NearestProbe* probe = std::get_if<NearestProbe>(&query.body)) {
        Message routed{PointMsgLeaf{probe->point, 1, DeliverMode::any,
                                    Payload::box(Message{*probe})}};
        meta.level_hint = 1;
        return on_message(now, meta, routed);
    }
    return on_message(now, meta, query);
}

Outputs Peer::request_leave(SimTime now) {
    if (busy_topology()) {
        leave_pending_ = true;
        return Outputs{};
    }
    return finish_leave(now);
}

Outputs Peer::finish_leave(SimTime now) {
    Outputs out;
    out.left = true;
    std::set<PeerAddr> contacts;
    for (const auto& [a, le] : rt_.leaf_row())
        contacts.insert(a);
    for (const auto& row : rt_.rows())
        for (const auto& [col, e] : row)
            if (!e.is_self)
                for (const Contact& c : e.bucket.contacts())
                    contacts.insert(c.addr);
    MsgMeta meta{addr_, 0, 0, 0, std::nullopt};
    for (PeerAddr a : contacts)
        send_direct(out, a, Message{Leave{}}, meta);
    return out;
}

Outputs Peer::on_message(SimTime now, const MsgMeta& meta, const Message& msg) {
    Outputs out;
    piggyback(now, meta);

    if (!joined_) {
        // Waiting for a join reply: topology changes are buffered and
        // replayed after adoption, everything else is not for us yet.
        const bool buffer = std::holds_alternative<SplitAnnounce>(msg.body) ||
                            std::holds_alternative<MergerRequest>(msg.body) ||
                            std::holds_alternative<MergerUpdate>(msg.body) ||
                            std::holds_alternative<ZoneBroadcast>(msg.body) ||
                            std::holds_alternative<CollapseComplete>(msg.body);
        if (std::holds_alternative<JoinReply>(msg.body)) {
            handle_join_reply(now, out, meta, std::get<JoinReply>(msg.body));
        } else if (buffer) {
            join_buffer_.emplace_back(meta, msg);
        }
        return out;
    }

    std::visit(
        overloaded{
            [&](const AreaMsgAll& m) { handle_area_all(now, out, meta, m); },
            [&](const AreaMsgAny& m) { handle_area_any(now, out, meta, m); },
            [&](const ZoneBroadcast& m) { handle_zone_broadcast(now, out, meta, m); },
            [&](const PointMsgLeaf& m) { handle_point_msg(now, out, meta, m); },
            [&](const NearestProbe& m) { start_nearest(now, out, meta, m); },
            [&](const NearestRangeQuery& m) { handle_range_query(now, out, meta, m); },
            [&](const NearestRangeReply& m) { handle_range_reply(now, out, m); },
            [&](const NearestDeliver& m) {
                out.deliveries.push_back(AppDelivery{meta.qid, meta.hops, "nearest"});
                (void)m;
            },
            [&](const JoinRequest& m) {
                // a direct join request is the in-zone announcement
                rt_.add_leaf(m.addr, m.coord, now);
                population_check(now, out);
            },
            [&](const JoinReply&) { /* duplicate; already joined */ },
            [&](const SampleRequest& m) { handle_sample_request(now, out, meta, m); },
            [&](const SampleReply& m) { handle_sample_reply(now, out, meta, m); },
            [&](const ElectProposal& m) { handle_elect_proposal(now, out, meta, m); },
            [&](const ElectAck& m) { handle_elect_ack(now, out, m); },
            [&](const SplitAnnounce& m) { handle_split_announce(now, out, meta, m); },
            [&](const MergerRequest& m) { handle_merger_request(now, out, meta, m, false); },
            [&](const MergerReply& m) { handle_merger_reply(now, out, meta, m); },
            [&](const MergerUpdate& m) { handle_merger_update(now, out, meta, m, false); },
            [&](const CollapseRequest& m) { handle_collapse_request(now, out, meta, m); },
            [&](const CollapseAccept& m) { handle_collapse_accept(now, out, meta, m); },
            [&](const CollapseComplete& m) { handle_collapse_complete(now, out, meta, m); },
            [&](const Ping& m) {
                Pong pong;
                if (m.leaf && !rt_.has_leaf(meta.from))
                    pong.leaf_mismatch = true; // sender holds a stale zone view
                send_direct(out, meta.from, Message{pong}, MsgMeta{addr_, meta.hops, 0});
            },
            [&](const Pong& m) { handle_pong(now, out, meta, m); },
            [&](const RefreshQuery& m) { handle_refresh_query(now, out, meta, m); },
            [&](const RefreshReply& m) { handle_refresh_reply(now, out, meta, m); },
            [&](const Leave&) {
                rt_.purge_addr(meta.from);
                population_check(now, out);
            },
        },
        msg.body);
    return out;
}

Outputs Peer::on_timer(SimTime now, std::uint64_t token) {
    Outputs out;
    const std::uint64_t op_id = token >> 16;
    const std::uint32_t epoch = token & 0xffff;
    auto it = ops_.find(op_id);
    if (it == ops_.end() || (it->second.epoch & 0xffff) != epoch)
        return out; // stale timer

    std::visit(
        overloaded{
            [&](RefreshTickOp&) {
                refresh_tick(now, out);
                it->second.epoch++;
                arm(out, op_id, params_.refresh_period / 2.0, true);
            },
            [&](ElectionOp&) { election_concluded(now, out, op_id); },
            [&](RefreshEntryOp& op) {
                // outstanding ping or reply window expired
                if (op.waiting != kNoPeer) {
                    awaiting_pong_.erase(op.waiting);
                    op.seen.insert(op.waiting);
                    op.waiting = kNoPeer;
                    op.idx++;
                }
                advance_refresh(now, out, op_id);
            },
            [&](LeafPingOp& op) {
                awaiting_pong_.erase(op.target);
                rt_.remove_leaf(op.target);
                audit(out, "departure_detected:" + std::to_string(op.target));
                ops_.erase(op_id);
                population_check(now, out);
            },
            [&](NearestOp& op) {
                // collection window over; hand the payload to the winner
                if (op.best == addr_) {
                    out.deliveries.push_back(AppDelivery{op.qid, op.hops, "nearest"});
                } else if (op.best != kNoPeer) {
                    send_direct(out, op.best, Message{NearestDeliver{op.payload}},
                                MsgMeta{addr_, op.hops, op.qid});
                }
                ops_.erase(op_id);
            },
            [&](MergeInitOp& op) {
                // no merger reply; try the next known contact
                op.idx++;
                if (op.idx < op.contacts.size()) {
                    it->second.epoch++;
                    send_direct(out, op.contacts[op.idx],
                                Message{MergerRequest{op.my_boundary, op.my_peers}},
                                MsgMeta{addr_, 0, 0});
                    arm(out, op_id, 2.0 * params_.max_delay *
                                        (rt_.leaf_row_index() + 6));
                } else {
                    audit(out, "merge_deferred_no_partner_contact");
                    ops_.erase(op_id);
                    merge_op_.reset();
                    if (leave_pending_ && !busy_topology())
                        out = finish_leave(now);
                }
            },
            [&](CollapsePartnerOp& op) {
                if (op.phase == 0) {
                    // aggregation window closed
                    std::map<PeerAddr, LeafEntry> merged;
                    for (const auto& [from, leafset] : op.accepted)
                        for (const LeafEntry& le : leafset)
                            merged[le.addr] = le;
                    op.all_peers.clear();
                    for (const auto& [a, le] : merged)
                        op.all_peers.push_back(le);
                    for (const LeafEntry& le : op.all_peers)
                        if (le.addr != addr_)
                            send_direct(out, le.addr,
                                        Message{CollapseComplete{op.all_peers}},
                                        MsgMeta{addr_, 0, 0});
                    rt_.flatten_to_level(op.level, op.all_peers, now);
                    ZoneId zone = rt_.zone_id();
                    out.topo.push_back(CollapseEvent{zone, op.all_peers});
                    op.phase = 1;
                    it->second.epoch++;
                    arm(out, op_id, params_.max_delay + 1.0);
                } else {
                    finish_partner_merge(now, out, op_id);
                }
            },
            [&](JoinOp&) {
                ops_.erase(op_id);
                join_op_.reset();
                out.join_failed = true;
            },
        },
        it->second.state);
    return out;
}

// ---------------------------------------------------------------------
// routing
// ---------------------------------------------------------------------

void Peer::handle_area_all(SimTime now, Outputs& out, const MsgMeta& meta,
                           const AreaMsgAll& m) {
    if (area_contains_point(m.area, coord_, universe_))
        deliver_payload(now, out, meta, m.payload, false);

    const int L = rt_.leaf_row_index();
    if (m.level <= L)
        for (const auto& [a, le] : rt_.leaf_row())
            if (area_contains_point(m.area, le.coord, universe_))
                send_routed(out, a, Message{AreaMsgAll{m.area, L + 1, m.payload}}, meta);

    for (const ForwardCandidate& c : rt_.forwarding_candidates(m.area, m.level))
        send_routed(out, c.entry->bucket.front().addr,
                    Message{AreaMsgAll{m.area, c.forward_level, m.payload}}, meta);
}

void Peer::handle_area_any(SimTime now, Outputs& out, const MsgMeta& meta,
                           const AreaMsgAny& m) {
    if (area_contains_point(m.area, coord_, universe_)) {
        deliver_payload(now, out, meta, m.payload, false);
        return;
    }
    const int L = rt_.leaf_row_index();
    if (m.level <= L)
        for (const auto& [a, le] : rt_.leaf_row())
            if (area_contains_point(m.area, le.coord, universe_)) {
                send_routed(out, a, Message{AreaMsgAny{m.area, L + 1, m.payload}}, meta);
                return;
            }
    const auto cands = rt_.forwarding_candidates(m.area, m.level);
    if (!cands.empty()) {
        const ForwardCandidate& c = cands.front();
        send_routed(out, c.entry->bucket.front().addr,
                    Message{AreaMsgAny{m.area, c.forward_level, m.payload}}, meta);
        return;
    }
    // no match reachable; the issuer's timeout is the negative answer
}

void Peer::zb_fanout(SimTime now, Outputs& out, const MsgMeta& meta, int level,
                     const Payload& payload) {
    const int L = rt_.leaf_row_index();
    if (level <= L)
        for (const auto& [a, le] : rt_.leaf_row())
            send_routed(out, a, Message{ZoneBroadcast{L + 1, payload}}, meta);
    for (int r = static_cast<int>(rt_.depth()); r >= std::max(level, 1); --r) {
        for (const auto& [col, e] : rt_.row(r)) {
            if (e.is_self) continue;
            if (e.bucket.empty()) {
                if (!e.boundary.is_remainder())
                    audit(out, "broadcast_skipped_empty_bucket");
                continue;
            }
            send_routed(out, e.bucket.front().addr,
                        Message{ZoneBroadcast{r + 1, payload}}, meta);
        }
    }
}

void Peer::handle_zone_broadcast(SimTime now, Outputs& out, const MsgMeta& meta,
                                 const ZoneBroadcast& m) {
    deliver_payload(now, out, meta, m.payload, true);
    zb_fanout(now, out, meta, m.level, m.payload);
}

void Peer::handle_point_msg(SimTime now, Outputs& out, const MsgMeta& meta,
                            const PointMsgLeaf& m) {
    const int L = rt_.leaf_row_index();
    if (region_contains_point(rt_.self_leaf_boundary(), m.point, universe_)) {
        deliver_payload(now, out, meta, m.payload, false);
        if (m.mode == DeliverMode::all && m.level <= L)
            for (const auto& [a, le] : rt_.leaf_row())
                send_routed(out, a, Message{PointMsgLeaf{m.point, L + 1, m.mode, m.payload}},
                            meta);
        return;
    }
    if (m.level > L) {
        // leaf-level copy for a point we do not own: zone moved under us
        audit(out, "point_msg_zone_mismatch");
        return;
    }
    for (int r = static_cast<int>(rt_.depth()); r >= std::max(m.level, 1); --r) {
        for (const auto& [col, e] : rt_.row(r)) {
            if (e.is_self) continue;
            if (!region_contains_point(e.boundary, m.point, universe_)) continue;
            if (!e.bucket.empty()) {
                send_routed(out, e.bucket.front().addr,
                            Message{PointMsgLeaf{m.point, r + 1, m.mode, m.payload}}, meta);
                return;
            }
            // dead end: nobody known to represent the zone that owns the point
            if (e.boundary.is_remainder() && m.payload.boxed) {
                if (const JoinRequest* jr =
                        std::get_if<JoinRequest>(&m.payload.boxed->body)) {
                    sponsor_empty_remainder(now, out, r, col, *jr);
                    return;
                }
                if (const NearestProbe* probe =
                        std::get_if<NearestProbe>(&m.payload.boxed->body)) {
                    // empty leaf zone: serve phase two ourselves with our
                    // own distance as the search radius
                    start_nearest(now, out, meta, *probe);
                    return;
                }
            }
            audit(out, "point_msg_dead_end");
            return;
        }
    }
    audit(out, "point_msg_unresolved");
}

void Peer::deliver_payload(SimTime now, Outputs& out, const MsgMeta& meta,
                           const Payload& payload, bool relayed) {
    if (!payload.boxed) {
        out.deliveries.push_back(AppDelivery{meta.qid, meta.hops, "app"});
        return;
    }
    const Message& inner = *payload.boxed;
    std::visit(
        overloaded{
            [&](const JoinRequest& m) {
                if (relayed)
                    learn_peer(now, out, m); // broadcast advert of a new peer
                else
                    handle_join_sponsor(now, out, meta, m);
            },
            [&](const NearestProbe& m) { start_nearest(now, out, meta, m); },
            [&](const NearestRangeQuery& m) { handle_range_query(now, out, meta, m); },
            [&](const MergerRequest& m) { handle_merger_request(now, out, meta, m, true); },
            [&](const MergerUpdate& m) { handle_merger_update(now, out, meta, m, true); },
            [&](const CollapseRequest& m) { handle_collapse_request(now, out, meta, m); },
            [&](const auto&) {
                out.deliveries.push_back(AppDelivery{meta.qid, meta.hops, "app"});
            },
        },
        inner.body);
    (void)relayed;
}

// ---------------------------------------------------------------------
// nearest-peer routing, phase two
// ---------------------------------------------------------------------

void Peer::start_nearest(SimTime now, Outputs& out, const MsgMeta& meta,
                         const NearestProbe& probe) {
    NearestOp op;
    op.point = probe.point;
    op.payload = probe.payload;
    op.qid = meta.qid;
    op.hops = meta.hops;
    op.best = addr_;
    op.best_dist = distance(coord_, probe.point);
    for (const auto& [a, le] : rt_.leaf_row()) {
        const double d = distance(le.coord, probe.point);
        if (d < op.best_dist || (d == op.best_dist && a < op.best)) {
            op.best = a;
            op.best_dist = d;
        }
    }
    const std::uint64_t op_id = new_op(op);
    const Circle circle{probe.point, op.best_dist};
    // range search over the circle, replies come straight back to us
    MsgMeta fresh{addr_, meta.hops, meta.qid, 1, std::nullopt};
    handle_area_all(now, out, fresh,
                    AreaMsgAll{circle, 1,
                               Payload::box(Message{NearestRangeQuery{circle, addr_, op_id}})});
    arm(out, op_id, 2.0 * params_.max_delay * rt_.leaf_row_index());
}

void Peer::handle_range_query(SimTime now, Outputs& out, const MsgMeta& meta,
                              const NearestRangeQuery& q) {
    if (q.reply_to == addr_) {
        handle_range_reply(now, out, NearestRangeReply{q.op_id, {{addr_, coord_}}});
        return;
    }
    send_direct(out, q.reply_to,
                Message{NearestRangeReply{q.op_id, {{addr_, coord_}}}},
                MsgMeta{addr_, meta.hops, meta.qid});
}

void Peer::handle_range_reply(SimTime now, Outputs& out, const NearestRangeReply& r) {
    auto it = ops_.find(r.op_id);
    if (it == ops_.end())
        return; // window already closed
    NearestOp* op = std::get_if<NearestOp>(&it->second.state);
    if (!op)
        return;
    for (const auto& [a, p] : r.peers) {
        const double d = distance(p, op->point);
        if (d < op->best_dist || (d == op->best_dist && a < op->best)) {
            op->best = a;
            op->best_dist = d;
        }
    }
    (void)out;
    (void)now;
}

} // namespace geop2p
