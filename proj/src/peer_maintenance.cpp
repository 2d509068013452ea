#include <algorithm>
#include <cassert>

#include "geop2p/peer.hpp"

namespace geop2p {

namespace {

constexpr int kDeliverOnlyLevel = 1 << 20;

} // namespace

// ---------------------------------------------------------------------
// join
// ---------------------------------------------------------------------

// A broadcast advert that a peer exists at some coordinate: file it in
// whatever entry owns that point. Used when the first peer of a formerly
// empty zone makes itself known to its parent zone.
void Peer::learn_peer(SimTime now, Outputs& out, const JoinRequest& jr) {
    if (jr.addr == addr_)
        return;
    if (region_contains_point(rt_.self_leaf_boundary(), jr.coord, universe_)) {
        rt_.add_leaf(jr.addr, jr.coord, now);
        population_check(now, out);
        return;
    }
    for (int r = static_cast<int>(rt_.depth()); r >= 1; --r) {
        for (const auto& [col, e] : rt_.row(r)) {
            if (e.is_self) continue;
            if (!region_contains_point(e.boundary, jr.coord, universe_)) continue;
            rt_.touch(jr.addr, r, col, now);
            return;
        }
    }
}

void Peer::handle_join_sponsor(SimTime now, Outputs& out, const MsgMeta& meta,
                               const JoinRequest& jr) {
    if (jr.addr == addr_)
        return;
    if (!region_contains_point(rt_.self_leaf_boundary(), jr.coord, universe_)) {
        // the zone moved under the request while it was in flight
        MsgMeta fresh{addr_, meta.hops, meta.qid, 1, std::nullopt};
        handle_point_msg(now, out, fresh,
                         PointMsgLeaf{jr.coord, 1, DeliverMode::any,
                                      Payload::box(Message{jr})});
        return;
    }
    const bool known = rt_.has_leaf(jr.addr);
    rt_.add_leaf(jr.addr, jr.coord, now);
    if (!known)
        for (const auto& [a, le] : rt_.leaf_row())
            if (a != jr.addr)
                send_direct(out, a, Message{jr}, MsgMeta{addr_, meta.hops, 0});
    send_direct(out, jr.addr, Message{JoinReply{rt_}}, MsgMeta{addr_, meta.hops, 0});
    population_check(now, out);
}

void Peer::sponsor_empty_remainder(SimTime now, Outputs& out, int row, int col,
                                   const JoinRequest& jr) {
    RoutingTable jt =
        RoutingTable::sponsor_for_empty_zone(rt_, row, col, jr.addr, jr.coord, now);
    // we learn the remainder's first peer ourselves
    rt_.touch(jr.addr, row, col, now);
    send_direct(out, jr.addr, Message{JoinReply{std::move(jt)}}, MsgMeta{addr_, 0, 0});
}

void Peer::handle_join_reply(SimTime now, Outputs& out, const MsgMeta& meta,
                             const JoinReply& reply) {
    if (!join_op_)
        return;
    if (!region_contains_point(reply.table.self_leaf_boundary(), coord_, universe_)) {
        audit(out, "join_reply_zone_mismatch");
        return; // wait for the timeout and retry
    }
    ops_.erase(*join_op_);
    join_op_.reset();
    rt_.adopt(reply.table, addr_, coord_, universe_, now);
    joined_ = true;
    out.joined_now = true;

    const std::uint64_t tick = new_op(RefreshTickOp{});
    arm(out, tick, params_.refresh_period / 2.0, true);

    diversify(now, out);
    population_check(now, out);

    if (rt_.leaf_row().empty() && rt_.depth() >= 1) {
        // first inhabitant of a formerly empty zone: the peers of the
        // parent zone maintain an entry for it and need to hear about us
        zb_fanout(now, out, MsgMeta{addr_, 0, 0}, static_cast<int>(rt_.depth()),
                  Payload::box(Message{JoinRequest{coord_, addr_}}));
    }

    auto buffered = std::move(join_buffer_);
    join_buffer_.clear();
    for (const auto& [m, msg] : buffered) {
        Outputs extra = on_message(now, m, msg);
        for (auto& s : extra.sends) out.sends.push_back(std::move(s));
        for (auto& t : extra.timers) out.timers.push_back(t);
        for (auto& d : extra.deliveries) out.deliveries.push_back(std::move(d));
        for (auto& e : extra.topo) out.topo.push_back(std::move(e));
        for (auto& a : extra.audits) out.audits.push_back(std::move(a));
    }
}

void Peer::diversify(SimTime now, Outputs& out) {
    for (int r = 1; r <= static_cast<int>(rt_.depth()); ++r) {
        for (const auto& [col, e] : rt_.row(r)) {
            if (e.is_self || e.bucket.empty()) continue;
            send_direct(out, e.bucket.front().addr,
                        Message{SampleRequest{r + 1, params_.bucket_capacity - 1}},
                        MsgMeta{addr_, 0, 0}, r + 1,
                        static_cast<std::uint8_t>(self_branch(r)));
        }
    }
    (void)now;
}

void Peer::rejoin(SimTime now, Outputs& out, PeerAddr via) {
    if (now - last_rejoin_ < params_.refresh_period) {
        audit(out, "rejoin_suppressed");
        return;
    }
    last_rejoin_ = now;
    audit(out, "rejoin");
    rt_ = RoutingTable(addr_, coord_, Region::rectangular(universe_),
                       params_.bucket_capacity);
    joined_ = false;
    ops_.clear();
    election_op_.reset();
    merge_op_.reset();
    join_op_.reset();
    awaiting_pong_.clear();
    active_refresh_.clear();
    collapse_member_.clear();
    proposals_seen_.clear();
    join_buffer_.clear();
    Outputs j = start_join(now, via);
    for (auto& s : j.sends) out.sends.push_back(std::move(s));
    for (auto& t : j.timers) out.timers.push_back(t);
}

// ---------------------------------------------------------------------
// elections
// ---------------------------------------------------------------------

void Peer::population_check(SimTime now, Outputs& out) {
    if (!joined_)
        return;
    const int pop = rt_.zone_population();
    if (pop >= cfg_.theta_h) {
        maybe_propose(now, out, ElectPurpose::split);
        return;
    }
    // A sparse remainder is its natural state: it is the merge target for
    // its siblings, never the initiator, and holds any population >= 0.
    if (pop < cfg_.theta_l && rt_.depth() >= 1 &&
        !rt_.self_leaf_boundary().is_remainder())
        maybe_propose(now, out, ElectPurpose::merge);
}

void Peer::maybe_propose(SimTime now, Outputs& out, ElectPurpose purpose) {
    if (busy_topology() || leave_pending_)
        return;
    const auto seen = proposals_seen_.find(static_cast<int>(purpose));
    if (seen != proposals_seen_.end() &&
        now - seen->second.second < 4.0 * params_.election_window() &&
        seen->second.first > addr_)
        return; // a better-placed proposer is already at it

    ElectionOp op;
    op.purpose = purpose;
    op.msgs = static_cast<int>(rt_.leaf_row().size());
    const std::uint64_t op_id = new_op(op);
    election_op_ = op_id;
    for (const auto& [a, le] : rt_.leaf_row())
        send_direct(out, a, Message{ElectProposal{purpose, addr_}}, MsgMeta{addr_, 0, 0});
    arm(out, op_id, params_.election_window());
}

void Peer::handle_elect_proposal(SimTime now, Outputs& out, const MsgMeta& meta,
                                 const ElectProposal& p) {
    std::optional<PeerAddr> higher;
    auto& slot = proposals_seen_[static_cast<int>(p.purpose)];
    if (slot.second < now - 4.0 * params_.election_window())
        slot = {kNoPeer, now};
    if (slot.first < p.proposer)
        slot = {p.proposer, now};
    else if (slot.first > p.proposer)
        higher = slot.first;

    if (election_op_) {
        auto it = ops_.find(*election_op_);
        if (it != ops_.end()) {
            ElectionOp& mine = std::get<ElectionOp>(it->second.state);
            if (mine.purpose == p.purpose) {
                if (addr_ > p.proposer && (!higher || addr_ > *higher))
                    higher = addr_;
                if (p.proposer > addr_)
                    mine.heard_higher = true;
            }
        }
    }
    send_direct(out, p.proposer, Message{ElectAck{higher}}, MsgMeta{addr_, 0, 0});
}

void Peer::handle_elect_ack(SimTime now, Outputs& out, const ElectAck& a) {
    if (!election_op_ || !a.higher_seen)
        return;
    auto it = ops_.find(*election_op_);
    if (it == ops_.end())
        return;
    ElectionOp& mine = std::get<ElectionOp>(it->second.state);
    if (*a.higher_seen > addr_)
        mine.heard_higher = true;
    (void)now;
    (void)out;
}

void Peer::election_concluded(SimTime now, Outputs& out, std::uint64_t op_id) {
    const ElectionOp op = std::get<ElectionOp>(ops_.at(op_id).state);
    ops_.erase(op_id);
    election_op_.reset();
    if (op.heard_higher)
        return; // stood down; the winner carries on
    const int pop = rt_.zone_population();
    if (op.purpose == ElectPurpose::split) {
        if (pop >= cfg_.theta_h)
            perform_split(now, out, 2 * op.msgs);
    } else {
        if (pop < cfg_.theta_l && rt_.depth() >= 1)
            perform_merge(now, out);
    }
    if (leave_pending_ && !busy_topology()) {
        Outputs fin = finish_leave(now);
        for (auto& s : fin.sends) out.sends.push_back(std::move(s));
        out.left = true;
    }
}

// ---------------------------------------------------------------------
// split
// ---------------------------------------------------------------------

void Peer::perform_split(SimTime now, Outputs& out, int election_msgs) {
    std::vector<std::pair<PeerAddr, Point>> members;
    members.emplace_back(addr_, coord_);
    for (const auto& [a, le] : rt_.leaf_row())
        members.emplace_back(a, le.coord);

    std::vector<std::pair<int, Region>> subzones;
    const Region& region = rt_.self_leaf_boundary();
    const bool must_cluster = cfg_.scheme == Scheme::clustering || region.is_remainder();
    bool clustered = false;
    if (must_cluster) {
        try {
            const ClusterResult cr = cluster_zone(region, members, cfg_);
            std::vector<Rect> holes = region.excluded;
            int branch = 0;
            for (const Rect& c : cr.clusters) {
                subzones.emplace_back(branch++, Region::rectangular(c));
                holes.push_back(c);
            }
            subzones.emplace_back(branch, Region::remainder(region.bounds, holes));
            clustered = true;
        } catch (const NoViableClustering&) {
            if (region.is_remainder()) {
                audit(out, "split_deferred_unclusterable_remainder");
                return;
            }
        }
    }
    if (!clustered) {
        int parts = cfg_.k;
        if (cfg_.division_mode == DivisionMode::incremental)
            parts = std::clamp(static_cast<int>(members.size()) / cfg_.theta_l, 2, cfg_.k);
        std::vector<Point> pts;
        for (const auto& [a, p] : members) pts.push_back(p);
        try {
            const std::vector<Rect> rects = split_zone(region.bounds, pts, parts);
            for (std::size_t i = 0; i < rects.size(); ++i)
                subzones.emplace_back(static_cast<int>(i), Region::rectangular(rects[i]));
        } catch (const UnsplittableZone&) {
            audit(out, "split_deferred_unsplittable");
            return;
        }
    }

    std::map<PeerAddr, int> assignment;
    for (const auto& [a, p] : members) {
        int branch = -1;
        for (const auto& [b, region_b] : subzones)
            if (region_contains_point(region_b, p, universe_)) {
                branch = b;
                break;
            }
        if (branch < 0) {
            audit(out, "split_assignment_hole");
            return;
        }
        assignment.emplace(a, branch);
    }

    const ZoneId zone = rt_.zone_id();
    SplitEvent ev{zone, subzones, {assignment.begin(), assignment.end()},
                  static_cast<int>(rt_.leaf_row().size()), election_msgs};
    for (const auto& [a, le] : rt_.leaf_row())
        send_direct(out, a, Message{SplitAnnounce{zone, subzones, ev.assignment}},
                    MsgMeta{addr_, 0, 0});
    rt_.apply_split(zone, subzones, assignment.at(addr_), assignment, now);
    out.topo.push_back(std::move(ev));
    proposals_seen_.erase(static_cast<int>(ElectPurpose::split));
    // a merge may have pushed this zone far above theta_H; sub-zones can
    // still be over the line and need another round
    population_check(now, out);
}

void Peer::handle_split_announce(SimTime now, Outputs& out, const MsgMeta& meta,
                                 const SplitAnnounce& ann) {
    std::map<PeerAddr, int> assignment(ann.assignment.begin(), ann.assignment.end());
    const auto mine = assignment.find(addr_);
    if (mine == assignment.end()) {
        audit(out, "split_announce_without_us");
        rejoin(now, out, meta.from);
        return;
    }
    try {
        rt_.apply_split(ann.zone, ann.subzones, mine->second, assignment, now);
    } catch (const WrongZone&) {
        audit(out, "split_announce_wrong_zone");
        rejoin(now, out, meta.from);
        return;
    } catch (const InconsistentAssignment&) {
        audit(out, "split_announce_inconsistent");
        rejoin(now, out, meta.from);
        return;
    }
    // the split settles any election we were running for it
    if (election_op_) {
        ops_.erase(*election_op_);
        election_op_.reset();
    }
    proposals_seen_.erase(static_cast<int>(ElectPurpose::split));
    population_check(now, out);
}

// ---------------------------------------------------------------------
// merge and collapse
// ---------------------------------------------------------------------

std::optional<int> Peer::deterministic_partner(int row, int initiator_col) const {
    const auto& rw = rt_.row(row);
    const auto init_it = rw.find(initiator_col);
    if (init_it == rw.end())
        return std::nullopt;
    const Region& init_region = init_it->second.boundary;

    if (init_region.is_remainder()) {
        // the remainder itself is shrinking: absorb the lowest cluster
        for (const auto& [col, e] : rw)
            if (col != initiator_col)
                return col;
        return std::nullopt;
    }
    if (cfg_.scheme == Scheme::clustering) {
        for (const auto& [col, e] : rw)
            if (col != initiator_col && e.boundary.is_remainder())
                return col;
        return std::nullopt;
    }
    // splitting scheme: lowest branch whose rect unions with ours into a rect
    const Rect& a = init_region.bounds;
    for (const auto& [col, e] : rw) {
        if (col == initiator_col || e.boundary.is_remainder()) continue;
        const Rect& b = e.boundary.bounds;
        const bool same_x = a.min.x == b.min.x && a.max.x == b.max.x &&
                            (a.max.y == b.min.y || b.max.y == a.min.y);
        const bool same_y = a.min.y == b.min.y && a.max.y == b.max.y &&
                            (a.max.x == b.min.x || b.max.x == a.min.x);
        if (same_x || same_y)
            return col;
    }
    return std::nullopt;
}

std::optional<Peer::MergeRoles> Peer::merge_roles(int row, int init_col,
                                                  int partner_col) const {
    const auto& rw = rt_.row(row);
    const auto ia = rw.find(init_col);
    const auto pa = rw.find(partner_col);
    if (ia == rw.end() || pa == rw.end())
        return std::nullopt;
    const Region& ir = ia->second.boundary;
    const Region& pr = pa->second.boundary;

    MergeRoles roles;
    if (ir.is_remainder() || pr.is_remainder()) {
        const bool init_is_rem = ir.is_remainder();
        const Region& rem = init_is_rem ? ir : pr;
        const Region& cluster = init_is_rem ? pr : ir;
        roles.removed = init_is_rem ? partner_col : init_col;
        roles.surviving = init_is_rem ? init_col : partner_col;
        std::vector<Rect> holes;
        for (const Rect& h : rem.excluded)
            if (!(h == cluster.bounds))
                holes.push_back(h);
        roles.new_boundary = holes.empty() ? Region::rectangular(rem.bounds)
                                           : Region::remainder(rem.bounds, holes);
        return roles;
    }
    roles.removed = init_col;
    roles.surviving = partner_col;
    const Rect& a = ir.bounds;
    const Rect& b = pr.bounds;
    roles.new_boundary = Region::rectangular(
        Rect{{std::min(a.min.x, b.min.x), std::min(a.min.y, b.min.y)},
             {std::max(a.max.x, b.max.x), std::max(a.max.y, b.max.y)}});
    return roles;
}

void Peer::perform_merge(SimTime now, Outputs& out) {
    const int row = static_cast<int>(rt_.depth());
    const int my_col = self_branch(row);
    const auto partner = deterministic_partner(row, my_col);
    if (!partner) {
        audit(out, "merge_deferred_no_partner");
        return;
    }
    const auto roles = merge_roles(row, my_col, *partner);
    if (!roles)
        return;
    const auto& entry = rt_.row(row).at(*partner);
    MergeInitOp op;
    op.row = row;
    op.partner_col = *partner;
    op.removed_col = roles->removed;
    op.surviving_col = roles->surviving;
    op.new_boundary = roles->new_boundary;
    op.my_boundary = rt_.self_leaf_boundary();
    for (const Contact& c : entry.bucket.contacts())
        op.contacts.push_back(c.addr);
    if (op.contacts.empty()) {
        audit(out, "merge_deferred_no_partner_contact");
        return;
    }
    op.my_peers.push_back(LeafEntry{addr_, coord_, now});
    for (const auto& [a, le] : rt_.leaf_row())
        op.my_peers.push_back(le);

    const std::uint64_t op_id = new_op(op);
    merge_op_ = op_id;
    send_direct(out, op.contacts[0], Message{MergerRequest{op.my_boundary, op.my_peers}},
                MsgMeta{addr_, 0, 0});
    arm(out, op_id, 2.0 * params_.max_delay * (rt_.leaf_row_index() + 6));
}

void Peer::handle_merger_request(SimTime now, Outputs& out, const MsgMeta& meta,
                                 const MergerRequest& req, bool relayed) {
    // locate the merging zone in our own table
    int row = -1, col = -1;
    if (req.boundary == rt_.self_leaf_boundary()) {
        row = static_cast<int>(rt_.depth());
        col = row >= 1 ? self_branch(row) : -1;
    } else {
        for (int r = static_cast<int>(rt_.depth()); r >= 1 && row < 0; --r)
            for (const auto& [c, e] : rt_.row(r))
                if (!e.is_self && e.boundary == req.boundary) {
                    row = r;
                    col = c;
                    break;
                }
    }
    if (row < 1) {
        audit(out, "merger_request_unknown_boundary");
        return;
    }

    const bool its_our_zone = col == self_branch(row);
    if (its_our_zone) {
        // relayed to us as a member of the merging zone
        const auto partner = deterministic_partner(row, col);
        if (!partner) {
            audit(out, "merger_relay_no_partner");
            return;
        }
        const auto roles = merge_roles(row, col, *partner);
        if (!roles)
            return;
        try {
            rt_.apply_merge(req.peers, roles->removed, roles->surviving,
                            roles->new_boundary, now);
        } catch (const std::exception&) {
            audit(out, "merger_relay_failed");
            rejoin(now, out, meta.from);
            return;
        }
        population_check(now, out);
        return;
    }

    if (relayed) {
        // partner-zone member: the merging zone joins us
        const auto roles = merge_roles(row, col, self_branch(row));
        if (!roles)
            return;
        try {
            rt_.apply_merge(req.peers, roles->removed, roles->surviving,
                            roles->new_boundary, now);
        } catch (const std::exception&) {
            audit(out, "merger_relay_failed");
            rejoin(now, out, meta.from);
        }
        population_check(now, out);
        return;
    }

    // we are the contacted partner peer
    if (busy_topology()) {
        audit(out, "merger_request_busy");
        return; // initiator times out and retries
    }
    if (row < static_cast<int>(rt_.depth())) {
        // our side of the hierarchy is deeper: collapse it first
        CollapsePartnerOp op;
        op.request = req;
        op.requester = meta.from;
        op.level = row;
        std::vector<LeafEntry> own;
        own.push_back(LeafEntry{addr_, coord_, now});
        for (const auto& [a, le] : rt_.leaf_row())
            own.push_back(le);
        op.accepted[addr_] = std::move(own);
        const std::uint64_t op_id = new_op(op);
        merge_op_ = op_id;
        zb_fanout(now, out, MsgMeta{addr_, 0, 0}, row + 1,
                  Payload::box(Message{CollapseRequest{row, addr_}}));
        arm(out, op_id,
            2.0 * params_.max_delay * (static_cast<int>(rt_.depth()) - row + 2));
        return;
    }

    // plain leaf partner
    const int partner_validate = deterministic_partner(row, col).value_or(-1);
    if (partner_validate != self_branch(row)) {
        audit(out, "merger_request_partner_mismatch");
        return;
    }
    const auto roles = merge_roles(row, col, self_branch(row));
    if (!roles)
        return;
    std::vector<LeafEntry> mine;
    mine.push_back(LeafEntry{addr_, coord_, now});
    for (const auto& [a, le] : rt_.leaf_row())
        mine.push_back(le);
    try {
        rt_.apply_merge(req.peers, roles->removed, roles->surviving, roles->new_boundary,
                        now);
    } catch (const std::exception&) {
        audit(out, "merger_request_apply_failed");
        return;
    }
    for (const LeafEntry& le : mine)
        if (le.addr != addr_)
            send_direct(out, le.addr,
                        Message{ZoneBroadcast{kDeliverOnlyLevel,
                                              Payload::box(Message{req})}},
                        MsgMeta{addr_, 0, 0});
    send_direct(out, meta.from, Message{MergerReply{mine}}, MsgMeta{addr_, 0, 0});
    population_check(now, out);
}

void Peer::handle_merger_reply(SimTime now, Outputs& out, const MsgMeta& meta,
                               const MergerReply& rep) {
    if (!merge_op_)
        return;
    auto it = ops_.find(*merge_op_);
    if (it == ops_.end())
        return;
    MergeInitOp* op = std::get_if<MergeInitOp>(&it->second.state);
    if (!op)
        return;

    const ZoneId pre_zone = rt_.zone_id();
    const int row = op->row;
    // the topology may have shifted under us while the request was out
    if (row != static_cast<int>(rt_.depth()) || !rt_.row(row).count(op->removed_col) ||
        !rt_.row(row).count(op->surviving_col)) {
        audit(out, "merger_reply_stale");
        ops_.erase(*merge_op_);
        merge_op_.reset();
        return;
    }

    // snapshot the other siblings' contacts before the merge rewrites the row
    std::vector<PeerAddr> update_targets;
    for (const auto& [c, e] : rt_.row(row)) {
        if (e.is_self || c == op->surviving_col || c == op->removed_col) continue;
        if (e.bucket.empty()) {
            audit(out, "merger_update_unreachable_sibling");
            continue;
        }
        update_targets.push_back(e.bucket.front().addr);
    }

    try {
        rt_.apply_merge(rep.peers, op->removed_col, op->surviving_col, op->new_boundary,
                        now);
    } catch (const std::exception&) {
        audit(out, "merger_apply_failed");
        ops_.erase(*merge_op_);
        merge_op_.reset();
        return;
    }

    // bring our old zone-mates along
    for (const LeafEntry& le : op->my_peers)
        if (le.addr != addr_)
            send_direct(out, le.addr,
                        Message{ZoneBroadcast{
                            kDeliverOnlyLevel,
                            Payload::box(Message{MergerRequest{op->my_boundary, rep.peers}})}},
                        MsgMeta{addr_, 0, 0});

    // tell the other sibling zones to drop the merged column
    for (PeerAddr target : update_targets)
        send_direct(out, target, Message{MergerUpdate{op->removed_col, row}},
                    MsgMeta{addr_, 0, 0});

    MergeEvent ev;
    ev.parent = pre_zone.parent();
    ev.removed_branch = op->removed_col;
    ev.surviving_branch = op->surviving_col;
    ev.new_region = op->new_boundary;
    for (const LeafEntry& le : op->my_peers)
        ev.moved.push_back(le.addr);
    out.topo.push_back(std::move(ev));

    ops_.erase(*merge_op_);
    merge_op_.reset();
    population_check(now, out);
    if (leave_pending_ && !busy_topology()) {
        Outputs fin = finish_leave(now);
        for (auto& s : fin.sends) out.sends.push_back(std::move(s));
        out.left = true;
    }
}

void Peer::handle_merger_update(SimTime now, Outputs& out, const MsgMeta& meta,
                                const MergerUpdate& mu, bool relayed) {
    if (mu.level < 1 || mu.level > static_cast<int>(rt_.depth())) {
        audit(out, "merger_update_out_of_range");
        return;
    }
    if (self_branch(mu.level) == mu.removed_zone_segment) {
        // we believe we live in the zone that just merged away
        audit(out, "merger_update_orphan");
        rejoin(now, out, meta.from);
        return;
    }
    const auto partner = deterministic_partner(mu.level, mu.removed_zone_segment);
    if (!partner) {
        audit(out, "merger_update_unresolvable");
        return;
    }
    const auto roles = merge_roles(mu.level, mu.removed_zone_segment, *partner);
    if (!roles)
        return;
    try {
        if (*partner == self_branch(mu.level)) {
            // should have come as a merger request; treat boundary only
            audit(out, "merger_update_for_partner");
            return;
        }
        rt_.set_sibling_boundary(mu.level, *partner, roles->new_boundary);
        rt_.remove_sibling_column(mu.level, mu.removed_zone_segment);
    } catch (const std::exception&) {
        audit(out, "merger_update_failed");
        return;
    }
    if (!relayed)
        zb_fanout(now, out, MsgMeta{addr_, 0, 0}, mu.level + 1,
                  Payload::box(Message{mu}));
}

void Peer::handle_collapse_request(SimTime now, Outputs& out, const MsgMeta& meta,
                                   const CollapseRequest& cr) {
    if (cr.requester == addr_)
        return;
    if (cr.level < 1 || cr.level > static_cast<int>(rt_.depth())) {
        audit(out, "collapse_request_out_of_range");
        return;
    }
    collapse_member_[cr.requester] = cr.level;
    std::vector<LeafEntry> mine;
    mine.push_back(LeafEntry{addr_, coord_, now});
    for (const auto& [a, le] : rt_.leaf_row())
        mine.push_back(le);
    send_direct(out, cr.requester, Message{CollapseAccept{mine}}, MsgMeta{addr_, 0, 0});
}

void Peer::handle_collapse_accept(SimTime now, Outputs& out, const MsgMeta& meta,
                                  const CollapseAccept& ca) {
    if (!merge_op_)
        return;
    auto it = ops_.find(*merge_op_);
    if (it == ops_.end())
        return;
    CollapsePartnerOp* op = std::get_if<CollapsePartnerOp>(&it->second.state);
    if (!op || op->phase != 0)
        return;
    op->accepted[meta.from] = ca.leaf_peers;
    (void)now;
    (void)out;
}

void Peer::handle_collapse_complete(SimTime now, Outputs& out, const MsgMeta& meta,
                                    const CollapseComplete& cc) {
    auto it = collapse_member_.find(meta.from);
    if (it == collapse_member_.end()) {
        audit(out, "collapse_complete_unexpected");
        return;
    }
    const int level = it->second;
    collapse_member_.erase(it);
    if (level > static_cast<int>(rt_.depth()))
        return;
    rt_.flatten_to_level(level, cc.all_peers, now);
    if (leave_pending_ && !busy_topology()) {
        Outputs fin = finish_leave(now);
        for (auto& s : fin.sends) out.sends.push_back(std::move(s));
        out.left = true;
    }
}

void Peer::finish_partner_merge(SimTime now, Outputs& out, std::uint64_t op_id) {
    const CollapsePartnerOp op = std::get<CollapsePartnerOp>(ops_.at(op_id).state);
    ops_.erase(op_id);
    merge_op_.reset();
    MsgMeta meta{op.requester, 0, 0, 0, std::nullopt};
    handle_merger_request(now, out, meta, op.request, false);
    if (leave_pending_ && !busy_topology()) {
        Outputs fin = finish_leave(now);
        for (auto& s : fin.sends) out.sends.push_back(std::move(s));
        out.left = true;
    }
}

// ---------------------------------------------------------------------
// refresh
// ---------------------------------------------------------------------

void Peer::refresh_tick(SimTime now, Outputs& out) {
    const double half = params_.refresh_period / 2.0;

    for (const auto& [row, col] : rt_.stale_buckets(now, half))
        spawn_entry_refresh(now, out, row, col);

    // Empty remainder buckets are not in the stale list, but a remainder
    // that gained peers since we last heard would otherwise stay dark.
    // Probe them at most once per full period.
    for (int r = 1; r <= static_cast<int>(rt_.depth()); ++r)
        for (const auto& [col, e] : rt_.row(r))
            if (!e.is_self && e.bucket.empty() && e.boundary.is_remainder()) {
                auto& last = remainder_probe_[{r, col}];
                if (now - last >= params_.refresh_period || last == 0) {
                    last = now;
                    spawn_entry_refresh(now, out, r, col);
                }
            }

    for (const auto& [a, le] : rt_.leaf_row()) {
        if (now - le.last_seen <= half) continue;
        if (awaiting_pong_.count(a)) continue;
        const std::uint64_t op_id = new_op(LeafPingOp{a});
        awaiting_pong_[a] = op_id;
        send_direct(out, a, Message{Ping{true}}, MsgMeta{addr_, 0, 0},
                    rt_.leaf_row_index() + 1);
        arm(out, op_id, params_.ping_timeout());
    }

    // refresh ops above snapshotted their ping queues; anything older than
    // a full period is no longer trustworthy as a backup
    rt_.prune_contacts(now, params_.refresh_period);

    population_check(now, out);
}

void Peer::spawn_entry_refresh(SimTime now, Outputs& out, int row, int col) {
    if (active_refresh_.count({row, col}))
        return;
    RefreshEntryOp op;
    op.row = row;
    op.col = col;
    for (const Contact& c : rt_.row(row).at(col).bucket.contacts())
        op.queue.push_back(c.addr);
    const std::uint64_t op_id = new_op(std::move(op));
    active_refresh_[{row, col}] = op_id;
    advance_refresh(now, out, op_id);
}

void Peer::advance_refresh(SimTime now, Outputs& out, std::uint64_t op_id) {
    auto it = ops_.find(op_id);
    if (it == ops_.end())
        return;
    RefreshEntryOp& op = std::get<RefreshEntryOp>(it->second.state);

    // the column may have merged away while we were working on it
    bool column_gone = row_gone(op.row, op.col);
    if (column_gone) {
        finish_refresh(op_id, op.row, op.col);
        return;
    }

    if (op.stage == 0 || op.stage == 3) {
        while (op.idx < op.queue.size()) {
            const PeerAddr target = op.queue[op.idx];
            if (awaiting_pong_.count(target)) {
                op.idx++; // someone else is already probing this peer
                continue;
            }
            op.waiting = target;
            awaiting_pong_[target] = op_id;
            it->second.epoch++;
            send_direct(out, target, Message{Ping{false}}, MsgMeta{addr_, 0, 0},
                        op.row + 1, static_cast<std::uint8_t>(self_branch(op.row)));
            arm(out, op_id, params_.ping_timeout());
            return;
        }
        if (op.stage == 3) {
            // nothing verified; out of contact until the next tick
            finish_refresh(op_id, op.row, op.col);
            return;
        }
        op.stage = 1;
        // fall through to sibling query
        int sent = 0;
        for (const auto& [c, e] : rt_.row(op.row)) {
            if (e.is_self || c == op.col || e.bucket.empty()) continue;
            send_direct(out, e.bucket.front().addr, Message{RefreshQuery{op.row, op.col}},
                        MsgMeta{addr_, 0, 0}, op.row + 1,
                        static_cast<std::uint8_t>(self_branch(op.row)));
            ++sent;
        }
        if (sent == 0) {
            op.stage = 2;
            advance_stage_two(now, out, op_id);
            return;
        }
        it->second.epoch++;
        arm(out, op_id, params_.reply_window());
        return;
    }

    if (op.stage == 1) {
        if (!op.discovered.empty()) {
            op.stage = 3;
            op.queue = std::move(op.discovered);
            if (op.queue.size() > 6)
                op.queue.resize(6); // bound the verification chain
            op.discovered.clear();
            op.idx = 0;
            advance_refresh(now, out, op_id);
            return;
        }
        op.stage = 2;
        advance_stage_two(now, out, op_id);
        return;
    }

    if (op.stage == 2) {
        if (!op.discovered.empty()) {
            op.stage = 3;
            op.queue = std::move(op.discovered);
            if (op.queue.size() > 6)
                op.queue.resize(6);
            op.discovered.clear();
            op.idx = 0;
            advance_refresh(now, out, op_id);
            return;
        }
        // out of contact until next refresh
        finish_refresh(op_id, op.row, op.col);
        return;
    }
}

void Peer::finish_refresh(std::uint64_t op_id, int row, int col) {
    ops_.erase(op_id);
    active_refresh_.erase({row, col});
}

bool Peer::row_gone(int row, int col) const {
    if (row < 1 || row > static_cast<int>(rt_.depth()))
        return true;
    const auto& rw = rt_.row(row);
    const auto it = rw.find(col);
    return it == rw.end() || it->second.is_self;
}

void Peer::advance_stage_two(SimTime now, Outputs& out, std::uint64_t op_id) {
    auto it = ops_.find(op_id);
    if (it == ops_.end())
        return;
    RefreshEntryOp& op = std::get<RefreshEntryOp>(it->second.state);
    // everyone inside our level-`row` zone shares that row of the table:
    // leaf mates first, and when the leaf zone is just us, the bucket
    // fronts of the deeper rows still qualify
    std::set<PeerAddr> targets;
    for (const auto& [a, le] : rt_.leaf_row())
        targets.insert(a);
    for (int r = op.row + 1; r <= static_cast<int>(rt_.depth()); ++r)
        for (const auto& [c, e] : rt_.row(r))
            if (!e.is_self && !e.bucket.empty())
                targets.insert(e.bucket.front().addr);
    int sent = 0;
    for (PeerAddr a : targets) {
        send_direct(out, a, Message{RefreshQuery{op.row, op.col}}, MsgMeta{addr_, 0, 0});
        ++sent;
    }
    if (sent == 0) {
        finish_refresh(op_id, op.row, op.col);
        return;
    }
    it->second.epoch++;
    arm(out, op_id, params_.reply_window());
    (void)now;
}

void Peer::handle_pong(SimTime now, Outputs& out, const MsgMeta& meta, const Pong& pong) {
    auto wait = awaiting_pong_.find(meta.from);
    if (wait == awaiting_pong_.end())
        return;
    const std::uint64_t op_id = wait->second;
    awaiting_pong_.erase(wait);
    auto it = ops_.find(op_id);
    if (it == ops_.end())
        return;

    if (LeafPingOp* lp = std::get_if<LeafPingOp>(&it->second.state)) {
        ops_.erase(op_id);
        if (pong.leaf_mismatch) {
            // the mate says we are not in its zone: our view is stale
            audit(out, "leaf_mismatch_hint");
            rejoin(now, out, meta.from);
            return;
        }
        rt_.refresh_leaf(lp->target, now);
        return;
    }

    RefreshEntryOp* op = std::get_if<RefreshEntryOp>(&it->second.state);
    if (!op || op->waiting != meta.from)
        return;
    op->waiting = kNoPeer;
    it->second.epoch++;
    const int row = op->row, col = op->col;
    const bool verify = op->stage == 3;
    finish_refresh(op_id, row, col);
    if (row_gone(row, col))
        return;
    rt_.touch(meta.from, row, col, now);
    if (verify)
        // freshly discovered contact: pull a routing table sample for
        // diversity while we have it on the line
        send_direct(out, meta.from,
                    Message{SampleRequest{row + 1, params_.bucket_capacity - 1}},
                    MsgMeta{addr_, 0, 0}, row + 1,
                    static_cast<std::uint8_t>(self_branch(row)));
}

void Peer::handle_refresh_query(SimTime now, Outputs& out, const MsgMeta& meta,
                                const RefreshQuery& q) {
    RefreshReply reply{q.row, q.col, {}};
    if (q.row >= 1 && q.row <= static_cast<int>(rt_.depth())) {
        const auto& rw = rt_.row(q.row);
        const auto it = rw.find(q.col);
        if (it != rw.end() && !it->second.is_self)
            for (const Contact& c : it->second.bucket.contacts())
                reply.addrs.push_back(c.addr);
    }
    send_direct(out, meta.from, Message{reply}, MsgMeta{addr_, 0, 0});
    (void)now;
}

void Peer::handle_refresh_reply(SimTime now, Outputs& out, const MsgMeta& meta,
                                const RefreshReply& r) {
    auto act = active_refresh_.find({r.row, r.col});
    if (act == active_refresh_.end())
        return;
    auto it = ops_.find(act->second);
    if (it == ops_.end())
        return;
    RefreshEntryOp& op = std::get<RefreshEntryOp>(it->second.state);
    if (op.stage != 1 && op.stage != 2)
        return;
    const bool gone = row_gone(r.row, r.col);
    for (PeerAddr a : r.addrs) {
        if (a == addr_ || op.seen.count(a)) continue;
        if (!gone && rt_.row(r.row).at(r.col).bucket.has(a)) continue;
        op.seen.insert(a);
        op.discovered.push_back(a);
    }
    (void)now;
    (void)out;
}

void Peer::handle_sample_request(SimTime now, Outputs& out, const MsgMeta& meta,
                                 const SampleRequest& req) {
    const auto entries = rt_.sample_entries(req.min_row, req.size, rng_.next());
    send_direct(out, meta.from, Message{SampleReply{entries}}, MsgMeta{addr_, 0, 0});
    (void)now;
}

void Peer::handle_sample_reply(SimTime now, Outputs& out, const MsgMeta& meta,
                               const SampleReply& rep) {
    const auto slot = rt_.find_addr_slot(meta.from);
    if (!slot)
        return; // the sampled contact moved or was evicted meanwhile
    for (const SampleEntry& e : rep.entries) {
        if (e.addr == addr_ || e.addr == meta.from) continue;
        auto& row = rt_.row_mut(slot->first);
        auto it = row.find(slot->second);
        if (it == row.end() || it->second.is_self) continue;
        it->second.bucket.insert_behind_front(e.addr, now);
    }
    (void)out;
}

} // namespace geop2p
