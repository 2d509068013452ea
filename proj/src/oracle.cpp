#include "geop2p/oracle.hpp"

#include <algorithm>

namespace geop2p {

namespace {

template <class... Ts> struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts> overloaded(Ts...) -> overloaded<Ts...>;

} // namespace

std::string AuditReport::summary() const {
    std::string s = "audit: " + std::to_string(peers_checked) + " peers, " +
                    std::to_string(violations.size()) + " violations";
    for (std::size_t i = 0; i < violations.size() && i < 8; ++i) {
        const AuditViolation& v = violations[i];
        s += "\n  peer " + std::to_string(v.peer) + " row " + std::to_string(v.row) +
             " col " + std::to_string(v.col) + ": " + v.what;
    }
    if (violations.size() > 8)
        s += "\n  ...";
    return s;
}

GroundTruth::GroundTruth(const Rect& universe) : universe_(universe) {
    root_.region = Region::rectangular(universe);
}

void GroundTruth::peer_joined(PeerAddr addr, Point coord, SimTime at) {
    live_[addr] = coord;
    departed_.erase(addr);
    (void)at;
}

void GroundTruth::peer_left(PeerAddr addr, SimTime at) {
    auto it = live_.find(addr);
    if (it == live_.end())
        return;
    departed_[addr] = {it->second, at};
    live_.erase(it);
}

const ZoneNode* GroundTruth::find(const ZoneId& id) const {
    const ZoneNode* n = &root_;
    for (std::uint8_t b : id.path()) {
        auto it = n->children.find(b);
        if (it == n->children.end())
            return nullptr;
        n = it->second.get();
    }
    return n;
}

void GroundTruth::apply(const TopoEvent& ev) {
    std::visit(
        overloaded{
            [&](const SplitEvent& e) {
                ZoneNode* n = const_cast<ZoneNode*>(find(e.zone));
                if (!n || !n->is_leaf())
                    return;
                for (const auto& [branch, region] : e.subzones) {
                    auto child = std::make_unique<ZoneNode>();
                    child->region = region;
                    n->children.emplace(branch, std::move(child));
                }
            },
            [&](const MergeEvent& e) {
                ZoneNode* n = const_cast<ZoneNode*>(find(e.parent));
                if (!n)
                    return;
                n->children.erase(e.removed_branch);
                auto it = n->children.find(e.surviving_branch);
                if (it != n->children.end())
                    it->second->region = e.new_region;
                if (n->children.size() == 1)
                    n->children.clear(); // an only child is its parent
            },
            [&](const CollapseEvent& e) {
                ZoneNode* n = const_cast<ZoneNode*>(find(e.zone));
                if (n)
                    n->children.clear();
            },
        },
        ev);
}

std::vector<PeerAddr> GroundTruth::brute_range(const AreaShape& area) const {
    std::vector<PeerAddr> out;
    for (const auto& [a, p] : live_)
        if (area_contains_point(area, p, universe_))
            out.push_back(a);
    return out;
}

PeerAddr GroundTruth::brute_nearest(const Point& p) const {
    if (live_.empty())
        throw NoPeers{};
    PeerAddr best = kNoPeer;
    double best_d = 0;
    for (const auto& [a, q] : live_) {
        const double d = distance(p, q);
        if (best == kNoPeer || d < best_d) {
            best = a;
            best_d = d;
        }
    }
    return best;
}

ZoneId GroundTruth::leaf_zone_of(const Point& p) const {
    std::vector<std::uint8_t> path;
    const ZoneNode* n = &root_;
    while (!n->is_leaf()) {
        const ZoneNode* next = nullptr;
        for (const auto& [b, child] : n->children) {
            if (region_contains_point(child->region, p, universe_)) {
                path.push_back(static_cast<std::uint8_t>(b));
                next = child.get();
                break;
            }
        }
        if (!next)
            break; // should not happen: children cover the parent
        n = next;
    }
    return ZoneId{std::move(path)};
}

std::vector<PeerAddr> GroundTruth::zone_members(const ZoneId& id) const {
    const ZoneNode* n = find(id);
    std::vector<PeerAddr> out;
    if (!n)
        return out;
    for (const auto& [a, p] : live_)
        if (region_contains_point(n->region, p, universe_) && leaf_zone_of(p) == id)
            out.push_back(a);
    return out;
}

namespace {

int depth_of(const ZoneNode& n) {
    if (n.is_leaf())
        return 0;
    int d = 0;
    for (const auto& [b, c] : n.children)
        d = std::max(d, 1 + depth_of(*c));
    return d;
}

} // namespace

int GroundTruth::max_leaf_depth() const {
    return depth_of(root_);
}

AuditReport GroundTruth::audit_tables(const std::map<PeerAddr, Peer>& peers, SimTime now,
                                      double staleness) const {
    AuditReport report;
    for (const auto& [a, peer] : peers) {
        if (!peer.joined() || !is_live(a))
            continue;
        report.peers_checked++;
        audit_one(peer, now, staleness, report);
    }
    return report;
}

void GroundTruth::audit_one(const Peer& peer, SimTime now, double staleness,
                            AuditReport& report) const {
    const RoutingTable& rt = peer.table();
    const PeerAddr self = peer.addr();
    const auto flag = [&](int row, int col, std::string what) {
        report.violations.push_back(AuditViolation{self, row, col, std::move(what)});
    };

    const ZoneId truth_zone = leaf_zone_of(peer.coord());
    if (rt.zone_id() != truth_zone) {
        flag(0, 0, "zone id " + rt.zone_id().to_string() + " != ground truth " +
                       truth_zone.to_string());
        return; // everything below would mismatch trivially
    }

    const ZoneNode* node = &root_;
    for (int r = 1; r <= static_cast<int>(rt.depth()); ++r) {
        const auto& row = rt.row(r);
        const int self_col = rt.zone_id().branch_at(r);

        int markers = 0;
        for (const auto& [col, e] : row) {
            if (e.is_self) {
                ++markers;
                if (col != self_col)
                    flag(r, col, "self marker at wrong column");
            }
        }
        if (markers != 1)
            flag(r, self_col, "expected exactly one self marker");

        // column set must match the authoritative children of the ancestor
        for (const auto& [b, child] : node->children)
            if (!row.count(b))
                flag(r, b, "missing sibling column");
        for (const auto& [col, e] : row) {
            auto truth = node->children.find(col);
            if (truth == node->children.end()) {
                flag(r, col, "stale column not in ground truth");
                continue;
            }
            if (!(truth->second->region == e.boundary))
                flag(r, col, "boundary differs from ground truth");
            if (e.is_self)
                continue;
            if (e.bucket.empty()) {
                // an unrepresented zone is only a problem while someone
                // actually lives there; a zone whose last peer departed
                // has nobody left to merge it away
                bool populated = false;
                for (const auto& [la, lp] : live_)
                    if (region_contains_point(e.boundary, lp, universe_)) {
                        populated = true;
                        break;
                    }
                if (populated)
                    flag(r, col, "empty bucket for populated zone");
                continue;
            }
            const Contact& front = e.bucket.front();
            auto lp = live_.find(front.addr);
            if (lp == live_.end())
                flag(r, col, "bucket front " + std::to_string(front.addr) + " not live");
            else if (!region_contains_point(e.boundary, lp->second, universe_))
                flag(r, col, "bucket front outside its zone");
            for (const Contact& c : e.bucket.contacts()) {
                auto cp = live_.find(c.addr);
                if (cp != live_.end()) {
                    if (!region_contains_point(e.boundary, cp->second, universe_))
                        flag(r, col, "contact " + std::to_string(c.addr) +
                                         " outside its zone");
                    continue;
                }
                auto dp = departed_.find(c.addr);
                if (dp == departed_.end() || now - dp->second.second > staleness)
                    flag(r, col, "contact " + std::to_string(c.addr) +
                                     " dead beyond staleness window");
            }
        }

        auto next = node->children.find(self_col);
        if (next == node->children.end())
            return; // already flagged above
        // nesting along the self chain
        const Rect& cb = next->second->region.bounds;
        const Rect& pb = node->region.bounds;
        if (!(pb.min.x <= cb.min.x && cb.max.x <= pb.max.x && pb.min.y <= cb.min.y &&
              cb.max.y <= pb.max.y))
            flag(r, self_col, "self chain not nested");
        node = next->second.get();
    }

    if (!(node->region == rt.self_leaf_boundary()))
        flag(static_cast<int>(rt.depth()), -1, "leaf boundary differs from ground truth");
    if (!region_contains_point(rt.self_leaf_boundary(), peer.coord(), universe_))
        flag(static_cast<int>(rt.depth()), -1, "own coordinate outside leaf boundary");

    // leaf row must be exactly the zone mates
    std::vector<PeerAddr> mates = zone_members(rt.zone_id());
    for (PeerAddr m : mates) {
        if (m == self)
            continue;
        auto it = rt.leaf_row().find(m);
        if (it == rt.leaf_row().end()) {
            flag(rt.leaf_row_index(), -1, "missing zone mate " + std::to_string(m));
            continue;
        }
        if (!(it->second.coord == live_.at(m)))
            flag(rt.leaf_row_index(), -1, "wrong coordinate for " + std::to_string(m));
    }
    for (const auto& [m, le] : rt.leaf_row())
        if (std::find(mates.begin(), mates.end(), m) == mates.end())
            flag(rt.leaf_row_index(), -1, "leaf row holds non-mate " + std::to_string(m));
}

} // namespace geop2p
