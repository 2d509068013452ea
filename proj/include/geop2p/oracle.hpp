#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "geop2p/peer.hpp"

namespace geop2p {

struct NoPeers : std::runtime_error {
    NoPeers() : std::runtime_error("no live peers") {}
};

struct ZoneNode {
    Region region;
    std::map<int, std::unique_ptr<ZoneNode>> children;
    bool is_leaf() const { return children.empty(); }
};

struct AuditViolation {
    PeerAddr peer = kNoPeer;
    int row = 0;
    int col = 0;
    std::string what;
};

struct AuditReport {
    std::vector<AuditViolation> violations;
    int peers_checked = 0;
    bool ok() const { return violations.empty(); }
    std::string summary() const;
};

// Global-knowledge ground truth, maintained from authoritative simulator
// events (join/leave plus the topology changes leaders announce). Never
// reads routing tables, which is what makes auditing them meaningful.
class GroundTruth {
public:
    explicit GroundTruth(const Rect& universe);

    void peer_joined(PeerAddr addr, Point coord, SimTime at);
    void peer_left(PeerAddr addr, SimTime at);
    void apply(const TopoEvent& ev);

    const std::map<PeerAddr, Point>& live() const { return live_; }
    bool is_live(PeerAddr a) const { return live_.count(a) != 0; }
    const Rect& universe() const { return universe_; }

    std::vector<PeerAddr> brute_range(const AreaShape& area) const;
    PeerAddr brute_nearest(const Point& p) const;

    const ZoneNode& root() const { return root_; }
    const ZoneNode* find(const ZoneId& id) const;
    ZoneId leaf_zone_of(const Point& p) const;
    std::vector<PeerAddr> zone_members(const ZoneId& id) const;
    int max_leaf_depth() const;

    // Full structural audit of every live peer's routing table against the
    // authoritative tree. `staleness` is the refresh period t: non-front
    // bucket contacts may be that recently departed.
    AuditReport audit_tables(const std::map<PeerAddr, Peer>& peers, SimTime now,
                             double staleness) const;

private:
    void audit_one(const Peer& peer, SimTime now, double staleness,
                   AuditReport& report) const;

    Rect universe_;
    ZoneNode root_;
    std::map<PeerAddr, Point> live_;
    std::map<PeerAddr, std::pair<Point, SimTime>> departed_;
};

} // namespace geop2p
