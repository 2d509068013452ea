#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "geop2p/message.hpp"
#include "geop2p/rng.hpp"
#include "geop2p/routing_table.hpp"

namespace geop2p {

// Tunables shared by every peer; windows derive from the network model's
// delay bound since the protocols only use relative timers.
struct ProtocolParams {
    double refresh_period = 1e9; // t
    double max_delay = 10.0;
    double mean_delay = 5.5;
    int bucket_capacity = 3;

    double ping_timeout() const { return 4.0 * mean_delay; }
    double election_window() const { return 2.0 * max_delay; }
    double reply_window() const { return 3.0 * max_delay; }
};

struct MsgMeta {
    PeerAddr from = kNoPeer;
    std::uint32_t hops = 0;
    std::uint64_t qid = 0;
    int level_hint = 0;                     // routed level of the carried message
    std::optional<std::uint8_t> zone_tag;   // sender's branch at level_hint-1
};

struct OutMsg {
    PeerAddr to = kNoPeer;
    Message msg;
    std::uint32_t hops = 0; // hop count the receiver will observe
    std::uint64_t qid = 0;
    int level_hint = 0;
    std::optional<std::uint8_t> zone_tag;
};

struct TimerReq {
    double delay = 0;
    std::uint64_t token = 0;
    bool periodic_refresh = false; // ignored by quiescence detection
};

struct AppDelivery {
    std::uint64_t qid = 0;
    std::uint32_t hops = 0;
    std::string what;
};

struct SplitEvent {
    ZoneId zone;
    std::vector<std::pair<int, Region>> subzones;
    std::vector<std::pair<PeerAddr, int>> assignment;
    int announce_count = 0;
    int election_msgs = 0;
};
struct MergeEvent {
    ZoneId parent;
    int removed_branch = 0;
    int surviving_branch = 0;
    Region new_region;
    std::vector<PeerAddr> moved;
};
struct CollapseEvent {
    ZoneId zone;
    std::vector<LeafEntry> members;
};
using TopoEvent = std::variant<SplitEvent, MergeEvent, CollapseEvent>;

struct Outputs {
    std::vector<OutMsg> sends;
    std::vector<TimerReq> timers;
    std::vector<AppDelivery> deliveries;
    std::vector<TopoEvent> topo;
    std::vector<std::string> audits;
    bool left = false;
    bool joined_now = false;
    bool join_failed = false;
};

// The peer state machine. Every transition is (state, event) -> outputs;
// handlers never block, all waiting is a scheduled timer.
class Peer {
public:
    Peer(PeerAddr addr, Point coord, const Rect& universe, const ZoningConfig& cfg,
         const ProtocolParams& params, std::uint64_t rng_seed, bool bootstrap_seed);

    PeerAddr addr() const { return addr_; }
    const Point& coord() const { return coord_; }
    bool joined() const { return joined_; }
    const RoutingTable& table() const { return rt_; }
    const Rect& universe() const { return universe_; }

    // First event for an already-joined seed peer: arms the refresh tick.
    Outputs init(SimTime now);
    // Re-arms the periodic refresh under a new period.
    Outputs set_refresh_period(SimTime now, double t);
    Outputs start_join(SimTime now, PeerAddr bootstrap);
    Outputs on_message(SimTime now, const MsgMeta& meta, const Message& msg);
    Outputs on_timer(SimTime now, std::uint64_t token);
    Outputs inject(SimTime now, const Message& query, std::uint64_t qid);
    // Graceful departure; may be deferred while a topology operation is in
    // flight, in which case `left` turns up in a later Outputs.
    Outputs request_leave(SimTime now);

private:
    // ---- pending operations ----
    struct ElectionOp {
        ElectPurpose purpose = ElectPurpose::split;
        bool heard_higher = false;
        int msgs = 0;
    };
    struct RefreshEntryOp {
        int row = 0, col = 0;
        int stage = 0; // 0 ping bucket, 1 ask siblings, 2 ask leaf mates, 3 verify
        std::vector<PeerAddr> queue;
        std::size_t idx = 0;
        PeerAddr waiting = kNoPeer;
        std::vector<PeerAddr> discovered;
        std::set<PeerAddr> seen;
    };
    struct LeafPingOp {
        PeerAddr target = kNoPeer;
    };
    struct NearestOp {
        Point point;
        Payload payload;
        PeerAddr best = kNoPeer;
        double best_dist = 0;
        std::uint64_t qid = 0;
        std::uint32_t hops = 0;
    };
    struct MergeInitOp {
        int row = 0;
        int removed_col = 0, surviving_col = 0, partner_col = 0;
        Region new_boundary;
        Region my_boundary;
        std::vector<PeerAddr> contacts;
        std::size_t idx = 0;
        std::vector<LeafEntry> my_peers; // snapshot including self
    };
    struct CollapsePartnerOp {
        MergerRequest request;
        PeerAddr requester = kNoPeer;
        int level = 0;
        int phase = 0; // 0 collecting accepts, 1 waiting to proceed
        std::map<PeerAddr, std::vector<LeafEntry>> accepted;
        std::vector<LeafEntry> all_peers;
    };
    struct RefreshTickOp {};
    struct JoinOp {
        PeerAddr bootstrap = kNoPeer;
    };
    using OpState = std::variant<ElectionOp, RefreshEntryOp, LeafPingOp, NearestOp,
                                 MergeInitOp, CollapsePartnerOp, RefreshTickOp, JoinOp>;
    struct Op {
        OpState state;
        std::uint32_t epoch = 0;
    };

    // ---- helpers ----
    std::uint64_t new_op(OpState st);
    std::uint64_t token_of(std::uint64_t op_id) const;
    void arm(Outputs& out, std::uint64_t op_id, double delay, bool periodic = false);
    void send_routed(Outputs& out, PeerAddr to, Message msg, const MsgMeta& meta);
    void send_direct(Outputs& out, PeerAddr to, Message msg, const MsgMeta& meta,
                     int level_hint = 0, std::optional<std::uint8_t> tag = std::nullopt);
    void audit(Outputs& out, const std::string& what);
    void piggyback(SimTime now, const MsgMeta& meta);
    bool busy_topology() const;
    int self_branch(int row) const { return rt_.zone_id().branch_at(row); }

    // ---- routing handlers ----
    void handle_area_all(SimTime now, Outputs& out, const MsgMeta& meta, const AreaMsgAll& m);
    void handle_area_any(SimTime now, Outputs& out, const MsgMeta& meta, const AreaMsgAny& m);
    void handle_zone_broadcast(SimTime now, Outputs& out, const MsgMeta& meta,
                               const ZoneBroadcast& m);
    void handle_point_msg(SimTime now, Outputs& out, const MsgMeta& meta,
                          const PointMsgLeaf& m);
    void zb_fanout(SimTime now, Outputs& out, const MsgMeta& meta, int level,
                   const Payload& payload);
    void deliver_payload(SimTime now, Outputs& out, const MsgMeta& meta,
                         const Payload& payload, bool relayed);

    // ---- nearest ----
    void start_nearest(SimTime now, Outputs& out, const MsgMeta& meta,
                       const NearestProbe& probe);
    void handle_range_query(SimTime now, Outputs& out, const MsgMeta& meta,
                            const NearestRangeQuery& q);
    void handle_range_reply(SimTime now, Outputs& out, const NearestRangeReply& r);

    // ---- join ----
    void learn_peer(SimTime now, Outputs& out, const JoinRequest& jr);
    void handle_join_sponsor(SimTime now, Outputs& out, const MsgMeta& meta,
                             const JoinRequest& jr);
    void sponsor_empty_remainder(SimTime now, Outputs& out, int row, int col,
                                 const JoinRequest& jr);
    void handle_join_reply(SimTime now, Outputs& out, const MsgMeta& meta,
                           const JoinReply& reply);
    void diversify(SimTime now, Outputs& out);
    void rejoin(SimTime now, Outputs& out, PeerAddr via);

    // ---- split / merge / collapse ----
    void population_check(SimTime now, Outputs& out);
    void maybe_propose(SimTime now, Outputs& out, ElectPurpose purpose);
    void handle_elect_proposal(SimTime now, Outputs& out, const MsgMeta& meta,
                               const ElectProposal& p);
    void handle_elect_ack(SimTime now, Outputs& out, const ElectAck& a);
    void election_concluded(SimTime now, Outputs& out, std::uint64_t op_id);
    void perform_split(SimTime now, Outputs& out, int election_msgs);
    void handle_split_announce(SimTime now, Outputs& out, const MsgMeta& meta,
                               const SplitAnnounce& ann);
    void perform_merge(SimTime now, Outputs& out);
    std::optional<int> deterministic_partner(int row, int initiator_col) const;
    struct MergeRoles {
        int removed = 0, surviving = 0;
        Region new_boundary;
    };
    std::optional<MergeRoles> merge_roles(int row, int init_col, int partner_col) const;
    void handle_merger_request(SimTime now, Outputs& out, const MsgMeta& meta,
                               const MergerRequest& req, bool relayed);
    void handle_merger_reply(SimTime now, Outputs& out, const MsgMeta& meta,
                             const MergerReply& rep);
    void handle_merger_update(SimTime now, Outputs& out, const MsgMeta& meta,
                              const MergerUpdate& mu, bool relayed);
    void handle_collapse_request(SimTime now, Outputs& out, const MsgMeta& meta,
                                 const CollapseRequest& cr);
    void handle_collapse_accept(SimTime now, Outputs& out, const MsgMeta& meta,
                                const CollapseAccept& ca);
    void handle_collapse_complete(SimTime now, Outputs& out, const MsgMeta& meta,
                                  const CollapseComplete& cc);
    void finish_partner_merge(SimTime now, Outputs& out, std::uint64_t op_id);

    // ---- refresh ----
    void refresh_tick(SimTime now, Outputs& out);
    void spawn_entry_refresh(SimTime now, Outputs& out, int row, int col);
    void advance_refresh(SimTime now, Outputs& out, std::uint64_t op_id);
    void handle_pong(SimTime now, Outputs& out, const MsgMeta& meta, const Pong& pong);
    void handle_refresh_query(SimTime now, Outputs& out, const MsgMeta& meta,
                              const RefreshQuery& q);
    void handle_refresh_reply(SimTime now, Outputs& out, const MsgMeta& meta,
                              const RefreshReply& r);
    void handle_sample_request(SimTime now, Outputs& out, const MsgMeta& meta,
                               const SampleRequest& req);
    void handle_sample_reply(SimTime now, Outputs& out, const MsgMeta& meta,
                             const SampleReply& rep);
    void finish_refresh(std::uint64_t op_id, int row, int col);
    void advance_stage_two(SimTime now, Outputs& out, std::uint64_t op_id);
    bool row_gone(int row, int col) const;
    Outputs finish_leave(SimTime now);

    // ---- state ----
    PeerAddr addr_ = kNoPeer;
    Point coord_;
    Rect universe_;
    ZoningConfig cfg_;
    ProtocolParams params_;
    RoutingTable rt_;
    Rng rng_;
    bool joined_ = false;
    bool leave_pending_ = false;
    SimTime last_rejoin_ = -1e18;

    std::map<std::uint64_t, Op> ops_;
    std::uint64_t next_op_ = 1;
    std::optional<std::uint64_t> election_op_;
    std::optional<std::uint64_t> merge_op_; // MergeInitOp or CollapsePartnerOp
    std::optional<std::uint64_t> join_op_;
    std::map<PeerAddr, std::uint64_t> awaiting_pong_;
    std::map<std::pair<int, int>, std::uint64_t> active_refresh_;
    std::map<PeerAddr, int> collapse_member_; // requester -> level
    std::map<std::pair<int, int>, SimTime> remainder_probe_;
    // recent proposers per purpose, for suppression and ack reporting
    std::map<int, std::pair<PeerAddr, SimTime>> proposals_seen_;
    std::vector<std::pair<MsgMeta, Message>> join_buffer_;
};

} // namespace geop2p
