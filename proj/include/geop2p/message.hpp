#pragma once

#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "geop2p/routing_table.hpp"
#include "geop2p/types.hpp"
#include "geop2p/zoning.hpp"

namespace geop2p {

enum class DeliverMode : std::uint8_t { all = 0, any = 1 };
enum class ElectPurpose : std::uint8_t { split = 0, merge = 1 };

struct Message;

// Application payload: opaque bytes, or a boxed protocol message carried
// through the routing layer (joins, nearest probes and relayed overlay
// control travel this way).
struct Payload {
    std::string bytes;
    std::shared_ptr<const Message> boxed;

    static Payload text(std::string s) { return Payload{std::move(s), nullptr}; }
    static Payload box(Message m);
};

struct AreaMsgAll {
    AreaShape area;
    int level = 1;
    Payload payload;
};
struct AreaMsgAny {
    AreaShape area;
    int level = 1;
    Payload payload;
};
struct ZoneBroadcast {
    int level = 1;
    Payload payload;
};
struct PointMsgLeaf {
    Point point;
    int level = 1;
    DeliverMode mode = DeliverMode::all;
    Payload payload;
};
struct NearestProbe {
    Point point;
    Payload payload;
};
struct NearestRangeQuery {
    Circle circle;
    PeerAddr reply_to = kNoPeer;
    std::uint64_t op_id = 0;
};
struct NearestRangeReply {
    std::uint64_t op_id = 0;
    std::vector<std::pair<PeerAddr, Point>> peers;
};
// Terminal hop of nearest-peer routing: hands the payload to the winner.
struct NearestDeliver {
    Payload payload;
};
struct JoinRequest {
    Point coord;
    PeerAddr addr = kNoPeer;
};
struct JoinReply {
    RoutingTable table; // the replier's own table, owner identity included
};
struct SampleRequest {
    int min_row = 1;
    int size = 0;
};
struct SampleReply {
    std::vector<SampleEntry> entries;
};
struct ElectProposal {
    ElectPurpose purpose = ElectPurpose::split;
    PeerAddr proposer = kNoPeer;
};
struct ElectAck {
    std::optional<PeerAddr> higher_seen;
};
struct SplitAnnounce {
    ZoneId zone; // the leaf zone being divided; receivers must match it
    std::vector<std::pair<int, Region>> subzones;
    std::vector<std::pair<PeerAddr, int>> assignment;
};
struct MergerRequest {
    Region boundary; // the merging zone
    std::vector<LeafEntry> peers;
};
struct MergerReply {
    std::vector<LeafEntry> peers;
};
struct MergerUpdate {
    int removed_zone_segment = 0;
    int level = 0;
};
struct CollapseRequest {
    int level = 0;
    PeerAddr requester = kNoPeer;
};
struct CollapseAccept {
    std::vector<LeafEntry> leaf_peers;
};
struct CollapseComplete {
    std::vector<LeafEntry> all_peers;
};
struct Ping {
    bool leaf = false; // pinging a supposed leaf-zone mate
};
struct Pong {
    bool leaf_mismatch = false; // you pinged me as a zone mate but I am not
};
struct RefreshQuery {
    int row = 0;
    int col = 0;
};
struct RefreshReply {
    int row = 0;
    int col = 0;
    std::vector<PeerAddr> addrs;
};
struct Leave {};

using MessageBody =
    std::variant<AreaMsgAll, AreaMsgAny, ZoneBroadcast, PointMsgLeaf, NearestProbe,
                 NearestRangeQuery, NearestRangeReply, NearestDeliver, JoinRequest,
                 JoinReply, SampleRequest, SampleReply, ElectProposal, ElectAck,
                 SplitAnnounce, MergerRequest, MergerReply, MergerUpdate,
                 CollapseRequest, CollapseAccept, CollapseComplete, Ping, Pong,
                 RefreshQuery, RefreshReply, Leave>;

struct Message {
    MessageBody body;
};

inline Payload Payload::box(Message m) {
    return Payload{{}, std::make_shared<const Message>(std::move(m))};
}

// Stable tag for traces and the wire format.
const char* message_tag(const Message& m);
std::uint8_t message_kind(const Message& m);

// Level parameter of routed messages, 0 for direct ones.
int routed_level(const Message& m);

} // namespace geop2p
