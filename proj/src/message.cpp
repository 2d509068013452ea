#include "geop2p/message.hpp"

namespace geop2p {

namespace {

template <class... Ts> struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts> overloaded(Ts...) -> overloaded<Ts...>;

} // namespace

const char* message_tag(const Message& m) {
    return std::visit(
        overloaded{
            [](const AreaMsgAll&) { return "area_all"; },
            [](const AreaMsgAny&) { return "area_any"; },
            [](const ZoneBroadcast&) { return "zone_broadcast"; },
            [](const PointMsgLeaf&) { return "point_msg"; },
            [](const NearestProbe&) { return "nearest_probe"; },
            [](const NearestRangeQuery&) { return "nearest_range_query"; },
            [](const NearestRangeReply&) { return "nearest_range_reply"; },
            [](const NearestDeliver&) { return "nearest_deliver"; },
            [](const JoinRequest&) { return "join_request"; },
            [](const JoinReply&) { return "join_reply"; },
            [](const SampleRequest&) { return "sample_request"; },
            [](const SampleReply&) { return "sample_reply"; },
            [](const ElectProposal&) { return "elect_proposal"; },
            [](const ElectAck&) { return "elect_ack"; },
            [](const SplitAnnounce&) { return "split_announce"; },
            [](const MergerRequest&) { return "merger_request"; },
            [](const MergerReply&) { return "merger_reply"; },
            [](const MergerUpdate&) { return "merger_update"; },
            [](const CollapseRequest&) { return "collapse_request"; },
            [](const CollapseAccept&) { return "collapse_accept"; },
            [](const CollapseComplete&) { return "collapse_complete"; },
            [](const Ping&) { return "ping"; },
            [](const Pong&) { return "pong"; },
            [](const RefreshQuery&) { return "refresh_query"; },
            [](const RefreshReply&) { return "refresh_reply"; },
            [](const Leave&) { return "leave"; },
        },
        m.body);
}

std::uint8_t message_kind(const Message& m) {
    return static_cast<std::uint8_t>(m.body.index());
}

int routed_level(const Message& m) {
    return std::visit(
        overloaded{
            [](const AreaMsgAll& x) { return x.level; },
            [](const AreaMsgAny& x) { return x.level; },
            [](const ZoneBroadcast& x) { return x.level; },
            [](const PointMsgLeaf& x) { return x.level; },
            [](const auto&) { return 0; },
        },
        m.body);
}

} // namespace geop2p
