#include "geop2p/wire.hpp"

#include <cstring>

namespace geop2p {

namespace {

struct Writer {
    std::vector<std::uint8_t> buf;

    void u8(std::uint8_t v) { buf.push_back(v); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf.push_back(std::uint8_t(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) buf.push_back(std::uint8_t(v >> (8 * i)));
    }
    void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
    void f64(double v) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        u64(bits);
    }
    void point(const Point& p) {
        f64(p.x);
        f64(p.y);
    }
    void rect(const Rect& r) {
        point(r.min);
        point(r.max);
    }
    void circle(const Circle& c) {
        point(c.center);
        f64(c.radius);
    }
    void region(const Region& z) {
        u8(z.is_remainder() ? 1 : 0);
        rect(z.bounds);
        if (z.is_remainder()) {
            u32(std::uint32_t(z.excluded.size()));
            for (const Rect& r : z.excluded) rect(r);
        }
    }
    void zone_id(const ZoneId& z) { z.encode(buf); }
    void area(const AreaShape& a) {
        if (const Rect* r = std::get_if<Rect>(&a)) {
            u8(0);
            rect(*r);
        } else {
            u8(1);
            circle(std::get<Circle>(a));
        }
    }
    void str(const std::string& s) {
        u32(std::uint32_t(s.size()));
        buf.insert(buf.end(), s.begin(), s.end());
    }
    void leaf_entry(const LeafEntry& le) {
        u64(le.addr);
        point(le.coord);
        f64(le.last_seen);
    }
    void leaf_entries(const std::vector<LeafEntry>& v) {
        u32(std::uint32_t(v.size()));
        for (const LeafEntry& le : v) leaf_entry(le);
    }
    void payload(const Payload& p);
    void table(const RoutingTable& rt) {
        u64(rt.self_addr());
        point(rt.self_coord());
        zone_id(rt.zone_id());
        region(rt.self_leaf_boundary());
        u8(std::uint8_t(rt.bucket_capacity()));
        u32(std::uint32_t(rt.rows().size()));
        for (const auto& row : rt.rows()) {
            u32(std::uint32_t(row.size()));
            for (const auto& [col, e] : row) {
                i32(col);
                u8(e.is_self ? 1 : 0);
                region(e.boundary);
                if (!e.is_self) {
                    u32(std::uint32_t(e.bucket.size()));
                    for (const Contact& c : e.bucket.contacts()) {
                        u64(c.addr);
                        f64(c.last_seen);
                    }
                }
            }
        }
        u32(std::uint32_t(rt.leaf_row().size()));
        for (const auto& [a, le] : rt.leaf_row()) leaf_entry(le);
    }
};

struct Reader {
    std::span<const std::uint8_t> in;
    std::size_t off = 0;

    void need(std::size_t n) {
        if (off + n > in.size())
            throw WireError("truncated message");
    }
    std::uint8_t u8() {
        need(1);
        return in[off++];
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(in[off++]) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= std::uint64_t(in[off++]) << (8 * i);
        return v;
    }
    std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
    double f64() {
        const std::uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
    Point point() {
        const double x = f64();
        const double y = f64();
        return {x, y};
    }
    Rect rect() {
        const Point a = point();
        const Point b = point();
        return {a, b};
    }
    Circle circle() {
        const Point c = point();
        const double r = f64();
        return {c, r};
    }
    Region region() {
        const std::uint8_t kind = u8();
        const Rect b = rect();
        if (kind == 0)
            return Region::rectangular(b);
        const std::uint32_t n = u32();
        std::vector<Rect> holes;
        holes.reserve(n);
        for (std::uint32_t i = 0; i < n; ++i) holes.push_back(rect());
        return Region::remainder(b, std::move(holes));
    }
    ZoneId zone_id() { return ZoneId::decode(in, off); }
    AreaShape area() {
        if (u8() == 0)
            return rect();
        return circle();
    }
    std::string str() {
        const std::uint32_t n = u32();
        need(n);
        std::string s(reinterpret_cast<const char*>(in.data() + off), n);
        off += n;
        return s;
    }
    LeafEntry leaf_entry() {
        LeafEntry le;
        le.addr = u64();
        le.coord = point();
        le.last_seen = f64();
        return le;
    }
    std::vector<LeafEntry> leaf_entries() {
        const std::uint32_t n = u32();
        std::vector<LeafEntry> v;
        v.reserve(n);
        for (std::uint32_t i = 0; i < n; ++i) v.push_back(leaf_entry());
        return v;
    }
    Payload payload();
    RoutingTable table() {
        const PeerAddr self = u64();
        const Point coord = point();
        const ZoneId zid = zone_id();
        const Region leaf_boundary = region();
        const int cap = u8();
        RoutingTable rt(self, coord, leaf_boundary, cap);
        const std::uint32_t nrows = u32();
        // rebuild rows through split applications would be indirect;
        // instead rebuild via the sponsor factory primitives
        std::vector<RoutingTable::Row> rows;
        for (std::uint32_t r = 0; r < nrows; ++r) {
            RoutingTable::Row row;
            const std::uint32_t ncols = u32();
            for (std::uint32_t c = 0; c < ncols; ++c) {
                const int col = i32();
                SiblingEntry e;
                e.is_self = u8() != 0;
                e.boundary = region();
                if (!e.is_self) {
                    e.bucket = Bucket(cap);
                    const std::uint32_t n = u32();
                    for (std::uint32_t i = 0; i < n; ++i) {
                        const PeerAddr a = u64();
                        const double seen = f64();
                        e.bucket.append(a, seen);
                    }
                }
                row.emplace(col, std::move(e));
            }
            rows.push_back(std::move(row));
        }
        std::vector<LeafEntry> leaves = leaf_entries();
        return RoutingTable::from_parts(self, coord, zid, leaf_boundary, cap,
                                        std::move(rows), std::move(leaves));
    }
};

void Writer::payload(const Payload& p) {
    if (p.boxed) {
        u8(1);
        const std::vector<std::uint8_t> inner = encode_message(*p.boxed);
        u32(std::uint32_t(inner.size()));
        buf.insert(buf.end(), inner.begin(), inner.end());
    } else {
        u8(0);
        str(p.bytes);
    }
}

Payload Reader::payload() {
    if (u8() == 1) {
        const std::uint32_t n = u32();
        need(n);
        Message inner = decode_message(in.subspan(off, n));
        off += n;
        return Payload::box(std::move(inner));
    }
    return Payload::text(str());
}

} // namespace

std::vector<std::uint8_t> encode_message(const Message& m) {
    Writer w;
    w.u8(message_kind(m));
    std::visit(
        [&](const auto& body) {
            using T = std::decay_t<decltype(body)>;
            if constexpr (std::is_same_v<T, AreaMsgAll> || std::is_same_v<T, AreaMsgAny>) {
                w.area(body.area);
                w.i32(body.level);
                w.payload(body.payload);
            } else if constexpr (std::is_same_v<T, ZoneBroadcast>) {
                w.i32(body.level);
                w.payload(body.payload);
            } else if constexpr (std::is_same_v<T, PointMsgLeaf>) {
                w.point(body.point);
                w.i32(body.level);
                w.u8(std::uint8_t(body.mode));
                w.payload(body.payload);
            } else if constexpr (std::is_same_v<T, NearestProbe>) {
                w.point(body.point);
                w.payload(body.payload);
            } else if constexpr (std::is_same_v<T, NearestRangeQuery>) {
                w.circle(body.circle);
                w.u64(body.reply_to);
                w.u64(body.op_id);
            } else if constexpr (std::is_same_v<T, NearestRangeReply>) {
                w.u64(body.op_id);
                w.u32(std::uint32_t(body.peers.size()));
                for (const auto& [a, p] : body.peers) {
                    w.u64(a);
                    w.point(p);
                }
            } else if constexpr (std::is_same_v<T, NearestDeliver>) {
                w.payload(body.payload);
            } else if constexpr (std::is_same_v<T, JoinRequest>) {
                w.point(body.coord);
                w.u64(body.addr);
            } else if constexpr (std::is_same_v<T, JoinReply>) {
                w.table(body.table);
            } else if constexpr (std::is_same_v<T, SampleRequest>) {
                w.i32(body.min_row);
                w.i32(body.size);
            } else if constexpr (std::is_same_v<T, SampleReply>) {
                w.u32(std::uint32_t(body.entries.size()));
                for (const SampleEntry& e : body.entries) {
                    w.i32(e.row);
                    w.i32(e.col);
                    w.u64(e.addr);
                }
            } else if constexpr (std::is_same_v<T, ElectProposal>) {
                w.u8(std::uint8_t(body.purpose));
                w.u64(body.proposer);
            } else if constexpr (std::is_same_v<T, ElectAck>) {
                w.u8(body.higher_seen ? 1 : 0);
                if (body.higher_seen)
                    w.u64(*body.higher_seen);
            } else if constexpr (std::is_same_v<T, SplitAnnounce>) {
                w.zone_id(body.zone);
                w.u32(std::uint32_t(body.subzones.size()));
                for (const auto& [b, region] : body.subzones) {
                    w.i32(b);
                    w.region(region);
                }
                w.u32(std::uint32_t(body.assignment.size()));
                for (const auto& [a, b] : body.assignment) {
                    w.u64(a);
                    w.i32(b);
                }
            } else if constexpr (std::is_same_v<T, MergerRequest>) {
                w.region(body.boundary);
                w.leaf_entries(body.peers);
            } else if constexpr (std::is_same_v<T, MergerReply>) {
                w.leaf_entries(body.peers);
            } else if constexpr (std::is_same_v<T, MergerUpdate>) {
                w.i32(body.removed_zone_segment);
                w.i32(body.level);
            } else if constexpr (std::is_same_v<T, CollapseRequest>) {
                w.i32(body.level);
                w.u64(body.requester);
            } else if constexpr (std::is_same_v<T, CollapseAccept>) {
                w.leaf_entries(body.leaf_peers);
            } else if constexpr (std::is_same_v<T, CollapseComplete>) {
                w.leaf_entries(body.all_peers);
            } else if constexpr (std::is_same_v<T, Ping>) {
                w.u8(body.leaf ? 1 : 0);
            } else if constexpr (std::is_same_v<T, Pong>) {
                w.u8(body.leaf_mismatch ? 1 : 0);
            } else if constexpr (std::is_same_v<T, RefreshQuery>) {
                w.i32(body.row);
                w.i32(body.col);
            } else if constexpr (std::is_same_v<T, RefreshReply>) {
                w.i32(body.row);
                w.i32(body.col);
                w.u32(std::uint32_t(body.addrs.size()));
                for (PeerAddr a : body.addrs) w.u64(a);
            } else if constexpr (std::is_same_v<T, Leave>) {
                // no fields
            }
        },
        m.body);
    return std::move(w.buf);
}

Message decode_message(std::span<const std::uint8_t> in) {
    Reader r{in};
    const std::uint8_t kind = r.u8();
    Message m;
    switch (kind) {
    case 0: {
        AreaMsgAll b;
        b.area = r.area();
        b.level = r.i32();
        b.payload = r.payload();
        m.body = std::move(b);
        break;
    }
    case 1: {
        AreaMsgAny b;
        b.area = r.area();
        b.level = r.i32();
        b.payload = r.payload();
        m.body = std::move(b);
        break;
    }
    case 2: {
        ZoneBroadcast b;
        b.level = r.i32();
        b.payload = r.payload();
        m.body = std::move(b);
        break;
    }
    case 3: {
        PointMsgLeaf b;
        b.point = r.point();
        b.level = r.i32();
        b.mode = static_cast<DeliverMode>(r.u8());
        b.payload = r.payload();
        m.body = std::move(b);
        break;
    }
    case 4: {
        NearestProbe b;
        b.point = r.point();
        b.payload = r.payload();
        m.body = std::move(b);
        break;
    }
    case 5: {
        NearestRangeQuery b;
        b.circle = r.circle();
        b.reply_to = r.u64();
        b.op_id = r.u64();
        m.body = b;
        break;
    }
    case 6: {
        NearestRangeReply b;
        b.op_id = r.u64();
        const std::uint32_t n = r.u32();
        for (std::uint32_t i = 0; i < n; ++i) {
            const PeerAddr a = r.u64();
            b.peers.emplace_back(a, r.point());
        }
        m.body = std::move(b);
        break;
    }
    case 7: {
        NearestDeliver b;
        b.payload = r.payload();
        m.body = std::move(b);
        break;
    }
    case 8: {
        JoinRequest b;
        b.coord = r.point();
        b.addr = r.u64();
        m.body = b;
        break;
    }
    case 9: {
        JoinReply b;
        b.table = r.table();
        m.body = std::move(b);
        break;
    }
    case 10: {
        SampleRequest b;
        b.min_row = r.i32();
        b.size = r.i32();
        m.body = b;
        break;
    }
    case 11: {
        SampleReply b;
        const std::uint32_t n = r.u32();
        for (std::uint32_t i = 0; i < n; ++i) {
            SampleEntry e;
            e.row = r.i32();
            e.col = r.i32();
            e.addr = r.u64();
            b.entries.push_back(e);
        }
        m.body = std::move(b);
        break;
    }
    case 12: {
        ElectProposal b;
        b.purpose = static_cast<ElectPurpose>(r.u8());
        b.proposer = r.u64();
        m.body = b;
        break;
    }
    case 13: {
        ElectAck b;
        if (r.u8())
            b.higher_seen = r.u64();
        m.body = b;
        break;
    }
    case 14: {
        SplitAnnounce b;
        b.zone = r.zone_id();
        const std::uint32_t nz = r.u32();
        for (std::uint32_t i = 0; i < nz; ++i) {
            const int branch = r.i32();
            b.subzones.emplace_back(branch, r.region());
        }
        const std::uint32_t na = r.u32();
        for (std::uint32_t i = 0; i < na; ++i) {
            const PeerAddr a = r.u64();
            b.assignment.emplace_back(a, r.i32());
        }
        m.body = std::move(b);
        break;
    }
    case 15: {
        MergerRequest b;
        b.boundary = r.region();
        b.peers = r.leaf_entries();
        m.body = std::move(b);
        break;
    }
    case 16: {
        MergerReply b;
        b.peers = r.leaf_entries();
        m.body = std::move(b);
        break;
    }
    case 17: {
        MergerUpdate b;
        b.removed_zone_segment = r.i32();
        b.level = r.i32();
        m.body = b;
        break;
    }
    case 18: {
        CollapseRequest b;
        b.level = r.i32();
        b.requester = r.u64();
        m.body = b;
        break;
    }
    case 19: {
        CollapseAccept b;
        b.leaf_peers = r.leaf_entries();
        m.body = std::move(b);
        break;
    }
    case 20: {
        CollapseComplete b;
        b.all_peers = r.leaf_entries();
        m.body = std::move(b);
        break;
    }
    case 21: {
        Ping b;
        b.leaf = r.u8() != 0;
        m.body = b;
        break;
    }
    case 22: {
        Pong b;
        b.leaf_mismatch = r.u8() != 0;
        m.body = b;
        break;
    }
    case 23: {
        RefreshQuery b;
        b.row = r.i32();
        b.col = r.i32();
        m.body = b;
        break;
    }
    case 24: {
        RefreshReply b;
        b.row = r.i32();
        b.col = r.i32();
        const std::uint32_t n = r.u32();
        for (std::uint32_t i = 0; i < n; ++i) b.addrs.push_back(r.u64());
        m.body = std::move(b);
        break;
    }
    case 25:
        m.body = Leave{};
        break;
    default:
        throw WireError("unknown message tag");
    }
    return m;
}

} // namespace geop2p
