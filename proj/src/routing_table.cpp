#include "geop2p/routing_table.hpp"

#include <algorithm>

#include "geop2p/rng.hpp"

namespace geop2p {

bool Bucket::has(PeerAddr addr) const {
    for (const Contact& c : contacts_)
        if (c.addr == addr) return true;
    return false;
}

void Bucket::touch(PeerAddr addr, SimTime now) {
    for (std::size_t i = 0; i < contacts_.size(); ++i) {
        if (contacts_[i].addr == addr) {
            Contact c = contacts_[i];
            c.last_seen = now;
            contacts_.erase(contacts_.begin() + i);
            contacts_.insert(contacts_.begin(), c);
            return;
        }
    }
    contacts_.insert(contacts_.begin(), Contact{addr, now});
    if (contacts_.size() > static_cast<std::size_t>(capacity_))
        contacts_.pop_back();
}

void Bucket::insert_behind_front(PeerAddr addr, SimTime seen) {
    if (has(addr)) return;
    if (contacts_.empty()) {
        contacts_.push_back(Contact{addr, seen});
        return;
    }
    contacts_.insert(contacts_.begin() + 1, Contact{addr, seen});
    if (contacts_.size() > static_cast<std::size_t>(capacity_))
        contacts_.pop_back();
}

void Bucket::append(PeerAddr addr, SimTime seen) {
    if (has(addr) || contacts_.size() >= static_cast<std::size_t>(capacity_))
        return;
    contacts_.push_back(Contact{addr, seen});
}

bool Bucket::erase(PeerAddr addr) {
    for (std::size_t i = 0; i < contacts_.size(); ++i) {
        if (contacts_[i].addr == addr) {
            contacts_.erase(contacts_.begin() + i);
            return true;
        }
    }
    return false;
}

RoutingTable::RoutingTable(PeerAddr self, Point coord, Region universe, int bucket_capacity)
    : self_(self), coord_(coord), self_leaf_boundary_(std::move(universe)),
      bucket_capacity_(bucket_capacity) {}

const RoutingTable::Row& RoutingTable::row(int r) const {
    if (r < 1 || static_cast<std::size_t>(r) > rows_.size())
        throw std::out_of_range("routing table row");
    return rows_[r - 1];
}

RoutingTable::Row& RoutingTable::row_mut(int r) {
    if (r < 1 || static_cast<std::size_t>(r) > rows_.size())
        throw std::out_of_range("routing table row");
    return rows_[r - 1];
}

std::size_t RoutingTable::sibling_entry_count() const {
    std::size_t n = 0;
    for (const Row& row : rows_)
        for (const auto& [col, e] : row)
            if (!e.is_self) ++n;
    return n;
}

std::vector<ForwardCandidate> RoutingTable::forwarding_candidates(const AreaShape& area,
                                                                  int from_level) const {
    std::vector<ForwardCandidate> out;
    for (int r = static_cast<int>(depth()); r >= from_level; --r) {
        for (const auto& [col, e] : rows_[r - 1]) {
            if (e.is_self || e.bucket.empty()) continue;
            if (region_intersects_area(e.boundary, area))
                out.push_back(ForwardCandidate{r + 1, r, col, &e});
        }
    }
    return out;
}

void RoutingTable::touch(PeerAddr addr, int row, int col, SimTime now) {
    Row& rw = row_mut(row);
    auto it = rw.find(col);
    if (it == rw.end())
        throw UnknownColumn{};
    if (it->second.is_self)
        throw SelfColumn{};
    it->second.bucket.touch(addr, now);
}

std::vector<std::pair<int, int>> RoutingTable::stale_buckets(SimTime now,
                                                             double half_period) const {
    std::vector<std::pair<int, int>> out;
    for (int r = 1; r <= static_cast<int>(depth()); ++r) {
        for (const auto& [col, e] : rows_[r - 1]) {
            if (e.is_self) continue;
            if (e.bucket.empty()) {
                if (!e.boundary.is_remainder())
                    out.emplace_back(r, col); // nothing fresh to rely on
                continue;
            }
            if (now - e.bucket.freshest() > half_period)
                out.emplace_back(r, col);
        }
    }
    return out;
}

std::vector<SampleEntry> RoutingTable::sample_entries(int min_row, int sample_size,
                                                      std::uint64_t rng_seed) const {
    std::vector<SampleEntry> pool;
    for (int r = std::max(1, min_row); r <= static_cast<int>(depth()); ++r)
        for (const auto& [col, e] : rows_[r - 1])
            if (!e.is_self && !e.bucket.empty())
                pool.push_back(SampleEntry{r, col, e.bucket.front().addr});
    if (leaf_row_index() >= min_row)
        for (const auto& [addr, le] : leaf_)
            pool.push_back(SampleEntry{leaf_row_index(), -1, addr});

    if (sample_size <= 0 || pool.empty())
        return {};
    Rng rng(rng_seed);
    const std::size_t want = std::min<std::size_t>(sample_size, pool.size());
    for (std::size_t i = 0; i < want; ++i) {
        const std::size_t j = i + rng.below(pool.size() - i);
        std::swap(pool[i], pool[j]);
    }
    pool.resize(want);
    return pool;
}

std::optional<std::pair<int, int>> RoutingTable::find_addr_slot(PeerAddr addr) const {
    for (int r = 1; r <= static_cast<int>(depth()); ++r)
        for (const auto& [col, e] : rows_[r - 1])
            if (!e.is_self && e.bucket.has(addr))
                return std::make_pair(r, col);
    return std::nullopt;
}

void RoutingTable::add_leaf(PeerAddr addr, Point coord, SimTime now) {
    if (addr == self_) return;
    leaf_[addr] = LeafEntry{addr, coord, now};
}

bool RoutingTable::remove_leaf(PeerAddr addr) {
    return leaf_.erase(addr) != 0;
}

void RoutingTable::refresh_leaf(PeerAddr addr, SimTime now) {
    auto it = leaf_.find(addr);
    if (it != leaf_.end())
        it->second.last_seen = now;
}

void RoutingTable::apply_split(const ZoneId& announced_zone,
                               const std::vector<std::pair<int, Region>>& subzones,
                               int my_branch, const std::map<PeerAddr, int>& assignment,
                               SimTime now) {
    if (announced_zone != zone_id_)
        throw WrongZone{};
    const Region* mine = nullptr;
    for (const auto& [branch, region] : subzones)
        if (branch == my_branch) mine = &region;
    if (!mine)
        throw InconsistentAssignment{};
    // Containment check against the universe-closed bounds of the zone
    // being divided; the leaf boundary's own bounds act as the closure.
    if (!region_contains_point(*mine, coord_, self_leaf_boundary_.bounds))
        throw InconsistentAssignment{};

    Row new_row;
    std::map<PeerAddr, LeafEntry> new_leaf;
    for (const auto& [branch, region] : subzones) {
        if (branch == my_branch) {
            SiblingEntry self_entry;
            self_entry.boundary = region;
            self_entry.is_self = true;
            new_row.emplace(branch, std::move(self_entry));
            continue;
        }
        SiblingEntry e;
        e.boundary = region;
        e.bucket = Bucket(bucket_capacity_);
        // Seed deterministically by ascending address from the old
        // zone-mates that landed in this branch.
        for (const auto& [addr, le] : leaf_) {
            auto it = assignment.find(addr);
            if (it != assignment.end() && it->second == branch)
                e.bucket.append(addr, now);
        }
        new_row.emplace(branch, std::move(e));
    }
    for (const auto& [addr, le] : leaf_) {
        auto it = assignment.find(addr);
        if (it != assignment.end() && it->second == my_branch)
            new_leaf.emplace(addr, le);
    }

    rows_.push_back(std::move(new_row));
    leaf_ = std::move(new_leaf);
    zone_id_ = zone_id_.child(my_branch);
    self_leaf_boundary_ = *mine;
}

void RoutingTable::apply_merge(const std::vector<LeafEntry>& absorbed, int removed_col,
                               int partner_col, const Region& new_boundary, SimTime now) {
    const int r = static_cast<int>(depth());
    if (r < 1)
        throw UnknownColumn{};
    Row& rw = rows_[r - 1];
    auto removed_it = rw.find(removed_col);
    if (removed_it == rw.end())
        throw UnknownColumn{};
    const bool i_am_merging = removed_it->second.is_self;
    rw.erase(removed_it);

    auto partner_it = rw.find(partner_col);
    if (partner_it == rw.end())
        throw UnknownColumn{};
    if (i_am_merging) {
        // We move into the partner's zone; its entry becomes our marker.
        SiblingEntry marker;
        marker.boundary = new_boundary;
        marker.is_self = true;
        partner_it->second = std::move(marker);
        auto path = zone_id_.path();
        path.back() = static_cast<std::uint8_t>(partner_col);
        zone_id_ = ZoneId{std::move(path)};
    } else {
        if (!partner_it->second.is_self)
            throw WrongZone{};
        partner_it->second.boundary = new_boundary;
    }
    self_leaf_boundary_ = new_boundary;

    for (const LeafEntry& le : absorbed) {
        if (le.addr == self_) continue;
        auto it = leaf_.find(le.addr);
        if (it == leaf_.end())
            leaf_.emplace(le.addr, LeafEntry{le.addr, le.coord, now});
        else {
            it->second.coord = le.coord;
            it->second.last_seen = now;
        }
    }

    // Hierarchy retraction: an only child is its parent.
    if (rw.size() == 1 && rw.begin()->second.is_self) {
        rows_.pop_back();
        zone_id_ = zone_id_.parent();
    }
}

void RoutingTable::remove_sibling_column(int row, int col) {
    Row& rw = row_mut(row);
    auto it = rw.find(col);
    if (it == rw.end())
        throw UnknownColumn{};
    if (it->second.is_self)
        throw SelfColumn{};
    rw.erase(it);
}

void RoutingTable::set_sibling_boundary(int row, int col, const Region& boundary) {
    Row& rw = row_mut(row);
    auto it = rw.find(col);
    if (it == rw.end())
        throw UnknownColumn{};
    it->second.boundary = boundary;
}

void RoutingTable::flatten_to_level(int level, const std::vector<LeafEntry>& peers,
                                    SimTime now) {
    if (level < 1 || level > static_cast<int>(depth()))
        throw std::out_of_range("flatten level");
    const SiblingEntry* marker = nullptr;
    for (const auto& [col, e] : rows_[level - 1])
        if (e.is_self) marker = &e;
    self_leaf_boundary_ = marker->boundary;
    rows_.resize(level);
    auto path = zone_id_.path();
    path.resize(level);
    zone_id_ = ZoneId{std::move(path)};
    leaf_.clear();
    for (const LeafEntry& le : peers)
        if (le.addr != self_)
            leaf_[le.addr] = LeafEntry{le.addr, le.coord, now};
}

void RoutingTable::prune_contacts(SimTime now, double period) {
    for (Row& rw : rows_)
        for (auto& [col, e] : rw) {
            if (e.is_self) continue;
            std::vector<PeerAddr> stale;
            for (const Contact& c : e.bucket.contacts())
                if (now - c.last_seen > period)
                    stale.push_back(c.addr);
            for (PeerAddr a : stale)
                e.bucket.erase(a);
        }
}

void RoutingTable::purge_addr(PeerAddr addr) {
    leaf_.erase(addr);
    for (Row& rw : rows_)
        for (auto& [col, e] : rw)
            if (!e.is_self)
                e.bucket.erase(addr);
}

void RoutingTable::adopt(const RoutingTable& copy, PeerAddr self, Point coord,
                         const Rect& universe, SimTime now) {
    const int cap = bucket_capacity_;
    *this = copy;
    self_ = self;
    coord_ = coord;
    bucket_capacity_ = cap;
    leaf_.erase(self);
    if (copy.self_addr() != self &&
        region_contains_point(self_leaf_boundary_, copy.self_coord(), universe))
        add_leaf(copy.self_addr(), copy.self_coord(), now);
    for (Row& rw : rows_)
        for (auto& [col, e] : rw)
            if (!e.is_self)
                e.bucket.erase(self);
}

RoutingTable RoutingTable::from_parts(PeerAddr self, Point coord, ZoneId zone,
                                      Region leaf_boundary, int bucket_capacity,
                                      std::vector<Row> rows, std::vector<LeafEntry> leaves) {
    RoutingTable rt;
    rt.self_ = self;
    rt.coord_ = coord;
    rt.zone_id_ = std::move(zone);
    rt.self_leaf_boundary_ = std::move(leaf_boundary);
    rt.bucket_capacity_ = bucket_capacity;
    rt.rows_ = std::move(rows);
    for (const LeafEntry& le : leaves)
        rt.leaf_.emplace(le.addr, le);
    return rt;
}

RoutingTable RoutingTable::sponsor_for_empty_zone(const RoutingTable& sponsor, int row,
                                                  int col, PeerAddr addr, Point coord,
                                                  SimTime now) {
    RoutingTable rt;
    rt.self_ = addr;
    rt.coord_ = coord;
    rt.bucket_capacity_ = sponsor.bucket_capacity_;
    rt.rows_.assign(sponsor.rows_.begin(), sponsor.rows_.begin() + row);

    Row& rw = rt.rows_[row - 1];
    auto remainder_it = rw.find(col);
    if (remainder_it == rw.end())
        throw UnknownColumn{};
    rt.self_leaf_boundary_ = remainder_it->second.boundary;
    SiblingEntry marker;
    marker.boundary = remainder_it->second.boundary;
    marker.is_self = true;
    remainder_it->second = std::move(marker);

    const int sponsor_col = sponsor.zone_id_.branch_at(row);
    auto sp_it = rw.find(sponsor_col);
    if (sp_it != rw.end() && sp_it->second.is_self) {
        SiblingEntry e;
        e.boundary = sp_it->second.boundary;
        e.bucket = Bucket(sponsor.bucket_capacity_);
        e.bucket.append(sponsor.self_addr(), now);
        sp_it->second = std::move(e);
    }

    std::vector<std::uint8_t> path(sponsor.zone_id_.path().begin(),
                                   sponsor.zone_id_.path().begin() + row - 1);
    path.push_back(static_cast<std::uint8_t>(col));
    rt.zone_id_ = ZoneId{std::move(path)};
    return rt;
}

} // namespace geop2p
