#pragma once

#include <map>
#include <optional>
#include <stdexcept>
#include <vector>

#include "geop2p/types.hpp"
#include "geop2p/zoning.hpp"

namespace geop2p {

struct SelfColumn : std::logic_error {
    SelfColumn() : std::logic_error("touched the self column") {}
};
struct UnknownColumn : std::runtime_error {
    UnknownColumn() : std::runtime_error("no such routing table column") {}
};
struct InconsistentAssignment : std::runtime_error {
    InconsistentAssignment() : std::runtime_error("self not inside its assigned sub-zone") {}
};
struct WrongZone : std::runtime_error {
    WrongZone() : std::runtime_error("update does not match this peer's zone") {}
};

struct Contact {
    PeerAddr addr = kNoPeer;
    SimTime last_seen = 0;
};

// MRU-ordered contact list for one routing table entry. Front is the most
// recently seen peer; inserting into a full bucket discards the tail.
class Bucket {
public:
    Bucket() = default;
    explicit Bucket(int capacity) : capacity_(capacity) {}

    bool empty() const { return contacts_.empty(); }
    std::size_t size() const { return contacts_.size(); }
    int capacity() const { return capacity_; }
    const std::vector<Contact>& contacts() const { return contacts_; }
    const Contact& front() const { return contacts_.front(); }
    SimTime freshest() const { return contacts_.empty() ? 0 : contacts_.front().last_seen; }

    bool has(PeerAddr addr) const;
    // Move to (or insert at) the front; evict the tail on overflow.
    void touch(PeerAddr addr, SimTime now);
    // Insert behind the front, preserving the front contact; used when
    // adopting sampled entries. No-op if already present.
    void insert_behind_front(PeerAddr addr, SimTime seen);
    // Append at the tail if there is room; used for deterministic seeding.
    void append(PeerAddr addr, SimTime seen);
    bool erase(PeerAddr addr);
    void clear() { contacts_.clear(); }

private:
    std::vector<Contact> contacts_;
    int capacity_ = 3;
};

// One sibling-zone entry: the zone's geometry plus the contact bucket.
// The bucket may be empty; only remainder zones are allowed to stay that
// way indefinitely.
struct SiblingEntry {
    Region boundary;
    Bucket bucket;
    bool is_self = false; // self marker: bucket unused, boundary only
};

struct LeafEntry {
    PeerAddr addr = kNoPeer;
    Point coord;
    SimTime last_seen = 0;
};

struct SampleEntry {
    int row = 0;
    int col = 0; // -1 for leaf-row entries
    PeerAddr addr = kNoPeer;
};

struct ForwardCandidate {
    int forward_level = 0; // row + 1
    int row = 0;
    int col = 0;
    const SiblingEntry* entry = nullptr;
};

// Per-peer leveled contact structure. Sibling row r (1-based, r in
// [1, depth]) holds the children of the peer's depth-(r-1) ancestor zone,
// keyed by branch index, with a bucketless self marker at the peer's own
// branch. The leaf row (index depth+1) holds the individual peers of the
// leaf zone with their coordinates.
class RoutingTable {
public:
    using Row = std::map<int, SiblingEntry>;

    RoutingTable() = default;
    RoutingTable(PeerAddr self, Point coord, Region universe, int bucket_capacity);

    PeerAddr self_addr() const { return self_; }
    const Point& self_coord() const { return coord_; }
    const ZoneId& zone_id() const { return zone_id_; }
    std::size_t depth() const { return zone_id_.depth(); }
    int leaf_row_index() const { return static_cast<int>(depth()) + 1; }
    int bucket_capacity() const { return bucket_capacity_; }

    const Region& self_leaf_boundary() const { return self_leaf_boundary_; }
    const std::vector<Row>& rows() const { return rows_; }
    const Row& row(int r) const;
    Row& row_mut(int r);
    const std::map<PeerAddr, LeafEntry>& leaf_row() const { return leaf_; }

    int self_col(int row) const { return zone_id_.branch_at(row); }
    std::size_t sibling_entry_count() const;

    // --- routing ---
    std::vector<ForwardCandidate> forwarding_candidates(const AreaShape& area,
                                                        int from_level) const;

    // --- bucket maintenance ---
    void touch(PeerAddr addr, int row, int col, SimTime now);
    std::vector<std::pair<int, int>> stale_buckets(SimTime now, double half_period) const;
    std::vector<SampleEntry> sample_entries(int min_row, int sample_size,
                                            std::uint64_t rng_seed) const;
    // Where does this address currently sit? Sibling buckets only.
    std::optional<std::pair<int, int>> find_addr_slot(PeerAddr addr) const;

    // --- leaf row ---
    void add_leaf(PeerAddr addr, Point coord, SimTime now);
    bool remove_leaf(PeerAddr addr);
    void refresh_leaf(PeerAddr addr, SimTime now);
    bool has_leaf(PeerAddr addr) const { return leaf_.count(addr) != 0; }
    // Leaf zone population including the owning peer itself.
    int zone_population() const { return static_cast<int>(leaf_.size()) + 1; }

    // --- topology updates ---
    void apply_split(const ZoneId& announced_zone,
                     const std::vector<std::pair<int, Region>>& subzones, int my_branch,
                     const std::map<PeerAddr, int>& assignment, SimTime now);
    void apply_merge(const std::vector<LeafEntry>& absorbed, int removed_col,
                     int partner_col, const Region& new_boundary, SimTime now);
    // Cousin-side merge bookkeeping: drop one column at `row` and give the
    // surviving column its widened region.
    void remove_sibling_column(int row, int col);
    void set_sibling_boundary(int row, int col, const Region& boundary);
    // Collapse everything below sibling row `level`: the level-`level`
    // ancestor becomes the leaf zone and `peers` its population.
    void flatten_to_level(int level, const std::vector<LeafEntry>& peers, SimTime now);

    // Remove a departed peer everywhere (leaf row and buckets).
    void purge_addr(PeerAddr addr);

    // Drop bucket contacts not seen for longer than `period`; they are
    // unverified for a full refresh cycle and may be long dead.
    void prune_contacts(SimTime now, double period);

    // Adopt a copied table as our own (join): replaces identity-dependent
    // fields, strips ourselves from the leaf row. The copy's owner becomes
    // a leaf entry when it actually lives in the same leaf zone.
    void adopt(const RoutingTable& copy, PeerAddr self, Point coord, const Rect& universe,
               SimTime now);

    // Build a table for a peer joining an empty remainder zone, derived
    // from a sponsor inside a sibling zone: the sponsor's rows above `row`
    // carry over, the remainder column becomes the self marker, and the
    // sponsor seeds the bucket for its own column.
    static RoutingTable sponsor_for_empty_zone(const RoutingTable& sponsor, int row,
                                               int col, PeerAddr addr, Point coord,
                                               SimTime now);

    // Reassemble a table from serialized parts; used by the wire decoder.
    static RoutingTable from_parts(PeerAddr self, Point coord, ZoneId zone,
                                   Region leaf_boundary, int bucket_capacity,
                                   std::vector<Row> rows, std::vector<LeafEntry> leaves);

private:
    PeerAddr self_ = kNoPeer;
    Point coord_;
    ZoneId zone_id_;
    std::vector<Row> rows_; // rows_[r-1] = sibling row r
    std::map<PeerAddr, LeafEntry> leaf_;
    Region self_leaf_boundary_;
    int bucket_capacity_ = 3;
};

} // namespace geop2p
