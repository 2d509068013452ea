#pragma once

#include <compare>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "geop2p/geometry.hpp"
#include "geop2p/types.hpp"

namespace geop2p {

struct UnsplittableZone : std::runtime_error {
    UnsplittableZone() : std::runtime_error("no positive-width sub-rect possible") {}
};

struct NoViableClustering : std::runtime_error {
    NoViableClustering() : std::runtime_error("no rect cluster within population thresholds") {}
};

// Path of branch indices from the universe (empty path) down to a zone.
// A prefix names an ancestor. Branch indices fit in a byte (k <= 256).
class ZoneId {
public:
    ZoneId() = default;
    explicit ZoneId(std::vector<std::uint8_t> path) : path_(std::move(path)) {}

    std::size_t depth() const { return path_.size(); }
    bool is_universe() const { return path_.empty(); }
    const std::vector<std::uint8_t>& path() const { return path_; }

    // 1-based level; throws std::out_of_range past the path length.
    int branch_at(std::size_t level) const;

    ZoneId parent() const; // throws std::out_of_range on the universe
    ZoneId child(int branch) const;
    bool is_prefix_of(const ZoneId& other) const;

    // Length of the longest common prefix.
    static std::size_t common_depth(const ZoneId& a, const ZoneId& b);

    // Wire encoding: one length byte, then one branch byte per level.
    void encode(std::vector<std::uint8_t>& out) const;
    static ZoneId decode(std::span<const std::uint8_t> in, std::size_t& offset);

    std::string to_string() const;

    friend bool operator==(const ZoneId&, const ZoneId&) = default;
    friend auto operator<=>(const ZoneId&, const ZoneId&) = default;

private:
    std::vector<std::uint8_t> path_;
};

// Zone geometry. A plain rectangular zone has an empty excluded list; a
// remainder zone is its bounding rect minus the (pairwise disjoint)
// cluster rects carved out of it. Excluded rects are kept sorted so that
// equal regions compare equal.
struct Region {
    Rect bounds;
    std::vector<Rect> excluded;

    static Region rectangular(const Rect& r) { return Region{r, {}}; }
    static Region remainder(const Rect& parent, std::vector<Rect> holes);

    bool is_remainder() const { return !excluded.empty(); }

    friend bool operator==(const Region&, const Region&) = default;
};

bool region_contains_point(const Region& z, const Point& p, const Rect& universe);

// Exact for rectangular regions. For remainder regions this may report an
// intersection that is actually empty (the area straddles several excluded
// rects) but never misses a real one.
bool region_intersects_rect(const Region& z, const Rect& area);
bool region_intersects_circle(const Region& z, const Circle& area);

// Query target geometry: axis-parallel rect or circle.
using AreaShape = std::variant<Rect, Circle>;

bool region_intersects_area(const Region& z, const AreaShape& area);
bool area_contains_point(const AreaShape& area, const Point& p, const Rect& universe);

enum class Scheme : std::uint8_t { splitting = 0, clustering = 1 };
enum class DivisionMode : std::uint8_t { complete = 0, incremental = 1 };

struct ZoningConfig {
    int k = 4;        // max out-degree of the zone hierarchy
    int theta_h = 16; // split threshold
    int theta_l = 4;  // merge threshold
    Scheme scheme = Scheme::splitting;
    DivisionMode division_mode = DivisionMode::complete;

    void validate() const; // throws std::invalid_argument
};

// Partitions `bounds` into `parts` half-open slabs cut perpendicular to
// its longer dimension (tie cuts at x coordinates). Cuts fall midway
// between the two peer coordinates adjacent to each quantile boundary, so
// no peer ever sits exactly on a cut. Throws UnsplittableZone when two
// quantile-adjacent peers share the cut-axis coordinate.
std::vector<Rect> split_zone(const Rect& bounds, std::span<const Point> peers, int parts);

struct ClusterResult {
    std::vector<Rect> clusters;            // pairwise disjoint, inside region.bounds
    std::vector<PeerAddr> remainder_peers; // peers in no cluster
};

// Greedy grid-sweep clustering: overlay a g x g grid (g = ceil(sqrt(n /
// theta_L))) on the region's bounding rect, then repeatedly grow the
// densest unclaimed cell into the largest axis-aligned block of unclaimed
// cells holding at most theta_H peers, accepting blocks with at least
// theta_L. Cells overlapping the region's excluded rects are never used,
// so clusters carved from a remainder region stay inside it. Throws
// NoViableClustering when not a single acceptable rect exists.
ClusterResult cluster_zone(const Region& region,
                           std::span<const std::pair<PeerAddr, Point>> peers,
                           const ZoningConfig& cfg);

} // namespace geop2p
