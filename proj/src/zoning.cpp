#include "geop2p/zoning.hpp"

#include <algorithm>
#include <cmath>

namespace geop2p {

int ZoneId::branch_at(std::size_t level) const {
    if (level < 1 || level > path_.size())
        throw std::out_of_range("ZoneId level out of range");
    return path_[level - 1];
}

ZoneId ZoneId::parent() const {
    if (path_.empty())
        throw std::out_of_range("universe has no parent");
    return ZoneId{std::vector<std::uint8_t>(path_.begin(), path_.end() - 1)};
}

ZoneId ZoneId::child(int branch) const {
    if (branch < 0 || branch > 255)
        throw std::out_of_range("branch index out of byte range");
    auto p = path_;
    p.push_back(static_cast<std::uint8_t>(branch));
    return ZoneId{std::move(p)};
}

bool ZoneId::is_prefix_of(const ZoneId& other) const {
    if (path_.size() > other.path_.size()) return false;
    return std::equal(path_.begin(), path_.end(), other.path_.begin());
}

std::size_t ZoneId::common_depth(const ZoneId& a, const ZoneId& b) {
    const std::size_t n = std::min(a.path_.size(), b.path_.size());
    std::size_t i = 0;
    while (i < n && a.path_[i] == b.path_[i]) ++i;
    return i;
}

void ZoneId::encode(std::vector<std::uint8_t>& out) const {
    out.push_back(static_cast<std::uint8_t>(path_.size()));
    out.insert(out.end(), path_.begin(), path_.end());
}

ZoneId ZoneId::decode(std::span<const std::uint8_t> in, std::size_t& offset) {
    if (offset >= in.size())
        throw std::runtime_error("truncated zone id");
    const std::size_t len = in[offset++];
    if (offset + len > in.size())
        throw std::runtime_error("truncated zone id");
    std::vector<std::uint8_t> p(in.begin() + offset, in.begin() + offset + len);
    offset += len;
    return ZoneId{std::move(p)};
}

std::string ZoneId::to_string() const {
    if (path_.empty()) return "<root>";
    std::string s;
    for (std::size_t i = 0; i < path_.size(); ++i) {
        if (i) s.push_back('.');
        s += std::to_string(int(path_[i]));
    }
    return s;
}

Region Region::remainder(const Rect& parent, std::vector<Rect> holes) {
    std::sort(holes.begin(), holes.end(), [](const Rect& a, const Rect& b) {
        if (a.min.x != b.min.x) return a.min.x < b.min.x;
        if (a.min.y != b.min.y) return a.min.y < b.min.y;
        if (a.max.x != b.max.x) return a.max.x < b.max.x;
        return a.max.y < b.max.y;
    });
    return Region{parent, std::move(holes)};
}

bool region_contains_point(const Region& z, const Point& p, const Rect& universe) {
    if (!rect_contains_point_in(z.bounds, p, universe))
        return false;
    for (const Rect& ex : z.excluded)
        if (rect_contains_point_in(ex, p, universe))
            return false;
    return true;
}

namespace {

// [a.min, a.max) fully inside [e.min, e.max) as point sets.
bool rect_inside_rect(const Rect& a, const Rect& e) {
    return e.min.x <= a.min.x && a.max.x <= e.max.x &&
           e.min.y <= a.min.y && a.max.y <= e.max.y;
}

// Closed disc strictly within the half-open rect. Borderline cases fall
// through to "not contained", which only over-approximates.
bool circle_inside_rect(const Circle& c, const Rect& e) {
    return c.center.x - c.radius >= e.min.x && c.center.x + c.radius < e.max.x &&
           c.center.y - c.radius >= e.min.y && c.center.y + c.radius < e.max.y;
}

} // namespace

bool region_intersects_rect(const Region& z, const Rect& area) {
    if (!rect_intersects_rect(z.bounds, area))
        return false;
    for (const Rect& ex : z.excluded)
        if (rect_inside_rect(area, ex))
            return false;
    return true;
}

bool region_intersects_circle(const Region& z, const Circle& area) {
    if (!circle_intersects_rect(area, z.bounds))
        return false;
    for (const Rect& ex : z.excluded)
        if (circle_inside_rect(area, ex))
            return false;
    return true;
}

bool region_intersects_area(const Region& z, const AreaShape& area) {
    if (const Rect* r = std::get_if<Rect>(&area))
        return region_intersects_rect(z, *r);
    return region_intersects_circle(z, std::get<Circle>(area));
}

bool area_contains_point(const AreaShape& area, const Point& p, const Rect& universe) {
    if (const Rect* r = std::get_if<Rect>(&area))
        return rect_contains_point_in(*r, p, universe);
    return circle_contains_point(std::get<Circle>(area), p);
}

void ZoningConfig::validate() const {
    if (k < 2 || k > 256)
        throw std::invalid_argument("k must be in [2, 256]");
    if (theta_l < 1)
        throw std::invalid_argument("theta_L must be >= 1");
    if (division_mode == DivisionMode::complete && theta_h < k * theta_l)
        throw std::invalid_argument("complete division needs theta_H >= k * theta_L");
    if (division_mode == DivisionMode::incremental && theta_h <= 2 * theta_l)
        throw std::invalid_argument("incremental division needs theta_H > 2 * theta_L");
}

std::vector<Rect> split_zone(const Rect& bounds, std::span<const Point> peers, int parts) {
    if (peers.empty())
        throw std::invalid_argument("split_zone: no peers");
    if (parts < 2 || static_cast<std::size_t>(parts) > peers.size())
        throw std::invalid_argument("split_zone: bad part count");

    const bool cut_x = bounds.width() >= bounds.height();
    std::vector<double> coords;
    coords.reserve(peers.size());
    for (const Point& p : peers)
        coords.push_back(cut_x ? p.x : p.y);
    std::sort(coords.begin(), coords.end());

    const std::size_t n = coords.size();
    const std::size_t m = static_cast<std::size_t>(parts);
    std::vector<double> cuts;
    cuts.reserve(m - 1);
    std::size_t taken = 0;
    for (std::size_t i = 0; i < m - 1; ++i) {
        taken += n / m + (i < n % m ? 1 : 0);
        const double lo = coords[taken - 1];
        const double hi = coords[taken];
        if (lo == hi)
            throw UnsplittableZone{};
        cuts.push_back(lo + (hi - lo) / 2.0);
    }

    std::vector<Rect> out;
    out.reserve(m);
    double prev = cut_x ? bounds.min.x : bounds.min.y;
    for (std::size_t i = 0; i <= cuts.size(); ++i) {
        const double next = i < cuts.size() ? cuts[i] : (cut_x ? bounds.max.x : bounds.max.y);
        if (cut_x)
            out.push_back(Rect{{prev, bounds.min.y}, {next, bounds.max.y}});
        else
            out.push_back(Rect{{bounds.min.x, prev}, {bounds.max.x, next}});
        prev = next;
    }
    return out;
}

namespace {

struct Grid {
    int nx = 0, ny = 0;
    std::vector<double> xs; // nx+1 edges
    std::vector<double> ys; // ny+1 edges

    int index_of(const std::vector<double>& edges, double v) const {
        // Consistent with half-open rect containment: cell i covers
        // [edges[i], edges[i+1]); a value equal to the last edge (the
        // universe closure case) lands in the last cell.
        auto it = std::upper_bound(edges.begin(), edges.end(), v);
        int i = static_cast<int>(it - edges.begin()) - 1;
        const int n = static_cast<int>(edges.size()) - 2;
        if (i > n) i = n;
        if (i < 0) i = 0;
        return i;
    }

    Rect cell_block(int i0, int i1, int j0, int j1) const {
        return Rect{{xs[i0], ys[j0]}, {xs[i1 + 1], ys[j1 + 1]}};
    }
};

// Overlays g x g uniform lines plus every edge of the already-excluded
// rects, so each cell is either fully inside an exclusion or fully free.
// Without the alignment, peers near an exclusion edge would sit in cells
// that can never join a cluster.
Grid make_grid(const Rect& bounds, int g, const std::vector<Rect>& excluded) {
    std::vector<double> xs, ys;
    for (int i = 0; i < g; ++i) {
        xs.push_back(bounds.min.x + (bounds.max.x - bounds.min.x) * i / g);
        ys.push_back(bounds.min.y + (bounds.max.y - bounds.min.y) * i / g);
    }
    xs.push_back(bounds.max.x);
    ys.push_back(bounds.max.y);
    for (const Rect& ex : excluded) {
        for (double x : {ex.min.x, ex.max.x})
            if (x > bounds.min.x && x < bounds.max.x) xs.push_back(x);
        for (double y : {ex.min.y, ex.max.y})
            if (y > bounds.min.y && y < bounds.max.y) ys.push_back(y);
    }
    std::sort(xs.begin(), xs.end());
    xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
    std::sort(ys.begin(), ys.end());
    ys.erase(std::unique(ys.begin(), ys.end()), ys.end());

    Grid grid;
    grid.xs = std::move(xs);
    grid.ys = std::move(ys);
    grid.nx = static_cast<int>(grid.xs.size()) - 1;
    grid.ny = static_cast<int>(grid.ys.size()) - 1;
    return grid;
}

} // namespace

namespace {

ClusterResult try_cluster(const Region& region,
                          std::span<const std::pair<PeerAddr, Point>> peers,
                          const ZoningConfig& cfg, int g);

} // namespace

ClusterResult cluster_zone(const Region& region,
                           std::span<const std::pair<PeerAddr, Point>> peers,
                           const ZoningConfig& cfg) {
    const std::size_t n = peers.size();
    int g = std::max(2, static_cast<int>(std::ceil(
                            std::sqrt(static_cast<double>(n) / cfg.theta_l))));
    // A blob denser than theta_H inside a single cell cannot be carved at
    // this granularity; refine the grid before giving up.
    for (; g <= 128; g *= 2) {
        try {
            return try_cluster(region, peers, cfg, g);
        } catch (const NoViableClustering&) {
        }
    }
    throw NoViableClustering{};
}

namespace {

ClusterResult try_cluster(const Region& region,
                          std::span<const std::pair<PeerAddr, Point>> peers,
                          const ZoningConfig& cfg, int g) {
    const Rect& bounds = region.bounds;
    const std::size_t n = peers.size();
    const Grid grid = make_grid(bounds, g, region.excluded);
    const int nx = grid.nx, ny = grid.ny;

    const auto cell_id = [&](int i, int j) { return j * nx + i; };
    std::vector<int> count(nx * ny, 0);
    std::vector<std::vector<std::size_t>> members(nx * ny);
    for (std::size_t p = 0; p < n; ++p) {
        const int i = grid.index_of(grid.xs, peers[p].second.x);
        const int j = grid.index_of(grid.ys, peers[p].second.y);
        count[cell_id(i, j)] += 1;
        members[cell_id(i, j)].push_back(p);
    }

    // Grid lines are aligned with the exclusions, so a cell is either
    // fully excluded (off limits) or fully free.
    std::vector<char> claimed(nx * ny, 0);
    int claimable = nx * ny;
    for (int j = 0; j < ny; ++j)
        for (int i = 0; i < nx; ++i) {
            const Rect cell = grid.cell_block(i, i, j, j);
            for (const Rect& ex : region.excluded)
                if (rect_intersects_rect(cell, ex)) {
                    claimed[cell_id(i, j)] = 1;
                    --claimable;
                    break;
                }
        }

    struct Block {
        int i0, i1, j0, j1;
        int cells() const { return (i1 - i0 + 1) * (j1 - j0 + 1); }
    };

    const auto block_count = [&](const Block& b) {
        int c = 0;
        for (int j = b.j0; j <= b.j1; ++j)
            for (int i = b.i0; i <= b.i1; ++i)
                c += count[cell_id(i, j)];
        return c;
    };
    const auto block_free = [&](const Block& b) {
        for (int j = b.j0; j <= b.j1; ++j)
            for (int i = b.i0; i <= b.i1; ++i)
                if (claimed[cell_id(i, j)]) return false;
        return true;
    };

    ClusterResult result;
    std::vector<std::vector<std::size_t>> cluster_members;
    std::vector<char> rejected_seed(nx * ny, 0);

    while (static_cast<int>(result.clusters.size()) < cfg.k - 1) {
        int seed = -1;
        for (int c = 0; c < nx * ny; ++c) {
            if (claimed[c] || rejected_seed[c] || count[c] == 0) continue;
            if (seed < 0 || count[c] > count[seed]) seed = c;
        }
        if (seed < 0) break;

        // A cluster born holding theta_H peers would have to divide again
        // on its very next arrival; cap it one below.
        const int limit = cfg.theta_h - 1;
        Block b{seed % nx, seed % nx, seed / nx, seed / nx};
        int total = count[seed];
        if (total > limit) {
            rejected_seed[seed] = 1; // single cell too dense at this grid
            continue;
        }
        for (;;) {
            Block best{};
            int best_gain = -1;
            const Block cands[4] = {
                {b.i0, b.i1 + 1, b.j0, b.j1}, // +x
                {b.i0 - 1, b.i1, b.j0, b.j1}, // -x
                {b.i0, b.i1, b.j0, b.j1 + 1}, // +y
                {b.i0, b.i1, b.j0 - 1, b.j1}, // -y
            };
            for (const Block& c : cands) {
                if (c.i0 < 0 || c.j0 < 0 || c.i1 >= nx || c.j1 >= ny) continue;
                if (!block_free(c)) continue;
                const int cnt = block_count(c);
                if (cnt > limit) continue;
                // A cluster covering every usable cell would leave an
                // empty remainder and divide the zone into itself.
                if (region.excluded.empty() && c.cells() == claimable) continue;
                const int gain = cnt - total;
                if (gain > best_gain) {
                    best_gain = gain;
                    best = c;
                }
            }
            // Grow toward viability while short of theta_L; beyond that
            // absorb only dense continuations, so scattered stragglers
            // stay in the remainder instead of being swept up.
            if (best_gain < 1) break;
            if (total >= cfg.theta_l && best_gain < cfg.theta_l) break;
            b = best;
            total += best_gain;
        }

        if (total < cfg.theta_l) {
            rejected_seed[seed] = 1;
            continue;
        }

        std::vector<std::size_t> mem;
        for (int j = b.j0; j <= b.j1; ++j)
            for (int i = b.i0; i <= b.i1; ++i) {
                claimed[cell_id(i, j)] = 1;
                --claimable;
                auto& m = members[cell_id(i, j)];
                mem.insert(mem.end(), m.begin(), m.end());
            }
        result.clusters.push_back(grid.cell_block(b.i0, b.i1, b.j0, b.j1));
        cluster_members.push_back(std::move(mem));
    }

    if (result.clusters.empty())
        throw NoViableClustering{};

    std::vector<char> in_cluster(n, 0);
    for (const auto& mem : cluster_members)
        for (std::size_t p : mem)
            in_cluster[p] = 1;
    for (std::size_t p = 0; p < n; ++p)
        if (!in_cluster[p])
            result.remainder_peers.push_back(peers[p].first);
    return result;
}

} // namespace

} // namespace geop2p
