#pragma once

#include <optional>
#include <string>
#include <vector>

#include "geop2p/simnet.hpp"

namespace geop2p {

struct WorkloadSpec {
    std::string kind; // area_all | area_any | point_all | point_any | nearest | zone_broadcast
    int count = 0;
    // rect side lengths as fractions of the universe extent
    double min_side_frac = 0.02;
    double max_side_frac = 0.3;
};

struct ChurnPhase {
    ChurnSpec spec;
    double duration = 0;
};

// A declarative experiment: everything a run needs, JSON-loadable, with
// CLI overrides layered on top.
struct Scenario {
    std::uint64_t seed = 1;
    Rect universe{{0, 0}, {1000, 1000}};
    int n_initial = 100;
    ZoningConfig zoning;
    NetModel net;
    double refresh_period = 1e9;
    int bucket_capacity = 3;
    CoordDist coords;
    std::optional<ChurnPhase> churn;
    std::vector<WorkloadSpec> workload;
    std::vector<std::string> checks;
    std::uint64_t event_budget = 200'000'000;

    void validate() const;

    static Scenario from_json_file(const std::string& path);
    static Scenario from_json_text(const std::string& text);
    std::string to_json_text() const;
};

} // namespace geop2p
