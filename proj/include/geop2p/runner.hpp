#pragma once

#include <memory>

#include "geop2p/scenario.hpp"

namespace geop2p {

struct QueryOutcome {
    std::uint64_t qid = 0;
    std::string kind;
    SimTime issued = 0;
    int expected_n = 0;
    int delivered_n = 0;
    int misses = 0;
    int dupes = 0;
    bool exact = false;
    std::uint32_t hops_max = 0;
    double hops_mean = 0;
    int depth_bound = 0;
    bool hops_ok = true;
    bool during_churn = false;
};

struct CheckResult {
    std::string name;
    bool pass = false;
    std::string detail;
};

struct RunReport {
    std::vector<QueryOutcome> queries;
    std::vector<CheckResult> checks;
    std::uint64_t trace_hash = 0;
    std::uint64_t trace_lines = 0;
    int peak_depth = 0;
    int final_depth = 0;
    double wall_seconds = 0;
    std::uint64_t events = 0;
    std::uint64_t sent = 0, delivered = 0, dropped_loss = 0, dropped_dead = 0;
    std::size_t live_peers = 0;
    int splits = 0, merges = 0, collapses = 0;
    std::string audit_summary;
    bool audit_ok = false;

    bool all_passed() const;
    std::string queries_csv() const;
    std::string summary_json() const;
};

// Drives one scenario end to end: overlay construction, optional churn,
// workload, audits, and the named acceptance checks.
class Runner {
public:
    explicit Runner(const Scenario& scenario);
    ~Runner();

    Simulator& sim() { return *sim_; }

    // The full pipeline. Stages can also be run individually for tests.
    RunReport run();

    void build_overlay();
    void run_churn_phase();
    void run_workload();
    RunReport finish();

private:
    void settle(double horizon_hint);
    void inject_one(const WorkloadSpec& spec, bool during_churn);
    QueryOutcome score(const QueryRecord& rec) const;
    void run_checks(RunReport& report) const;

    Scenario scenario_;
    std::unique_ptr<Simulator> sim_;
    Rng geometry_rng_;
    PeerAddr seed_peer_ = kNoPeer;
    std::vector<std::uint64_t> churn_probe_qids_;
    bool static_run_ = true; // refresh effectively disabled
};

} // namespace geop2p
