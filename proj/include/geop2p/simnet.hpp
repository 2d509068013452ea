#pragma once

#include <deque>
#include <functional>
#include <map>
#include <queue>
#include <string>
#include <vector>

#include "geop2p/oracle.hpp"
#include "geop2p/peer.hpp"
#include "geop2p/rng.hpp"

namespace geop2p {

struct EventBudgetExceeded : std::runtime_error {
    EventBudgetExceeded() : std::runtime_error("event budget exceeded") {}
};
struct RejectedPastEvent : std::logic_error {
    RejectedPastEvent() : std::logic_error("scheduled event in the past") {}
};

struct DelaySpec {
    enum class Kind : std::uint8_t { fixed, uniform } kind = Kind::uniform;
    double lo = 1.0;
    double hi = 10.0;

    double max() const { return kind == Kind::fixed ? lo : hi; }
    double mean() const { return kind == Kind::fixed ? lo : (lo + hi) / 2.0; }
};

struct NetModel {
    DelaySpec delay;
    double loss_rate = 0.0;
};

struct CoordDist {
    enum class Kind : std::uint8_t { uniform, clustered } kind = Kind::uniform;
    int blobs = 5;
    double spread = 0.05; // blob half-width as a fraction of universe size
};

struct ChurnSpec {
    double join_rate = 0.0;  // events per unit time
    double leave_rate = 0.0;
    double graceful_fraction = 1.0;
    CoordDist coords;
};

// One line-oriented record per processed event; rendered deterministically
// so identical runs produce byte-identical traces.
struct TraceSink {
    std::function<void(const std::string&)> write; // may be empty
    std::uint64_t line_hash = 1469598103934665603ULL; // FNV offset
    std::uint64_t lines = 0;

    void emit(const std::string& line);
};

struct QueryRecord {
    std::uint64_t qid = 0;
    std::string kind;
    SimTime issued = 0;
    PeerAddr issuer = kNoPeer;
    std::vector<PeerAddr> expected;        // oracle set at injection
    PeerAddr expected_nearest = kNoPeer;
    int depth_at_injection = 0;            // max leaf-row index back then
    std::vector<std::pair<PeerAddr, std::uint32_t>> delivered; // (peer, hops)
};

// Deterministic discrete-event scheduler driving the peers, the ground
// truth mirror, and the trace.
class Simulator {
public:
    Simulator(const Rect& universe, const ZoningConfig& cfg, const NetModel& net,
              const ProtocolParams& params, std::uint64_t seed);

    SimTime now() const { return now_; }
    GroundTruth& ground_truth() { return gt_; }
    const GroundTruth& ground_truth() const { return gt_; }
    const std::map<PeerAddr, Peer>& peers() const { return peers_; }
    TraceSink& trace() { return trace_; }
    const ProtocolParams& params() const { return params_; }

    void set_event_budget(std::uint64_t b) { event_budget_ = b; }
    void set_loss_rate(double p) { net_.loss_rate = p; }
    // Re-arms every live peer's periodic refresh under a new period; new
    // joiners inherit it too.
    void set_refresh_period(double t);

    PeerAddr spawn_seed_peer(Point coord);
    // Allocates the address now; the join starts at `at`.
    PeerAddr spawn_joining_peer(SimTime at, Point coord, PeerAddr bootstrap);
    void schedule_leave(SimTime at, PeerAddr addr, bool graceful);
    // Poisson-ish arrivals at fixed expected spacing, deterministic.
    void schedule_churn(const ChurnSpec& spec, SimTime start, double duration);

    std::uint64_t inject_query(SimTime at, PeerAddr issuer, Message query,
                               const std::string& kind);
    const std::map<std::uint64_t, QueryRecord>& queries() const { return query_log_; }

    const std::vector<SplitEvent>& splits() const { return splits_; }
    const std::vector<MergeEvent>& merges() const { return merges_; }
    const std::vector<CollapseEvent>& collapses() const { return collapses_; }
    int peak_depth() const { return peak_depth_; }

    std::uint64_t sent() const { return sent_; }
    std::uint64_t delivered() const { return delivered_; }
    std::uint64_t dropped_loss() const { return dropped_loss_; }
    std::uint64_t dropped_dead() const { return dropped_dead_; }
    std::uint64_t events_processed() const { return events_; }
    std::uint64_t join_failures() const { return join_failures_; }
    const std::vector<std::string>& audit_notes() const { return audit_notes_; }

    // Run until the virtual clock passes t_end.
    void run_until(SimTime t_end);
    // Run until only periodic refresh timers remain pending.
    void run_to_quiescence();
    bool quiescent() const { return pending_nonperiodic_ == 0; }

    Point draw_coord(const CoordDist& dist);
    PeerAddr random_live_peer();

private:
    struct EvDeliver {
        PeerAddr to;
        MsgMeta meta;
        Message msg;
    };
    struct EvTimer {
        PeerAddr peer;
        std::uint64_t token;
        bool periodic;
    };
    struct EvStartJoin {
        PeerAddr addr;
        Point coord;
        PeerAddr bootstrap;
        int attempt;
    };
    struct EvLeave {
        PeerAddr addr;
        bool graceful;
    };
    struct EvChurnJoin {
        Point coord;
    };
    struct EvInject {
        PeerAddr issuer;
        Message query;
        std::uint64_t qid;
    };
    using EventBody =
        std::variant<EvDeliver, EvTimer, EvStartJoin, EvLeave, EvChurnJoin, EvInject>;
    struct Event {
        SimTime at;
        std::uint64_t seq;
        EventBody body;
        bool counts_as_pending; // everything except periodic refresh timers
    };
    struct EventOrder {
        bool operator()(const Event& a, const Event& b) const {
            if (a.at != b.at) return a.at > b.at;
            return a.seq > b.seq;
        }
    };

    void schedule(SimTime at, EventBody body, bool periodic = false);
    void step();
    void process(const Event& ev);
    void dispatch_outputs(PeerAddr who, Outputs&& out);
    void remove_peer(PeerAddr addr, bool graceful);
    void record_delivery(PeerAddr who, const AppDelivery& d);
    std::string fmt_time() const;

    Rect universe_;
    ZoningConfig cfg_;
    NetModel net_;
    ProtocolParams params_;
    Rng net_rng_;
    Rng churn_rng_;
    Rng misc_rng_;
    GroundTruth gt_;
    TraceSink trace_;

    std::map<PeerAddr, Peer> peers_;
    std::priority_queue<Event, std::vector<Event>, EventOrder> queue_;
    SimTime now_ = 0;
    std::uint64_t next_seq_ = 0;
    std::uint64_t next_addr_ = 1;
    std::uint64_t next_qid_ = 1;
    std::uint64_t pending_nonperiodic_ = 0;
    std::uint64_t event_budget_ = 200'000'000;
    std::uint64_t events_ = 0;
    std::uint64_t sent_ = 0, delivered_ = 0, dropped_loss_ = 0, dropped_dead_ = 0;
    std::uint64_t join_failures_ = 0;
    std::map<PeerAddr, int> join_attempts_;
    std::map<std::uint64_t, QueryRecord> query_log_;
    std::vector<SplitEvent> splits_;
    std::vector<MergeEvent> merges_;
    std::vector<CollapseEvent> collapses_;
    std::vector<std::string> audit_notes_;
    int peak_depth_ = 0;
};

} // namespace geop2p
