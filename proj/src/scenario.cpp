#include "geop2p/scenario.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace geop2p {

using nlohmann::json;

namespace {

Scheme scheme_of(const std::string& s) {
    if (s == "splitting") return Scheme::splitting;
    if (s == "clustering") return Scheme::clustering;
    throw std::invalid_argument("scheme must be 'splitting' or 'clustering'");
}

DivisionMode mode_of(const std::string& s) {
    if (s == "complete") return DivisionMode::complete;
    if (s == "incremental") return DivisionMode::incremental;
    throw std::invalid_argument("division_mode must be 'complete' or 'incremental'");
}

const char* scheme_name(Scheme s) {
    return s == Scheme::splitting ? "splitting" : "clustering";
}
const char* mode_name(DivisionMode m) {
    return m == DivisionMode::complete ? "complete" : "incremental";
}

} // namespace

void Scenario::validate() const {
    zoning.validate();
    if (!is_valid(universe))
        throw std::invalid_argument("universe must be a non-degenerate rect");
    if (n_initial < 1)
        throw std::invalid_argument("n_initial must be >= 1");
    if (net.loss_rate < 0 || net.loss_rate >= 1)
        throw std::invalid_argument("loss_rate must be in [0, 1)");
    if (refresh_period <= 0)
        throw std::invalid_argument("refresh_period must be positive");
    if (bucket_capacity < 1)
        throw std::invalid_argument("bucket_capacity must be >= 1");
    for (const WorkloadSpec& w : workload) {
        if (w.kind != "area_all" && w.kind != "area_any" && w.kind != "point_all" &&
            w.kind != "point_any" && w.kind != "nearest" && w.kind != "zone_broadcast")
            throw std::invalid_argument("unknown workload kind: " + w.kind);
        if (w.count < 0)
            throw std::invalid_argument("workload count must be >= 0");
    }
}

Scenario Scenario::from_json_text(const std::string& text) {
    const json j = json::parse(text);
    Scenario s;
    s.seed = j.value("seed", std::uint64_t{1});
    if (j.contains("universe")) {
        const auto& u = j.at("universe");
        s.universe = Rect{{u.at("min").at(0), u.at("min").at(1)},
                          {u.at("max").at(0), u.at("max").at(1)}};
    }
    s.n_initial = j.value("n_initial", 100);
    if (j.contains("zoning")) {
        const auto& z = j.at("zoning");
        s.zoning.k = z.value("k", 4);
        s.zoning.theta_h = z.value("theta_h", 16);
        s.zoning.theta_l = z.value("theta_l", 4);
        s.zoning.scheme = scheme_of(z.value("scheme", "splitting"));
        s.zoning.division_mode = mode_of(z.value("division_mode", "complete"));
    }
    if (j.contains("net")) {
        const auto& n = j.at("net");
        if (n.contains("delay")) {
            const auto& d = n.at("delay");
            const std::string kind = d.value("kind", "uniform");
            s.net.delay.kind =
                kind == "fixed" ? DelaySpec::Kind::fixed : DelaySpec::Kind::uniform;
            s.net.delay.lo = d.value("lo", 1.0);
            s.net.delay.hi = d.value("hi", 10.0);
        }
        s.net.loss_rate = n.value("loss_rate", 0.0);
    }
    s.refresh_period = j.value("refresh_period", 1e9);
    s.bucket_capacity = j.value("bucket_capacity", 3);
    if (j.contains("coord_distribution")) {
        const auto& c = j.at("coord_distribution");
        const std::string kind = c.value("kind", "uniform");
        s.coords.kind =
            kind == "clustered" ? CoordDist::Kind::clustered : CoordDist::Kind::uniform;
        s.coords.blobs = c.value("blobs", 5);
        s.coords.spread = c.value("spread", 0.05);
    }
    if (j.contains("churn")) {
        const auto& c = j.at("churn");
        ChurnPhase phase;
        phase.spec.join_rate = c.value("join_rate", 0.0);
        phase.spec.leave_rate = c.value("leave_rate", 0.0);
        phase.spec.graceful_fraction = c.value("graceful_fraction", 1.0);
        phase.spec.coords = s.coords;
        phase.duration = c.value("duration", 0.0);
        s.churn = phase;
    }
    if (j.contains("workload"))
        for (const auto& w : j.at("workload")) {
            WorkloadSpec spec;
            spec.kind = w.at("kind");
            spec.count = w.value("count", 0);
            spec.min_side_frac = w.value("min_side_frac", 0.02);
            spec.max_side_frac = w.value("max_side_frac", 0.3);
            s.workload.push_back(spec);
        }
    if (j.contains("checks"))
        for (const auto& c : j.at("checks"))
            s.checks.push_back(c);
    s.event_budget = j.value("event_budget", std::uint64_t{200'000'000});
    s.validate();
    return s;
}

Scenario Scenario::from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw std::runtime_error("cannot open scenario file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    try {
        return from_json_text(ss.str());
    } catch (const json::exception& e) {
        throw std::runtime_error(path + ": " + e.what());
    }
}

std::string Scenario::to_json_text() const {
    json j;
    j["seed"] = seed;
    j["universe"] = {{"min", {universe.min.x, universe.min.y}},
                     {"max", {universe.max.x, universe.max.y}}};
    j["n_initial"] = n_initial;
    j["zoning"] = {{"k", zoning.k},
                   {"theta_h", zoning.theta_h},
                   {"theta_l", zoning.theta_l},
                   {"scheme", scheme_name(zoning.scheme)},
                   {"division_mode", mode_name(zoning.division_mode)}};
    j["net"] = {{"delay",
                 {{"kind", net.delay.kind == DelaySpec::Kind::fixed ? "fixed" : "uniform"},
                  {"lo", net.delay.lo},
                  {"hi", net.delay.hi}}},
                {"loss_rate", net.loss_rate}};
    j["refresh_period"] = refresh_period;
    j["bucket_capacity"] = bucket_capacity;
    j["coord_distribution"] = {
        {"kind", coords.kind == CoordDist::Kind::clustered ? "clustered" : "uniform"},
        {"blobs", coords.blobs},
        {"spread", coords.spread}};
    if (churn)
        j["churn"] = {{"join_rate", churn->spec.join_rate},
                      {"leave_rate", churn->spec.leave_rate},
                      {"graceful_fraction", churn->spec.graceful_fraction},
                      {"duration", churn->duration}};
    j["workload"] = json::array();
    for (const WorkloadSpec& w : workload)
        j["workload"].push_back({{"kind", w.kind},
                                 {"count", w.count},
                                 {"min_side_frac", w.min_side_frac},
                                 {"max_side_frac", w.max_side_frac}});
    j["checks"] = checks;
    j["event_budget"] = event_budget;
    return j.dump(2);
}

} // namespace geop2p
