#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "geop2p/runner.hpp"
#include "geop2p/wire.hpp"

using namespace geop2p;

namespace {

struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<int> n;
    std::optional<int> k;
    std::optional<int> theta_h;
    std::optional<int> theta_l;
    std::optional<std::string> scheme;
    std::optional<double> loss;
    std::optional<double> churn_rate;
};

void apply(Scenario& s, const Overrides& o) {
    if (o.seed) s.seed = *o.seed;
    if (o.n) s.n_initial = *o.n;
    if (o.k) s.zoning.k = *o.k;
    if (o.theta_h) s.zoning.theta_h = *o.theta_h;
    if (o.theta_l) s.zoning.theta_l = *o.theta_l;
    if (o.scheme) {
        s.zoning.scheme = *o.scheme == "clustering" ? Scheme::clustering : Scheme::splitting;
        if (s.zoning.scheme == Scheme::clustering)
            s.zoning.division_mode = DivisionMode::incremental;
    }
    if (o.loss) s.net.loss_rate = *o.loss;
    if (o.churn_rate && s.churn) {
        s.churn->spec.join_rate = *o.churn_rate;
        s.churn->spec.leave_rate = *o.churn_rate;
    }
    if (const char* budget = std::getenv("GEOP2P_EVENT_BUDGET"))
        s.event_budget = std::strtoull(budget, nullptr, 10);
    s.validate();
}

int run_one(const Scenario& scenario, const std::string& trace_path,
            const std::string& csv_path, const std::string& summary_path, bool quiet) {
    Runner runner(scenario);
    std::ofstream trace_out;
    if (!trace_path.empty()) {
        trace_out.open(trace_path);
        if (!trace_out) {
            std::cerr << "cannot open trace file " << trace_path << "\n";
            return 2;
        }
        runner.sim().trace().write = [&](const std::string& line) {
            trace_out << line << '\n';
        };
    }
    const RunReport report = runner.run();
    if (!csv_path.empty()) {
        std::ofstream csv(csv_path);
        csv << report.queries_csv();
    }
    if (!summary_path.empty()) {
        std::ofstream summary(summary_path);
        summary << report.summary_json() << '\n';
    }
    if (!quiet) {
        for (const CheckResult& c : report.checks)
            std::cout << (c.pass ? "PASS" : "FAIL") << "  " << c.name << ": " << c.detail
                      << "\n";
        std::cout << "peers=" << report.live_peers << " depth=" << report.final_depth
                  << " (peak " << report.peak_depth << ")"
                  << " events=" << report.events << " sent=" << report.sent
                  << " splits=" << report.splits << " merges=" << report.merges
                  << " collapses=" << report.collapses << "\n";
        std::cout << "trace_hash=" << report.trace_hash
                  << " trace_lines=" << report.trace_lines << " wall="
                  << report.wall_seconds << "s\n";
    }
    return report.all_passed() ? 0 : 1;
}

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == '\t') {
            out.push_back(cur);
            cur.clear();
        } else
            cur.push_back(c);
    }
    out.push_back(cur);
    return out;
}

// Offline trace audit: reconstructs the live-peer map from JOIN/LEAVE
// records and re-checks conservation plus rect/circle/nearest query
// exactness from scratch. Point-in-zone queries need the zone tree and
// are reported as unchecked.
int audit_trace(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        std::cerr << "cannot open trace " << path << "\n";
        return 2;
    }
    std::map<PeerAddr, Point> live;
    struct Q {
        std::string kind;
        std::string geom_kind;
        double a = 0, b = 0, c = 0, d = 0;
        std::vector<PeerAddr> expected;
        PeerAddr expected_nearest = kNoPeer;
        std::multiset<PeerAddr> delivered;
        bool checkable = false;
    };
    std::map<std::uint64_t, Q> queries;
    std::uint64_t sends = 0, delivers = 0, drop_loss = 0, drop_dead = 0;
    const Rect universe{{-1e300, -1e300}, {1e300, 1e300}}; // containment closure unused here

    std::string line;
    std::uint64_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        const auto f = split_fields(line);
        if (f.size() < 3) {
            std::cerr << path << ":" << lineno << ": short record\n";
            return 2;
        }
        const std::string& kind = f[2];
        if (kind == "SEND") ++sends;
        else if (kind == "DLVR") ++delivers;
        else if (kind == "DROP_LOSS") ++drop_loss;
        else if (kind == "DROP_DEAD") ++drop_dead;
        else if (kind == "JOIN") {
            live[std::stoull(f[3])] = Point{std::stod(f[4]), std::stod(f[5])};
        } else if (kind == "LEAVE") {
            live.erase(std::stoull(f[3]));
        } else if (kind == "QUERY") {
            Q q;
            q.kind = f[4];
            q.geom_kind = f.size() > 6 ? f[6] : "-";
            if (q.geom_kind == "rect" && f.size() >= 11) {
                q.a = std::stod(f[7]);
                q.b = std::stod(f[8]);
                q.c = std::stod(f[9]);
                q.d = std::stod(f[10]);
                const Rect area{{q.a, q.b}, {q.c, q.d}};
                for (const auto& [addr, p] : live)
                    if (rect_contains_point_in(area, p, universe))
                        q.expected.push_back(addr);
                q.checkable = q.kind == "area_all";
            } else if (q.geom_kind == "circle" && f.size() >= 10) {
                const Circle area{{std::stod(f[7]), std::stod(f[8])}, std::stod(f[9])};
                for (const auto& [addr, p] : live)
                    if (circle_contains_point(area, p))
                        q.expected.push_back(addr);
                q.checkable = q.kind == "area_all";
            } else if (q.geom_kind == "point" && q.kind == "nearest" && f.size() >= 9) {
                const Point pt{std::stod(f[7]), std::stod(f[8])};
                double best = 0;
                for (const auto& [addr, p] : live) {
                    const double dd = distance(pt, p);
                    if (q.expected_nearest == kNoPeer || dd < best) {
                        q.expected_nearest = addr;
                        best = dd;
                    }
                }
                q.checkable = true;
            }
            queries[std::stoull(f[3])] = std::move(q);
        } else if (kind == "APP") {
            auto it = queries.find(std::stoull(f[3]));
            if (it != queries.end())
                it->second.delivered.insert(std::stoull(f[4]));
        }
    }

    const bool conserved = sends == delivers + drop_loss + drop_dead;
    int checked = 0, exact = 0, unchecked = 0;
    for (const auto& [qid, q] : queries) {
        if (!q.checkable) {
            ++unchecked;
            continue;
        }
        ++checked;
        if (q.kind == "nearest") {
            exact += q.delivered.size() == 1 && *q.delivered.begin() == q.expected_nearest;
        } else {
            const std::multiset<PeerAddr> want(q.expected.begin(), q.expected.end());
            exact += q.delivered == want;
        }
    }
    std::cout << "conservation: sent=" << sends << " delivered=" << delivers
              << " dropped_loss=" << drop_loss << " dropped_dead=" << drop_dead << " -> "
              << (conserved ? "OK" : "VIOLATED") << "\n";
    std::cout << "queries: " << checked << " checked, " << exact << " exact, "
              << unchecked << " unchecked (zone-addressed kinds)\n";
    const bool ok = conserved && exact == checked;
    std::cout << (ok ? "PASS" : "FAIL") << "  trace audit\n";
    return ok ? 0 : 1;
}

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        out.push_back(item);
    return out;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"geop2p: decentralized spatial overlay simulator"};
    app.require_subcommand(1);

    // run
    auto* run_cmd = app.add_subcommand("run", "run a scenario file");
    std::string scenario_path;
    std::string trace_path, csv_path, summary_path;
    bool quiet = false;
    Overrides ov;
    run_cmd->add_option("scenario", scenario_path, "scenario JSON file")->required();
    run_cmd->add_option("--trace", trace_path, "write the event trace here");
    run_cmd->add_option("--csv", csv_path, "write per-query metrics CSV here");
    run_cmd->add_option("--summary", summary_path, "write the JSON summary here");
    run_cmd->add_flag("--quiet", quiet, "suppress stdout report");
    run_cmd->add_option("--seed", ov.seed);
    run_cmd->add_option("--n", ov.n);
    run_cmd->add_option("--k", ov.k);
    run_cmd->add_option("--theta-h", ov.theta_h);
    run_cmd->add_option("--theta-l", ov.theta_l);
    run_cmd->add_option("--scheme", ov.scheme)
        ->check(CLI::IsMember({"splitting", "clustering"}));
    run_cmd->add_option("--loss", ov.loss);
    run_cmd->add_option("--churn-rate", ov.churn_rate);

    // audit
    auto* audit_cmd = app.add_subcommand("audit", "re-check a recorded trace");
    std::string audit_path;
    audit_cmd->add_option("trace", audit_path, "trace file from `run --trace`")->required();

    // sweep
    auto* sweep_cmd = app.add_subcommand("sweep", "run a scenario across parameter ranges");
    std::string sweep_scenario;
    std::map<std::string, std::string> sweep_params;
    sweep_cmd->add_option("scenario", sweep_scenario, "scenario JSON file")->required();
    sweep_cmd->add_option("--param", sweep_params,
                          "name=v1,v2,... (k, theta-h, theta-l, n, seed, loss, scheme)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run_cmd) {
            Scenario s = Scenario::from_json_file(scenario_path);
            apply(s, ov);
            return run_one(s, trace_path, csv_path, summary_path, quiet);
        }
        if (*audit_cmd)
            return audit_trace(audit_path);
        if (*sweep_cmd) {
            const Scenario base = Scenario::from_json_file(sweep_scenario);
            std::vector<Scenario> cells{base};
            for (const auto& [name, values] : sweep_params) {
                std::vector<Scenario> next;
                for (const Scenario& cell : cells)
                    for (const std::string& v : split_csv(values)) {
                        Scenario s = cell;
                        if (name == "k") s.zoning.k = std::stoi(v);
                        else if (name == "theta-h") s.zoning.theta_h = std::stoi(v);
                        else if (name == "theta-l") s.zoning.theta_l = std::stoi(v);
                        else if (name == "n") s.n_initial = std::stoi(v);
                        else if (name == "seed") s.seed = std::stoull(v);
                        else if (name == "loss") s.net.loss_rate = std::stod(v);
                        else if (name == "scheme")
                            s.zoning.scheme = v == "clustering" ? Scheme::clustering
                                                                : Scheme::splitting;
                        else
                            throw std::invalid_argument("unknown sweep param: " + name);
                        next.push_back(std::move(s));
                    }
                cells = std::move(next);
            }
            std::cout << "k,theta_h,theta_l,n,seed,loss,scheme,passed,peers,depth,"
                         "events,splits,merges,wall_s\n";
            int rc = 0;
            for (Scenario& cell : cells) {
                cell.validate();
                Runner runner(cell);
                const RunReport report = runner.run();
                if (!report.all_passed()) rc = 1;
                std::cout << cell.zoning.k << ',' << cell.zoning.theta_h << ','
                          << cell.zoning.theta_l << ',' << cell.n_initial << ','
                          << cell.seed << ',' << cell.net.loss_rate << ','
                          << (cell.zoning.scheme == Scheme::clustering ? "clustering"
                                                                       : "splitting")
                          << ',' << (report.all_passed() ? 1 : 0) << ','
                          << report.live_peers << ',' << report.final_depth << ','
                          << report.events << ',' << report.splits << ','
                          << report.merges << ',' << report.wall_seconds << "\n";
            }
            return rc;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
