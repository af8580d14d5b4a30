#include "knobtune/evalmetrics.hpp"

#include "knobtune/errors.hpp"
#include "knobtune/kvdoc.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <numeric>
#include <sstream>

namespace knobtune {

double improvement_pct(double default_value, double tuned_value, Direction direction) {
    return (improvement_factor(default_value, tuned_value, direction) - 1.0) * 100.0;
}

double improvement_factor(double default_value, double tuned_value, Direction direction) {
    if (default_value <= 0.0 || tuned_value <= 0.0)
        throw ConfigError("improvement: values must be positive");
    return direction == Direction::minimize ? default_value / tuned_value
                                            : tuned_value / default_value;
}

double geomean_improvement_pct(const std::vector<double>& factors) {
    if (factors.empty())
        throw ConfigError("geomean: empty factor list");
    double log_sum = 0.0;
    for (double f : factors) {
        if (f <= 0.0)
            throw ConfigError("geomean: factors must be positive");
        log_sum += std::log(f);
    }
    return (std::exp(log_sum / static_cast<double>(factors.size())) - 1.0) * 100.0;
}

double percentile(std::vector<double> values, double p) {
    if (values.empty())
        throw ConfigError("percentile: empty sample");
    std::sort(values.begin(), values.end());
    const double h = p * (static_cast<double>(values.size()) - 1.0);
    const size_t lo = static_cast<size_t>(h);
    if (lo + 1 >= values.size())
        return values.back();
    return values[lo] + (h - static_cast<double>(lo)) * (values[lo + 1] - values[lo]);
}

double sample_stdev(const std::vector<double>& values) {
    if (values.size() < 2)
        throw ConfigError("sample_stdev: needs at least 2 values");
    double mean = 0.0;
    double m2 = 0.0;
    std::size_t n = 0;
    for (double v : values) {
        ++n;
        const double delta = v - mean;
        mean += delta / static_cast<double>(n);
        m2 += delta * (v - mean);
    }
    return std::sqrt(m2 / static_cast<double>(n - 1));
}

BadWindowRates bad_window_rates(const RerunSet& reruns) {
    if (reruns.reruns.empty())
        throw ConfigError("bad_window_rates: no reruns");
    std::vector<double> fractions;
    for (const auto& trace : reruns.reruns) {
        if (trace.empty())
            throw ConfigError("bad_window_rates: empty rerun trace");
        std::size_t bad = 0;
        for (double v : trace) {
            const bool worse = reruns.direction == Direction::minimize
                                   ? v > reruns.mu_fixed
                                   : v < reruns.mu_fixed;
            if (worse)
                ++bad;
        }
        fractions.push_back(static_cast<double>(bad) / static_cast<double>(trace.size()));
    }
    BadWindowRates out;
    out.p50 = percentile(fractions, 0.5);
    out.p10 = percentile(fractions, 0.1);
    return out;
}

double variability_pct(const RerunSet& reruns) {
    if (reruns.reruns.empty())
        throw ConfigError("variability: no reruns");
    if (reruns.mu_fixed == 0.0)
        throw ConfigError("variability: mu_fixed must be nonzero");
    double acc = 0.0;
    for (const auto& trace : reruns.reruns)
        acc += sample_stdev(trace) / std::abs(reruns.mu_fixed) * 100.0;
    return acc / static_cast<double>(reruns.reruns.size());
}

namespace {

double mean_of(const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::string fmt(double v) {
    std::ostringstream out;
    out.precision(6);
    out << v;
    return out.str();
}

} // namespace

void emit_report(const std::vector<SessionOutcome>& sessions, const std::string& out_dir) {
    if (sessions.empty())
        throw ConfigError("report: no sessions");
    std::filesystem::create_directories(out_dir);

    // Group by workload, check directions agree, find default runs.
    std::map<std::string, Direction> directions;
    std::map<std::string, std::vector<const SessionOutcome*>> by_workload;
    for (const auto& s : sessions) {
        auto [it, fresh] = directions.emplace(s.workload, s.direction);
        if (!fresh && it->second != s.direction)
            throw ConfigError("report: direction mismatch within workload " + s.workload);
        by_workload[s.workload].push_back(&s);
    }

    struct Cell {
        std::vector<double> tuning_means, stable_means;
        std::vector<std::vector<double>> tuning_traces;
    };
    std::map<std::string, std::map<std::string, Cell>> table;  // workload -> tuner -> cell
    std::map<std::string, std::pair<double, double>> defaults;  // workload -> (mu_tun, mu_sta)
    for (const auto& [workload, group] : by_workload) {
        for (const auto* s : group) {
            Cell& c = table[workload][s->tuner];
            c.tuning_means.push_back(mean_of(s->tuning_values));
            if (!s->stable_values.empty())
                c.stable_means.push_back(mean_of(s->stable_values));
            c.tuning_traces.push_back(s->tuning_values);
        }
        auto def = table[workload].find("default");
        if (def == table[workload].end())
            throw ConfigError("report: workload " + workload + " has no default-config runs");
        defaults[workload] = {mean_of(def->second.tuning_means),
                              def->second.stable_means.empty()
                                  ? mean_of(def->second.tuning_means)
                                  : mean_of(def->second.stable_means)};
    }

    std::ostringstream per;
    per << "workload,tuner,direction,default_tuning,default_stable,tuning,stable,"
           "tuning_improvement_pct,stable_improvement_pct\n";
    std::map<std::string, std::map<std::string, std::pair<double, double>>> factors;
    for (const auto& [workload, tuners] : table) {
        const auto [mu_tun, mu_sta] = defaults.at(workload);
        const Direction dir = directions.at(workload);
        for (const auto& [tuner, cell] : tuners) {
            const double tun = mean_of(cell.tuning_means);
            const double sta = cell.stable_means.empty() ? tun : mean_of(cell.stable_means);
            per << workload << "," << tuner << "," << to_string(dir) << "," << fmt(mu_tun)
                << "," << fmt(mu_sta) << "," << fmt(tun) << "," << fmt(sta) << ","
                << fmt(improvement_pct(mu_tun, tun, dir)) << ","
                << fmt(improvement_pct(mu_sta, sta, dir)) << "\n";
            factors[tuner][workload] = {improvement_factor(mu_tun, tun, dir),
                                        improvement_factor(mu_sta, sta, dir)};
        }
    }
    write_file(out_dir + "/per_benchmark.csv", per.str());

    std::ostringstream agg;
    agg << "tuner,phase,geomean_improvement_pct\n";
    for (const auto& [tuner, per_workload] : factors) {
        std::vector<double> ft, fs;
        for (const auto& [_, f] : per_workload) {
            ft.push_back(f.first);
            fs.push_back(f.second);
        }
        agg << tuner << ",tuning," << fmt(geomean_improvement_pct(ft)) << "\n";
        agg << tuner << ",stable," << fmt(geomean_improvement_pct(fs)) << "\n";
    }
    write_file(out_dir + "/aggregate.csv", agg.str());

    std::ostringstream rob;
    rob << "workload,tuner,p50_bad_window_rate,p10_bad_window_rate,variability_pct\n";
    for (const auto& [workload, tuners] : table) {
        const auto [mu_tun, _] = defaults.at(workload);
        for (const auto& [tuner, cell] : tuners) {
            RerunSet rs;
            rs.reruns = cell.tuning_traces;
            rs.mu_fixed = mu_tun;
            rs.direction = directions.at(workload);
            const auto rates = bad_window_rates(rs);
            bool can_var = rs.mu_fixed != 0.0;
            for (const auto& t : rs.reruns)
                can_var = can_var && t.size() >= 2;
            rob << workload << "," << tuner << "," << fmt(rates.p50) << "," << fmt(rates.p10)
                << "," << (can_var ? fmt(variability_pct(rs)) : "") << "\n";
        }
    }
    write_file(out_dir + "/robustness.csv", rob.str());

    std::ostringstream plot;
    plot << "workload,tuner,seed,window,phase,value\n";
    for (const auto& s : sessions) {
        int w = 0;
        for (double v : s.tuning_values)
            plot << s.workload << "," << s.tuner << "," << s.seed << "," << w++ << ",tuning,"
                 << fmt(v) << "\n";
        for (double v : s.stable_values)
            plot << s.workload << "," << s.tuner << "," << s.seed << "," << w++ << ",stable,"
                 << fmt(v) << "\n";
    }
    write_file(out_dir + "/windows.csv", plot.str());
}

} // namespace knobtune
