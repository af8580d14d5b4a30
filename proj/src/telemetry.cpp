#include "knobtune/telemetry.hpp"

#include "knobtune/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <regex>
#include <sstream>

namespace knobtune {

nlohmann::json SystemMetrics::to_json() const {
    nlohmann::json j;
    j["counters"] = counters;
    if (ipc) j["ipc"] = *ipc;
    if (package_power_w) j["pkg_w"] = *package_power_w;
    if (dram_power_w) j["dram_w"] = *dram_power_w;
    j["cstate"] = cstate_residency;
    if (cpu_load) j["load"] = *cpu_load;
    j["window_s"] = window_seconds;
    return j;
}

SystemMetrics SystemMetrics::from_json(const nlohmann::json& j) {
    SystemMetrics m;
    m.counters = j.value("counters", std::map<std::string, double>{});
    if (j.contains("ipc")) m.ipc = j["ipc"].get<double>();
    if (j.contains("pkg_w")) m.package_power_w = j["pkg_w"].get<double>();
    if (j.contains("dram_w")) m.dram_power_w = j["dram_w"].get<double>();
    m.cstate_residency = j.value("cstate", std::map<std::string, double>{});
    if (j.contains("load")) m.cpu_load = j["load"].get<double>();
    m.window_seconds = j.value("window_s", 0.0);
    return m;
}

Reducer reducer_from_string(const std::string& s) {
    if (s == "mean") return Reducer::mean;
    if (s == "median") return Reducer::median;
    if (s == "sum") return Reducer::sum;
    throw ConfigError("unknown reducer: " + s);
}

std::string to_string(Reducer r) {
    switch (r) {
    case Reducer::mean: return "mean";
    case Reducer::median: return "median";
    case Reducer::sum: return "sum";
    }
    return "?";
}

nlohmann::json AppMetrics::to_json() const {
    return {{"values", values}, {"reducer", to_string(reducer_used)}};
}

AppMetrics AppMetrics::from_json(const nlohmann::json& j) {
    AppMetrics m;
    m.values = j.value("values", std::map<std::string, double>{});
    m.reducer_used = reducer_from_string(j.value("reducer", "median"));
    return m;
}

// Record-log schema with stable field names: window, ts, counters.*,
// power.pkg_w, power.dram_w, cstate.*, load, app.*, reward.
nlohmann::json MeasurementRecord::to_json() const {
    nlohmann::json j;
    j["window"] = window_index;
    j["ts"] = ts_ms;
    j["counters"] = system.counters;
    nlohmann::json power = nlohmann::json::object();
    if (system.package_power_w) power["pkg_w"] = *system.package_power_w;
    if (system.dram_power_w) power["dram_w"] = *system.dram_power_w;
    j["power"] = power;
    j["cstate"] = system.cstate_residency;
    if (system.ipc) j["ipc"] = *system.ipc;
    if (system.cpu_load) j["load"] = *system.cpu_load;
    j["window_s"] = system.window_seconds;
    if (app) j["app"] = app->to_json();
    if (reward) j["reward"] = *reward;
    if (noise_pct) j["noise_pct"] = *noise_pct;
    if (!extra.empty()) j["extra"] = extra;
    return j;
}

MeasurementRecord MeasurementRecord::from_json(const nlohmann::json& j) {
    MeasurementRecord r;
    r.window_index = j.at("window").get<int>();
    r.ts_ms = j.value("ts", std::int64_t{0});
    r.system.counters = j.value("counters", std::map<std::string, double>{});
    if (j.contains("power")) {
        if (j["power"].contains("pkg_w"))
            r.system.package_power_w = j["power"]["pkg_w"].get<double>();
        if (j["power"].contains("dram_w"))
            r.system.dram_power_w = j["power"]["dram_w"].get<double>();
    }
    r.system.cstate_residency = j.value("cstate", std::map<std::string, double>{});
    if (j.contains("ipc")) r.system.ipc = j["ipc"].get<double>();
    if (j.contains("load")) r.system.cpu_load = j["load"].get<double>();
    r.system.window_seconds = j.value("window_s", 0.0);
    if (j.contains("app")) r.app = AppMetrics::from_json(j["app"]);
    if (j.contains("reward")) r.reward = j["reward"].get<double>();
    if (j.contains("noise_pct")) r.noise_pct = j["noise_pct"].get<double>();
    r.extra = j.value("extra", std::map<std::string, double>{});
    return r;
}

RewardChannel RewardChannel::parse(const std::string& text) {
    RewardChannel c;
    if (text == "bundle" || text == "system_bundle") {
        c.kind = Kind::system_bundle;
        return c;
    }
    std::istringstream in(text);
    std::string kind, metric, dir;
    std::getline(in, kind, ':');
    std::getline(in, metric, ':');
    std::getline(in, dir, ':');
    if (metric.empty() || dir.empty())
        throw ConfigError("bad reward channel '" + text +
                          "' (expected app:<metric>:<min|max>, proxy:<name>:<min|max>, or bundle)");
    if (kind == "app")
        c.kind = Kind::app;
    else if (kind == "proxy")
        c.kind = Kind::proxy;
    else
        throw ConfigError("bad reward channel kind: " + kind);
    c.metric = metric;
    c.direction = direction_from_string(dir);
    return c;
}

std::string RewardChannel::to_text() const {
    switch (kind) {
    case Kind::system_bundle: return "bundle";
    case Kind::app: return "app:" + metric + ":" + to_string(direction);
    case Kind::proxy: return "proxy:" + metric + ":" + to_string(direction);
    }
    return "?";
}

double reduce(const std::vector<double>& samples, Reducer reducer) {
    if (samples.empty())
        throw ConfigError("reduce: empty sample list");
    switch (reducer) {
    case Reducer::sum:
        return std::accumulate(samples.begin(), samples.end(), 0.0);
    case Reducer::mean:
        return std::accumulate(samples.begin(), samples.end(), 0.0) /
               static_cast<double>(samples.size());
    case Reducer::median: {
        std::vector<double> s = samples;
        std::sort(s.begin(), s.end());
        const size_t n = s.size();
        if (n % 2 == 1)
            return s[n / 2];
        return 0.5 * (s[n / 2 - 1] + s[n / 2]);
    }
    }
    throw ConfigError("reduce: bad reducer");
}

double derive_ipc(const std::map<std::string, double>& counters) {
    auto cyc = counters.find("cycles");
    if (cyc == counters.end() || cyc->second == 0.0)
        throw ConfigError("derive_ipc: cycles missing or zero");
    auto ins = counters.find("instructions");
    const double instructions = ins == counters.end() ? 0.0 : ins->second;
    return instructions / cyc->second;
}

std::optional<double> relative_iqr_pct(std::vector<double> samples) {
    if (samples.size() < 4)
        return std::nullopt;
    std::sort(samples.begin(), samples.end());
    auto interp = [&](double p) {
        const double h = p * (static_cast<double>(samples.size()) - 1.0);
        const size_t lo = static_cast<size_t>(h);
        if (lo + 1 >= samples.size())
            return samples.back();
        return samples[lo] + (h - lo) * (samples[lo + 1] - samples[lo]);
    };
    const double q1 = interp(0.25);
    const double q3 = interp(0.75);
    const double med = interp(0.5);
    if (med == 0.0)
        return std::nullopt;
    return (q3 - q1) / std::abs(med) * 100.0;
}

std::optional<double> reward_of(const MeasurementRecord& record, const RewardChannel& channel) {
    switch (channel.kind) {
    case RewardChannel::Kind::system_bundle:
        return std::nullopt;
    case RewardChannel::Kind::app: {
        if (!record.app)
            throw SessionError("reward channel needs app metric '" + channel.metric +
                               "' but the record has no app metrics");
        auto it = record.app->values.find(channel.metric);
        if (it == record.app->values.end())
            throw SessionError("app metric '" + channel.metric + "' absent from record");
        return it->second;
    }
    case RewardChannel::Kind::proxy: {
        if (channel.metric == "ipc") {
            if (record.system.ipc)
                return *record.system.ipc;
            return derive_ipc(record.system.counters);
        }
        auto it = record.system.counters.find(channel.metric);
        if (it == record.system.counters.end())
            throw SessionError("proxy counter '" + channel.metric + "' absent from record");
        return it->second;
    }
    }
    return std::nullopt;
}

StdoutSamplerAdapter::StdoutSamplerAdapter(std::string metric, std::string pattern,
                                           Reducer reducer, std::string file)
    : metric_(std::move(metric)), pattern_(std::move(pattern)), reducer_(reducer),
      file_(std::move(file)) {}

std::vector<double> StdoutSamplerAdapter::parse_window(const std::string& raw) const {
    std::vector<double> samples;
    const std::regex re(pattern_);
    std::istringstream in(raw);
    std::string line;
    while (std::getline(in, line)) {
        std::smatch m;
        if (std::regex_search(line, m, re) && m.size() >= 2)
            samples.push_back(std::stod(m[1].str()));
    }
    return samples;
}

AppMetrics StdoutSamplerAdapter::reduce_samples(const std::vector<double>& samples) const {
    AppMetrics out;
    out.reducer_used = reducer_;
    out.values[metric_] = reduce(samples, reducer_);
    return out;
}

} // namespace knobtune
