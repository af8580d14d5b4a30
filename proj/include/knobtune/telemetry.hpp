#pragma once

#include "knobtune/guardrail.hpp"
#include "knobtune/registry.hpp"

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace knobtune {

struct SystemMetrics {
    std::map<std::string, double> counters;  // instructions, cycles, cache-references,
                                             // cache-misses, context-switches, ...
    std::optional<double> ipc;
    std::optional<double> package_power_w;
    std::optional<double> dram_power_w;
    std::map<std::string, double> cstate_residency;  // state -> fraction of window
    std::optional<double> cpu_load;                  // fraction
    double window_seconds = 0.0;

    nlohmann::json to_json() const;
    static SystemMetrics from_json(const nlohmann::json& j);
};

enum class Reducer { mean, median, sum };

Reducer reducer_from_string(const std::string& s);
std::string to_string(Reducer r);

struct AppMetrics {
    std::map<std::string, double> values;  // e.g. p99_ms, throughput_ops_s
    Reducer reducer_used = Reducer::median;

    nlohmann::json to_json() const;
    static AppMetrics from_json(const nlohmann::json& j);
};

struct MeasurementRecord {
    int window_index = 0;
    std::int64_t ts_ms = 0;
    SystemMetrics system;
    std::optional<AppMetrics> app;
    std::optional<double> reward;      // absent for the bundle channel
    std::optional<double> noise_pct;   // relative spread annotation
    std::map<std::string, double> extra;  // source-specific (e.g. sim trap flag)

    nlohmann::json to_json() const;
    static MeasurementRecord from_json(const nlohmann::json& j);
};

struct RewardChannel {
    enum class Kind { app, system_bundle, proxy };
    Kind kind = Kind::system_bundle;
    std::string metric;  // app metric name or counter/derived name
    Direction direction = Direction::minimize;

    // "app:p99_ms:min" | "bundle" | "proxy:ipc:max"
    static RewardChannel parse(const std::string& text);
    std::string to_text() const;
    bool scalar() const { return kind != Kind::system_bundle; }
};

// Standard window reducers. Throws ConfigError on empty input. Median of an
// even-length list is the mean of the two middle order statistics.
double reduce(const std::vector<double>& samples, Reducer reducer);

// instructions / cycles. Throws ConfigError when cycles is missing or zero.
double derive_ipc(const std::map<std::string, double>& counters);

// Relative interquartile spread of the window's samples, in percent of the
// median; absent when fewer than 4 samples.
std::optional<double> relative_iqr_pct(std::vector<double> samples);

// Scalar reward per the active channel; nullopt marks the bundle channel
// (the whole record is the observation). Throws SessionError when the
// requested metric is absent from the record.
std::optional<double> reward_of(const MeasurementRecord& record, const RewardChannel& channel);

// Workload attachment contract: window parsing plus an aggregation rule.
class WorkloadAdapter {
public:
    virtual ~WorkloadAdapter() = default;
    virtual void setup() {}
    virtual void cleanup() {}
    // Deterministic on identical raw input.
    virtual std::vector<double> parse_window(const std::string& raw) const = 0;
    virtual AppMetrics reduce_samples(const std::vector<double>& samples) const = 0;
    virtual std::string metric_name() const = 0;
    // Where the raw window text comes from; the collector tails this file
    // between windows when non-empty.
    virtual std::string source_file() const { return ""; }
};

// Generic adapter: extracts one numeric capture group per line and reduces.
class StdoutSamplerAdapter : public WorkloadAdapter {
public:
    StdoutSamplerAdapter(std::string metric, std::string pattern, Reducer reducer,
                         std::string file = "");

    std::vector<double> parse_window(const std::string& raw) const override;
    AppMetrics reduce_samples(const std::vector<double>& samples) const override;
    std::string metric_name() const override { return metric_; }
    std::string source_file() const override { return file_; }

private:
    std::string metric_;
    std::string pattern_;
    Reducer reducer_;
    std::string file_;
};

// One record per window. A single source instance handles one window at a
// time (not reentrant).
class TelemetrySource {
public:
    virtual ~TelemetrySource() = default;
    virtual MeasurementRecord collect(int window_index, double duration_s,
                                      const CpuMask& scope, const Configuration& current,
                                      const WorkloadAdapter* adapter) = 0;
};

// Samples perf counters, RAPL energy, cpuidle residency and /proc/stat load.
// Aborts the session with a diagnostic when a collector is unavailable.
std::unique_ptr<TelemetrySource> make_linux_telemetry_source();

} // namespace knobtune
