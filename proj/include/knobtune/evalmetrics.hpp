#pragma once

#include "knobtune/registry.hpp"

#include <string>
#include <vector>

namespace knobtune {

enum class Phase { tuning, stable };

struct PhaseSummary {
    Phase phase = Phase::tuning;
    double mean = 0.0;
    std::vector<double> values;
    Direction direction = Direction::minimize;
};

// Per-window traces of several reruns of one (tuner, workload) pair, plus
// the mean of the default-configuration run on the same workload.
struct RerunSet {
    std::vector<std::vector<double>> reruns;  // tuning-window values per rerun
    double mu_fixed = 0.0;
    Direction direction = Direction::minimize;
};

// Relative improvement in percent, positive-is-better in both directions:
// minimize: (default/tuned - 1) * 100; maximize: (tuned/default - 1) * 100.
// Throws ConfigError on non-positive inputs.
double improvement_pct(double default_value, double tuned_value, Direction direction);

// Multiplicative factor form (1 + pct/100).
double improvement_factor(double default_value, double tuned_value, Direction direction);

// Geometric mean of multiplicative factors, expressed as a percent.
double geomean_improvement_pct(const std::vector<double>& factors);

// Linear-interpolation percentile of a sample (p in [0,1]), over the
// order statistics: rank h = (n-1)p, interpolate between floor/ceil.
double percentile(std::vector<double> values, double p);

// Sample standard deviation (n-1 denominator), single-pass (Welford).
double sample_stdev(const std::vector<double>& values);

struct BadWindowRates {
    double p50 = 0.0;
    double p10 = 0.0;
};

// Per-rerun fraction of tuning windows strictly worse than mu_fixed
// (direction-adjusted; ties are not bad windows), then the median and the
// 10th percentile of those fractions across reruns.
BadWindowRates bad_window_rates(const RerunSet& reruns);

// Mean over reruns of (sample stdev of the rerun's tuning-window metric /
// |mu_fixed|) * 100. Requires >= 2 windows per rerun and mu_fixed != 0.
double variability_pct(const RerunSet& reruns);

// Everything `report` needs from one session directory.
struct SessionOutcome {
    std::string workload;  // surface name
    std::string tuner;     // mode tag; "default" marks the fixed-config runs
    Direction direction = Direction::minimize;
    std::uint64_t seed = 0;
    std::vector<double> tuning_values;
    std::vector<double> stable_values;
};

// Writes per-benchmark, aggregate-geomean, robustness, and per-window
// plot-data CSVs into out_dir. Throws ConfigError when sessions disagree on
// schema or no default runs exist for a workload.
void emit_report(const std::vector<SessionOutcome>& sessions, const std::string& out_dir);

} // namespace knobtune
