#pragma once

#include "knobtune/registry.hpp"
#include "knobtune/telemetry.hpp"

#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace knobtune {

// One per-knob effect term. The total penalty is the product of
// (1 + min(cap, term)) over all effects, times coupling terms.
struct SurfaceEffect {
    enum class Shape { quad, mono_inc, mono_dec, flat };
    std::string knob;
    Shape shape = Shape::flat;
    // quad: term = weight * ((c - opt) / scale)^2 over the knob's ordinal
    // coordinate c (integer value, enum index, or bool 0/1).
    double opt = 0.0;
    double scale = 1.0;
    // mono shapes use the normalized domain position in [0,1].
    double weight = 0.0;
    double cap = 100.0;
};

struct SurfaceCoupling {
    enum class Kind { match, product };  // match: w*(xa-xb)^2, product: w*xa*xb
    std::string a;
    std::string b;
    Kind kind = Kind::match;
    double weight = 0.0;
};

struct TrapCondition {
    enum class Op { le, ge, eq };
    std::string knob;
    Op op = Op::eq;
    std::int64_t ordinal = 0;  // compared against the knob's ordinal coordinate
};

struct TrapSpec {
    std::vector<TrapCondition> conditions;  // all must hold (AND)
    double severity = 500.0;
    int recovery_windows = 3;
};

// Degraded-regime state: entering the trigger region flips in_trap; it
// clears only after recovery_windows consecutive safe windows.
struct SimState {
    bool in_trap = false;
    int consecutive_safe_windows = 0;
};

struct SignalModel {
    std::string name;  // e.g. "ipc"
    double base = 1.0;
    Direction direction = Direction::maximize;
    std::vector<SurfaceEffect> effects;
};

class ResponseSurface {
public:
    static ResponseSurface load_file(const std::string& path, const Registry& registry);
    static ResponseSurface load(const std::string& text, const Registry& registry);

    const std::string& name() const { return name_; }
    const std::string& metric() const { return metric_; }
    Direction direction() const { return direction_; }
    const std::string& knob_set_name() const { return knob_set_name_; }
    double base() const { return base_; }
    double noise_pct() const { return noise_pct_; }
    const std::optional<TrapSpec>& trap() const { return trap_; }
    const std::map<std::string, KnobValue>& optimum_annotation() const { return optimum_; }
    const std::vector<SignalModel>& signals() const { return signals_; }
    const SignalModel* signal(const std::string& name) const;

    bool in_trap_region(const KnobSet& set, const Configuration& cfg) const;

    // Noise-free app metric; `trapped` applies the severity multiplier
    // (divides for maximize surfaces).
    double value_noise_free(const KnobSet& set, const Configuration& cfg,
                            bool trapped = false) const;
    // Steady-state objective used by the oracle: configs inside the trigger
    // region are evaluated as trapped.
    double steady_state_value(const KnobSet& set, const Configuration& cfg) const;
    double signal_value(const SignalModel& sig, const KnobSet& set,
                        const Configuration& cfg) const;

private:
    double penalty(const std::vector<SurfaceEffect>& effects, const KnobSet& set,
                   const Configuration& cfg, bool with_couplings) const;

    std::string name_;
    std::string metric_ = "p99_ms";
    Direction direction_ = Direction::minimize;
    std::string knob_set_name_;
    double base_ = 10.0;
    double noise_pct_ = 0.0;
    std::vector<SurfaceEffect> effects_;
    std::vector<SurfaceCoupling> couplings_;
    std::optional<TrapSpec> trap_;
    std::map<std::string, KnobValue> optimum_;
    std::vector<SignalModel> signals_;
};

// Advances trap dynamics and produces one full measurement record with
// correlated synthetic system metrics. Deterministic for a given
// (config sequence, seed).
MeasurementRecord simulate_window(const ResponseSurface& surface, const KnobSet& set,
                                  const Configuration& cfg, int window_index,
                                  double duration_s, SimState& state, std::mt19937_64& rng);

// Noise-free arg-optimum of an objective over the stepped knob space:
// exhaustive when the space is within budget, multi-start coordinate descent
// otherwise. Test-side oracle.
struct OracleResult {
    Configuration config;
    double value = 0.0;
};

OracleResult oracle_optimum(const ResponseSurface& surface, const KnobSet& set,
                            std::size_t budget = 2'000'000);
// Same search over a named signal (e.g. the ipc proxy objective).
OracleResult oracle_optimum_signal(const ResponseSurface& surface, const SignalModel& sig,
                                   const KnobSet& set, std::size_t budget = 2'000'000);

// TelemetrySource backed by a surface; owns the trap state and the rng.
class SimTelemetrySource : public TelemetrySource {
public:
    SimTelemetrySource(const ResponseSurface& surface, const KnobSet& set,
                       std::uint64_t seed);

    MeasurementRecord collect(int window_index, double duration_s, const CpuMask& scope,
                              const Configuration& current,
                              const WorkloadAdapter* adapter) override;

    const SimState& state() const { return state_; }

private:
    const ResponseSurface& surface_;
    const KnobSet& set_;
    SimState state_;
    std::mt19937_64 rng_;
};

} // namespace knobtune
