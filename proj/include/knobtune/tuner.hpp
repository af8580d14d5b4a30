#pragma once

#include "knobtune/baselines.hpp"
#include "knobtune/context.hpp"
#include "knobtune/evalmetrics.hpp"
#include "knobtune/gateway.hpp"
#include "knobtune/guardrail.hpp"
#include "knobtune/telemetry.hpp"

#include <deque>
#include <functional>
#include <memory>
#include <optional>

namespace knobtune {

struct LoopConfig {
    int instant_every_windows = 1;
    int reasoning_min_pending = 3;  // M: instants accumulated before a reasoning call
    int max_inflight_reasoning = 1;
    int tuning_windows = 30;
    int stable_windows = 20;
    int trim_windows = 10;
    int convergence_quiet_windows = 3;  // K: no-change actions required with the flag
    std::size_t trace_suffix_len = 8;
};

struct TunerState {
    Phase phase = Phase::tuning;
    std::optional<std::pair<Configuration, double>> best;
    bool converged = false;
    int window = 0;
};

struct TrimEvent {
    int window = 0;
    std::string kind;  // narrow | freeze | revise
    std::string knob;
    std::string detail;
};

struct TrimResult {
    std::map<std::string, ActiveRange> narrowed;
    std::map<std::string, KnobValue> frozen;
    std::vector<TrimEvent> revision_log;

    nlohmann::json to_json() const;
};

// Everything a controller needs from the owning session. The session owns
// the objects; the controller mutates current/policy/spec through them.
struct ControlEnv {
    KnobSet* set = nullptr;
    Guardrail* guardrail = nullptr;
    Gateway* gateway = nullptr;
    SessionPolicy* policy = nullptr;
    Configuration* current = nullptr;
    SessionSpecification* spec = nullptr;
    RewardChannel channel;
    LoopConfig loop;
    Direction direction = Direction::minimize;
    std::uint64_t seed = 0;
    // Sinks owned by the session. log_decision receives one event object per
    // decision; log_prompt persists rendered prompts for replay; log_commit
    // feeds the append-only commit audit log.
    std::function<void(nlohmann::json)> log_decision;
    std::function<void(const std::string& name, const std::string& text)> log_prompt;
    std::function<void(const CommitRecord&, const ValidationVerdict&)> log_commit;
};

class Controller {
public:
    virtual ~Controller() = default;
    // One call per window, after the measurement for that window.
    virtual void on_window(int window, const MeasurementRecord& record,
                           std::optional<double> reward) = 0;
    virtual const TunerState& state() const = 0;
    virtual std::optional<TrimResult> trim_result() const { return std::nullopt; }
};

// The dual-loop controller; also covers the single-loop variants by leaving
// one role unconfigured.
enum class LoopMode { dual, single_instant, single_reasoning };

std::unique_ptr<Controller> make_loop_controller(ControlEnv env, LoopMode mode);

// Trimming phase followed by a downstream optimizer; with trim_windows == 0
// this is a plain baseline run.
std::unique_ptr<Controller> make_trim_controller(ControlEnv env,
                                                 std::unique_ptr<DownstreamTuner> downstream,
                                                 int trim_windows);

// Model flag plus K quiescent accepted actions, or the tuning budget runs
// out. Exposed for unit tests; controllers call it internally.
bool decide_convergence(bool model_flag, const std::deque<bool>& recent_changes,
                        int quiet_windows_required);

} // namespace knobtune
