#pragma once

#include "knobtune/backend.hpp"
#include "knobtune/evalmetrics.hpp"
#include "knobtune/gateway.hpp"
#include "knobtune/guardrail.hpp"
#include "knobtune/kvdoc.hpp"
#include "knobtune/memory.hpp"
#include "knobtune/registry.hpp"
#include "knobtune/simhost.hpp"
#include "knobtune/telemetry.hpp"
#include "knobtune/tuner.hpp"

#include <atomic>
#include <functional>
#include <memory>
#include <optional>
#include <string>

namespace knobtune {

enum class SessionMode { dual, single_instant, single_reasoning, trim_then_downstream, baseline };
enum class MemoryMode { off, top1, top3 };

struct SessionConfig {
    std::string catalog_path;
    std::string knob_set = "default8";
    RewardChannel channel;
    SessionMode mode = SessionMode::dual;
    std::string baseline_name;    // baseline mode, and the post-trim downstream
    MemoryMode memory = MemoryMode::off;
    std::string memory_dir;
    std::string memory_exclude_prefix;  // hold out same-workload runs (transfer setting)
    std::string embedder = "hash";       // hash | http
    std::string embedder_url, embedder_model, embedder_key_env;
    std::string telemetry = "sim";       // sim | linux
    std::string actuation = "sim";       // sim | linux
    bool dry_run = false;
    std::string surface_path;            // sim backends
    CpuMask cpu_mask{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
    std::uint64_t seed = 1;
    LoopConfig loop;
    double window_seconds = 5.0;
    std::string machine = "sim-host";
    std::vector<std::string> goal_constraints;
    std::string strategy_text;
    std::string output_dir = "runs/session";
    std::string run_id;                  // memory store id; derived when empty
    bool memory_readonly = false;        // replay: retrieve but never store

    // Optional workload attachment for linux telemetry.
    std::string adapter_file, adapter_metric, adapter_pattern;
    Reducer adapter_reducer = Reducer::median;

    std::map<ModelRole, ModelEndpoint> endpoints;

    // Loads the kv document; relative paths resolve against the file's
    // directory. Throws ConfigError with field-level diagnostics.
    static SessionConfig load_file(const std::string& path);
    static SessionConfig from_document(const KvDocument& doc, const std::string& base_dir);
    std::string to_document_text() const;
    std::string mode_tag() const;  // dual | ... | baseline:<name> | trim:<name>

    void validate() const;
};

struct SessionReport {
    std::string out_dir;
    std::string workload;
    std::string mode_tag;
    Direction direction = Direction::minimize;
    std::uint64_t seed = 0;
    std::vector<double> tuning_values;
    std::vector<double> stable_values;
    double tuning_mean = 0.0;
    double stable_mean = 0.0;
    UsageTotals usage;
    std::optional<TrimResult> trim;
    bool restore_ok = true;
    std::vector<std::string> restore_residual_paths;
    std::int64_t final_commit_id = 0;
    bool deterministic = true;
};

// Thrown after a mid-session failure once restoration has been attempted.
class SessionAbort : public std::runtime_error {
public:
    SessionAbort(const std::string& what, bool restore_ok, bool interrupted)
        : std::runtime_error(what), restore_ok(restore_ok), interrupted(interrupted) {}
    bool restore_ok;
    bool interrupted;
};

// Test instrumentation: boundary callbacks that may throw, and an interrupt
// flag polled at every window boundary.
struct SessionHooks {
    std::function<void(int window, const std::string& stage)> at_stage;
    std::atomic<bool>* interrupt_flag = nullptr;
};

class Session {
public:
    explicit Session(SessionConfig config);
    ~Session();

    void set_hooks(SessionHooks hooks) { hooks_ = std::move(hooks); }

    // Snapshot -> first window -> optional warm start -> tuning windows ->
    // stable windows -> restore -> report. Restoration also runs on every
    // error and interrupt path (then SessionAbort is thrown).
    SessionReport run();

    SimBackend* sim_backend();                 // null for linux actuation
    const SimTelemetrySource* sim_source() const;
    const Configuration& start_snapshot() const { return snapshot_; }
    const SessionConfig& config() const { return cfg_; }

private:
    struct Impl;
    void warm_start(const MeasurementRecord& first_window);
    void write_report_files(const SessionReport& report);

    std::unique_ptr<Impl> impl_;
    SessionConfig cfg_;
    SessionHooks hooks_;
    Configuration snapshot_;
    bool warm_start_pending_ = false;
};

// Re-executes a recorded sim+scripted session and compares the decision and
// measurement logs byte for byte. Returns the first divergent window, or
// nullopt when identical. Throws ConfigError for non-replayable sessions
// (HTTP backends or non-sim actuation).
std::optional<int> replay_session(const std::string& session_dir);

// Loads what `report` needs from a session directory.
SessionOutcome load_session_outcome(const std::string& session_dir);

} // namespace knobtune
