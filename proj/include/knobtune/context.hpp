#pragma once

#include "knobtune/guardrail.hpp"
#include "knobtune/registry.hpp"
#include "knobtune/telemetry.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace knobtune {

struct TuningGoal {
    std::string metric;
    Direction direction = Direction::minimize;
    std::vector<std::string> constraints;  // e.g. "package_power_w < 60 W"
};

// The stable half of every prompt. Only memory_prior may change, once,
// after the first completed window.
struct SessionSpecification {
    std::string role_text;
    TuningGoal goal;
    std::string knob_schema_block;  // from describe_for_prompt
    std::string strategy_text;
    std::optional<std::string> memory_prior;
};

enum class EntryKind { instant, reasoning };

// One completed tuner call: the action taken, the configuration it left
// behind, and the following window's measurement summary.
struct ContextEntry {
    EntryKind kind = EntryKind::instant;
    int iteration = 0;
    std::map<std::string, KnobValue> action;  // accepted updates, may be empty
    std::int64_t config_after = 0;            // commit id
    std::string measurement_summary;
    std::string justification;
};

// Dual-loop history: reasoning entries persist, instant entries are visible
// only until the next reasoning commit consumes them.
class SharedContext {
public:
    // Instant entries only; reasoning entries go through commit_reasoning.
    void append_entry(const ContextEntry& entry);
    void commit_reasoning(const ContextEntry& entry);

    // reasoning_entries followed by pending instants, oldest first.
    std::vector<ContextEntry> visible() const;
    std::size_t reasoning_count() const { return reasoning_.size(); }
    std::size_t pending_instant_count() const { return pending_.size(); }

private:
    std::vector<ContextEntry> reasoning_;
    std::vector<ContextEntry> pending_;
};

struct PerIterationUpdate {
    std::string current_config;  // rendered assignments
    std::string latest;          // measurement line with noise annotation
    std::vector<std::string> trace_suffix;
};

std::string render_config_line(const KnobSet& set, const Configuration& cfg);
std::string render_measurement_line(const MeasurementRecord& record,
                                    const std::vector<std::string>& salient_metrics);
std::string render_entry(const ContextEntry& entry);

SessionSpecification build_session_spec(const TuningGoal& goal, const KnobSet& set,
                                        const std::string& strategy_text,
                                        const std::optional<std::string>& prior);

PerIterationUpdate build_update(const KnobSet& set, const Configuration& current,
                                const MeasurementRecord& latest, const SharedContext& context,
                                std::size_t trace_suffix_len = 8);

// Deterministic prompt text; visible context renders most-recent-last. The
// schema descriptor travels alongside (JSON text of the permitted fields).
struct RenderedPrompt {
    std::string text;
    std::string schema_descriptor;
};

class ResponseSchema;  // gateway

RenderedPrompt render_prompt(const SessionSpecification& spec, const PerIterationUpdate& update,
                             const ResponseSchema& schema);

} // namespace knobtune
