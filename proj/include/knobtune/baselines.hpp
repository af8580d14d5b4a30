#pragma once

#include "knobtune/guardrail.hpp"
#include "knobtune/registry.hpp"

#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace knobtune {

struct Observation {
    Configuration config;
    double reward = 0.0;
};

// Non-LLM optimizer slot: standalone baseline runs and the post-trim
// downstream. Proposals stay within the set's active ranges; the guardrail
// re-validates regardless.
class DownstreamTuner {
public:
    virtual ~DownstreamTuner() = default;
    virtual void init(const KnobSet& set, Direction direction, std::uint64_t seed) = 0;
    virtual Proposal propose(const std::vector<Observation>& history) = 0;
    virtual void observe(const Configuration& config, double reward) = 0;
    virtual std::string name() const = 0;
};

// Uniform stepped sample per knob within the active range, seeded.
std::unique_ptr<DownstreamTuner> make_random_search();

// Coordinate search: walks one knob at a time in ±1 step-units from the
// best-so-far, keeps strict improvements, reverts otherwise (ties keep the
// incumbent), and moves on once both directions fail.
std::unique_ptr<DownstreamTuner> make_hill_climb();

// Never proposes anything (the Default Parameters run).
std::unique_ptr<DownstreamTuner> make_fixed_tuner();

// Out-of-process optimizer over a line-delimited request/response protocol:
// one {"op":"propose","history":[...]} request per window on stdin, one
// {"updates":{...}} reply per line on stdout.
std::unique_ptr<DownstreamTuner> make_subprocess_tuner(const std::string& command);

std::unique_ptr<DownstreamTuner> make_baseline(const std::string& name);

} // namespace knobtune
