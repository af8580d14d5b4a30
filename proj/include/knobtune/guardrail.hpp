#pragma once

#include "knobtune/backend.hpp"
#include "knobtune/registry.hpp"

#include <cstdint>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include <json.hpp>

namespace knobtune {

enum class ProposalSource { instant, reasoning, baseline, manual };

std::string to_string(ProposalSource s);

struct Proposal {
    std::map<std::string, KnobValue> updates;  // may be empty: a no-op is legal
    std::string justification;
    ProposalSource source = ProposalSource::manual;
    int iteration = 0;
};

enum class RejectReason {
    unknown_knob,
    out_of_domain,
    out_of_active_range,
    dependency_violation,
    policy_violation,
};

std::string to_string(RejectReason r);

struct Rejection {
    std::string subject;  // knob name, or rule id for whole-rule rejections
    RejectReason reason;
    std::string message;
};

struct ValidationVerdict {
    std::map<std::string, KnobValue> accepted;
    std::vector<Rejection> rejections;

    bool clean() const { return rejections.empty(); }
    nlohmann::json to_json() const;
};

// Session policies the validator enforces beyond domains: knobs frozen by
// trimming. Narrowed ranges live on the KnobSet itself.
struct SessionPolicy {
    std::map<std::string, KnobValue> frozen;
};

struct WriteOutcome {
    std::string path;
    std::string value;
    bool ok = false;
    std::string error;
};

struct CommitRecord {
    std::int64_t commit_id = 0;  // unchanged on failure or no-op
    std::vector<WriteOutcome> writes;
    std::int64_t started_ms = 0;
    std::int64_t finished_ms = 0;
    std::optional<Configuration> resulting_config;  // present iff all writes succeeded
    std::string justification;
    std::string error;

    bool ok() const { return error.empty(); }
    nlohmann::json to_json() const;
};

using CpuMask = std::vector<int>;  // ascending, duplicate-free

CpuMask parse_cpu_mask(const std::string& text);  // "0-9,12"
std::string render_cpu_mask(const CpuMask& mask);

// The authority boundary. Every host mutation in the framework funnels
// through apply/restore on this class, under one exclusive lock.
class Guardrail {
public:
    Guardrail(const KnobSet& set, CpuMask mask, ActuationBackend& backend);

    // Pure: partitions every proposed update into accepted/rejected. Hard
    // ordering rules are evaluated on the merged state (current overlaid
    // with the accepted updates); a violation rejects every proposed member
    // of the rule. Never throws.
    ValidationVerdict validate(const Proposal& proposal, const Configuration& current,
                               const SessionPolicy& policy) const;

    // One (path, raw value) write per cpu in ascending order. Throws on a
    // host-wide knob or an empty mask (contract violations).
    static std::vector<std::pair<std::string, std::string>> expand_per_cpu(
        const KnobSpec& spec, const KnobValue& value, const CpuMask& mask);

    // Applies accepted updates in deterministic order (set order, then cpu
    // order). All-or-nothing: any failed write rolls back every write already
    // performed in the batch and leaves the committed configuration as-is.
    CommitRecord apply(const std::map<std::string, KnobValue>& accepted,
                       const Configuration& current, const std::string& justification);

    // Reads current raw values into a Configuration (commit_id 0). Throws
    // SessionError on unreadable paths or unparseable values.
    Configuration snapshot();

    // Drives the backend to the snapshot state. Failed writes are retried
    // once; residual failures are reported in the CommitRecord.
    CommitRecord restore(const Configuration& snapshot);

    const KnobSet& set() const { return set_; }
    const CpuMask& mask() const { return mask_; }

private:
    std::vector<std::pair<std::string, std::string>> writes_for(
        const std::string& knob, const KnobValue& value) const;

    const KnobSet& set_;
    CpuMask mask_;
    ActuationBackend& backend_;
    std::mutex host_lock_;
    std::int64_t commit_seq_ = 0;
};

} // namespace knobtune
