#include "knobtune/guardrail.hpp"

#include "knobtune/errors.hpp"

#include <algorithm>
#include <chrono>
#include <set>
#include <sstream>

namespace knobtune {

namespace {

std::int64_t now_ms() {
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::system_clock::now().time_since_epoch())
        .count();
}

} // namespace

std::string to_string(ProposalSource s) {
    switch (s) {
    case ProposalSource::instant: return "instant";
    case ProposalSource::reasoning: return "reasoning";
    case ProposalSource::baseline: return "baseline";
    case ProposalSource::manual: return "manual";
    }
    return "?";
}

std::string to_string(RejectReason r) {
    switch (r) {
    case RejectReason::unknown_knob: return "unknown_knob";
    case RejectReason::out_of_domain: return "out_of_domain";
    case RejectReason::out_of_active_range: return "out_of_active_range";
    case RejectReason::dependency_violation: return "dependency_violation";
    case RejectReason::policy_violation: return "policy_violation";
    }
    return "?";
}

nlohmann::json ValidationVerdict::to_json() const {
    nlohmann::json acc = nlohmann::json::object();
    for (const auto& [k, v] : accepted)
        acc[k] = v.to_json();
    nlohmann::json rej = nlohmann::json::array();
    for (const auto& r : rejections)
        rej.push_back({{"subject", r.subject},
                       {"reason", to_string(r.reason)},
                       {"message", r.message}});
    return {{"accepted", acc}, {"rejections", rej}};
}

nlohmann::json CommitRecord::to_json() const {
    nlohmann::json ws = nlohmann::json::array();
    for (const auto& w : writes)
        ws.push_back({{"path", w.path}, {"value", w.value}, {"ok", w.ok}, {"error", w.error}});
    nlohmann::json j = {{"commit_id", commit_id},
                        {"writes", ws},
                        {"ok", ok()},
                        {"error", error},
                        {"justification", justification}};
    if (resulting_config)
        j["resulting_config"] = resulting_config->to_json();
    return j;
}

CpuMask parse_cpu_mask(const std::string& text) {
    std::set<int> cpus;
    std::istringstream in(text);
    std::string part;
    while (std::getline(in, part, ',')) {
        if (part.empty())
            continue;
        size_t dash = part.find('-');
        try {
            if (dash == std::string::npos) {
                cpus.insert(std::stoi(part));
            } else {
                int lo = std::stoi(part.substr(0, dash));
                int hi = std::stoi(part.substr(dash + 1));
                if (hi < lo)
                    throw ConfigError("cpu mask range reversed: " + part);
                for (int c = lo; c <= hi; ++c)
                    cpus.insert(c);
            }
        } catch (const std::invalid_argument&) {
            throw ConfigError("bad cpu mask element: " + part);
        }
    }
    if (cpus.empty())
        throw ConfigError("empty cpu mask: " + text);
    return CpuMask(cpus.begin(), cpus.end());
}

std::string render_cpu_mask(const CpuMask& mask) {
    std::string out;
    size_t i = 0;
    while (i < mask.size()) {
        size_t j = i;
        while (j + 1 < mask.size() && mask[j + 1] == mask[j] + 1)
            ++j;
        if (!out.empty())
            out += ",";
        out += std::to_string(mask[i]);
        if (j > i)
            out += "-" + std::to_string(mask[j]);
        i = j + 1;
    }
    return out;
}

Guardrail::Guardrail(const KnobSet& set, CpuMask mask, ActuationBackend& backend)
    : set_(set), mask_(std::move(mask)), backend_(backend) {}

ValidationVerdict Guardrail::validate(const Proposal& proposal, const Configuration& current,
                                      const SessionPolicy& policy) const {
    ValidationVerdict verdict;
    for (const auto& [name, value] : proposal.updates) {
        const KnobSpec* spec = set_.find(name);
        if (!spec) {
            verdict.rejections.push_back(
                {name, RejectReason::unknown_knob, "not in tunable set '" + set_.name() + "'"});
            continue;
        }
        if (!spec->in_domain(value)) {
            verdict.rejections.push_back(
                {name, RejectReason::out_of_domain,
                 "value " + value.raw() + " outside " + spec->domain_text()});
            continue;
        }
        if (!set_.value_in_active_range(*spec, value)) {
            auto ar = set_.active_range(name);
            verdict.rejections.push_back(
                {name, RejectReason::out_of_active_range,
                 "value " + value.raw() + " outside narrowed range [" +
                     std::to_string(ar->lo) + ", " + std::to_string(ar->hi) + "]"});
            continue;
        }
        if (policy.frozen.count(name)) {
            verdict.rejections.push_back(
                {name, RejectReason::policy_violation, "knob is frozen for this session"});
            continue;
        }
        verdict.accepted[name] = value;
    }

    // Hard ordering rules over the merged state. A violated rule pulls every
    // proposed member back out of the accepted map.
    auto merged_value = [&](const std::string& knob) -> std::optional<KnobValue> {
        auto it = verdict.accepted.find(knob);
        if (it != verdict.accepted.end())
            return it->second;
        auto cur = current.assignments.find(knob);
        if (cur != current.assignments.end())
            return cur->second;
        return std::nullopt;
    };
    for (const auto& rule : set_.rules()) {
        if (rule.kind != RuleKind::ordering)
            continue;
        auto lhs = merged_value(rule.members[0]);
        auto rhs = merged_value(rule.members[1]);
        if (!lhs || !rhs)
            continue;
        if (lhs->ival <= rhs->ival)
            continue;
        bool any_proposed = false;
        for (const auto& m : rule.members) {
            auto it = verdict.accepted.find(m);
            if (it != verdict.accepted.end()) {
                verdict.rejections.push_back(
                    {m, RejectReason::dependency_violation,
                     "violates rule " + rule.id + ": " + rule.members[0] + " <= " +
                         rule.members[1]});
                verdict.accepted.erase(it);
                any_proposed = true;
            }
        }
        if (!any_proposed) {
            // A pre-existing violation in the current config; report against
            // the rule id so it is visible in logs.
            verdict.rejections.push_back(
                {rule.id, RejectReason::dependency_violation,
                 "current configuration violates " + rule.members[0] + " <= " +
                     rule.members[1]});
        }
    }
    return verdict;
}

std::vector<std::pair<std::string, std::string>> Guardrail::expand_per_cpu(
    const KnobSpec& spec, const KnobValue& value, const CpuMask& mask) {
    if (spec.scope != KnobScope::per_cpu)
        throw ConfigError("expand_per_cpu called on host-wide knob '" + spec.name + "'");
    if (mask.empty())
        throw ConfigError("expand_per_cpu: empty cpu mask");
    std::vector<std::pair<std::string, std::string>> out;
    const std::string raw = value.raw();
    const size_t pos = spec.actuation_path.find("{cpu}");
    for (int cpu : mask) {
        std::string path = spec.actuation_path;
        path.replace(pos, 5, std::to_string(cpu));
        out.emplace_back(path, raw);
    }
    return out;
}

std::vector<std::pair<std::string, std::string>> Guardrail::writes_for(
    const std::string& knob, const KnobValue& value) const {
    const KnobSpec* spec = set_.find(knob);
    if (!spec)
        throw ConfigError("writes_for: unknown knob " + knob);
    if (spec->scope == KnobScope::per_cpu)
        return expand_per_cpu(*spec, value, mask_);
    return {{spec->actuation_path, value.raw()}};
}

CommitRecord Guardrail::apply(const std::map<std::string, KnobValue>& accepted,
                              const Configuration& current,
                              const std::string& justification) {
    std::lock_guard<std::mutex> g(host_lock_);
    CommitRecord rec;
    rec.justification = justification;
    rec.started_ms = now_ms();
    rec.commit_id = current.commit_id;
    if (accepted.empty()) {
        // A no-op commit is not a commit: the configuration does not advance.
        rec.finished_ms = now_ms();
        rec.resulting_config = current;
        return rec;
    }

    backend_.begin_scope("apply#" + std::to_string(++commit_seq_));
    // Journal of (path, previous raw value) for rollback.
    std::vector<std::pair<std::string, std::optional<std::string>>> journal;
    bool failed = false;
    for (const auto& member : set_.members()) {
        auto it = accepted.find(member.name);
        if (it == accepted.end())
            continue;
        for (const auto& [path, raw] : writes_for(member.name, it->second)) {
            std::string err;
            journal.emplace_back(path, backend_.read(path));
            WriteOutcome w{path, raw, false, ""};
            // A throwing backend counts as a failed write; commit atomicity
            // must hold either way.
            try {
                w.ok = backend_.write(path, raw, &err);
            } catch (const std::exception& e) {
                w.ok = false;
                err = e.what();
            }
            w.error = err;
            rec.writes.push_back(w);
            if (!w.ok) {
                failed = true;
                rec.error = "write failed at " + path + ": " + err;
                break;
            }
        }
        if (failed)
            break;
    }
    if (failed) {
        // Unwind already-performed writes, most recent first. The failed
        // write itself did not change state, so skip its journal entry.
        journal.pop_back();
        for (auto it = journal.rbegin(); it != journal.rend(); ++it) {
            if (it->second) {
                std::string err;
                backend_.write(it->first, *it->second, &err);
            }
        }
        backend_.end_scope();
        rec.finished_ms = now_ms();
        return rec;
    }
    backend_.end_scope();

    Configuration next = current;
    for (const auto& [k, v] : accepted)
        next.assignments[k] = v;
    next.commit_id = current.commit_id + 1;
    next.timestamp_ms = now_ms();
    rec.commit_id = next.commit_id;
    rec.resulting_config = std::move(next);
    rec.finished_ms = now_ms();
    return rec;
}

Configuration Guardrail::snapshot() {
    Configuration cfg;
    for (const auto& member : set_.members()) {
        std::string path = member.actuation_path;
        if (member.scope == KnobScope::per_cpu) {
            // Knob-level snapshot reads the lowest cpu in the mask; the
            // session applies values uniformly over the mask.
            const size_t pos = path.find("{cpu}");
            path.replace(pos, 5, std::to_string(mask_.front()));
        }
        auto raw = backend_.read(path);
        if (!raw)
            throw SessionError("snapshot: unreadable path " + path);
        auto value = member.parse_raw(*raw);
        if (!value)
            throw SessionError("snapshot: unparseable value '" + *raw + "' at " + path);
        cfg.assignments[member.name] = *value;
    }
    cfg.commit_id = 0;
    cfg.timestamp_ms = now_ms();
    return cfg;
}

CommitRecord Guardrail::restore(const Configuration& snapshot) {
    std::lock_guard<std::mutex> g(host_lock_);
    CommitRecord rec;
    rec.justification = "restore session-start snapshot";
    rec.started_ms = now_ms();
    backend_.begin_scope("restore");
    for (const auto& member : set_.members()) {
        auto it = snapshot.assignments.find(member.name);
        if (it == snapshot.assignments.end()) {
            rec.error = "restore: snapshot missing knob " + member.name;
            continue;
        }
        for (const auto& [path, raw] : writes_for(member.name, it->second)) {
            std::string err;
            WriteOutcome w{path, raw, false, ""};
            // Restore never throws: one retry per path, residual failures
            // stay in the record.
            auto attempt = [&]() {
                try {
                    return backend_.write(path, raw, &err);
                } catch (const std::exception& e) {
                    err = e.what();
                    return false;
                }
            };
            w.ok = attempt();
            if (!w.ok)
                w.ok = attempt();
            w.error = w.ok ? "" : err;
            rec.writes.push_back(w);
            if (!w.ok)
                rec.error = "restore incomplete";
        }
    }
    backend_.end_scope();
    rec.finished_ms = now_ms();
    if (rec.ok())
        rec.resulting_config = snapshot;
    return rec;
}

} // namespace knobtune
