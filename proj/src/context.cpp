#include "knobtune/context.hpp"

#include "knobtune/errors.hpp"
#include "knobtune/gateway.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

namespace knobtune {

namespace {

std::string fmt_num(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

} // namespace

void SharedContext::append_entry(const ContextEntry& entry) {
    if (entry.kind != EntryKind::instant)
        throw ConfigError("append_entry: reasoning entries must go through commit_reasoning");
    pending_.push_back(entry);
}

void SharedContext::commit_reasoning(const ContextEntry& entry) {
    if (entry.kind != EntryKind::reasoning)
        throw ConfigError("commit_reasoning: entry is not a reasoning entry");
    reasoning_.push_back(entry);
    pending_.clear();
}

std::vector<ContextEntry> SharedContext::visible() const {
    std::vector<ContextEntry> out = reasoning_;
    out.insert(out.end(), pending_.begin(), pending_.end());
    return out;
}

std::string render_config_line(const KnobSet& set, const Configuration& cfg) {
    std::ostringstream out;
    bool first = true;
    for (const auto& m : set.members()) {
        auto it = cfg.assignments.find(m.name);
        if (it == cfg.assignments.end())
            continue;
        out << (first ? "" : ", ") << m.name << "=" << it->second.raw();
        first = false;
    }
    return out.str();
}

std::string render_measurement_line(const MeasurementRecord& record,
                                    const std::vector<std::string>& salient_metrics) {
    std::ostringstream out;
    bool first = true;
    auto emit = [&](const std::string& k, double v) {
        out << (first ? "" : "; ") << k << "=" << fmt_num(v);
        first = false;
    };
    if (record.app) {
        for (const auto& [k, v] : record.app->values)
            emit(k, v);
    }
    if (record.noise_pct) {
        out << " ±" << fmt_num(*record.noise_pct) << "%";
    }
    for (const auto& name : salient_metrics) {
        if (name == "reward" && record.reward)
            emit("reward", *record.reward);
        else if (name == "ipc" && record.system.ipc)
            emit("ipc", *record.system.ipc);
        else if (name == "pkg_w" && record.system.package_power_w)
            emit("pkg_w", *record.system.package_power_w);
        else if (name == "load" && record.system.cpu_load)
            emit("load", *record.system.cpu_load);
        else if (record.system.counters.count(name))
            emit(name, record.system.counters.at(name));
    }
    return out.str();
}

std::string render_entry(const ContextEntry& entry) {
    std::ostringstream out;
    out << "[" << (entry.kind == EntryKind::reasoning ? "R" : "I") << " w" << entry.iteration
        << "] action ";
    if (entry.action.empty()) {
        out << "none";
    } else {
        bool first = true;
        out << "{";
        for (const auto& [k, v] : entry.action) {
            out << (first ? "" : ", ") << k << "=" << v.raw();
            first = false;
        }
        out << "}";
    }
    out << " -> cfg#" << entry.config_after;
    if (!entry.measurement_summary.empty())
        out << " | " << entry.measurement_summary;
    if (!entry.justification.empty())
        out << " | " << entry.justification;
    return out.str();
}

SessionSpecification build_session_spec(const TuningGoal& goal, const KnobSet& set,
                                        const std::string& strategy_text,
                                        const std::optional<std::string>& prior) {
    SessionSpecification spec;
    spec.role_text = "You tune operating-system knobs for one running workload. "
                     "Propose only knob updates from the schema below; every proposal is "
                     "validated before it can reach the host.";
    spec.goal = goal;
    spec.knob_schema_block = describe_for_prompt(set);
    spec.strategy_text = strategy_text;
    spec.memory_prior = prior;
    return spec;
}

PerIterationUpdate build_update(const KnobSet& set, const Configuration& current,
                                const MeasurementRecord& latest, const SharedContext& context,
                                std::size_t trace_suffix_len) {
    PerIterationUpdate u;
    u.current_config = render_config_line(set, current);
    u.latest = render_measurement_line(latest, {"reward", "ipc", "pkg_w"});
    auto entries = context.visible();
    const std::size_t start =
        entries.size() > trace_suffix_len ? entries.size() - trace_suffix_len : 0;
    for (std::size_t i = start; i < entries.size(); ++i)
        u.trace_suffix.push_back(render_entry(entries[i]));
    return u;
}

RenderedPrompt render_prompt(const SessionSpecification& spec, const PerIterationUpdate& update,
                             const ResponseSchema& schema) {
    std::ostringstream out;
    out << "## Session\n";
    out << "Role: " << spec.role_text << "\n";
    out << "Goal: " << (spec.goal.direction == Direction::minimize ? "minimize " : "maximize ")
        << spec.goal.metric;
    for (const auto& c : spec.goal.constraints)
        out << "; " << c;
    out << "\n";
    out << "Knobs:\n" << spec.knob_schema_block;
    out << "Strategy: " << spec.strategy_text << "\n";
    if (spec.memory_prior)
        out << "Prior: " << *spec.memory_prior << "\n";
    out << "\n## Update\n";
    out << "Config: " << update.current_config << "\n";
    out << "Latest: " << update.latest << "\n";
    out << "Trace:\n";
    for (const auto& line : update.trace_suffix)
        out << "  " << line << "\n";
    out << "\nReply with one JSON object matching this schema:\n";
    const std::string descriptor = schema.descriptor();
    out << descriptor << "\n";
    return {out.str(), descriptor};
}

} // namespace knobtune
