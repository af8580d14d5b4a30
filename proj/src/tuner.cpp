#include "knobtune/tuner.hpp"

#include "knobtune/errors.hpp"

#include <sstream>

namespace knobtune {

nlohmann::json TrimResult::to_json() const {
    nlohmann::json n = nlohmann::json::object();
    for (const auto& [k, r] : narrowed)
        n[k] = {r.lo, r.hi};
    nlohmann::json f = nlohmann::json::object();
    for (const auto& [k, v] : frozen)
        f[k] = v.to_json();
    nlohmann::json events = nlohmann::json::array();
    for (const auto& e : revision_log)
        events.push_back(
            {{"window", e.window}, {"kind", e.kind}, {"knob", e.knob}, {"detail", e.detail}});
    return {{"narrowed", n}, {"frozen", f}, {"revision_log", events}};
}

bool decide_convergence(bool model_flag, const std::deque<bool>& recent_changes,
                        int quiet_windows_required) {
    if (!model_flag)
        return false;
    if (static_cast<int>(recent_changes.size()) < quiet_windows_required)
        return false;
    for (bool changed : recent_changes) {
        if (changed)
            return false;
    }
    return true;
}

namespace {

// Shared decision plumbing: validate, apply, track best/convergence, log.
class ControllerBase : public Controller {
public:
    explicit ControllerBase(ControlEnv env) : env_(std::move(env)) {}

    const TunerState& state() const override { return state_; }

protected:
    bool better(double a, double b) const {
        return env_.direction == Direction::minimize ? a < b : a > b;
    }

    void track_best(std::optional<double> reward) {
        if (!reward)
            return;
        if (!state_.best || better(*reward, state_.best->second))
            state_.best = {*env_.current, *reward};
    }

    // Validate + apply one proposal; returns the verdict and whether any
    // knob actually changed value. Logs one decision event.
    struct Applied {
        ValidationVerdict verdict;
        bool commit_ok = true;
        bool changed = false;
    };

    Applied act(int window, const Proposal& proposal, bool converged_flag,
                const std::string& note = "") {
        Applied out;
        out.verdict = env_.guardrail->validate(proposal, *env_.current, *env_.policy);
        bool changed = false;
        for (const auto& [k, v] : out.verdict.accepted) {
            auto it = env_.current->assignments.find(k);
            if (it == env_.current->assignments.end() || !(it->second == v))
                changed = true;
        }
        CommitRecord commit =
            env_.guardrail->apply(out.verdict.accepted, *env_.current, proposal.justification);
        if (env_.log_commit)
            env_.log_commit(commit, out.verdict);
        out.commit_ok = commit.ok();
        if (commit.ok() && commit.resulting_config) {
            *env_.current = *commit.resulting_config;
            out.changed = changed && !out.verdict.accepted.empty();
        }
        recent_changes_.push_back(out.changed);
        while (static_cast<int>(recent_changes_.size()) > env_.loop.convergence_quiet_windows)
            recent_changes_.pop_front();
        if (decide_convergence(converged_flag, recent_changes_,
                               env_.loop.convergence_quiet_windows))
            state_.converged = true;

        nlohmann::json proposal_updates = nlohmann::json::object();
        for (const auto& [k, v] : proposal.updates)
            proposal_updates[k] = v.to_json();
        nlohmann::json event = {{"kind", "decision"},
                                {"source", to_string(proposal.source)},
                                {"proposal", proposal_updates},
                                {"justification", proposal.justification},
                                {"verdict", out.verdict.to_json()},
                                {"commit_ok", out.commit_ok},
                                {"commit_id", env_.current->commit_id},
                                {"converged_flag", converged_flag},
                                {"window", window}};
        if (!note.empty())
            event["note"] = note;
        if (!commands.empty()) {
            // Quarantined model commands: recorded for audit, never executed.
            event["commands"] = commands;
            commands.clear();
        }
        env_.log_decision(std::move(event));
        return out;
    }

    // Commands from the response being acted on; consumed by the next act().
    std::vector<std::string> commands;

    void log_idle(int window, const std::string& why) {
        env_.log_decision({{"kind", "idle"},
                           {"window", window},
                           {"why", why},
                           {"commit_id", env_.current->commit_id}});
    }

    ControlEnv env_;
    TunerState state_;
    std::deque<bool> recent_changes_;
};

std::string summary_of(const MeasurementRecord& record, std::optional<double> reward) {
    MeasurementRecord r = record;
    r.reward = reward;
    return render_measurement_line(r, {"reward", "ipc", "pkg_w"});
}

class LoopController : public ControllerBase {
public:
    LoopController(ControlEnv env, LoopMode mode)
        : ControllerBase(std::move(env)), mode_(mode) {
        if (mode_ != LoopMode::single_instant && !env_.gateway->has_role(ModelRole::reasoning))
            throw ConfigError("mode requires a reasoning endpoint");
        if (mode_ != LoopMode::single_reasoning && !env_.gateway->has_role(ModelRole::instant))
            throw ConfigError("mode requires an instant endpoint");
    }

    void on_window(int window, const MeasurementRecord& record,
                   std::optional<double> reward) override {
        state_.window = window;
        track_best(reward);
        const bool in_tuning = window < env_.loop.tuning_windows;
        state_.phase = in_tuning ? Phase::tuning : Phase::stable;
        if (!in_tuning || state_.converged) {
            state_.phase = Phase::stable;
            log_idle(window, in_tuning ? "converged" : "stable phase");
            return;
        }

        const bool reasoning_on = mode_ != LoopMode::single_instant;
        const bool instant_on = mode_ != LoopMode::single_reasoning;

        // Cold bootstrap call at the first window.
        if (reasoning_on && !issued_any_ && !handle_.pending())
            issue_reasoning(window, record, reward, /*bootstrap=*/true);

        bool reasoning_took_slot = false;
        if (handle_.due(window)) {
            commit_reasoning_result(window, record, reward);
            reasoning_took_slot = true;
        }
        const bool instant_due =
            env_.loop.instant_every_windows <= 1 ||
            window % env_.loop.instant_every_windows == 0;
        if (!reasoning_took_slot && instant_on) {
            if (instant_due)
                instant_step(window, record, reward);
            else
                log_idle(window, "instant cadence");
        } else if (!reasoning_took_slot && !instant_on) {
            // Single-reasoning mode acts through reasoning commits only.
            if (!handle_.pending())
                issue_reasoning(window, record, reward, false);
            if (handle_.due(window))
                commit_reasoning_result(window, record, reward);
            else
                log_idle(window, "reasoning in flight");
            return;
        }

        if (mode_ == LoopMode::dual && !state_.converged && !handle_.pending() &&
            instants_since_reasoning_ >= env_.loop.reasoning_min_pending) {
            issue_reasoning(window, record, reward, false);
            // Zero-latency deterministic backends commit at this same
            // boundary, right after the instant action.
            if (handle_.due(window))
                commit_reasoning_result(window, record, reward);
        }
    }

private:
    void issue_reasoning(int window, const MeasurementRecord& record,
                         std::optional<double> reward, bool bootstrap) {
        const ResponseSchema schema(*env_.set, false);
        const auto update = build_update(*env_.set, *env_.current, with_reward(record, reward),
                                         context_, env_.loop.trace_suffix_len);
        const auto prompt = render_prompt(*env_.spec, update, schema);
        env_.log_prompt("w" + std::to_string(window) + "_reasoning", prompt.text);
        handle_ = env_.gateway->begin_request(ModelRole::reasoning, prompt.text, schema, window);
        issued_any_ = true;
        bootstrap_pending_ = bootstrap;
    }

    void commit_reasoning_result(int window, const MeasurementRecord& record,
                                 std::optional<double> reward) {
        TunerResponse resp = handle_.take();
        Proposal p;
        p.updates = resp.updates;
        p.justification = resp.justification;
        p.source = ProposalSource::reasoning;
        p.iteration = window;
        const std::string note = resp.errored ? "gateway error: " + resp.error : "";
        commands = resp.commands;
        Applied a = act(window, p, resp.converged, note);

        if (bootstrap_pending_) {
            // The strategy-seeding first call: it predates any completed
            // action-measurement cycle and leaves no context entry.
            bootstrap_pending_ = false;
        } else {
            ContextEntry entry;
            entry.kind = EntryKind::reasoning;
            entry.iteration = window;
            entry.action = a.verdict.accepted;
            entry.config_after = env_.current->commit_id;
            entry.measurement_summary = summary_of(record, reward);
            entry.justification = resp.justification;
            context_.commit_reasoning(entry);
        }
        instants_since_reasoning_ = 0;
    }

    void instant_step(int window, const MeasurementRecord& record,
                      std::optional<double> reward) {
        const ResponseSchema schema(*env_.set, false);
        const auto update = build_update(*env_.set, *env_.current, with_reward(record, reward),
                                         context_, env_.loop.trace_suffix_len);
        const auto prompt = render_prompt(*env_.spec, update, schema);
        env_.log_prompt("w" + std::to_string(window) + "_instant", prompt.text);
        TunerResponse resp =
            env_.gateway->request(ModelRole::instant, prompt.text, schema, window);
        Proposal p;
        p.updates = resp.updates;
        p.justification = resp.justification;
        p.source = ProposalSource::instant;
        p.iteration = window;
        const std::string note = resp.errored ? "gateway error: " + resp.error : "";
        commands = resp.commands;
        Applied a = act(window, p, resp.converged, note);

        ContextEntry entry;
        entry.kind = EntryKind::instant;
        entry.iteration = window;
        entry.action = a.verdict.accepted;
        entry.config_after = env_.current->commit_id;
        entry.measurement_summary = summary_of(record, reward);
        entry.justification = resp.justification;
        context_.append_entry(entry);
        ++instants_since_reasoning_;
    }

    static MeasurementRecord with_reward(const MeasurementRecord& record,
                                         std::optional<double> reward) {
        MeasurementRecord r = record;
        r.reward = reward;
        return r;
    }

    LoopMode mode_;
    SharedContext context_;
    Gateway::AsyncHandle handle_;
    bool issued_any_ = false;
    bool bootstrap_pending_ = false;
    int instants_since_reasoning_ = 0;
};

class TrimController : public ControllerBase {
public:
    TrimController(ControlEnv env, std::unique_ptr<DownstreamTuner> downstream,
                   int trim_windows)
        : ControllerBase(std::move(env)), downstream_(std::move(downstream)),
          trim_windows_(trim_windows) {
        if (trim_windows_ > 0 && !env_.gateway->has_role(ModelRole::reasoning))
            throw ConfigError("trim mode requires a reasoning endpoint");
        if (trim_windows_ == 0)
            install_and_handoff(-1);
    }

    void on_window(int window, const MeasurementRecord& record,
                   std::optional<double> reward) override {
        state_.window = window;
        track_best(reward);
        state_.phase = window < env_.loop.tuning_windows ? Phase::tuning : Phase::stable;
        if (downstream_failed_) {
            log_idle(window, "downstream failed; holding best-so-far");
            return;
        }
        if (window < trim_windows_) {
            trim_probe(window, record, reward);
            if (window == trim_windows_ - 1)
                install_and_handoff(window);
            return;
        }
        // Baselines keep proposing through the stable phase.
        drive_downstream(window, record, reward);
    }

    std::optional<TrimResult> trim_result() const override {
        return trim_windows_ > 0 ? std::optional<TrimResult>(trim_) : std::nullopt;
    }

private:
    void trim_probe(int window, const MeasurementRecord& record, std::optional<double> reward) {
        const ResponseSchema schema(*env_.set, /*allow_trim=*/true);
        MeasurementRecord r = record;
        r.reward = reward;
        const auto update =
            build_update(*env_.set, *env_.current, r, context_, env_.loop.trace_suffix_len);
        const auto prompt = render_prompt(*env_.spec, update, schema);
        env_.log_prompt("w" + std::to_string(window) + "_trim", prompt.text);
        TunerResponse resp =
            env_.gateway->request(ModelRole::reasoning, prompt.text, schema, window);
        Proposal p;
        p.updates = resp.updates;
        p.justification = resp.justification;
        p.source = ProposalSource::reasoning;
        p.iteration = window;
        const std::string note = resp.errored ? "gateway error: " + resp.error : "";
        commands = resp.commands;
        Applied a = act(window, p, false, note);

        ContextEntry entry;
        entry.kind = EntryKind::reasoning;
        entry.iteration = window;
        entry.action = a.verdict.accepted;
        entry.config_after = env_.current->commit_id;
        entry.measurement_summary = summary_of(record, reward);
        entry.justification = resp.justification;
        context_.commit_reasoning(entry);

        if (resp.trim)
            collect_directives(window, *resp.trim);
    }

    void collect_directives(int window, const TrimDirectives& t) {
        for (const auto& [knob, bounds] : t.narrow) {
            const KnobSpec* spec = env_.set->find(knob);
            if (!spec) {
                trim_.revision_log.push_back({window, "narrow", knob, "rejected: unknown knob"});
                continue;
            }
            // Clamp into the declared domain; a later directive on the same
            // knob is a revision and replaces the earlier one.
            ActiveRange full = env_.set->declared_range(*spec);
            ActiveRange r{std::max(bounds.first, full.lo), std::min(bounds.second, full.hi)};
            if (r.lo > r.hi) {
                trim_.revision_log.push_back({window, "narrow", knob, "rejected: empty range"});
                continue;
            }
            const bool revision = trim_.narrowed.count(knob) > 0;
            trim_.narrowed[knob] = r;
            trim_.revision_log.push_back(
                {window, revision ? "revise" : "narrow", knob,
                 "[" + std::to_string(r.lo) + ", " + std::to_string(r.hi) + "]"});
        }
        for (const auto& [knob, value] : t.freeze) {
            const KnobSpec* spec = env_.set->find(knob);
            if (!spec || !spec->in_domain(value)) {
                trim_.revision_log.push_back({window, "freeze", knob, "rejected: bad value"});
                continue;
            }
            const bool revision = trim_.frozen.count(knob) > 0;
            trim_.frozen[knob] = value;
            trim_.revision_log.push_back(
                {window, revision ? "revise" : "freeze", knob, value.raw()});
        }
    }

    void install_and_handoff(int window) {
        // Frozen values are committed through the ordinary guardrail path,
        // then locked by policy.
        if (!trim_.frozen.empty()) {
            Proposal p;
            p.updates = trim_.frozen;
            p.justification = "freeze low-impact knobs at trimmed values";
            p.source = ProposalSource::reasoning;
            p.iteration = window;
            act(window < 0 ? 0 : window, p, false, "trim install");
            for (const auto& [k, v] : trim_.frozen) {
                env_.policy->frozen[k] = v;
                // Point-narrow frozen knobs so downstream tuners see them as
                // untunable instead of collecting policy rejections.
                if (const KnobSpec* spec = env_.set->find(k)) {
                    const std::int64_t ord = spec->ordinal(v);
                    trim_.narrowed.erase(k);
                    try {
                        env_.set->narrow(k, {ord, ord});
                    } catch (const ConfigError&) {
                    }
                }
            }
        }
        std::vector<std::string> failed_installs;
        for (const auto& [knob, range] : trim_.narrowed) {
            try {
                env_.set->narrow(knob, range);
            } catch (const ConfigError& e) {
                trim_.revision_log.push_back({window, "narrow", knob,
                                              std::string("install rejected: ") + e.what()});
                failed_installs.push_back(knob);
            }
        }
        for (const auto& knob : failed_installs)
            trim_.narrowed.erase(knob);
        // The downstream sees the narrowed schema.
        env_.spec->knob_schema_block = describe_for_prompt(*env_.set);
        downstream_->init(*env_.set, env_.direction, env_.seed);
        installed_ = true;
    }

    void drive_downstream(int window, const MeasurementRecord&, std::optional<double> reward) {
        if (!installed_)
            install_and_handoff(window);
        try {
            if (reward)
                downstream_->observe(*env_.current, *reward);
            if (reward)
                history_.push_back({*env_.current, *reward});
            Proposal p = downstream_->propose(history_);
            p.iteration = window;
            p.source = ProposalSource::baseline;
            act(window, p, false);
        } catch (const std::exception& e) {
            // Downstream failure aborts to the stable phase at best-so-far.
            downstream_failed_ = true;
            env_.log_decision({{"kind", "downstream_failed"},
                               {"window", window},
                               {"error", e.what()}});
            if (state_.best) {
                Proposal back;
                back.updates = state_.best->first.assignments;
                back.justification = "revert to best-so-far after downstream failure";
                back.source = ProposalSource::manual;
                back.iteration = window;
                act(window, back, false);
            }
            state_.converged = true;
        }
    }

    std::unique_ptr<DownstreamTuner> downstream_;
    int trim_windows_ = 0;
    SharedContext context_;
    TrimResult trim_;
    std::vector<Observation> history_;
    bool installed_ = false;
    bool downstream_failed_ = false;
};

} // namespace

std::unique_ptr<Controller> make_loop_controller(ControlEnv env, LoopMode mode) {
    return std::make_unique<LoopController>(std::move(env), mode);
}

std::unique_ptr<Controller> make_trim_controller(ControlEnv env,
                                                 std::unique_ptr<DownstreamTuner> downstream,
                                                 int trim_windows) {
    return std::make_unique<TrimController>(std::move(env), std::move(downstream),
                                            trim_windows);
}

} // namespace knobtune
