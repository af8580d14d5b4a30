#include "knobtune/baselines.hpp"

#include "knobtune/errors.hpp"

#include <algorithm>
#include <cstdlib>
#include <limits>

#include <json.hpp>

#include <cstdio>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

namespace knobtune {

namespace {

// Ordinal helpers over a knob's admissible values restricted to its active
// range.
struct Axis {
    KnobSpec spec;
    std::vector<KnobValue> values;  // admissible, active-range filtered, ordered
};

std::vector<Axis> build_axes(const KnobSet& set) {
    std::vector<Axis> axes;
    for (const auto& m : set.members()) {
        Axis axis;
        axis.spec = m;
        for (auto& v : m.admissible_values()) {
            if (set.value_in_active_range(m, v))
                axis.values.push_back(v);
        }
        // Single-value axes (frozen or point-narrowed knobs) are not tunable.
        if (axis.values.size() > 1)
            axes.push_back(std::move(axis));
    }
    return axes;
}

std::optional<std::size_t> index_of(const Axis& axis, const KnobValue& v) {
    for (std::size_t i = 0; i < axis.values.size(); ++i) {
        if (axis.values[i] == v)
            return i;
    }
    return std::nullopt;
}

class RandomSearch : public DownstreamTuner {
public:
    void init(const KnobSet& set, Direction, std::uint64_t seed) override {
        axes_ = build_axes(set);
        rng_.seed(seed);
    }

    Proposal propose(const std::vector<Observation>&) override {
        Proposal p;
        p.source = ProposalSource::baseline;
        p.justification = "random search sample";
        for (const auto& axis : axes_) {
            std::uniform_int_distribution<std::size_t> pick(0, axis.values.size() - 1);
            p.updates[axis.spec.name] = axis.values[pick(rng_)];
        }
        return p;
    }

    void observe(const Configuration&, double) override {}
    std::string name() const override { return "random"; }

private:
    std::vector<Axis> axes_;
    std::mt19937_64 rng_;
};

class HillClimb : public DownstreamTuner {
public:
    void init(const KnobSet& set, Direction direction, std::uint64_t seed) override {
        axes_ = build_axes(set);
        direction_ = direction;
        rng_.seed(seed);
        for (std::size_t i = 0; i < axes_.size(); ++i)
            first_dir_.push_back(rng_() % 2 == 0 ? 1 : -1);
        knob_ = 0;
        step_dir_ = axes_.empty() ? 1 : first_dir_[0];
        tried_other_dir_ = false;
    }

    Proposal propose(const std::vector<Observation>&) override {
        Proposal p;
        p.source = ProposalSource::baseline;
        if (!have_best_) {
            p.justification = "observe incumbent";
            return p;
        }
        if (revert_)
            p.updates[axes_[revert_knob_].spec.name] = best_at(revert_knob_);
        revert_ = false;

        // Find the next feasible ±1 step, flipping direction then advancing
        // knobs as needed.
        for (std::size_t tries = 0; tries < axes_.size() * 2 + 2; ++tries) {
            Axis& axis = axes_[knob_];
            auto idx = index_of(axis, best_at(knob_));
            if (!idx) {
                // Best-so-far sits outside the (narrowed) range, e.g. after a
                // trim handoff: pull it to the nearest admissible value.
                const std::int64_t ord = axis.spec.ordinal(best_at(knob_));
                std::size_t nearest = 0;
                std::int64_t best_dist = std::numeric_limits<std::int64_t>::max();
                for (std::size_t i = 0; i < axis.values.size(); ++i) {
                    const std::int64_t d = std::llabs(axis.spec.ordinal(axis.values[i]) - ord);
                    if (d < best_dist) {
                        best_dist = d;
                        nearest = i;
                    }
                }
                probe_knob_ = knob_;
                probe_outstanding_ = true;
                forced_probe_ = true;
                p.updates[axis.spec.name] = axis.values[nearest];
                p.justification = "pull " + axis.spec.name + " into range";
                return p;
            }
            const std::int64_t cand =
                static_cast<std::int64_t>(*idx) + static_cast<std::int64_t>(step_dir_);
            if (cand < 0 || cand >= static_cast<std::int64_t>(axis.values.size())) {
                advance();
                continue;
            }
            probe_knob_ = knob_;
            probe_outstanding_ = true;
            p.updates[axis.spec.name] = axis.values[static_cast<std::size_t>(cand)];
            p.justification = "probe " + axis.spec.name;
            return p;
        }
        p.justification = "no feasible step";
        return p;
    }

    void observe(const Configuration& config, double reward) override {
        if (!have_best_) {
            best_cfg_ = config;
            best_reward_ = reward;
            have_best_ = true;
            return;
        }
        if (!probe_outstanding_) {
            return;
        }
        probe_outstanding_ = false;
        if (forced_probe_) {
            // The previous best is infeasible under the active ranges; the
            // pulled config becomes the incumbent unconditionally.
            forced_probe_ = false;
            best_cfg_ = config;
            best_reward_ = reward;
            return;
        }
        const bool improved = direction_ == Direction::minimize ? reward < best_reward_
                                                                : reward > best_reward_;
        if (improved) {
            best_cfg_ = config;
            best_reward_ = reward;
            // Keep walking this knob in the same direction.
            tried_other_dir_ = false;
        } else {
            revert_ = true;
            revert_knob_ = probe_knob_;
            advance();
        }
    }

    std::string name() const override { return "hillclimb"; }

private:
    KnobValue best_at(std::size_t axis_idx) const {
        return best_cfg_.assignments.at(axes_[axis_idx].spec.name);
    }

    void advance() {
        if (!tried_other_dir_) {
            step_dir_ = -step_dir_;
            tried_other_dir_ = true;
            return;
        }
        knob_ = (knob_ + 1) % axes_.size();
        step_dir_ = first_dir_[knob_];
        tried_other_dir_ = false;
    }

    std::vector<Axis> axes_;
    Direction direction_ = Direction::minimize;
    std::mt19937_64 rng_;
    std::vector<int> first_dir_;

    bool have_best_ = false;
    Configuration best_cfg_;
    double best_reward_ = 0.0;

    std::size_t knob_ = 0;
    int step_dir_ = 1;
    bool tried_other_dir_ = false;
    bool probe_outstanding_ = false;
    bool forced_probe_ = false;
    std::size_t probe_knob_ = 0;
    bool revert_ = false;
    std::size_t revert_knob_ = 0;
};

class FixedTuner : public DownstreamTuner {
public:
    void init(const KnobSet&, Direction, std::uint64_t) override {}
    Proposal propose(const std::vector<Observation>&) override {
        Proposal p;
        p.source = ProposalSource::baseline;
        p.justification = "fixed configuration";
        return p;
    }
    void observe(const Configuration&, double) override {}
    std::string name() const override { return "fixed"; }
};

class SubprocessTuner : public DownstreamTuner {
public:
    explicit SubprocessTuner(std::string command) : command_(std::move(command)) {}

    ~SubprocessTuner() override {
        if (to_child_)
            fclose(to_child_);
        if (from_child_)
            fclose(from_child_);
        if (pid_ > 0)
            waitpid(pid_, nullptr, 0);
    }

    void init(const KnobSet& set, Direction direction, std::uint64_t seed) override {
        set_ = &set;
        int in_pipe[2], out_pipe[2];
        if (pipe(in_pipe) != 0 || pipe(out_pipe) != 0)
            throw SessionError("subprocess tuner: pipe() failed");
        pid_ = fork();
        if (pid_ < 0)
            throw SessionError("subprocess tuner: fork() failed");
        if (pid_ == 0) {
            dup2(in_pipe[0], 0);
            dup2(out_pipe[1], 1);
            close(in_pipe[0]);
            close(in_pipe[1]);
            close(out_pipe[0]);
            close(out_pipe[1]);
            execl("/bin/sh", "sh", "-c", command_.c_str(), static_cast<char*>(nullptr));
            _exit(127);
        }
        close(in_pipe[0]);
        close(out_pipe[1]);
        to_child_ = fdopen(in_pipe[1], "w");
        from_child_ = fdopen(out_pipe[0], "r");
        nlohmann::json init = {{"op", "init"},
                               {"direction", to_string(direction)},
                               {"seed", seed},
                               {"knobs", nlohmann::json::array()}};
        for (const auto& m : set.members()) {
            nlohmann::json k = {{"name", m.name}, {"domain", m.domain_text()}};
            if (auto ar = set.active_range(m.name))
                k["active_range"] = {ar->lo, ar->hi};
            init["knobs"].push_back(k);
        }
        send(init);
        read_line();  // ack
    }

    Proposal propose(const std::vector<Observation>& history) override {
        nlohmann::json req = {{"op", "propose"}, {"history", nlohmann::json::array()}};
        for (const auto& o : history)
            req["history"].push_back({{"config", o.config.to_json()}, {"reward", o.reward}});
        send(req);
        const std::string line = read_line();
        Proposal p;
        p.source = ProposalSource::baseline;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object() || !j.contains("updates"))
            return p;
        for (auto it = j["updates"].begin(); it != j["updates"].end(); ++it) {
            const KnobSpec* spec = set_->find(it.key());
            if (!spec)
                continue;
            auto v = spec->parse_raw(it.value().is_string() ? it.value().get<std::string>()
                                                            : it.value().dump());
            if (v)
                p.updates[it.key()] = *v;
        }
        p.justification = j.value("justification", std::string("subprocess proposal"));
        return p;
    }

    void observe(const Configuration&, double) override {}
    std::string name() const override { return "subprocess"; }

private:
    void send(const nlohmann::json& j) {
        if (!to_child_)
            throw SessionError("subprocess tuner: child not running");
        const std::string line = j.dump() + "\n";
        fputs(line.c_str(), to_child_);
        fflush(to_child_);
    }

    std::string read_line() {
        char buf[65536];
        if (!from_child_ || !fgets(buf, sizeof(buf), from_child_))
            throw SessionError("subprocess tuner: child closed its pipe");
        std::string s(buf);
        while (!s.empty() && s.back() == '\n')
            s.pop_back();
        return s;
    }

    std::string command_;
    const KnobSet* set_ = nullptr;
    pid_t pid_ = -1;
    FILE* to_child_ = nullptr;
    FILE* from_child_ = nullptr;
};

} // namespace

std::unique_ptr<DownstreamTuner> make_random_search() {
    return std::make_unique<RandomSearch>();
}

std::unique_ptr<DownstreamTuner> make_hill_climb() {
    return std::make_unique<HillClimb>();
}

std::unique_ptr<DownstreamTuner> make_fixed_tuner() {
    return std::make_unique<FixedTuner>();
}

std::unique_ptr<DownstreamTuner> make_subprocess_tuner(const std::string& command) {
    return std::make_unique<SubprocessTuner>(command);
}

std::unique_ptr<DownstreamTuner> make_baseline(const std::string& name) {
    if (name == "random")
        return make_random_search();
    if (name == "hillclimb")
        return make_hill_climb();
    if (name == "fixed")
        return make_fixed_tuner();
    if (name.rfind("subprocess:", 0) == 0)
        return make_subprocess_tuner(name.substr(11));
    throw ConfigError("unknown baseline tuner: " + name);
}

} // namespace knobtune
