#include "knobtune/simhost.hpp"

#include "knobtune/errors.hpp"
#include "knobtune/kvdoc.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>

namespace knobtune {

namespace {

SurfaceEffect::Shape shape_from_string(const std::string& s) {
    if (s == "quad") return SurfaceEffect::Shape::quad;
    if (s == "mono_inc") return SurfaceEffect::Shape::mono_inc;
    if (s == "mono_dec") return SurfaceEffect::Shape::mono_dec;
    if (s == "flat") return SurfaceEffect::Shape::flat;
    throw ConfigError("surface: unknown effect shape '" + s + "'");
}

SurfaceEffect parse_effect(const KvRecord& r) {
    SurfaceEffect e;
    e.knob = r.require("knob");
    e.shape = shape_from_string(r.require("shape"));
    e.weight = r.get_double("weight", 1.0);
    e.cap = r.get_double("cap", 100.0);
    if (e.shape == SurfaceEffect::Shape::quad) {
        e.opt = r.require_double("opt");
        e.scale = r.require_double("scale");
        if (e.scale <= 0)
            throw ConfigError("surface effect on '" + e.knob + "': scale must be > 0");
    }
    return e;
}

// Ordinal parse of a condition/optimum value for a knob: enum tokens map to
// their index, booleans to 0/1, integers to themselves.
std::int64_t parse_ordinal(const KnobSpec& spec, const std::string& text) {
    auto v = spec.parse_raw(text);
    if (!v)
        throw ConfigError("surface: value '" + text + "' not parseable for knob " + spec.name);
    return spec.ordinal(*v);
}

} // namespace

ResponseSurface ResponseSurface::load_file(const std::string& path, const Registry& registry) {
    return load(read_file(path), registry);
}

ResponseSurface ResponseSurface::load(const std::string& text, const Registry& registry) {
    KvDocument doc = parse_kvdoc(text);
    ResponseSurface s;
    const auto heads = doc.of_type("surface");
    if (heads.size() != 1)
        throw ConfigError("surface file needs exactly one [surface] record");
    const KvRecord& head = *heads[0];
    s.name_ = head.require("name");
    s.metric_ = head.get("metric").value_or("p99_ms");
    s.direction_ = direction_from_string(head.get("direction").value_or("min"));
    s.knob_set_name_ = head.require("knob_set");
    s.base_ = head.require_double("base");
    s.noise_pct_ = head.get_double("noise_pct", 0.0);

    const KnobSet set = registry.resolve_named_set(s.knob_set_name_);
    auto check_knob = [&](const std::string& n, const char* where) -> const KnobSpec& {
        const KnobSpec* spec = set.find(n);
        if (!spec)
            throw ConfigError(std::string("surface ") + where + " references knob '" + n +
                              "' outside set " + s.knob_set_name_);
        return *spec;
    };

    SignalModel* open_signal = nullptr;
    std::vector<SignalModel> signals;
    for (const auto& r : doc.records) {
        if (r.type == "surface")
            continue;
        if (r.type == "effect") {
            SurfaceEffect e = parse_effect(r);
            check_knob(e.knob, "effect");
            if (open_signal)
                open_signal->effects.push_back(e);
            else
                s.effects_.push_back(e);
        } else if (r.type == "coupling") {
            SurfaceCoupling c;
            c.a = r.require("a");
            c.b = r.require("b");
            check_knob(c.a, "coupling");
            check_knob(c.b, "coupling");
            const std::string kind = r.get("kind").value_or("match");
            if (kind == "match")
                c.kind = SurfaceCoupling::Kind::match;
            else if (kind == "product")
                c.kind = SurfaceCoupling::Kind::product;
            else
                throw ConfigError("surface: unknown coupling kind '" + kind + "'");
            c.weight = r.get_double("weight", 0.5);
            s.couplings_.push_back(c);
        } else if (r.type == "trap") {
            TrapSpec t;
            t.severity = r.get_double("severity", 500.0);
            t.recovery_windows = static_cast<int>(r.get_int("recovery_windows", 3));
            for (const auto& [k, v] : r.fields) {
                if (k != "when")
                    continue;
                std::istringstream ws(v);
                std::string knob, op, val;
                ws >> knob >> op >> val;
                const KnobSpec& spec = check_knob(knob, "trap");
                TrapCondition c;
                c.knob = knob;
                if (op == "<=") c.op = TrapCondition::Op::le;
                else if (op == ">=") c.op = TrapCondition::Op::ge;
                else if (op == "==") c.op = TrapCondition::Op::eq;
                else throw ConfigError("surface trap: unknown operator '" + op + "'");
                c.ordinal = parse_ordinal(spec, val);
                t.conditions.push_back(c);
            }
            if (t.conditions.empty())
                throw ConfigError("surface trap: needs at least one 'when' condition");
            s.trap_ = t;
        } else if (r.type == "signal") {
            SignalModel sig;
            sig.name = r.require("name");
            sig.base = r.get_double("base", 1.0);
            sig.direction = direction_from_string(r.get("direction").value_or("max"));
            signals.push_back(sig);
            open_signal = &signals.back();
        } else if (r.type == "optimum") {
            for (const auto& [k, v] : r.fields) {
                const KnobSpec& spec = check_knob(k, "optimum");
                auto value = spec.parse_raw(v);
                if (!value || !spec.in_domain(*value))
                    throw ConfigError("surface optimum: value '" + v + "' invalid for " + k);
                s.optimum_[k] = *value;
            }
        } else {
            throw ConfigError("surface: unknown record type [" + r.type + "]");
        }
    }
    s.signals_ = std::move(signals);
    return s;
}

const SignalModel* ResponseSurface::signal(const std::string& name) const {
    for (const auto& sig : signals_) {
        if (sig.name == name)
            return &sig;
    }
    return nullptr;
}

bool ResponseSurface::in_trap_region(const KnobSet& set, const Configuration& cfg) const {
    if (!trap_)
        return false;
    for (const auto& c : trap_->conditions) {
        const KnobSpec* spec = set.find(c.knob);
        auto it = cfg.assignments.find(c.knob);
        if (!spec || it == cfg.assignments.end())
            return false;
        const std::int64_t ord = spec->ordinal(it->second);
        switch (c.op) {
        case TrapCondition::Op::le:
            if (!(ord <= c.ordinal)) return false;
            break;
        case TrapCondition::Op::ge:
            if (!(ord >= c.ordinal)) return false;
            break;
        case TrapCondition::Op::eq:
            if (!(ord == c.ordinal)) return false;
            break;
        }
    }
    return true;
}

double ResponseSurface::penalty(const std::vector<SurfaceEffect>& effects, const KnobSet& set,
                                const Configuration& cfg, bool with_couplings) const {
    double p = 1.0;
    for (const auto& e : effects) {
        const KnobSpec* spec = set.find(e.knob);
        auto it = cfg.assignments.find(e.knob);
        if (!spec || it == cfg.assignments.end())
            throw SessionError("surface eval: config missing knob " + e.knob);
        double term = 0.0;
        switch (e.shape) {
        case SurfaceEffect::Shape::flat:
            break;
        case SurfaceEffect::Shape::quad: {
            const double c = static_cast<double>(spec->ordinal(it->second));
            const double d = (c - e.opt) / e.scale;
            term = e.weight * d * d;
            break;
        }
        case SurfaceEffect::Shape::mono_inc:
            term = e.weight * spec->normalized_position(it->second);
            break;
        case SurfaceEffect::Shape::mono_dec:
            term = e.weight * (1.0 - spec->normalized_position(it->second));
            break;
        }
        p *= 1.0 + std::min(e.cap, term);
    }
    if (with_couplings) {
        for (const auto& c : couplings_) {
            const KnobSpec* sa = set.find(c.a);
            const KnobSpec* sb = set.find(c.b);
            const double xa = sa->normalized_position(cfg.assignments.at(c.a));
            const double xb = sb->normalized_position(cfg.assignments.at(c.b));
            double term = 0.0;
            if (c.kind == SurfaceCoupling::Kind::match)
                term = c.weight * (xa - xb) * (xa - xb);
            else
                term = c.weight * xa * xb;
            p *= 1.0 + term;
        }
    }
    return p;
}

double ResponseSurface::value_noise_free(const KnobSet& set, const Configuration& cfg,
                                         bool trapped) const {
    const double p = penalty(effects_, set, cfg, true);
    double v = direction_ == Direction::minimize ? base_ * p : base_ / p;
    if (trapped && trap_) {
        if (direction_ == Direction::minimize)
            v *= trap_->severity;
        else
            v /= trap_->severity;
    }
    return v;
}

double ResponseSurface::steady_state_value(const KnobSet& set, const Configuration& cfg) const {
    return value_noise_free(set, cfg, in_trap_region(set, cfg));
}

double ResponseSurface::signal_value(const SignalModel& sig, const KnobSet& set,
                                     const Configuration& cfg) const {
    const double p = penalty(sig.effects, set, cfg, false);
    return sig.direction == Direction::minimize ? sig.base * p : sig.base / p;
}

MeasurementRecord simulate_window(const ResponseSurface& surface, const KnobSet& set,
                                  const Configuration& cfg, int window_index,
                                  double duration_s, SimState& state, std::mt19937_64& rng) {
    // Trap dynamics first: a config inside the trigger region (re)arms the
    // trap; a safe config counts toward recovery and the trap clears on the
    // recovery_windows-th consecutive safe window.
    const bool in_region = surface.in_trap_region(set, cfg);
    if (surface.trap()) {
        if (in_region) {
            state.in_trap = true;
            state.consecutive_safe_windows = 0;
        } else if (state.in_trap) {
            ++state.consecutive_safe_windows;
            if (state.consecutive_safe_windows >= surface.trap()->recovery_windows) {
                state.in_trap = false;
                state.consecutive_safe_windows = 0;
            }
        }
    }
    const bool trapped = state.in_trap;
    const double v_nf = surface.value_noise_free(set, cfg, trapped);

    // Fixed per-window rng consumption keeps the stream aligned across
    // configs: 8 app samples + 1 signal draw.
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    std::vector<double> samples;
    samples.reserve(8);
    const double rel = surface.noise_pct() / 100.0;
    for (int i = 0; i < 8; ++i)
        samples.push_back(v_nf * (1.0 + rel * unit(rng)));
    const double sig_noise = 1.0 + 0.5 * rel * unit(rng);

    MeasurementRecord rec;
    rec.window_index = window_index;
    rec.ts_ms = static_cast<std::int64_t>(window_index) * static_cast<std::int64_t>(duration_s * 1000.0);
    rec.system.window_seconds = duration_s;

    AppMetrics app;
    app.reducer_used = Reducer::median;
    app.values[surface.metric()] = reduce(samples, Reducer::median);
    rec.app = app;
    rec.noise_pct = relative_iqr_pct(samples);

    // Synthetic system metrics with documented correlations. "Goodness"
    // r in (0, 1]: 1 at the surface base value, smaller as the app metric
    // degrades.
    const double r = surface.direction() == Direction::minimize
                         ? surface.base() / std::max(v_nf, 1e-12)
                         : v_nf / surface.base();
    const double good = std::clamp(r, 1e-6, 1.0);

    double ipc;
    if (const SignalModel* sig = surface.signal("ipc")) {
        ipc = surface.signal_value(*sig, set, cfg) * sig_noise;
    } else {
        ipc = (0.6 + 1.4 * good) * sig_noise;
    }
    ipc = std::max(ipc, 0.01);

    auto pos_of = [&](const char* knob, double fallback) {
        const KnobSpec* spec = set.find(knob);
        auto it = cfg.assignments.find(knob);
        if (!spec || it == cfg.assignments.end())
            return fallback;
        return spec->normalized_position(it->second);
    };
    const double min_perf = pos_of("min_perf_pct", 0.2);
    const double max_perf = pos_of("max_perf_pct", 1.0);
    const double busy = pos_of("napi_busy_poll", 0.0);
    const double cstate = pos_of("cstate_max", 1.0);  // 1 = deepest allowed

    const double ncpu = 10.0;
    const double cycles = 2.1e9 * duration_s * ncpu * (0.55 + 0.45 * (0.3 * min_perf + 0.7 * max_perf));
    rec.system.counters["cycles"] = std::round(cycles);
    rec.system.counters["instructions"] = std::round(ipc * cycles);
    const double refs = 3.0e7 * duration_s * ncpu;
    rec.system.counters["cache-references"] = std::round(refs);
    rec.system.counters["cache-misses"] = std::round(refs * (0.06 + 0.30 * (1.0 - good)));
    rec.system.counters["context-switches"] =
        std::round((2000.0 + 9000.0 * (1.0 - good)) * duration_s);
    rec.system.ipc = derive_ipc(rec.system.counters);

    rec.system.package_power_w = 28.0 + 45.0 * (0.3 * min_perf + 0.7 * max_perf) + 6.0 * busy;
    rec.system.dram_power_w = 3.0 + 4.0 * (0.45 + 0.5 * (1.0 - good));
    rec.system.cpu_load = std::clamp(0.45 + 0.5 * (1.0 - good), 0.0, 1.0);

    // Deep residency tracks the allowed idle depth and shrinks under busy
    // polling.
    const double deep = std::clamp(0.55 * cstate * (1.0 - 0.8 * busy), 0.0, 0.95);
    rec.system.cstate_residency["C0"] = std::clamp(1.0 - deep - 0.05, 0.0, 1.0);
    rec.system.cstate_residency["C1"] = 0.05;
    rec.system.cstate_residency["C6"] = deep;

    rec.extra["sim_in_trap"] = trapped ? 1.0 : 0.0;
    rec.extra["sim_value_noise_free"] = v_nf;
    return rec;
}

namespace {

// Enumerate admissible values, thinning very large integer domains to keep
// coordinate passes cheap. Always includes the domain endpoints.
std::vector<KnobValue> search_values(const KnobSpec& spec, std::size_t max_per_knob) {
    std::vector<KnobValue> all = spec.admissible_values();
    if (all.size() <= max_per_knob)
        return all;
    std::vector<KnobValue> out;
    const double stride = double(all.size() - 1) / double(max_per_knob - 1);
    for (std::size_t i = 0; i < max_per_knob; ++i)
        out.push_back(all[static_cast<std::size_t>(std::llround(i * stride))]);
    return out;
}

OracleResult oracle_search(const KnobSet& set,
                           const std::function<double(const Configuration&)>& objective,
                           Direction dir, std::size_t budget) {
    const auto better = [dir](double a, double b) {
        return dir == Direction::minimize ? a < b : a > b;
    };

    std::size_t combos = 1;
    bool overflow = false;
    for (const auto& m : set.members()) {
        combos *= m.domain_size();
        if (combos > budget) {
            overflow = true;
            break;
        }
    }

    Configuration best = default_configuration(set);
    double best_v = objective(best);

    if (!overflow) {
        // Exhaustive product walk.
        std::vector<std::vector<KnobValue>> values;
        for (const auto& m : set.members())
            values.push_back(m.admissible_values());
        std::vector<std::size_t> idx(values.size(), 0);
        Configuration cfg = best;
        while (true) {
            for (std::size_t i = 0; i < values.size(); ++i)
                cfg.assignments[set.members()[i].name] = values[i][idx[i]];
            const double v = objective(cfg);
            if (better(v, best_v)) {
                best_v = v;
                best = cfg;
            }
            std::size_t k = 0;
            while (k < idx.size() && ++idx[k] == values[k].size()) {
                idx[k] = 0;
                ++k;
            }
            if (k == idx.size())
                break;
        }
        return {best, best_v};
    }

    // Multi-start coordinate descent over (thinned) per-knob grids.
    std::vector<std::vector<KnobValue>> values;
    for (const auto& m : set.members())
        values.push_back(search_values(m, 64));
    std::mt19937_64 rng(12345);
    std::vector<Configuration> starts{default_configuration(set)};
    for (int s = 0; s < 4; ++s) {
        Configuration c;
        for (std::size_t i = 0; i < values.size(); ++i) {
            std::uniform_int_distribution<std::size_t> pick(0, values[i].size() - 1);
            c.assignments[set.members()[i].name] = values[i][pick(rng)];
        }
        starts.push_back(c);
    }
    for (auto& start : starts) {
        Configuration cur = start;
        double cur_v = objective(cur);
        bool changed = true;
        int passes = 0;
        while (changed && passes++ < 20) {
            changed = false;
            for (std::size_t i = 0; i < values.size(); ++i) {
                const std::string& name = set.members()[i].name;
                KnobValue keep = cur.assignments[name];
                for (const auto& cand : values[i]) {
                    cur.assignments[name] = cand;
                    const double v = objective(cur);
                    if (better(v, cur_v)) {
                        cur_v = v;
                        keep = cand;
                        changed = true;
                    }
                }
                cur.assignments[name] = keep;
            }
        }
        if (better(cur_v, best_v)) {
            best_v = cur_v;
            best = cur;
        }
    }
    return {best, best_v};
}

} // namespace

OracleResult oracle_optimum(const ResponseSurface& surface, const KnobSet& set,
                            std::size_t budget) {
    return oracle_search(
        set, [&](const Configuration& c) { return surface.steady_state_value(set, c); },
        surface.direction(), budget);
}

OracleResult oracle_optimum_signal(const ResponseSurface& surface, const SignalModel& sig,
                                   const KnobSet& set, std::size_t budget) {
    return oracle_search(
        set, [&](const Configuration& c) { return surface.signal_value(sig, set, c); },
        sig.direction, budget);
}

SimTelemetrySource::SimTelemetrySource(const ResponseSurface& surface, const KnobSet& set,
                                       std::uint64_t seed)
    : surface_(surface), set_(set), rng_(seed) {}

MeasurementRecord SimTelemetrySource::collect(int window_index, double duration_s,
                                              const CpuMask&, const Configuration& current,
                                              const WorkloadAdapter*) {
    return simulate_window(surface_, set_, current, window_index, duration_s, state_, rng_);
}

} // namespace knobtune
