#include "knobtune/backend.hpp"
#include "knobtune/errors.hpp"
#include "knobtune/guardrail.hpp"
#include "knobtune/registry.hpp"

#include <doctest.h>

#include <random>
#include <set>
#include <thread>

using namespace knobtune;

namespace {

Registry& shipped() {
    static Registry reg = Registry::load_file(std::string(KNOBTUNE_DATA_DIR) + "/knobs.catalog");
    return reg;
}

struct Fixture {
    KnobSet set = shipped().resolve_named_set("default8");
    SimBackend backend;
    CpuMask mask = parse_cpu_mask("0-9");
    Guardrail guard{set, mask, backend};
    Configuration current = default_configuration(set);
    SessionPolicy policy;

    Fixture() { preload_defaults(); }

    void preload_defaults() {
        for (const auto& m : set.members()) {
            if (m.scope == KnobScope::per_cpu) {
                for (const auto& [p, v] : Guardrail::expand_per_cpu(m, m.default_value, mask))
                    backend.preload(p, v);
            } else {
                backend.preload(m.actuation_path, m.default_value.raw());
            }
        }
    }

    Proposal propose(std::map<std::string, KnobValue> updates) {
        Proposal p;
        p.updates = std::move(updates);
        p.source = ProposalSource::manual;
        return p;
    }
};

} // namespace

TEST_SUITE_BEGIN("guardrail");

TEST_CASE("perf-pct inversion is a dependency violation on both members") {
    Fixture f;
    auto v = f.guard.validate(f.propose({{"min_perf_pct", KnobValue::of_int(70)},
                                         {"max_perf_pct", KnobValue::of_int(10)}}),
                              f.current, f.policy);
    CHECK(v.accepted.empty());
    REQUIRE(v.rejections.size() == 2);
    for (const auto& r : v.rejections)
        CHECK(r.reason == RejectReason::dependency_violation);
}

TEST_CASE("second inversion vector from a live trace rejects both members") {
    Fixture f;
    // current has min 20, max 100; the proposal flips the pair to 63 > 3.
    CHECK(f.current.assignments.at("min_perf_pct").ival == 20);
    CHECK(f.current.assignments.at("max_perf_pct").ival == 100);
    auto v = f.guard.validate(f.propose({{"min_perf_pct", KnobValue::of_int(63)},
                                         {"max_perf_pct", KnobValue::of_int(3)}}),
                              f.current, f.policy);
    CHECK(v.accepted.empty());
    CHECK(v.rejections.size() == 2);
}

TEST_CASE("one-sided update violating against current state rejects only it") {
    Fixture f;
    f.current.assignments["max_perf_pct"] = KnobValue::of_int(50);
    auto v = f.guard.validate(f.propose({{"min_perf_pct", KnobValue::of_int(70)}}), f.current,
                              f.policy);
    CHECK(v.accepted.empty());
    REQUIRE(v.rejections.size() == 1);
    CHECK(v.rejections[0].subject == "min_perf_pct");
    CHECK(v.rejections[0].reason == RejectReason::dependency_violation);
}

TEST_CASE("empty proposal is a clean no-op verdict") {
    Fixture f;
    auto v = f.guard.validate(f.propose({}), f.current, f.policy);
    CHECK(v.accepted.empty());
    CHECK(v.rejections.empty());
}

TEST_CASE("domain, active-range, policy, and unknown-knob rejections") {
    Fixture f;
    auto over = f.guard.validate(
        f.propose({{"latency_ns", KnobValue::of_int(200000000)}}), f.current, f.policy);
    REQUIRE(over.rejections.size() == 1);
    CHECK(over.rejections[0].reason == RejectReason::out_of_domain);

    f.set.narrow("napi_busy_poll", {100, 500});
    auto range = f.guard.validate(f.propose({{"napi_busy_poll", KnobValue::of_int(600)}}),
                                  f.current, f.policy);
    REQUIRE(range.rejections.size() == 1);
    CHECK(range.rejections[0].reason == RejectReason::out_of_active_range);
    f.set.clear_narrowing("napi_busy_poll");

    f.policy.frozen["cstate_max"] = KnobValue::of_token("C1E");
    auto frozen = f.guard.validate(f.propose({{"cstate_max", KnobValue::of_token("C1")}}),
                                   f.current, f.policy);
    REQUIRE(frozen.rejections.size() == 1);
    CHECK(frozen.rejections[0].reason == RejectReason::policy_violation);

    auto unknown = f.guard.validate(f.propose({{"swappiness", KnobValue::of_int(10)}}),
                                    f.current, f.policy);
    REQUIRE(unknown.rejections.size() == 1);
    CHECK(unknown.rejections[0].reason == RejectReason::unknown_knob);
}

TEST_CASE("rejections are partial: valid siblings still land") {
    Fixture f;
    auto v = f.guard.validate(f.propose({{"latency_ns", KnobValue::of_int(12000000)},
                                         {"min_perf_pct", KnobValue::of_int(70)},
                                         {"max_perf_pct", KnobValue::of_int(10)}}),
                              f.current, f.policy);
    CHECK(v.accepted.size() == 1);
    CHECK(v.accepted.count("latency_ns") == 1);
    CHECK(v.rejections.size() == 2);
}

TEST_CASE("validate is pure") {
    Fixture f;
    Proposal p = f.propose({{"min_perf_pct", KnobValue::of_int(63)},
                            {"latency_ns", KnobValue::of_int(12000000)}});
    auto a = f.guard.validate(p, f.current, f.policy);
    auto b = f.guard.validate(p, f.current, f.policy);
    CHECK(a.to_json() == b.to_json());
}

TEST_CASE("per-cpu expansion over 0-9 yields ten ordered writes") {
    Fixture f;
    const KnobSpec* cstate = f.set.find("cstate_max");
    auto writes = Guardrail::expand_per_cpu(*cstate, KnobValue::of_token("C1"), f.mask);
    REQUIRE(writes.size() == 10);
    for (int cpu = 0; cpu < 10; ++cpu) {
        CHECK(writes[cpu].first ==
              "/sys/devices/system/cpu/cpu" + std::to_string(cpu) + "/cpuidle/max_state");
        CHECK(writes[cpu].second == "C1");
    }

    auto one = Guardrail::expand_per_cpu(*cstate, KnobValue::of_token("C1"), {3});
    REQUIRE(one.size() == 1);
    CHECK(one[0].first.find("cpu3") != std::string::npos);

    CHECK_THROWS_AS(Guardrail::expand_per_cpu(*cstate, KnobValue::of_token("C1"), {}),
                    ConfigError);
    const KnobSpec* host = f.set.find("latency_ns");
    CHECK_THROWS_AS(Guardrail::expand_per_cpu(*host, KnobValue::of_int(1000000), f.mask),
                    ConfigError);
}

TEST_CASE("apply commits, read-back matches, commit id advances") {
    Fixture f;
    auto rec = f.guard.apply({{"latency_ns", KnobValue::of_int(12000000)}}, f.current, "t");
    REQUIRE(rec.ok());
    REQUIRE(rec.resulting_config.has_value());
    CHECK(rec.resulting_config->commit_id == 1);
    CHECK(*f.backend.read("/proc/sys/kernel/sched_latency_ns") == "12000000");
}

TEST_CASE("empty accepted map leaves commit id unchanged with zero writes") {
    Fixture f;
    auto rec = f.guard.apply({}, f.current, "noop");
    CHECK(rec.ok());
    CHECK(rec.writes.empty());
    CHECK(rec.resulting_config->commit_id == 0);
}

TEST_CASE("mid-batch failure rolls back to the pre-batch state") {
    Fixture f;
    const auto before = f.backend.state();
    // cstate_max expands to 10 writes; fail on the 3rd write of the batch.
    f.backend.fail_after(2);
    auto rec = f.guard.apply({{"cstate_max", KnobValue::of_token("C1")},
                              {"latency_ns", KnobValue::of_int(12000000)}},
                             f.current, "t");
    CHECK_FALSE(rec.ok());
    CHECK_FALSE(rec.resulting_config.has_value());
    f.backend.clear_faults();
    CHECK(f.backend.state() == before);
}

TEST_CASE("randomized mid-batch failure injection: state is always restored") {
    Fixture f;
    std::mt19937_64 rng(99);
    const auto pristine = f.backend.state();
    for (int trial = 0; trial < 200; ++trial) {
        std::map<std::string, KnobValue> accepted;
        if (rng() % 2)
            accepted["latency_ns"] = KnobValue::of_int(1000000 * (1 + (std::int64_t)(rng() % 90)));
        if (rng() % 2)
            accepted["cstate_max"] =
                KnobValue::of_token(std::vector<std::string>{"C0", "C1", "C1E", "C6"}[rng() % 4]);
        accepted["napi_busy_poll"] = KnobValue::of_int(50 * (std::int64_t)(rng() % 21));
        std::size_t writes = 0;
        for (const auto& [k, v] : accepted)
            writes += f.set.find(k)->scope == KnobScope::per_cpu ? f.mask.size() : 1;
        const auto before = f.backend.state();
        f.backend.fail_after(static_cast<int>(rng() % writes));
        auto rec = f.guard.apply(accepted, f.current, "trial");
        f.backend.clear_faults();
        REQUIRE_FALSE(rec.ok());
        REQUIRE(f.backend.state() == before);
    }
    CHECK(f.backend.state() == pristine);
}

TEST_CASE("snapshot reads current values; unreadable path aborts") {
    Fixture f;
    Configuration snap = f.guard.snapshot();
    CHECK(snap.assignments == default_configuration(f.set).assignments);

    auto rec = f.guard.apply({{"min_perf_pct", KnobValue::of_int(55)}}, f.current, "t");
    REQUIRE(rec.ok());
    Configuration snap2 = f.guard.snapshot();
    CHECK(snap2.assignments.at("min_perf_pct").ival == 55);

    SimBackend empty;
    Guardrail ge(f.set, f.mask, empty);
    CHECK_THROWS_AS(ge.snapshot(), SessionError);
}

TEST_CASE("restore returns the backend to the initial state after random commits") {
    Fixture f;
    const auto initial = f.backend.state();
    Configuration snap = f.guard.snapshot();
    std::mt19937_64 rng(7);
    Configuration cur = f.current;
    for (int i = 0; i < 25; ++i) {
        std::map<std::string, KnobValue> accepted;
        accepted["min_perf_pct"] = KnobValue::of_int((std::int64_t)(rng() % 60));
        accepted["latency_ns"] = KnobValue::of_int(1000000 * (1 + (std::int64_t)(rng() % 100)));
        accepted["cstate_max"] =
            KnobValue::of_token(std::vector<std::string>{"C0", "C1", "C1E", "C6"}[rng() % 4]);
        auto rec = f.guard.apply(accepted, cur, "walk");
        REQUIRE(rec.ok());
        cur = *rec.resulting_config;
    }
    CHECK(f.backend.state() != initial);
    auto rec = f.guard.restore(snap);
    CHECK(rec.ok());
    CHECK(f.backend.state() == initial);
}

TEST_CASE("restore retries and reports residual failures, never silently") {
    Fixture f;
    Configuration snap = f.guard.snapshot();
    f.guard.apply({{"latency_ns", KnobValue::of_int(12000000)}}, f.current, "t");
    f.backend.fail_on_path("/proc/sys/kernel/sched_latency_ns");
    auto rec = f.guard.restore(snap);
    CHECK_FALSE(rec.ok());
    int failed = 0;
    for (const auto& w : rec.writes) {
        if (!w.ok) {
            ++failed;
            CHECK(w.path == "/proc/sys/kernel/sched_latency_ns");
        }
    }
    CHECK(failed == 1);
    f.backend.clear_faults();
}

TEST_CASE("restore of an untouched session changes nothing effective") {
    Fixture f;
    Configuration snap = f.guard.snapshot();
    const auto before = f.backend.state();
    auto rec = f.guard.restore(snap);
    CHECK(rec.ok());
    CHECK(f.backend.state() == before);
}

TEST_CASE("concurrent applies never interleave writes in the log") {
    Fixture f;
    auto worker = [&](std::int64_t base) {
        Configuration cur = f.current;
        for (int i = 0; i < 20; ++i) {
            f.guard.apply({{"cstate_max", KnobValue::of_token(base ? "C1" : "C6")}}, cur, "w");
        }
    };
    std::thread a(worker, 0), b(worker, 1);
    a.join();
    b.join();
    // Scopes must be contiguous: once a new scope starts, the previous one
    // never reappears.
    std::string last;
    std::set<std::string> closed;
    for (const auto& e : f.backend.write_log()) {
        if (e.scope != last) {
            CHECK(closed.count(e.scope) == 0);
            if (!last.empty())
                closed.insert(last);
            last = e.scope;
        }
    }
}

TEST_SUITE_END();
