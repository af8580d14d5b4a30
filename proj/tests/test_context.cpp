#include "knobtune/context.hpp"
#include "knobtune/errors.hpp"
#include "knobtune/gateway.hpp"
#include "knobtune/kvdoc.hpp"

#include <doctest.h>

#include <random>

using namespace knobtune;

namespace {

Registry& shipped() {
    static Registry reg = Registry::load_file(std::string(KNOBTUNE_DATA_DIR) + "/knobs.catalog");
    return reg;
}

ContextEntry entry(EntryKind kind, int iteration) {
    ContextEntry e;
    e.kind = kind;
    e.iteration = iteration;
    e.justification = (kind == EntryKind::reasoning ? "R" : "I") + std::to_string(iteration);
    return e;
}

} // namespace

TEST_SUITE_BEGIN("context");

TEST_CASE("instant entries accumulate in order until a reasoning commit") {
    SharedContext ctx;
    ctx.append_entry(entry(EntryKind::instant, 1));
    CHECK(ctx.visible().size() == 1);
    ctx.append_entry(entry(EntryKind::instant, 2));
    ctx.append_entry(entry(EntryKind::instant, 3));
    auto v = ctx.visible();
    REQUIRE(v.size() == 3);
    CHECK(v[0].iteration == 1);
    CHECK(v[1].iteration == 2);
    CHECK(v[2].iteration == 3);
}

TEST_CASE("reasoning commit consumes pending instants") {
    SharedContext ctx;
    for (int i = 0; i < 3; ++i)
        ctx.append_entry(entry(EntryKind::instant, i));
    ctx.commit_reasoning(entry(EntryKind::reasoning, 3));
    auto v = ctx.visible();
    REQUIRE(v.size() == 1);
    CHECK(v[0].kind == EntryKind::reasoning);

    ctx.append_entry(entry(EntryKind::instant, 4));
    v = ctx.visible();
    REQUIRE(v.size() == 2);
    CHECK(v[0].kind == EntryKind::reasoning);
    CHECK(v[1].iteration == 4);
}

TEST_CASE("the dual-loop schedule from the design figure") {
    // R0 is the strategy bootstrap: it predates any completed
    // action-measurement cycle and leaves no entry.
    SharedContext ctx;
    for (int i = 0; i < 3; ++i)
        ctx.append_entry(entry(EntryKind::instant, 1 + i));  // I0.0-I0.2
    ctx.commit_reasoning(entry(EntryKind::reasoning, 3));    // R1
    CHECK(ctx.visible().size() == 1);
    for (int i = 0; i < 3; ++i)
        ctx.append_entry(entry(EntryKind::instant, 4 + i));  // I1.0-I1.2
    ctx.commit_reasoning(entry(EntryKind::reasoning, 6));    // R2
    ctx.append_entry(entry(EntryKind::instant, 7));          // I2.0
    ctx.append_entry(entry(EntryKind::instant, 8));          // I2.1
    auto v = ctx.visible();
    REQUIRE(v.size() == 4);  // exactly {R1, R2, I2.0, I2.1}
    CHECK(v[0].kind == EntryKind::reasoning);
    CHECK(v[1].kind == EntryKind::reasoning);
    CHECK(v[2].iteration == 7);
    CHECK(v[3].iteration == 8);
}

TEST_CASE("commit on an empty pending list grows reasoning only") {
    SharedContext ctx;
    ctx.commit_reasoning(entry(EntryKind::reasoning, 0));
    CHECK(ctx.reasoning_count() == 1);
    CHECK(ctx.pending_instant_count() == 0);
}

TEST_CASE("kind mismatches are contract violations") {
    SharedContext ctx;
    CHECK_THROWS_AS(ctx.append_entry(entry(EntryKind::reasoning, 0)), ConfigError);
    CHECK_THROWS_AS(ctx.commit_reasoning(entry(EntryKind::instant, 0)), ConfigError);
}

TEST_CASE("property: instants never survive a commit; visible <= R + M") {
    std::mt19937_64 rng(77);
    for (int trial = 0; trial < 2000; ++trial) {
        SharedContext ctx;
        const int M = 1 + static_cast<int>(rng() % 5);
        int reasoning_commits = 0;
        int pending = 0;
        const int ops = 1 + static_cast<int>(rng() % 40);
        for (int i = 0; i < ops; ++i) {
            if (pending >= M || (pending > 0 && rng() % 4 == 0)) {
                ctx.commit_reasoning(entry(EntryKind::reasoning, i));
                ++reasoning_commits;
                pending = 0;
                CHECK(ctx.pending_instant_count() == 0);
            } else {
                ctx.append_entry(entry(EntryKind::instant, i));
                ++pending;
            }
            CHECK(ctx.visible().size() <=
                  static_cast<std::size_t>(reasoning_commits + M));
        }
    }
}

TEST_CASE("session spec: prior section is optional and injected verbatim") {
    KnobSet set = shipped().resolve_named_set("default8");
    TuningGoal goal{"p99_ms", Direction::minimize, {"package_power_w < 60 W"}};
    auto cold = build_session_spec(goal, set, "explore then exploit", std::nullopt);
    CHECK_FALSE(cold.memory_prior.has_value());
    auto warm = build_session_spec(goal, set, "explore then exploit",
                                   std::string("cstate_max=C1 improved p99 on similar hosts"));
    REQUIRE(warm.memory_prior.has_value());

    const ResponseSchema schema(set, false);
    PerIterationUpdate update;
    update.current_config = "x=1";
    update.latest = "p99_ms=12.21";
    auto cold_prompt = render_prompt(cold, update, schema);
    auto warm_prompt = render_prompt(warm, update, schema);
    CHECK(cold_prompt.text.find("Prior:") == std::string::npos);
    CHECK(warm_prompt.text.find("Prior: cstate_max=C1 improved p99 on similar hosts") !=
          std::string::npos);

    auto again = build_session_spec(goal, set, "explore then exploit", std::nullopt);
    CHECK(render_prompt(again, update, schema).text == cold_prompt.text);
}

TEST_CASE("render_prompt: trace renders visible entries most-recent-last") {
    KnobSet set = shipped().resolve_named_set("default8");
    Configuration cfg = default_configuration(set);
    SharedContext ctx;
    ContextEntry r1 = entry(EntryKind::reasoning, 3);
    ctx.commit_reasoning(r1);
    ctx.commit_reasoning(entry(EntryKind::reasoning, 6));
    ctx.append_entry(entry(EntryKind::instant, 7));
    ctx.append_entry(entry(EntryKind::instant, 8));

    MeasurementRecord rec;
    rec.system.window_seconds = 5;
    PerIterationUpdate update = build_update(set, cfg, rec, ctx);
    REQUIRE(update.trace_suffix.size() == 4);
    CHECK(update.trace_suffix[0].find("[R w3]") != std::string::npos);
    CHECK(update.trace_suffix[3].find("[I w8]") != std::string::npos);

    // Suffix length caps the rendered trace.
    PerIterationUpdate capped = build_update(set, cfg, rec, ctx, 2);
    REQUIRE(capped.trace_suffix.size() == 2);
    CHECK(capped.trace_suffix[0].find("[I w7]") != std::string::npos);
}

TEST_CASE("prompt templates are frozen under golden files") {
    KnobSet set = shipped().resolve_named_set("default8");
    const ResponseSchema schema(set, false);
    TuningGoal goal{"p99_ms", Direction::minimize, {"package_power_w < 60 W"}};

    SessionSpecification cold = build_session_spec(
        goal, set, "early windows: explore; later: exploit; noise-aware", std::nullopt);
    PerIterationUpdate empty_update;
    empty_update.current_config = "min_granularity_ns=3000000, latency_ns=24000000";
    empty_update.latest = "p99_ms=31.6 ±1.6%; reward=31.6; ipc=0.96; pkg_w=62.2";
    const std::string cold_text = render_prompt(cold, empty_update, schema).text;

    SessionSpecification warm = cold;
    warm.memory_prior = "cstate_max=C1 improved p99; min_granularity_ns below 100us unstable";
    SharedContext ctx;
    ContextEntry r1;
    r1.kind = EntryKind::reasoning;
    r1.iteration = 3;
    r1.action = {{"cstate_max", KnobValue::of_token("C1")}};
    r1.config_after = 3;
    r1.measurement_summary = "p99_ms=11.4; ipc=1.62; pkg_w=58.1";
    r1.justification = "hold the shallow-idle region";
    ctx.commit_reasoning(r1);
    ContextEntry i0;
    i0.kind = EntryKind::instant;
    i0.iteration = 4;
    i0.config_after = 3;
    i0.measurement_summary = "p99_ms=11.5; ipc=1.60; pkg_w=58.0";
    i0.justification = "hold";
    ctx.append_entry(i0);
    PerIterationUpdate traced = empty_update;
    for (const auto& e : ctx.visible())
        traced.trace_suffix.push_back(render_entry(e));
    const std::string warm_text = render_prompt(warm, traced, schema).text;

    const std::string golden_dir = KNOBTUNE_GOLDEN_DIR;
    CHECK(cold_text == read_file(golden_dir + "/prompt_cold.txt"));
    CHECK(warm_text == read_file(golden_dir + "/prompt_warm.txt"));
}

TEST_CASE("empty trace renders an empty section; schema lists every knob") {
    KnobSet set = shipped().resolve_named_set("default8");
    const ResponseSchema schema(set, false);
    SessionSpecification spec = build_session_spec({"p99_ms", Direction::minimize, {}}, set,
                                                   "s", std::nullopt);
    PerIterationUpdate update;
    auto prompt_and_schema = render_prompt(spec, update, schema);
    const auto j = nlohmann::json::parse(prompt_and_schema.schema_descriptor);
    const auto& fields = j["properties"]["updates"]["properties"];
    CHECK(fields.size() == 8);
    CHECK(fields.contains("latency_ns"));
    CHECK(j["properties"].contains("justification"));
    CHECK(j["properties"].contains("converged"));
}

TEST_SUITE_END();
