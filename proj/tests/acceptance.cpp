// Acceptance suite: one check per shipped guarantee, each printed as a
// single PASS/FAIL line with its runtime. Exit code 0 iff everything holds.

#include "knobtune/backend.hpp"
#include "knobtune/context.hpp"
#include "knobtune/errors.hpp"
#include "knobtune/evalmetrics.hpp"
#include "knobtune/gateway.hpp"
#include "knobtune/guardrail.hpp"
#include "knobtune/kvdoc.hpp"
#include "knobtune/memory.hpp"
#include "knobtune/registry.hpp"
#include "knobtune/session.hpp"
#include "knobtune/simhost.hpp"
#include "knobtune/telemetry.hpp"
#include "knobtune/tuner.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <vector>

using namespace knobtune;

namespace {

const std::string kData = KNOBTUNE_DATA_DIR;

struct Checker {
    std::ostringstream log;
    int failures = 0;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            ++failures;
            log << "    failed: " << what << "\n";
        }
    }
};

std::string fresh_dir(const std::string& name) {
    const std::string dir =
        (std::filesystem::temp_directory_path() / ("knobtune_accept_" + name)).string();
    std::filesystem::remove_all(dir);
    return dir;
}

Registry& shipped() {
    static Registry reg = Registry::load_file(kData + "/knobs.catalog");
    return reg;
}

SessionConfig base_config(const std::string& surface, const std::string& set,
                          const std::string& out, std::uint64_t seed) {
    SessionConfig cfg;
    cfg.catalog_path = kData + "/knobs.catalog";
    cfg.knob_set = set;
    cfg.channel = RewardChannel::parse("app:p99_ms:min");
    cfg.surface_path = kData + "/surfaces/" + surface;
    cfg.seed = seed;
    cfg.output_dir = out;
    return cfg;
}

void add_scripted(SessionConfig& cfg, const std::string& script) {
    ModelEndpoint ep;
    ep.backend = "scripted";
    ep.script_path = kData + "/scripts/" + script;
    cfg.endpoints[ModelRole::instant] = ep;
    cfg.endpoints[ModelRole::reasoning] = ep;
}

std::vector<MeasurementRecord> load_measurements(const std::string& dir) {
    std::vector<MeasurementRecord> out;
    std::ifstream in(dir + "/measurements.jsonl");
    std::string line;
    while (std::getline(in, line))
        out.push_back(MeasurementRecord::from_json(nlohmann::json::parse(line)));
    return out;
}

// ---------------------------------------------------------------------------
// Criterion 1: improvement oracle against the reference per-benchmark table.

struct TableRow {
    const char* benchmark;
    Direction direction;
    const char* dflt[2];  // tuning, stable raw (printed strings keep precision)
    // six tuners x (tuning raw, tuning pct, stable raw, stable pct)
    const char* cells[6][4];
};

// Reference results: raw phase metrics and their printed improvement
// percents for 13 workloads under 6 tuners (semantic dual-loop, trim
// variant, four classical baselines). Raw cells carry one decimal of
// display precision, which bounds how exactly the percents re-derive.
const TableRow kTable[] = {
    {"Masstree", Direction::minimize, {"27.9", "23.3"},
     {{"1.3", "2052.7", "1.1", "2096.6"}, {"5.9", "373.8", "3.1", "655.6"},
      {"3.6", "673.6", "1.7", "1251.5"}, {"4.6", "500.1", "3.1", "661.1"},
      {"3.7", "662.6", "3.0", "671.2"}, {"5.4", "411.4", "5.3", "339.4"}}},
    {"SIbench", Direction::minimize, {"3.4", "3.6"},
     {{"2.9", "17.7", "3.3", "10.1"}, {"3.2", "9.0", "2.8", "26.7"},
      {"3.4", "2.0", "3.2", "11.7"}, {"3.6", "-3.4", "3.5", "1.6"},
      {"3.7", "-7.4", "4.1", "-13.0"}, {"3.6", "-5.3", "3.8", "-6.4"}}},
    {"Silo", Direction::minimize, {"25.4", "22.6"},
     {{"2.8", "820.4", "1.2", "1724.3"}, {"11.6", "118.7", "6.1", "269.1"},
      {"5.4", "372.4", "4.1", "457.2"}, {"10.0", "153.7", "8.4", "169.0"},
      {"9.4", "168.6", "8.4", "170.2"}, {"12.0", "111.6", "11.9", "90.3"}}},
    {"Sphinx", Direction::maximize, {"8.2", "7.9"},
     {{"7.3", "-10.9", "7.7", "-3.3"}, {"7.8", "-4.3", "6.9", "-13.1"},
      {"7.5", "-8.0", "8.0", "0.8"}, {"6.6", "-19.7", "7.5", "-5.3"},
      {"6.9", "-15.7", "6.9", "-13.2"}, {"7.2", "-12.6", "6.8", "-13.6"}}},
    {"Sys-CPU", Direction::maximize, {"941.5", "941.5"},
     {{"933.8", "-0.8", "936.9", "-0.5"}, {"843.3", "-10.4", "764.4", "-18.8"},
      {"847.9", "-9.9", "898.1", "-4.6"}, {"672.7", "-28.5", "792.8", "-15.8"},
      {"827.3", "-12.1", "824.0", "-12.5"}, {"795.6", "-15.5", "775.5", "-17.6"}}},
    {"Sys-OLTP-RW", Direction::minimize, {"22.7", "23.4"},
     {{"15.5", "46.6", "15.8", "47.9"}, {"22.7", "0.0", "21.3", "9.8"},
      {"20.1", "13.3", "25.2", "-7.2"}, {"28.4", "-20.0", "21.4", "9.3"},
      {"21.3", "6.5", "21.9", "6.7"}, {"33.8", "-32.7", "37.2", "-37.2"}}},
    {"TPC-C", Direction::minimize, {"78.4", "77.7"},
     {{"67.4", "16.3", "66.1", "17.5"}, {"63.6", "23.3", "58.0", "34.0"},
      {"76.4", "2.7", "80.9", "-4.0"}, {"124.1", "-36.8", "95.6", "-18.8"},
      {"202.5", "-61.3", "204.5", "-62.0"}, {"156.0", "-49.7", "206.5", "-62.4"}}},
    {"Twitter", Direction::minimize, {"0.7", "0.6"},
     {{"0.6", "5.7", "0.6", "6.5"}, {"0.6", "3.8", "0.6", "3.5"},
      {"0.6", "2.9", "0.6", "8.8"}, {"1.2", "-43.6", "0.9", "-26.5"},
      {"0.8", "-21.9", "0.9", "-24.1"}, {"1.5", "-54.6", "1.5", "-57.9"}}},
    {"Wikipedia", Direction::minimize, {"40.9", "41.7"},
     {{"35.1", "16.7", "37.5", "11.1"}, {"24.0", "70.8", "19.4", "114.5"},
      {"36.3", "12.8", "34.4", "21.2"}, {"23.8", "71.7", "18.7", "122.9"},
      {"22.0", "86.1", "20.6", "101.9"}, {"24.4", "67.9", "27.5", "51.7"}}},
    {"Xapian", Direction::minimize, {"52.6", "49.1"},
     {{"42.3", "24.4", "38.6", "27.2"}, {"7536.3", "-99.3", "46472.9", "-99.9"},
      {"24770.8", "-99.8", "80620.6", "-99.9"}, {"26028.0", "-99.8", "70548.7", "-99.9"},
      {"5747.6", "-99.1", "15323.0", "-99.7"}, {"26794.6", "-99.8", "88112.7", "-99.9"}}},
    {"YCSB", Direction::minimize, {"4.8", "5.5"},
     {{"5.0", "-4.5", "5.6", "-1.9"}, {"5.4", "-11.2", "6.2", "-11.4"},
      {"5.3", "-9.8", "6.1", "-9.9"}, {"6.7", "-28.7", "6.3", "-13.5"},
      {"5.3", "-8.9", "6.1", "-9.7"}, {"9.5", "-49.3", "10.2", "-46.4"}}},
    {"Memcached", Direction::minimize, {"1.5", "1.4"},
     {{"1.7", "-15.2", "1.4", "0.3"}, {"16.4", "-91.1", "25.2", "-94.3"},
      {"18.6", "-92.2", "11.3", "-87.3"}, {"23.6", "-93.8", "14.4", "-90.0"},
      {"30.6", "-95.2", "27.8", "-94.9"}, {"36.9", "-96.1", "40.0", "-96.4"}}},
    {"Sparkbench", Direction::maximize, {"336.7", "342.7"},
     {{"365.9", "8.7", "363.3", "6.0"}, {"357.0", "6.0", "342.7", "0.0"},
      {"331.9", "-1.4", "313.2", "-8.6"}, {"318.0", "-5.5", "340.2", "-0.7"},
      {"318.4", "-5.4", "331.4", "-3.3"}, {"307.3", "-8.7", "315.3", "-8.0"}}},
};

int significant_digits(const std::string& printed) {
    int count = 0;
    bool leading = true;
    for (char c : printed) {
        if (!isdigit(static_cast<unsigned char>(c)))
            continue;
        if (c == '0' && leading)
            continue;
        leading = false;
        ++count;
    }
    return count;
}

void criterion_1(Checker& check) {
    int qualifying = 0;
    for (const TableRow& row : kTable) {
        for (int tuner = 0; tuner < 6; ++tuner) {
            for (int phase = 0; phase < 2; ++phase) {
                const std::string dflt = row.dflt[phase];
                const std::string raw = row.cells[tuner][phase * 2];
                const double printed_pct = std::stod(row.cells[tuner][phase * 2 + 1]);
                // The printed table rounds raw cells to one decimal; only
                // pairs carrying at least 3 significant digits on both sides
                // pin the percentage within display-rounding tolerance.
                if (std::min(significant_digits(dflt), significant_digits(raw)) < 3)
                    continue;
                ++qualifying;
                const double computed =
                    improvement_pct(std::stod(dflt), std::stod(raw), row.direction);
                const double pct_rel = std::abs(computed - printed_pct) /
                                       std::max(std::abs(printed_pct), 1e-12);
                const double factor_rel =
                    std::abs((1.0 + computed / 100.0) - (1.0 + printed_pct / 100.0)) /
                    std::abs(1.0 + printed_pct / 100.0);
                check.require(std::min(pct_rel, factor_rel) <= 0.015,
                              std::string(row.benchmark) + " tuner " + std::to_string(tuner) +
                                  " phase " + std::to_string(phase) + ": computed " +
                                  std::to_string(computed) + " vs printed " +
                                  std::to_string(printed_pct));
            }
        }
    }
    check.require(qualifying == 76, "expected 76 qualifying cells, saw " +
                                        std::to_string(qualifying));

    // Pinned cells: the semantic tuner's Masstree tuning pair reproduces the
    // printed percent within 1.5% relative even at two significant digits,
    // and the Sparkbench tuning cell rounds to +8.7 exactly.
    const double masstree = improvement_pct(27.9, 1.3, Direction::minimize);
    check.require(std::abs(masstree - 2052.7) / 2052.7 <= 0.015,
                  "Masstree tuning cell off: " + std::to_string(masstree));
    const double spark = improvement_pct(336.7, 365.9, Direction::maximize);
    check.require(std::round(spark * 10.0) / 10.0 == 8.7,
                  "Sparkbench tuning cell rounds to " + std::to_string(spark));
}

// ---------------------------------------------------------------------------
// Criterion 2: robustness formulas against brute-force oracles.

double oracle_two_pass_stdev(const std::vector<double>& v) {
    double mean = 0.0;
    for (double x : v)
        mean += x;
    mean /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v)
        ss += (x - mean) * (x - mean);
    return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

double oracle_sorted_percentile(std::vector<double> v, double p) {
    std::sort(v.begin(), v.end());
    const double rank = p * (static_cast<double>(v.size()) - 1.0);
    const auto lo = static_cast<std::size_t>(rank);
    if (lo + 1 >= v.size())
        return v.back();
    return v[lo] + (rank - static_cast<double>(lo)) * (v[lo + 1] - v[lo]);
}

bool close_rel(double a, double b, double tol) {
    if (a == b)
        return true;
    return std::abs(a - b) <= tol * std::max(std::abs(a), std::abs(b));
}

void criterion_2(Checker& check) {
    std::mt19937_64 rng(20260808);
    std::uniform_real_distribution<double> u(0.25, 4.0);
    for (int trial = 0; trial < 1000; ++trial) {
        RerunSet rs;
        rs.direction = trial % 2 ? Direction::minimize : Direction::maximize;
        rs.mu_fixed = u(rng);
        const int reruns = 1 + static_cast<int>(rng() % 8);
        std::vector<double> fractions;
        double oracle_var = 0.0;
        for (int r = 0; r < reruns; ++r) {
            std::vector<double> trace;
            const int n = 2 + static_cast<int>(rng() % 29);
            for (int w = 0; w < n; ++w)
                trace.push_back(u(rng));
            int bad = 0;
            for (double v : trace)
                bad += rs.direction == Direction::minimize ? v > rs.mu_fixed : v < rs.mu_fixed;
            fractions.push_back(static_cast<double>(bad) / static_cast<double>(n));
            oracle_var += oracle_two_pass_stdev(trace) / std::abs(rs.mu_fixed) * 100.0;
            rs.reruns.push_back(std::move(trace));
        }
        oracle_var /= static_cast<double>(reruns);
        const auto rates = bad_window_rates(rs);
        if (!close_rel(variability_pct(rs), oracle_var, 1e-9) ||
            !close_rel(rates.p50, oracle_sorted_percentile(fractions, 0.5), 1e-9) ||
            !close_rel(rates.p10, oracle_sorted_percentile(fractions, 0.1), 1e-9)) {
            check.require(false, "trial " + std::to_string(trial) + " diverged from oracle");
            return;
        }
    }
    check.require(true, "");
}

// ---------------------------------------------------------------------------
// Criterion 3: guardrail safety suite.

void criterion_3(Checker& check) {
    KnobSet set = shipped().resolve_named_set("default8");
    SimBackend backend;
    CpuMask mask = parse_cpu_mask("0-9");
    for (const auto& m : set.members()) {
        if (m.scope == KnobScope::per_cpu) {
            for (const auto& [p, v] : Guardrail::expand_per_cpu(m, m.default_value, mask))
                backend.preload(p, v);
        } else {
            backend.preload(m.actuation_path, m.default_value.raw());
        }
    }
    Guardrail guard(set, mask, backend);
    Configuration current = default_configuration(set);
    SessionPolicy policy;

    // (a) the two recorded DVFS inversion vectors reject as dependency
    // violations on both members.
    for (auto [mn, mx] : {std::pair<int, int>{70, 10}, std::pair<int, int>{63, 3}}) {
        Proposal p;
        p.updates = {{"min_perf_pct", KnobValue::of_int(mn)},
                     {"max_perf_pct", KnobValue::of_int(mx)}};
        auto v = guard.validate(p, current, policy);
        check.require(v.accepted.empty(), "inversion vector partially accepted");
        check.require(v.rejections.size() == 2, "inversion vector rejection count");
        for (const auto& r : v.rejections)
            check.require(r.reason == RejectReason::dependency_violation,
                          "inversion vector wrong reason: " + to_string(r.reason));
    }

    // (b) per-cpu expansion over cpus 0..9 yields exactly 10 ordered writes.
    const KnobSpec* cstate = set.find("cstate_max");
    auto writes = Guardrail::expand_per_cpu(*cstate, KnobValue::of_token("C1"), mask);
    check.require(writes.size() == 10, "expansion write count");
    for (int cpu = 0; cpu < 10 && cpu < static_cast<int>(writes.size()); ++cpu)
        check.require(writes[cpu].first.find("cpu" + std::to_string(cpu) + "/") !=
                          std::string::npos,
                      "expansion order at cpu " + std::to_string(cpu));

    // (c) randomized mid-batch write-failure injection.
    std::mt19937_64 rng(333);
    const std::vector<std::string> cstates{"C0", "C1", "C1E", "C6"};
    for (int trial = 0; trial < 600; ++trial) {
        std::map<std::string, KnobValue> accepted;
        accepted["cstate_max"] = KnobValue::of_token(cstates[rng() % 4]);
        if (rng() % 2)
            accepted["latency_ns"] =
                KnobValue::of_int(1000000 * (1 + static_cast<std::int64_t>(rng() % 100)));
        if (rng() % 2)
            accepted["min_perf_pct"] = KnobValue::of_int(static_cast<std::int64_t>(rng() % 101));
        std::size_t total_writes = 0;
        for (const auto& [k, _] : accepted)
            total_writes += set.find(k)->scope == KnobScope::per_cpu ? mask.size() : 1;
        const auto before = backend.state();
        backend.fail_after(static_cast<int>(rng() % total_writes));
        auto rec = guard.apply(accepted, current, "trial");
        backend.clear_faults();
        if (rec.ok() || backend.state() != before) {
            check.require(false, "trial " + std::to_string(trial) + ": state not restored");
            return;
        }
    }
    check.require(true, "");
}

// ---------------------------------------------------------------------------
// Criterion 4: context lifecycle.

void criterion_4(Checker& check) {
    // The dual-loop figure's schedule. The strategy bootstrap R0 runs on an
    // empty context and leaves no entry; R1 and R2 are ordinary commits.
    SharedContext ctx;
    auto instant = [&](int w) {
        ContextEntry e;
        e.kind = EntryKind::instant;
        e.iteration = w;
        ctx.append_entry(e);
    };
    auto reasoning = [&](int w) {
        ContextEntry e;
        e.kind = EntryKind::reasoning;
        e.iteration = w;
        ctx.commit_reasoning(e);
    };
    // R0 (bootstrap, no entry); I0.0-I0.2; R1; I1.0-I1.2; R2; I2.0-I2.1.
    instant(1);
    instant(2);
    instant(3);
    reasoning(3);
    instant(4);
    instant(5);
    instant(6);
    reasoning(6);
    instant(7);
    instant(8);
    const auto visible = ctx.visible();
    check.require(visible.size() == 4, "visible size at the I2.2 request point");
    if (visible.size() == 4) {
        check.require(visible[0].kind == EntryKind::reasoning && visible[0].iteration == 3,
                      "first visible entry is R1");
        check.require(visible[1].kind == EntryKind::reasoning && visible[1].iteration == 6,
                      "second visible entry is R2");
        check.require(visible[2].kind == EntryKind::instant && visible[2].iteration == 7,
                      "third visible entry is I2.0");
        check.require(visible[3].kind == EntryKind::instant && visible[3].iteration == 8,
                      "fourth visible entry is I2.1");
    }

    // Property over random interleavings: instants never survive a commit
    // and the visible size is bounded by commits + per-phase instants.
    std::mt19937_64 rng(44);
    for (int trial = 0; trial < 10000; ++trial) {
        SharedContext c;
        const int M = 1 + static_cast<int>(rng() % 6);
        int commits = 0, pending = 0;
        const int ops = 1 + static_cast<int>(rng() % 30);
        for (int i = 0; i < ops; ++i) {
            if (pending >= M || (pending > 0 && rng() % 3 == 0)) {
                ContextEntry e;
                e.kind = EntryKind::reasoning;
                e.iteration = i;
                c.commit_reasoning(e);
                ++commits;
                pending = 0;
                if (c.pending_instant_count() != 0) {
                    check.require(false, "instants survived a reasoning commit");
                    return;
                }
            } else {
                ContextEntry e;
                e.kind = EntryKind::instant;
                e.iteration = i;
                c.append_entry(e);
                ++pending;
            }
            if (c.visible().size() > static_cast<std::size_t>(commits + M)) {
                check.require(false, "visible size exceeded R + M");
                return;
            }
        }
    }
    check.require(true, "");
}

// ---------------------------------------------------------------------------
// Criterion 5: end-to-end sim convergence on quadratic8, five seeds.

void criterion_5(Checker& check) {
    ResponseSurface surface =
        ResponseSurface::load_file(kData + "/surfaces/quadratic8.surface", shipped());
    KnobSet set = shipped().resolve_named_set("default8");
    const Configuration dflt = default_configuration(set);
    const double default_value = surface.value_noise_free(set, dflt);
    auto oracle = oracle_optimum(surface, set);
    const double oracle_improvement =
        improvement_pct(default_value, oracle.value, surface.direction());

    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        SessionConfig cfg = base_config("quadratic8.surface", "default8",
                                        fresh_dir("c5_" + std::to_string(seed)), seed);
        add_scripted(cfg, "quadratic8_dual.jsonl");
        Session session(cfg);
        SessionReport report = session.run();

        const double achieved =
            improvement_pct(default_value, report.stable_mean, surface.direction());
        check.require(achieved >= 0.9 * oracle_improvement,
                      "seed " + std::to_string(seed) + ": achieved " +
                          std::to_string(achieved) + "% of oracle " +
                          std::to_string(oracle_improvement) + "%");

        // Best configuration must be reached within the tuning windows and
        // held: commit_id constant across all 20 stable windows.
        std::ifstream in(cfg.output_dir + "/decisions.jsonl");
        std::string line;
        std::int64_t stable_commit = -1;
        bool constant = true;
        while (std::getline(in, line)) {
            const auto j = nlohmann::json::parse(line);
            if (j["phase"] != "stable")
                continue;
            const std::int64_t id = j["commit_id"].get<std::int64_t>();
            if (stable_commit < 0)
                stable_commit = id;
            constant = constant && id == stable_commit;
        }
        check.require(constant && stable_commit >= 0,
                      "seed " + std::to_string(seed) + ": stable-phase commit id drifted");
    }
}

// ---------------------------------------------------------------------------
// Criterion 6: metastable-trap contrast, ten seeds per tuner.

void criterion_6(Checker& check) {
    ResponseSurface surface =
        ResponseSurface::load_file(kData + "/surfaces/trap8.surface", shipped());
    const int recovery = surface.trap()->recovery_windows;

    int blind_entries = 0;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        SessionConfig cfg = base_config("trap8.surface", "default8",
                                        fresh_dir("c6_hc_" + std::to_string(seed)), seed);
        cfg.mode = SessionMode::baseline;
        cfg.baseline_name = "hillclimb";
        Session session(cfg);
        session.run();
        const auto records = load_measurements(cfg.output_dir);
        int streak = 0, longest = 0;
        bool entered = false;
        for (const auto& r : records) {
            const bool trapped = r.extra.count("sim_in_trap") && r.extra.at("sim_in_trap") == 1.0;
            entered = entered || trapped;
            streak = trapped ? streak + 1 : 0;
            longest = std::max(longest, streak);
        }
        if (entered) {
            ++blind_entries;
            check.require(longest >= recovery,
                          "seed " + std::to_string(seed) + ": trap streak " +
                              std::to_string(longest) + " < recovery " +
                              std::to_string(recovery));
        }
    }
    check.require(blind_entries >= 3, "hill climb entered the trap in only " +
                                          std::to_string(blind_entries) + "/10 seeds");

    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        SessionConfig cfg = base_config("trap8.surface", "default8",
                                        fresh_dir("c6_sem_" + std::to_string(seed)), seed);
        add_scripted(cfg, "trap8_semantic.jsonl");
        Session session(cfg);
        session.run();
        for (const auto& r : load_measurements(cfg.output_dir)) {
            if (r.extra.count("sim_in_trap") && r.extra.at("sim_in_trap") == 1.0) {
                check.require(false,
                              "semantic tuner entered the trap at seed " + std::to_string(seed));
                return;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Criterion 7: proxy-misleading surface.

void criterion_7(Checker& check) {
    ResponseSurface surface =
        ResponseSurface::load_file(kData + "/surfaces/proxy_mislead8.surface", shipped());
    KnobSet set = shipped().resolve_named_set("default8");
    const SignalModel* ipc = surface.signal("ipc");
    check.require(ipc != nullptr, "surface lacks the ipc signal");
    if (!ipc)
        return;

    // Oracle-verified: the two arg-optima differ.
    auto app_opt = oracle_optimum(surface, set);
    auto ipc_opt = oracle_optimum_signal(surface, *ipc, set);
    check.require(app_opt.config.assignments != ipc_opt.config.assignments,
                  "arg-optima coincide");
    check.require(surface.steady_state_value(set, ipc_opt.config) >
                      surface.steady_state_value(set, app_opt.config),
                  "ipc arg-optimum is not worse on the app metric");

    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        auto run_channel = [&](const std::string& channel, const std::string& tag) {
            SessionConfig cfg =
                base_config("proxy_mislead8.surface", "default8",
                            fresh_dir("c7_" + tag + "_" + std::to_string(seed)), seed);
            cfg.channel = RewardChannel::parse(channel);
            cfg.mode = SessionMode::baseline;
            cfg.baseline_name = "hillclimb";
            Session session(cfg);
            session.run();
            const auto records = load_measurements(cfg.output_dir);
            double mean = 0.0;
            int n = 0;
            for (const auto& r : records) {
                if (r.window_index < 30)
                    continue;
                mean += r.app->values.at("p99_ms");
                ++n;
            }
            return mean / n;
        };
        const double app_tuned = run_channel("app:p99_ms:min", "app");
        const double ipc_tuned = run_channel("proxy:ipc:max", "ipc");
        check.require(ipc_tuned > app_tuned,
                      "seed " + std::to_string(seed) + ": ipc-tuned stable p99 " +
                          std::to_string(ipc_tuned) + " not strictly worse than app-tuned " +
                          std::to_string(app_tuned));
    }
}

// ---------------------------------------------------------------------------
// Criterion 8: trim handoff on coupled16, five seeds.

void criterion_8(Checker& check) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        SessionConfig trim_cfg = base_config("coupled16.surface", "dims16",
                                             fresh_dir("c8_trim_" + std::to_string(seed)), seed);
        trim_cfg.mode = SessionMode::trim_then_downstream;
        trim_cfg.baseline_name = "hillclimb";
        trim_cfg.loop.trim_windows = 10;
        ModelEndpoint ep;
        ep.backend = "scripted";
        ep.script_path = kData + "/scripts/coupled16_trim.jsonl";
        trim_cfg.endpoints[ModelRole::reasoning] = ep;
        Session trim_session(trim_cfg);
        SessionReport trim_report = trim_session.run();
        check.require(trim_report.trim.has_value(), "trim result missing");
        if (!trim_report.trim)
            return;

        // Every downstream commit stays inside the narrowed ranges: nothing
        // out-of-range ever escaped to actuation.
        KnobSet set = shipped().resolve_named_set("dims16");
        std::ifstream in(trim_cfg.output_dir + "/decisions.jsonl");
        std::string line;
        while (std::getline(in, line)) {
            const auto j = nlohmann::json::parse(line);
            for (const auto& ev : j["events"]) {
                if (ev.value("kind", "") != "decision" || ev.value("source", "") != "baseline")
                    continue;
                if (!ev.value("commit_ok", false))
                    continue;
                for (auto it = ev["verdict"]["accepted"].begin();
                     it != ev["verdict"]["accepted"].end(); ++it) {
                    auto range = trim_report.trim->narrowed.find(it.key());
                    if (range == trim_report.trim->narrowed.end())
                        continue;
                    const KnobSpec* spec = set.find(it.key());
                    const std::int64_t ord = spec->ordinal(KnobValue::from_json(it.value()));
                    check.require(ord >= range->second.lo && ord <= range->second.hi,
                                  "downstream commit escaped the narrowed range on " + it.key());
                }
            }
        }

        SessionConfig plain_cfg = base_config("coupled16.surface", "dims16",
                                              fresh_dir("c8_plain_" + std::to_string(seed)), seed);
        plain_cfg.mode = SessionMode::baseline;
        plain_cfg.baseline_name = "hillclimb";
        Session plain_session(plain_cfg);
        SessionReport plain_report = plain_session.run();

        check.require(trim_report.stable_mean <= plain_report.stable_mean,
                      "seed " + std::to_string(seed) + ": trimmed stable " +
                          std::to_string(trim_report.stable_mean) + " worse than plain " +
                          std::to_string(plain_report.stable_mean));
    }
}

// ---------------------------------------------------------------------------
// Criterion 9: memory retrieval and warm start.

void criterion_9(Checker& check) {
    // Exact retrieval against a brute-force cosine ranking over 100 runs.
    const std::string store_dir = fresh_dir("c9_store");
    auto embedder = make_hash_embedder();
    VectorStore store(store_dir);
    std::vector<RunRecord> runs;
    std::mt19937_64 rng(17);
    for (int i = 0; i < 100; ++i) {
        RunRecord run;
        run.run_id = "run" + std::to_string(i);
        run.goal = (rng() % 2 ? "minimize p99_ms workload " : "maximize tput workload ") +
                   std::to_string(rng() % 7);
        run.machine = rng() % 2 ? "sim-host" : "bare-metal";
        RunTraceStep step;
        step.window = 0;
        step.system = {{"ipc", 0.5 + (rng() % 300) / 100.0},
                       {"load", (rng() % 100) / 100.0}};
        step.app = 1.0 + (rng() % 500) / 10.0;
        run.trace.push_back(step);
        store_run(store, *embedder, run);
        runs.push_back(store.load(run.run_id));
    }
    for (int q = 0; q < 25; ++q) {
        const std::string query = "goal: minimize p99_ms workload " + std::to_string(q % 7) +
                                  "\nmachine: sim-host\nipc=" + std::to_string(0.5 + q * 0.1);
        const auto qv = embedder->embed(query);
        std::vector<std::pair<double, int>> scored;
        for (int i = 0; i < 100; ++i)
            scored.emplace_back(dot(qv, runs[i].embedding), i);
        std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first)
                return a.first > b.first;
            return a.second < b.second;
        });
        const auto got = retrieve(store, *embedder, query, 3);
        check.require(got.size() == 3, "retrieve returned fewer than k");
        for (int i = 0; i < 3 && i < static_cast<int>(got.size()); ++i) {
            if (got[i].run_id != runs[scored[i].second].run_id) {
                check.require(false, "query " + std::to_string(q) + " rank " +
                                         std::to_string(i) + " mismatch");
                return;
            }
        }
    }

    // A top3 session gains a Prior section from the second window onward.
    const std::string session_store = fresh_dir("c9_session_store");
    for (std::uint64_t seed : {31, 32}) {
        SessionConfig cfg = base_config("quadratic8.surface", "default8",
                                        fresh_dir("c9_fill_" + std::to_string(seed)), seed);
        add_scripted(cfg, "quadratic8_dual.jsonl");
        cfg.memory = MemoryMode::top3;
        cfg.memory_dir = session_store;
        cfg.run_id = "fill-" + std::to_string(seed);
        Session session(cfg);
        session.run();
    }
    SessionConfig warm = base_config("quadratic8.surface", "default8", fresh_dir("c9_warm"), 33);
    add_scripted(warm, "quadratic8_dual.jsonl");
    warm.memory = MemoryMode::top3;
    warm.memory_dir = session_store;
    warm.run_id = "warm";
    Session warm_session(warm);
    warm_session.run();
    check.require(read_file(warm.output_dir + "/prompts/w0_reasoning.txt").find("Prior:") ==
                      std::string::npos,
                  "bootstrap request was not cold");
    bool later_prompts = false;
    for (const auto& entry : std::filesystem::directory_iterator(warm.output_dir + "/prompts")) {
        const std::string name = entry.path().filename().string();
        if (name.rfind("w0_", 0) == 0)
            continue;
        later_prompts = true;
        check.require(read_file(entry.path().string()).find("Prior:") != std::string::npos,
                      "prompt " + name + " lacks the Prior section");
    }
    check.require(later_prompts, "no post-warm-start prompts were issued");

    // Cold start on an empty store completes without a Prior section.
    SessionConfig cold = base_config("quadratic8.surface", "default8", fresh_dir("c9_cold"), 34);
    add_scripted(cold, "quadratic8_dual.jsonl");
    cold.memory = MemoryMode::top3;
    cold.memory_dir = fresh_dir("c9_empty_store");
    cold.run_id = "cold";
    Session cold_session(cold);
    cold_session.run();
    check.require(!std::filesystem::exists(cold.output_dir + "/prior.txt"),
                  "cold start produced a prior");
    check.require(read_file(cold.output_dir + "/prompts/w5_instant.txt").find("Prior:") ==
                      std::string::npos,
                  "cold-start prompt contains a Prior section");
}

// ---------------------------------------------------------------------------
// Criterion 10: restoration totality under fault injection.

void criterion_10(Checker& check) {
    int injections = 0;
    for (const std::string module : {"telemetry", "gateway", "actuation", "interrupt"}) {
        for (int window : {0, 2, 9, 17, 29, 38}) {
            SessionConfig cfg =
                base_config("quadratic8.surface", "default8",
                            fresh_dir("c10_" + module + "_" + std::to_string(window)), 13);
            add_scripted(cfg, "quadratic8_dual.jsonl");
            Session session(cfg);
            const auto initial = session.sim_backend()->state();
            std::atomic<bool> interrupt{false};
            SimBackend* backend = session.sim_backend();
            SessionHooks hooks;
            hooks.interrupt_flag = &interrupt;
            hooks.at_stage = [&, module, window](int w, const std::string& stage) {
                if (w != window)
                    return;
                if (module == "interrupt")
                    interrupt.store(true);
                if (module == "telemetry" && stage == "telemetry")
                    throw SessionError("injected telemetry fault");
                if (module == "gateway" && stage == "gateway")
                    throw SessionError("injected gateway fault");
                if (module == "actuation" && stage == "telemetry")
                    backend->throw_on_write(0);
            };
            session.set_hooks(hooks);
            try {
                session.run();
            } catch (const SessionAbort& abort) {
                check.require(abort.restore_ok, module + "@" + std::to_string(window) +
                                                    ": restore incomplete");
            }
            check.require(session.sim_backend()->state() == initial,
                          module + "@" + std::to_string(window) +
                              ": backend state differs from the session-start snapshot");
            ++injections;
        }
    }
    check.require(injections >= 20,
                  "only " + std::to_string(injections) + " injection points exercised");
}

// ---------------------------------------------------------------------------
// Criterion 11: replay determinism and tamper detection.

void criterion_11(Checker& check) {
    SessionConfig cfg = base_config("quadratic8.surface", "default8", fresh_dir("c11"), 41);
    add_scripted(cfg, "quadratic8_dual.jsonl");
    Session session(cfg);
    session.run();
    check.require(!replay_session(cfg.output_dir).has_value(), "clean replay diverged");

    // Single-byte mutation in the window-13 decision record.
    const std::string path = cfg.output_dir + "/decisions.jsonl";
    std::istringstream in(read_file(path));
    std::string line, rebuilt;
    int lineno = 0;
    while (std::getline(in, line)) {
        if (lineno == 13) {
            const auto at = line.find("commit_id\":");
            line[at + 11] = line[at + 11] == '9' ? '8' : '9';
        }
        rebuilt += line + "\n";
        ++lineno;
    }
    write_file(path, rebuilt);
    auto divergence = replay_session(cfg.output_dir);
    check.require(divergence.has_value() && *divergence == 13,
                  "tampered window not detected at index 13");

    // Memory-backed sessions replay against the frozen store copy.
    const std::string mem_store = fresh_dir("c11_store");
    SessionConfig fill = base_config("quadratic8.surface", "default8", fresh_dir("c11_fill"), 42);
    add_scripted(fill, "quadratic8_dual.jsonl");
    fill.memory = MemoryMode::top3;
    fill.memory_dir = mem_store;
    fill.run_id = "fill";
    Session(fill).run();
    SessionConfig warm = base_config("quadratic8.surface", "default8", fresh_dir("c11_warm"), 43);
    add_scripted(warm, "quadratic8_dual.jsonl");
    warm.memory = MemoryMode::top3;
    warm.memory_dir = mem_store;
    warm.run_id = "warm";
    Session(warm).run();
    check.require(!replay_session(warm.output_dir).has_value(),
                  "memory-backed session replay diverged");
}

struct Criterion {
    int id;
    const char* name;
    double budget_s;
    std::function<void(Checker&)> fn;
};

} // namespace

int main() {
    const std::vector<Criterion> criteria = {
        {1, "improvement oracle reproduces the reference per-benchmark table", 1.0, criterion_1},
        {2, "robustness formulas match brute-force oracles on 1000 trace sets", 10.0, criterion_2},
        {3, "guardrail safety: inversion vectors, per-cpu expansion, rollback", 30.0, criterion_3},
        {4, "context lifecycle: figure schedule and 10000 random interleavings", 10.0, criterion_4},
        {5, "sim convergence: >=90% of oracle improvement, held through stable", 60.0, criterion_5},
        {6, "metastable trap: blind search falls in, semantic script never does", 60.0, criterion_6},
        {7, "proxy misleading: ipc-channel tuning ends strictly worse on p99", 60.0, criterion_7},
        {8, "trim handoff: in-range downstream commits, no worse than plain", 90.0, criterion_8},
        {9, "memory retrieval: exact top-k, warm-start prior, cold start", 10.0, criterion_9},
        {10, "restoration totality under fault injection at module boundaries", 30.0, criterion_10},
        {11, "replay determinism and single-byte tamper detection", 10.0, criterion_11},
    };

    int failed = 0;
    for (const auto& c : criteria) {
        Checker check;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            c.fn(check);
        } catch (const std::exception& e) {
            check.require(false, std::string("unhandled exception: ") + e.what());
        }
        const double elapsed =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        check.require(elapsed < c.budget_s,
                      "runtime " + std::to_string(elapsed) + "s exceeds budget " +
                          std::to_string(c.budget_s) + "s");
        const bool ok = check.failures == 0;
        failed += ok ? 0 : 1;
        std::printf("%s criterion %2d (%6.2fs): %s\n", ok ? "PASS" : "FAIL", c.id, elapsed,
                    c.name);
        if (!ok)
            std::fputs(check.log.str().c_str(), stdout);
    }
    if (failed) {
        std::printf("%d of %zu criteria failed\n", failed, criteria.size());
        return 1;
    }
    std::printf("all %zu criteria pass\n", criteria.size());
    return 0;
}
