#include "knobtune/errors.hpp"
#include "knobtune/evalmetrics.hpp"
#include "knobtune/kvdoc.hpp"
#include "knobtune/memory.hpp"
#include "knobtune/registry.hpp"
#include "knobtune/session.hpp"

#include <atomic>
#include <csignal>
#include <iostream>

#include <CLI11.hpp>

namespace {

std::atomic<bool> g_interrupted{false};

void on_sigint(int) {
    g_interrupted.store(true);
}

struct GlobalFlags {
    std::string config;
    std::string output;
    std::int64_t seed = -1;
    std::string backend;  // linux | sim, overrides both telemetry and actuation
    bool dry_run = false;
};

knobtune::SessionConfig load_session_config(const GlobalFlags& flags) {
    if (flags.config.empty())
        throw knobtune::ConfigError("--config <file> is required");
    knobtune::SessionConfig cfg = knobtune::SessionConfig::load_file(flags.config);
    if (!flags.output.empty())
        cfg.output_dir = flags.output;
    if (flags.seed >= 0)
        cfg.seed = static_cast<std::uint64_t>(flags.seed);
    if (!flags.backend.empty()) {
        cfg.telemetry = flags.backend;
        cfg.actuation = flags.backend;
    }
    cfg.dry_run = flags.dry_run;
    cfg.validate();
    return cfg;
}

int run_tune(const GlobalFlags& flags, bool force_trim_mode) {
    knobtune::SessionConfig cfg = load_session_config(flags);
    if (force_trim_mode) {
        cfg.mode = knobtune::SessionMode::trim_then_downstream;
        if (cfg.baseline_name.empty())
            cfg.baseline_name = "hillclimb";
        cfg.validate();
    }
    knobtune::Session session(std::move(cfg));
    knobtune::SessionHooks hooks;
    hooks.interrupt_flag = &g_interrupted;
    session.set_hooks(hooks);
    std::signal(SIGINT, on_sigint);
    try {
        knobtune::SessionReport report = session.run();
        std::cout << "workload " << report.workload << " tuner " << report.mode_tag << " seed "
                  << report.seed << "\n";
        std::cout << "tuning mean " << report.tuning_mean << ", stable mean "
                  << report.stable_mean << " (" << knobtune::to_string(report.direction)
                  << ")\n";
        std::cout << "tokens in/out " << report.usage.input << "/" << report.usage.output;
        if (report.usage.cost)
            std::cout << ", cost " << *report.usage.cost;
        std::cout << "\nreport written to " << report.out_dir << "\n";
        if (!report.restore_ok) {
            std::cerr << "restore incomplete; residual paths:";
            for (const auto& p : report.restore_residual_paths)
                std::cerr << " " << p;
            std::cerr << "\n";
            return 4;
        }
        return 0;
    } catch (const knobtune::SessionAbort& abort) {
        std::cerr << abort.what() << "\n";
        if (!abort.restore_ok) {
            std::cerr << "restore incomplete\n";
            return 4;
        }
        std::cerr << "original settings restored\n";
        return 3;
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"host-side OS knob autotuner with a validated actuation path", "knobtune"};
    app.require_subcommand(1);

    GlobalFlags flags;
    app.add_option("--config", flags.config, "session config file");
    app.add_option("--output", flags.output, "output directory (overrides config)");
    app.add_option("--seed", flags.seed, "seed (overrides config)");
    app.add_option("--backend", flags.backend, "telemetry+actuation backend: linux or sim")
        ->check(CLI::IsMember({"linux", "sim"}));
    app.add_flag("--dry-run", flags.dry_run,
                 "run the full loop but never write to the host (validation still real)");

    auto* tune = app.add_subcommand("tune", "run one tuning session");
    tune->fallthrough();
    auto* trim = app.add_subcommand(
        "trim", "run a trimming session that hands off to a downstream optimizer");
    trim->fallthrough();

    auto* replay = app.add_subcommand("replay", "re-execute a recorded session and verify logs");
    std::string replay_dir;
    replay->add_option("dir", replay_dir, "session directory")->required();

    auto* report = app.add_subcommand("report", "aggregate session directories into CSV tables");
    std::vector<std::string> report_dirs;
    std::string report_out = "report";
    report->add_option("dirs", report_dirs, "session directories")->required();
    report->add_option("--out", report_out, "output directory for CSV files");

    auto* memory = app.add_subcommand("memory", "cross-run memory store maintenance");
    memory->require_subcommand(1);
    auto* memory_add = memory->add_subcommand("add", "store a finished session as a run record");
    std::string memory_dir = "memory";
    std::string memory_run_dir;
    memory_add->add_option("run_dir", memory_run_dir, "session directory")->required();
    memory_add->add_option("--store", memory_dir, "memory store directory");
    auto* memory_query = memory->add_subcommand("query", "rank stored runs against a query file");
    std::string query_file;
    std::size_t query_k = 3;
    memory_query->add_option("query_file", query_file, "text file with a bootstrap-style query")
        ->required();
    memory_query->add_option("--k", query_k, "number of neighbours");
    memory_query->add_option("--store", memory_dir, "memory store directory");

    auto* registry = app.add_subcommand("registry", "knob catalog inspection");
    registry->require_subcommand(1);
    std::string registry_file;
    auto* registry_list = registry->add_subcommand("list", "print the catalog");
    registry_list->add_option("file", registry_file, "catalog file")->required();
    auto* registry_validate =
        registry->add_subcommand("validate", "exit 0 when a catalog file is well-formed");
    registry_validate->add_option("file", registry_file, "catalog file")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (tune->parsed())
            return run_tune(flags, false);
        if (trim->parsed())
            return run_tune(flags, true);
        if (replay->parsed()) {
            auto divergence = knobtune::replay_session(replay_dir);
            if (divergence) {
                std::cerr << "replay diverged at window " << *divergence << "\n";
                return 1;
            }
            std::cout << "replay matches: decision and measurement logs identical\n";
            return 0;
        }
        if (report->parsed()) {
            std::vector<knobtune::SessionOutcome> outcomes;
            for (const auto& dir : report_dirs)
                outcomes.push_back(knobtune::load_session_outcome(dir));
            knobtune::emit_report(outcomes, report_out);
            std::cout << "wrote per_benchmark.csv, aggregate.csv, robustness.csv, windows.csv to "
                      << report_out << "\n";
            return 0;
        }
        if (memory_add->parsed()) {
            knobtune::SessionOutcome outcome = knobtune::load_session_outcome(memory_run_dir);
            knobtune::VectorStore store(memory_dir);
            auto embedder = knobtune::make_hash_embedder();
            // Rebuild a compact run record from the session logs.
            knobtune::RunRecord run;
            run.run_id = outcome.workload + "-" + std::to_string(outcome.seed) + "-" +
                         std::to_string(store.size());
            run.goal = (outcome.direction == knobtune::Direction::minimize ? "minimize "
                                                                           : "maximize ") +
                       outcome.workload;
            run.machine = "unknown";
            knobtune::RunTraceStep step;
            step.window = 0;
            if (!outcome.tuning_values.empty())
                step.app = outcome.tuning_values.front();
            run.trace.push_back(step);
            run.final_summary = "imported from " + memory_run_dir;
            knobtune::store_run(store, *embedder, std::move(run));
            std::cout << "stored; memory now holds " << store.size() << " runs\n";
            return 0;
        }
        if (memory_query->parsed()) {
            knobtune::VectorStore store(memory_dir);
            auto embedder = knobtune::make_hash_embedder();
            const auto hits =
                store.query(embedder->embed(knobtune::read_file(query_file)), query_k);
            for (const auto& h : hits)
                std::cout << h.run_id << " " << h.similarity << "\n";
            return 0;
        }
        if (registry_list->parsed()) {
            knobtune::Registry reg = knobtune::Registry::load_file(registry_file);
            std::cout << reg.to_catalog_text();
            return 0;
        }
        if (registry_validate->parsed()) {
            try {
                knobtune::Registry::load_file(registry_file);
            } catch (const std::exception& e) {
                std::cerr << "catalog invalid: " << e.what() << "\n";
                return 1;
            }
            std::cout << "catalog ok\n";
            return 0;
        }
    } catch (const knobtune::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const knobtune::SessionError& e) {
        std::cerr << "runtime error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
