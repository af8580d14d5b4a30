#include "knobtune/session.hpp"

#include "knobtune/errors.hpp"
#include "knobtune/kvdoc.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

namespace knobtune {

namespace fs = std::filesystem;

namespace {

std::string resolve(const std::string& base_dir, const std::string& path) {
    if (path.empty() || path.front() == '/')
        return path;
    return (fs::path(base_dir) / path).lexically_normal().string();
}

const char* kDefaultStrategy =
    "early windows: explore ranges and coupled knobs; from window 15 of 30: exploit the "
    "best region; treat single-window swings within the noise annotation as noise";

ModelEndpoint parse_endpoint(const KvRecord& r, const std::string& base_dir) {
    ModelEndpoint ep;
    ep.backend = r.require("backend");
    ep.base_url = r.get("base_url").value_or("");
    ep.model_name = r.get("model").value_or("");
    ep.temperature = r.get_double("temperature", 0.7);
    ep.api_key_env = r.get("api_key_env").value_or("");
    ep.timeout_s = r.get_double("timeout_s", 30.0);
    if (r.has("price_input_per_token"))
        ep.price_input_per_token = r.require_double("price_input_per_token");
    if (r.has("price_output_per_token"))
        ep.price_output_per_token = r.require_double("price_output_per_token");
    if (r.has("script"))
        ep.script_path = resolve(base_dir, r.require("script"));
    ep.latency_windows = static_cast<int>(r.get_int("latency_windows", 0));
    return ep;
}

} // namespace

SessionConfig SessionConfig::load_file(const std::string& path) {
    return from_document(load_kvdoc(path), fs::path(path).parent_path().string());
}

SessionConfig SessionConfig::from_document(const KvDocument& doc, const std::string& base_dir) {
    SessionConfig cfg;
    const auto sessions = doc.of_type("session");
    if (sessions.size() != 1)
        throw ConfigError("session config needs exactly one [session] record");
    const KvRecord& s = *sessions[0];
    cfg.catalog_path = resolve(base_dir, s.require("catalog"));
    cfg.knob_set = s.get("knob_set").value_or("default8");
    cfg.channel = RewardChannel::parse(s.get("reward").value_or("bundle"));

    const std::string mode = s.get("mode").value_or("dual");
    if (mode == "dual") {
        cfg.mode = SessionMode::dual;
    } else if (mode == "single_instant") {
        cfg.mode = SessionMode::single_instant;
    } else if (mode == "single_reasoning") {
        cfg.mode = SessionMode::single_reasoning;
    } else if (mode == "trim") {
        cfg.mode = SessionMode::trim_then_downstream;
        cfg.baseline_name = s.get("downstream").value_or("hillclimb");
    } else if (mode.rfind("baseline:", 0) == 0) {
        cfg.mode = SessionMode::baseline;
        cfg.baseline_name = mode.substr(9);
    } else {
        throw ConfigError("[session] mode: unknown value '" + mode + "'");
    }

    const std::string memory = s.get("memory").value_or("off");
    if (memory == "off") cfg.memory = MemoryMode::off;
    else if (memory == "top1") cfg.memory = MemoryMode::top1;
    else if (memory == "top3") cfg.memory = MemoryMode::top3;
    else throw ConfigError("[session] memory: unknown value '" + memory + "'");
    if (s.has("memory_dir"))
        cfg.memory_dir = resolve(base_dir, s.require("memory_dir"));
    cfg.memory_exclude_prefix = s.get("memory_exclude_prefix").value_or("");
    cfg.embedder = s.get("embedder").value_or("hash");
    cfg.embedder_url = s.get("embedder_url").value_or("");
    cfg.embedder_model = s.get("embedder_model").value_or("");
    cfg.embedder_key_env = s.get("embedder_key_env").value_or("");

    cfg.telemetry = s.get("telemetry").value_or("sim");
    cfg.actuation = s.get("actuation").value_or("sim");
    if (s.has("surface"))
        cfg.surface_path = resolve(base_dir, s.require("surface"));
    cfg.cpu_mask = parse_cpu_mask(s.get("cpu_mask").value_or("0-9"));
    cfg.seed = static_cast<std::uint64_t>(s.get_int("seed", 1));
    cfg.loop.tuning_windows = static_cast<int>(s.get_int("tuning_windows", 30));
    cfg.loop.stable_windows = static_cast<int>(s.get_int("stable_windows", 20));
    cfg.loop.trim_windows = static_cast<int>(s.get_int("trim_windows", 10));
    cfg.loop.instant_every_windows = static_cast<int>(s.get_int("instant_every_windows", 1));
    cfg.loop.reasoning_min_pending = static_cast<int>(s.get_int("reasoning_min_pending", 3));
    cfg.loop.convergence_quiet_windows =
        static_cast<int>(s.get_int("convergence_quiet_windows", 3));
    cfg.loop.trace_suffix_len = static_cast<std::size_t>(s.get_int("trace_suffix", 8));
    cfg.window_seconds = s.get_double("window_seconds", 5.0);
    cfg.machine = s.get("machine").value_or("sim-host");
    if (auto c = s.get("goal_constraints")) {
        std::istringstream in(*c);
        std::string part;
        while (std::getline(in, part, ';')) {
            while (!part.empty() && part.front() == ' ')
                part.erase(part.begin());
            if (!part.empty())
                cfg.goal_constraints.push_back(part);
        }
    }
    cfg.strategy_text = s.get("strategy").value_or(kDefaultStrategy);
    if (s.has("output"))
        cfg.output_dir = resolve(base_dir, s.require("output"));
    cfg.run_id = s.get("run_id").value_or("");

    for (const auto& r : doc.records) {
        if (r.type == "endpoint instant") {
            cfg.endpoints[ModelRole::instant] = parse_endpoint(r, base_dir);
        } else if (r.type == "endpoint reasoning") {
            cfg.endpoints[ModelRole::reasoning] = parse_endpoint(r, base_dir);
        } else if (r.type == "adapter") {
            cfg.adapter_file = resolve(base_dir, r.require("file"));
            cfg.adapter_metric = r.require("metric");
            cfg.adapter_pattern = r.require("pattern");
            cfg.adapter_reducer = reducer_from_string(r.get("reducer").value_or("median"));
        }
    }
    cfg.validate();
    return cfg;
}

std::string SessionConfig::mode_tag() const {
    switch (mode) {
    case SessionMode::dual: return "dual";
    case SessionMode::single_instant: return "single_instant";
    case SessionMode::single_reasoning: return "single_reasoning";
    case SessionMode::trim_then_downstream: return "trim:" + baseline_name;
    case SessionMode::baseline:
        return baseline_name == "fixed" ? "default" : "baseline:" + baseline_name;
    }
    return "?";
}

void SessionConfig::validate() const {
    auto need = [&](ModelRole role, const char* why) {
        if (!endpoints.count(role))
            throw ConfigError(std::string("[session] mode needs an [endpoint ") +
                              (role == ModelRole::instant ? "instant" : "reasoning") +
                              "] record: " + why);
    };
    switch (mode) {
    case SessionMode::dual:
        need(ModelRole::instant, "dual loop");
        need(ModelRole::reasoning, "dual loop");
        break;
    case SessionMode::single_instant:
        need(ModelRole::instant, "single instant loop");
        break;
    case SessionMode::single_reasoning:
        need(ModelRole::reasoning, "single reasoning loop");
        break;
    case SessionMode::trim_then_downstream:
        if (loop.trim_windows > 0)
            need(ModelRole::reasoning, "trim probing");
        if (loop.tuning_windows < loop.trim_windows)
            throw ConfigError("[session] tuning_windows must cover trim_windows");
        break;
    case SessionMode::baseline:
        break;
    }
    if (memory != MemoryMode::off) {
        if (memory_dir.empty())
            throw ConfigError("[session] memory_dir required when memory is enabled");
        need(ModelRole::reasoning, "memory prior synthesis");
    }
    if (telemetry == "sim" || actuation == "sim") {
        if (surface_path.empty())
            throw ConfigError("[session] surface required for sim telemetry/actuation");
    }
    if (telemetry != "sim" && telemetry != "linux")
        throw ConfigError("[session] telemetry must be sim or linux");
    if (actuation != "sim" && actuation != "linux")
        throw ConfigError("[session] actuation must be sim or linux");
    if (loop.tuning_windows < 0 || loop.stable_windows < 0)
        throw ConfigError("[session] window counts must be non-negative");
}

std::string SessionConfig::to_document_text() const {
    KvDocument doc;
    KvRecord s{"session", {}};
    s.set("catalog", catalog_path);
    s.set("knob_set", knob_set);
    s.set("reward", channel.to_text());
    std::string mode_text;
    switch (mode) {
    case SessionMode::dual: mode_text = "dual"; break;
    case SessionMode::single_instant: mode_text = "single_instant"; break;
    case SessionMode::single_reasoning: mode_text = "single_reasoning"; break;
    case SessionMode::trim_then_downstream: mode_text = "trim"; break;
    case SessionMode::baseline: mode_text = "baseline:" + baseline_name; break;
    }
    s.set("mode", mode_text);
    if (mode == SessionMode::trim_then_downstream)
        s.set("downstream", baseline_name);
    s.set("memory", memory == MemoryMode::off ? "off"
                                              : (memory == MemoryMode::top1 ? "top1" : "top3"));
    if (!memory_dir.empty())
        s.set("memory_dir", memory_dir);
    if (!memory_exclude_prefix.empty())
        s.set("memory_exclude_prefix", memory_exclude_prefix);
    s.set("embedder", embedder);
    s.set("telemetry", telemetry);
    s.set("actuation", actuation);
    if (!surface_path.empty())
        s.set("surface", surface_path);
    s.set("cpu_mask", render_cpu_mask(cpu_mask));
    s.set("seed", std::to_string(seed));
    s.set("tuning_windows", std::to_string(loop.tuning_windows));
    s.set("stable_windows", std::to_string(loop.stable_windows));
    s.set("trim_windows", std::to_string(loop.trim_windows));
    s.set("instant_every_windows", std::to_string(loop.instant_every_windows));
    s.set("reasoning_min_pending", std::to_string(loop.reasoning_min_pending));
    s.set("convergence_quiet_windows", std::to_string(loop.convergence_quiet_windows));
    s.set("trace_suffix", std::to_string(loop.trace_suffix_len));
    s.set("window_seconds", std::to_string(window_seconds));
    s.set("machine", machine);
    if (!goal_constraints.empty()) {
        std::string acc;
        for (const auto& c : goal_constraints)
            acc += (acc.empty() ? "" : "; ") + c;
        s.set("goal_constraints", acc);
    }
    s.set("strategy", strategy_text);
    if (!run_id.empty())
        s.set("run_id", run_id);
    doc.records.push_back(std::move(s));
    for (const auto& [role, ep] : endpoints) {
        KvRecord r{std::string("endpoint ") + (role == ModelRole::instant ? "instant" : "reasoning"),
                   {}};
        r.set("backend", ep.backend);
        if (!ep.base_url.empty()) r.set("base_url", ep.base_url);
        if (!ep.model_name.empty()) r.set("model", ep.model_name);
        r.set("temperature", std::to_string(ep.temperature));
        if (!ep.api_key_env.empty()) r.set("api_key_env", ep.api_key_env);
        r.set("timeout_s", std::to_string(ep.timeout_s));
        if (!ep.script_path.empty()) r.set("script", ep.script_path);
        r.set("latency_windows", std::to_string(ep.latency_windows));
        if (ep.price_input_per_token)
            r.set("price_input_per_token", std::to_string(*ep.price_input_per_token));
        if (ep.price_output_per_token)
            r.set("price_output_per_token", std::to_string(*ep.price_output_per_token));
        doc.records.push_back(std::move(r));
    }
    if (!adapter_metric.empty()) {
        KvRecord a{"adapter", {}};
        a.set("file", adapter_file);
        a.set("metric", adapter_metric);
        a.set("pattern", adapter_pattern);
        a.set("reducer", to_string(adapter_reducer));
        doc.records.push_back(std::move(a));
    }
    return render_kvdoc(doc);
}

struct Session::Impl {
    Registry registry;
    KnobSet set;
    std::unique_ptr<SimBackend> sim_backend;
    std::unique_ptr<LinuxFileBackend> linux_backend;
    std::unique_ptr<OverlayBackend> overlay;
    ActuationBackend* backend = nullptr;
    std::optional<ResponseSurface> surface;
    std::unique_ptr<TelemetrySource> telemetry;
    SimTelemetrySource* sim_source = nullptr;
    Gateway gateway;
    std::unique_ptr<Guardrail> guardrail;
    SessionPolicy policy;
    Configuration current;
    SessionSpecification spec;
    std::unique_ptr<Controller> controller;

    std::ofstream decisions_log;
    std::ofstream measurements_log;
    std::ofstream commits_log;
    std::vector<nlohmann::json> window_events;

    std::vector<RunTraceStep> trace;
    std::unique_ptr<VectorStore> store;
    std::unique_ptr<Embedder> embedder;
    std::unique_ptr<WorkloadAdapter> adapter;
};

Session::Session(SessionConfig config) : impl_(std::make_unique<Impl>()), cfg_(std::move(config)) {
    cfg_.validate();
    impl_->registry = Registry::load_file(cfg_.catalog_path);
    impl_->set = impl_->registry.resolve_named_set(cfg_.knob_set);

    if (!cfg_.surface_path.empty()) {
        impl_->surface = ResponseSurface::load_file(cfg_.surface_path, impl_->registry);
        if (impl_->surface->knob_set_name() != cfg_.knob_set)
            throw ConfigError("surface '" + impl_->surface->name() + "' is defined over set " +
                              impl_->surface->knob_set_name() + ", session uses " + cfg_.knob_set);
    }

    if (cfg_.actuation == "sim") {
        impl_->sim_backend = std::make_unique<SimBackend>();
        impl_->backend = impl_->sim_backend.get();
        // The sim host starts at catalog defaults, like a rerun on a
        // restored machine.
        for (const auto& m : impl_->set.members()) {
            if (m.scope == KnobScope::per_cpu) {
                for (const auto& [path, raw] :
                     Guardrail::expand_per_cpu(m, m.default_value, cfg_.cpu_mask))
                    impl_->sim_backend->preload(path, raw);
            } else {
                impl_->sim_backend->preload(m.actuation_path, m.default_value.raw());
            }
        }
    } else {
        impl_->linux_backend = std::make_unique<LinuxFileBackend>();
        impl_->backend = impl_->linux_backend.get();
    }
    if (cfg_.dry_run) {
        impl_->overlay = std::make_unique<OverlayBackend>(*impl_->backend);
        impl_->backend = impl_->overlay.get();
    }

    if (cfg_.telemetry == "sim") {
        auto src = std::make_unique<SimTelemetrySource>(*impl_->surface, impl_->set, cfg_.seed);
        impl_->sim_source = src.get();
        impl_->telemetry = std::move(src);
    } else {
        impl_->telemetry = make_linux_telemetry_source();
    }

    for (const auto& [role, ep] : cfg_.endpoints)
        impl_->gateway.configure(role, ep);

    if (!cfg_.adapter_metric.empty())
        impl_->adapter = std::make_unique<StdoutSamplerAdapter>(
            cfg_.adapter_metric, cfg_.adapter_pattern, cfg_.adapter_reducer, cfg_.adapter_file);

    impl_->guardrail = std::make_unique<Guardrail>(impl_->set, cfg_.cpu_mask, *impl_->backend);

    if (cfg_.memory != MemoryMode::off) {
        impl_->store = std::make_unique<VectorStore>(cfg_.memory_dir);
        if (cfg_.embedder == "hash")
            impl_->embedder = make_hash_embedder();
        else
            impl_->embedder = make_http_embedder(cfg_.embedder_url, cfg_.embedder_model,
                                                 cfg_.embedder_key_env);
    }
}

Session::~Session() = default;

SimBackend* Session::sim_backend() {
    return impl_->sim_backend.get();
}

const SimTelemetrySource* Session::sim_source() const {
    return impl_->sim_source;
}

namespace {

std::string goal_text(const RewardChannel& channel) {
    if (channel.kind == RewardChannel::Kind::system_bundle)
        return "improve the system-metric signature";
    return std::string(channel.direction == Direction::minimize ? "minimize " : "maximize ") +
           channel.metric;
}

// The per-window value reported in phase summaries: the goal metric when it
// exists, else the scalar reward, else ipc.
std::optional<double> goal_metric_value(const MeasurementRecord& rec,
                                        const RewardChannel& channel) {
    if (channel.kind == RewardChannel::Kind::app && rec.app) {
        auto it = rec.app->values.find(channel.metric);
        if (it != rec.app->values.end())
            return it->second;
    }
    if (channel.kind == RewardChannel::Kind::proxy)
        return reward_of(rec, channel);
    if (rec.app && !rec.app->values.empty())
        return rec.app->values.begin()->second;
    if (rec.system.ipc)
        return rec.system.ipc;
    return std::nullopt;
}

} // namespace

SessionReport Session::run() {
    Impl& im = *impl_;
    const int total_windows = cfg_.loop.tuning_windows + cfg_.loop.stable_windows;

    fs::create_directories(cfg_.output_dir);
    fs::create_directories(cfg_.output_dir + "/prompts");
    fs::create_directories(cfg_.output_dir + "/inputs");

    // Self-contained copy of every input the session consumes, and a config
    // rewritten to point at the copies, so replay needs nothing external.
    SessionConfig stored = cfg_;
    fs::copy_file(cfg_.catalog_path, cfg_.output_dir + "/inputs/catalog.knobs",
                  fs::copy_options::overwrite_existing);
    stored.catalog_path = "inputs/catalog.knobs";
    if (!cfg_.surface_path.empty()) {
        fs::copy_file(cfg_.surface_path, cfg_.output_dir + "/inputs/surface.kv",
                      fs::copy_options::overwrite_existing);
        stored.surface_path = "inputs/surface.kv";
    }
    for (auto& [role, ep] : stored.endpoints) {
        if (!ep.script_path.empty()) {
            const std::string name =
                std::string("inputs/script_") + (role == ModelRole::instant ? "instant" : "reasoning") +
                ".jsonl";
            fs::copy_file(cfg_.endpoints.at(role).script_path, cfg_.output_dir + "/" + name,
                          fs::copy_options::overwrite_existing);
            ep.script_path = name;
        }
    }
    if (cfg_.memory != MemoryMode::off) {
        // Freeze the memory store the session retrieves from, so replay sees
        // the same neighbours even after later sessions extend the store.
        fs::remove_all(cfg_.output_dir + "/inputs/memory");
        fs::copy(cfg_.memory_dir, cfg_.output_dir + "/inputs/memory",
                 fs::copy_options::recursive);
        stored.memory_dir = "inputs/memory";
    }
    stored.output_dir = ".";
    write_file(cfg_.output_dir + "/session.cfg", stored.to_document_text());

    im.decisions_log.open(cfg_.output_dir + "/decisions.jsonl", std::ios::trunc);
    im.measurements_log.open(cfg_.output_dir + "/measurements.jsonl", std::ios::trunc);
    im.commits_log.open(cfg_.output_dir + "/commits.jsonl", std::ios::trunc);

    // Probe and snapshot before anything can mutate the host; failures here
    // abort cleanly with nothing to restore.
    snapshot_ = im.guardrail->snapshot();
    im.current = snapshot_;

    TuningGoal goal;
    goal.metric = im.surface ? im.surface->metric() : cfg_.channel.metric;
    goal.direction = cfg_.channel.direction;
    goal.constraints = cfg_.goal_constraints;
    im.spec = build_session_spec(goal, im.set, cfg_.strategy_text, std::nullopt);

    const Direction direction = cfg_.channel.kind == RewardChannel::Kind::system_bundle
                                    ? (im.surface ? im.surface->direction() : Direction::minimize)
                                    : cfg_.channel.direction;

    ControlEnv env;
    env.set = &im.set;
    env.guardrail = im.guardrail.get();
    env.gateway = &im.gateway;
    env.policy = &im.policy;
    env.current = &im.current;
    env.spec = &im.spec;
    env.channel = cfg_.channel;
    env.loop = cfg_.loop;
    env.direction = direction;
    env.seed = cfg_.seed;
    env.log_decision = [&](nlohmann::json event) { im.window_events.push_back(std::move(event)); };
    env.log_prompt = [&](const std::string& name, const std::string& text) {
        write_file(cfg_.output_dir + "/prompts/" + name + ".txt", text);
    };
    env.log_commit = [&](const CommitRecord& commit, const ValidationVerdict& verdict) {
        nlohmann::json line = commit.to_json();
        line["verdict"] = verdict.to_json();
        im.commits_log << line.dump() << "\n";
        im.commits_log.flush();
    };

    switch (cfg_.mode) {
    case SessionMode::dual:
        im.controller = make_loop_controller(env, LoopMode::dual);
        break;
    case SessionMode::single_instant:
        im.controller = make_loop_controller(env, LoopMode::single_instant);
        break;
    case SessionMode::single_reasoning:
        im.controller = make_loop_controller(env, LoopMode::single_reasoning);
        break;
    case SessionMode::trim_then_downstream:
        im.controller = make_trim_controller(env, make_baseline(cfg_.baseline_name),
                                             cfg_.loop.trim_windows);
        break;
    case SessionMode::baseline:
        im.controller = make_trim_controller(env, make_baseline(cfg_.baseline_name), 0);
        break;
    }

    SessionReport report;
    report.out_dir = cfg_.output_dir;
    report.workload = im.surface ? im.surface->name() : "live";
    report.mode_tag = cfg_.mode_tag();
    report.direction = direction;
    report.seed = cfg_.seed;
    for (const auto& [role, ep] : cfg_.endpoints)
        report.deterministic = report.deterministic && ep.backend != "http";
    report.deterministic = report.deterministic && cfg_.telemetry == "sim";

    bool interrupted = false;
    std::string failure;
    try {
        for (int w = 0; w < total_windows; ++w) {
            if (hooks_.interrupt_flag && hooks_.interrupt_flag->load())
                throw Interrupted();
            if (hooks_.at_stage)
                hooks_.at_stage(w, "telemetry");
            MeasurementRecord rec = im.telemetry->collect(w, cfg_.window_seconds, cfg_.cpu_mask,
                                                          im.current, im.adapter.get());
            rec.window_index = w;
            std::optional<double> reward;
            if (cfg_.channel.scalar())
                reward = reward_of(rec, cfg_.channel);
            rec.reward = reward;
            im.measurements_log << rec.to_json().dump() << "\n";

            if (auto value = goal_metric_value(rec, cfg_.channel)) {
                if (w < cfg_.loop.tuning_windows)
                    report.tuning_values.push_back(*value);
                else
                    report.stable_values.push_back(*value);
            }

            im.window_events.clear();

            if (w == 0 && cfg_.mode != SessionMode::baseline &&
                cfg_.mode != SessionMode::trim_then_downstream && cfg_.memory != MemoryMode::off)
                warm_start_pending_ = true;

            if (hooks_.at_stage)
                hooks_.at_stage(w, "gateway");
            im.controller->on_window(w, rec, reward);

            // Warm start strictly after the first completed window: the
            // bootstrap call above ran cold; every later prompt sees the
            // prior.
            if (w == 0 && warm_start_pending_) {
                warm_start_pending_ = false;
                warm_start(rec);
            }

            RunTraceStep step;
            step.window = w;
            step.config = im.current;
            step.config.timestamp_ms = 0;
            for (const auto& ev : im.window_events) {
                if (ev.value("kind", "") == "decision") {
                    for (auto it = ev["verdict"]["accepted"].begin();
                         it != ev["verdict"]["accepted"].end(); ++it)
                        step.action[it.key()] = KnobValue::from_json(it.value());
                }
            }
            if (rec.system.ipc)
                step.system["ipc"] = *rec.system.ipc;
            if (rec.system.package_power_w)
                step.system["pkg_w"] = *rec.system.package_power_w;
            if (rec.system.cpu_load)
                step.system["load"] = *rec.system.cpu_load;
            if (rec.app && !rec.app->values.empty())
                step.app = rec.app->values.begin()->second;
            step.reward = reward;
            im.trace.push_back(std::move(step));

            nlohmann::json line = {{"window", w},
                                   {"phase", w < cfg_.loop.tuning_windows ? "tuning" : "stable"},
                                   {"commit_id", im.current.commit_id},
                                   {"events", im.window_events}};
            im.decisions_log << line.dump() << "\n";
            im.decisions_log.flush();
            im.measurements_log.flush();
        }
    } catch (const Interrupted&) {
        interrupted = true;
        failure = "interrupted";
    } catch (const std::exception& e) {
        failure = e.what();
    }

    // Restoration runs on every exit path.
    CommitRecord restore_rec = im.guardrail->restore(snapshot_);
    im.commits_log << restore_rec.to_json().dump() << "\n";
    report.restore_ok = restore_rec.ok();
    for (const auto& w : restore_rec.writes) {
        if (!w.ok)
            report.restore_residual_paths.push_back(w.path);
    }

    if (!failure.empty()) {
        write_report_files(report);
        throw SessionAbort("session failed at window boundary: " + failure, report.restore_ok,
                           interrupted);
    }

    report.final_commit_id = im.current.commit_id;
    report.usage = im.gateway.account_usage();
    report.trim = im.controller->trim_result();
    if (!report.tuning_values.empty())
        report.tuning_mean = std::accumulate(report.tuning_values.begin(),
                                             report.tuning_values.end(), 0.0) /
                             static_cast<double>(report.tuning_values.size());
    if (!report.stable_values.empty())
        report.stable_mean = std::accumulate(report.stable_values.begin(),
                                             report.stable_values.end(), 0.0) /
                             static_cast<double>(report.stable_values.size());

    write_report_files(report);

    // Persist the run into cross-run memory at session end.
    if (im.store && im.embedder && !cfg_.memory_readonly) {
        RunRecord run;
        run.run_id = cfg_.run_id.empty()
                         ? report.workload + "-" + std::to_string(cfg_.seed) + "-" +
                               std::to_string(std::chrono::duration_cast<std::chrono::milliseconds>(
                                                  std::chrono::system_clock::now()
                                                      .time_since_epoch())
                                                  .count())
                         : cfg_.run_id;
        run.goal = goal_text(cfg_.channel);
        run.machine = cfg_.machine;
        run.start_config = snapshot_;
        run.start_config.timestamp_ms = 0;
        run.trace = im.trace;
        std::ostringstream summary;
        summary << "tuning mean " << report.tuning_mean << ", stable mean "
                << report.stable_mean << " (" << to_string(direction) << " "
                << (im.surface ? im.surface->metric() : cfg_.channel.metric) << ")";
        run.final_summary = summary.str();
        store_run(*im.store, *im.embedder, std::move(run));
    }
    return report;
}

void Session::warm_start(const MeasurementRecord& first_window) {
    Impl& im = *impl_;
    const std::size_t k = cfg_.memory == MemoryMode::top1 ? 1 : 3;
    const std::string query = bootstrap_query(goal_text(cfg_.channel), cfg_.machine, im.set,
                                              snapshot_, first_window);
    write_file(cfg_.output_dir + "/bootstrap_query.txt", query);
    auto runs = retrieve_excluding(*im.store, *im.embedder, query, k,
                                   cfg_.memory_exclude_prefix);
    nlohmann::json event = {{"kind", "memory"},
                            {"k", k},
                            {"retrieved", nlohmann::json::array()},
                            {"prior", false}};
    for (const auto& r : runs)
        event["retrieved"].push_back(r.run_id);
    if (!runs.empty()) {
        const ResponseSchema schema(im.set, false);
        auto prior = synthesize_prior(runs, im.gateway, schema, 0);
        if (prior) {
            im.spec.memory_prior = prior->text;
            write_file(cfg_.output_dir + "/prior.txt", prior->text);
            event["prior"] = true;
        }
    }
    im.window_events.push_back(std::move(event));
}

void Session::write_report_files(const SessionReport& report) {
    Impl& im = *impl_;
    KvDocument doc;
    KvRecord r{"report", {}};
    r.set("workload", report.workload);
    r.set("tuner", report.mode_tag);
    r.set("direction", to_string(report.direction));
    r.set("seed", std::to_string(report.seed));
    r.set("tuning_windows", std::to_string(cfg_.loop.tuning_windows));
    r.set("stable_windows", std::to_string(cfg_.loop.stable_windows));
    r.set("tuning_mean", std::to_string(report.tuning_mean));
    r.set("stable_mean", std::to_string(report.stable_mean));
    r.set("final_commit_id", std::to_string(report.final_commit_id));
    r.set("usage_input_tokens", std::to_string(report.usage.input));
    r.set("usage_output_tokens", std::to_string(report.usage.output));
    if (report.usage.cost)
        r.set("usage_cost", std::to_string(*report.usage.cost));
    r.set("restore", report.restore_ok ? "ok" : "incomplete");
    if (!report.restore_residual_paths.empty()) {
        std::string acc;
        for (const auto& p : report.restore_residual_paths)
            acc += (acc.empty() ? "" : " ") + p;
        r.set("restore_residual_paths", acc);
    }
    r.set("deterministic", report.deterministic ? "yes" : "no");
    doc.records.push_back(std::move(r));
    for (const auto& [role, usage] : report.usage.per_role) {
        KvRecord u{"usage " + role, {}};
        u.set("input_tokens", std::to_string(usage.first));
        u.set("output_tokens", std::to_string(usage.second));
        doc.records.push_back(std::move(u));
    }
    if (report.trim)
        write_file(cfg_.output_dir + "/trim.json", report.trim->to_json().dump(2) + "\n");
    write_file(cfg_.output_dir + "/report.txt", render_kvdoc(doc));

    std::ostringstream csv;
    csv << "window,phase,value\n";
    int w = 0;
    for (double v : report.tuning_values)
        csv << w++ << ",tuning," << v << "\n";
    for (double v : report.stable_values)
        csv << w++ << ",stable," << v << "\n";
    write_file(cfg_.output_dir + "/windows.csv", csv.str());
    (void)im;
}

std::optional<int> replay_session(const std::string& session_dir) {
    const std::string cfg_path = session_dir + "/session.cfg";
    SessionConfig cfg = SessionConfig::load_file(cfg_path);
    for (const auto& [role, ep] : cfg.endpoints) {
        if (ep.backend == "http")
            throw ConfigError("replay refused: endpoint '" + to_string(role) +
                              "' uses an http backend (non-deterministic source)");
    }
    if (cfg.telemetry != "sim" || cfg.actuation != "sim")
        throw ConfigError("replay refused: session did not run against the sim host");
    cfg.memory_readonly = true;  // retrieve from the frozen copy, never store

    const std::string replay_dir = session_dir + "/replay";
    fs::remove_all(replay_dir);
    cfg.output_dir = replay_dir;
    Session session(cfg);
    session.run();

    auto compare = [&](const std::string& name) -> std::optional<int> {
        std::istringstream a(read_file(session_dir + "/" + name));
        std::istringstream b(read_file(replay_dir + "/" + name));
        std::string la, lb;
        int lineno = 0;
        while (true) {
            const bool ga = static_cast<bool>(std::getline(a, la));
            const bool gb = static_cast<bool>(std::getline(b, lb));
            if (!ga && !gb)
                return std::nullopt;
            if (ga != gb || la != lb) {
                // One JSONL record per window in both logs.
                return lineno;
            }
            ++lineno;
        }
    };
    auto d1 = compare("decisions.jsonl");
    auto d2 = compare("measurements.jsonl");
    if (d1 && d2)
        return std::min(*d1, *d2);
    return d1 ? d1 : d2;
}

SessionOutcome load_session_outcome(const std::string& session_dir) {
    SessionOutcome out;
    KvDocument doc = load_kvdoc(session_dir + "/report.txt");
    const auto reports = doc.of_type("report");
    if (reports.empty())
        throw ConfigError("not a session directory (no report.txt): " + session_dir);
    const KvRecord& r = *reports[0];
    out.workload = r.require("workload");
    out.tuner = r.require("tuner");
    out.direction = direction_from_string(r.require("direction"));
    out.seed = static_cast<std::uint64_t>(r.require_int("seed"));
    const int tuning_windows = static_cast<int>(r.require_int("tuning_windows"));

    std::istringstream in(read_file(session_dir + "/windows.csv"));
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::string window, phase, value;
        std::getline(ls, window, ',');
        std::getline(ls, phase, ',');
        std::getline(ls, value, ',');
        if (value.empty())
            continue;
        if (phase == "tuning")
            out.tuning_values.push_back(std::stod(value));
        else
            out.stable_values.push_back(std::stod(value));
    }
    (void)tuning_windows;
    return out;
}

} // namespace knobtune
