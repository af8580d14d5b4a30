#include "knobtune/memory.hpp"

#include "knobtune/errors.hpp"
#include "knobtune/kvdoc.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace knobtune {

namespace {

std::string fmt_num(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

std::string signature_from(const std::string& goal, const std::string& machine,
                           const std::string& start_line,
                           const std::map<std::string, double>& system,
                           std::optional<double> app) {
    std::ostringstream out;
    out << "goal: " << goal << "\n";
    out << "machine: " << machine << "\n";
    out << "start: " << start_line << "\n";
    out << "window0:";
    for (const auto& [k, v] : system)
        out << " " << k << "=" << fmt_num(v);
    out << "\n";
    if (app)
        out << "app: " << fmt_num(*app) << "\n";
    return out.str();
}

std::map<std::string, double> system_signature(const MeasurementRecord& rec) {
    std::map<std::string, double> sig;
    if (rec.system.ipc)
        sig["ipc"] = *rec.system.ipc;
    if (rec.system.package_power_w)
        sig["pkg_w"] = *rec.system.package_power_w;
    if (rec.system.cpu_load)
        sig["load"] = *rec.system.cpu_load;
    auto cm = rec.system.counters.find("cache-misses");
    auto cr = rec.system.counters.find("cache-references");
    if (cm != rec.system.counters.end() && cr != rec.system.counters.end() && cr->second > 0)
        sig["miss_ratio"] = cm->second / cr->second;
    auto cs = rec.system.counters.find("context-switches");
    if (cs != rec.system.counters.end())
        sig["ctx_sw"] = cs->second;
    return sig;
}

std::string config_line(const Configuration& cfg) {
    std::ostringstream out;
    bool first = true;
    for (const auto& [k, v] : cfg.assignments) {
        out << (first ? "" : " ") << k << "=" << v.raw();
        first = false;
    }
    return out.str();
}

} // namespace

nlohmann::json RunRecord::to_json() const {
    nlohmann::json steps = nlohmann::json::array();
    for (const auto& s : trace) {
        nlohmann::json action = nlohmann::json::object();
        for (const auto& [k, v] : s.action)
            action[k] = v.to_json();
        nlohmann::json step = {{"window", s.window},
                               {"action", action},
                               {"config", s.config.to_json()},
                               {"system", s.system}};
        if (s.app)
            step["app"] = *s.app;
        if (s.reward)
            step["reward"] = *s.reward;
        steps.push_back(step);
    }
    return {{"run_id", run_id},      {"goal", goal},
            {"machine", machine},    {"start_config", start_config.to_json()},
            {"trace", steps},        {"summary", final_summary},
            {"embedding", embedding}};
}

RunRecord RunRecord::from_json(const nlohmann::json& j) {
    RunRecord r;
    r.run_id = j.at("run_id").get<std::string>();
    r.goal = j.at("goal").get<std::string>();
    r.machine = j.at("machine").get<std::string>();
    r.start_config = Configuration::from_json(j.at("start_config"));
    for (const auto& step : j.at("trace")) {
        RunTraceStep s;
        s.window = step.at("window").get<int>();
        for (auto it = step.at("action").begin(); it != step.at("action").end(); ++it)
            s.action[it.key()] = KnobValue::from_json(it.value());
        s.config = Configuration::from_json(step.at("config"));
        s.system = step.value("system", std::map<std::string, double>{});
        if (step.contains("app"))
            s.app = step["app"].get<double>();
        if (step.contains("reward"))
            s.reward = step["reward"].get<double>();
        r.trace.push_back(std::move(s));
    }
    r.final_summary = j.value("summary", "");
    r.embedding = j.value("embedding", std::vector<double>{});
    return r;
}

std::string RunRecord::signature_text() const {
    std::map<std::string, double> sys;
    std::optional<double> app;
    if (!trace.empty()) {
        sys = trace.front().system;
        app = trace.front().app;
    }
    return signature_from(goal, machine, config_line(start_config), sys, app);
}

namespace {

class HashEmbedder : public Embedder {
public:
    explicit HashEmbedder(std::size_t dim) : dim_(dim) {}

    std::vector<double> embed(const std::string& text) const override {
        std::vector<double> v(dim_, 0.0);
        std::string token;
        auto flush = [&] {
            if (token.empty())
                return;
            const std::uint64_t h = fnv1a(token);
            const std::size_t bucket = h % dim_;
            const double sign = ((h >> 32) & 1) ? 1.0 : -1.0;
            v[bucket] += sign;
            token.clear();
        };
        for (char c : text) {
            if (std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.') {
                token.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
            } else {
                flush();
            }
        }
        flush();
        return l2_normalize(std::move(v));
    }

    std::size_t dimension() const override { return dim_; }

private:
    static std::uint64_t fnv1a(const std::string& s) {
        std::uint64_t h = 1469598103934665603ull;
        for (unsigned char c : s) {
            h ^= c;
            h *= 1099511628211ull;
        }
        return h;
    }

    std::size_t dim_;
};

} // namespace

std::unique_ptr<Embedder> make_hash_embedder(std::size_t dimension) {
    return std::make_unique<HashEmbedder>(dimension);
}

std::vector<double> l2_normalize(std::vector<double> v) {
    double norm = 0.0;
    for (double x : v)
        norm += x * x;
    norm = std::sqrt(norm);
    if (norm > 0.0) {
        for (double& x : v)
            x /= norm;
    }
    return v;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    const std::size_t n = std::min(a.size(), b.size());
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        s += a[i] * b[i];
    return s;
}

VectorStore::VectorStore(std::string directory) : dir_(std::move(directory)) {
    std::filesystem::create_directories(dir_);
    std::filesystem::create_directories(dir_ + "/runs");
    const std::string index_path = dir_ + "/index.jsonl";
    if (!std::filesystem::exists(index_path))
        return;
    std::istringstream in(read_file(index_path));
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty())
            continue;
        nlohmann::json j = nlohmann::json::parse(line);
        index_.emplace_back(j.at("run_id").get<std::string>(),
                            j.at("vector").get<std::vector<double>>());
    }
}

void VectorStore::add(const RunRecord& record) {
    for (const auto& [id, _] : index_) {
        if (id == record.run_id)
            throw ConfigError("duplicate run_id in memory store: " + record.run_id);
    }
    write_file(dir_ + "/runs/" + record.run_id + ".json", record.to_json().dump(2) + "\n");
    index_.emplace_back(record.run_id, record.embedding);
    std::ofstream out(dir_ + "/index.jsonl", std::ios::app);
    if (!out)
        throw SessionError("memory store: cannot append to index");
    out << nlohmann::json{{"run_id", record.run_id}, {"vector", record.embedding}}.dump()
        << "\n";
}

std::vector<VectorStore::Hit> VectorStore::query(const std::vector<double>& vector,
                                                 std::size_t k) const {
    std::vector<std::pair<double, std::size_t>> scored;  // (similarity, insertion order)
    scored.reserve(index_.size());
    for (std::size_t i = 0; i < index_.size(); ++i)
        scored.emplace_back(dot(vector, index_[i].second), i);
    std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first)
            return a.first > b.first;
        return a.second < b.second;
    });
    std::vector<Hit> out;
    for (std::size_t i = 0; i < scored.size() && i < k; ++i)
        out.push_back({index_[scored[i].second].first, scored[i].first});
    return out;
}

RunRecord VectorStore::load(const std::string& run_id) const {
    return RunRecord::from_json(nlohmann::json::parse(read_file(dir_ + "/runs/" + run_id + ".json")));
}

std::string bootstrap_query(const std::string& goal, const std::string& machine,
                            const KnobSet& set, const Configuration& start_config,
                            const MeasurementRecord& first_window) {
    std::optional<double> app;
    if (first_window.app && !first_window.app->values.empty())
        app = first_window.app->values.begin()->second;
    // Render the start config in set order for stability.
    std::ostringstream start;
    bool first = true;
    for (const auto& m : set.members()) {
        auto it = start_config.assignments.find(m.name);
        if (it == start_config.assignments.end())
            continue;
        start << (first ? "" : " ") << m.name << "=" << it->second.raw();
        first = false;
    }
    return signature_from(goal, machine, start.str(), system_signature(first_window), app);
}

std::vector<RunRecord> retrieve(const VectorStore& store, const Embedder& embedder,
                                const std::string& query, std::size_t k) {
    return retrieve_excluding(store, embedder, query, k, "");
}

std::vector<RunRecord> retrieve_excluding(const VectorStore& store, const Embedder& embedder,
                                          const std::string& query, std::size_t k,
                                          const std::string& exclude_prefix) {
    if (k < 1)
        throw ConfigError("retrieve: k must be >= 1");
    // Over-fetch, then drop held-out runs; the store is small enough that a
    // full ranking is cheap.
    const auto hits = store.query(embedder.embed(query), store.size());
    std::vector<RunRecord> out;
    for (const auto& h : hits) {
        if (!exclude_prefix.empty() && h.run_id.rfind(exclude_prefix, 0) == 0)
            continue;
        out.push_back(store.load(h.run_id));
        if (out.size() == k)
            break;
    }
    return out;
}

std::optional<MemoryPrior> synthesize_prior(const std::vector<RunRecord>& runs,
                                            Gateway& gateway, const ResponseSchema& schema,
                                            int window) {
    if (runs.empty())
        throw ConfigError("synthesize_prior: no runs");
    std::ostringstream prompt;
    prompt << "Summarize reusable tuning guidance from these prior sessions: parameter "
              "relationships that held, promising and risky regions, and early exploration "
              "advice. Reply with one JSON object whose justification field carries a short "
              "summary; propose no updates.\n";
    for (const auto& run : runs) {
        prompt << "\n--- run " << run.run_id << "\n" << run.signature_text();
        if (!run.final_summary.empty())
            prompt << "outcome: " << run.final_summary << "\n";
        if (!run.trace.empty()) {
            const auto& last = run.trace.back();
            prompt << "final config: " << config_line(last.config) << "\n";
            if (last.app)
                prompt << "final app: " << fmt_num(*last.app) << "\n";
        }
    }
    TunerResponse r = gateway.request(ModelRole::reasoning, prompt.str(), schema, window);
    if (r.errored || r.justification.empty())
        return std::nullopt;
    MemoryPrior prior;
    prior.text = r.justification;
    for (const auto& run : runs)
        prior.source_run_ids.push_back(run.run_id);
    prior.created_at_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                              std::chrono::system_clock::now().time_since_epoch())
                              .count();
    return prior;
}

void store_run(VectorStore& store, const Embedder& embedder, RunRecord record) {
    record.embedding = embedder.embed(record.signature_text());
    store.add(record);
}

} // namespace knobtune
