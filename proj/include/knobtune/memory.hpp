#pragma once

#include "knobtune/context.hpp"
#include "knobtune/gateway.hpp"
#include "knobtune/registry.hpp"
#include "knobtune/telemetry.hpp"

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace knobtune {

struct RunTraceStep {
    int window = 0;
    std::map<std::string, KnobValue> action;
    Configuration config;
    std::map<std::string, double> system;  // compact signature metrics
    std::optional<double> app;
    std::optional<double> reward;
};

struct RunRecord {
    std::string run_id;
    std::string goal;     // "minimize p99_ms" form
    std::string machine;
    Configuration start_config;
    std::vector<RunTraceStep> trace;
    std::string final_summary;
    std::vector<double> embedding;

    nlohmann::json to_json() const;
    static RunRecord from_json(const nlohmann::json& j);
    // The same signature text the bootstrap query uses, built from the
    // run's own first window.
    std::string signature_text() const;
};

// Advisory warm-start text; never converted into guardrail policy.
struct MemoryPrior {
    std::string text;
    std::vector<std::string> source_run_ids;  // size <= k
    std::int64_t created_at_ms = 0;
};

class Embedder {
public:
    virtual ~Embedder() = default;
    virtual std::vector<double> embed(const std::string& text) const = 0;
    virtual std::size_t dimension() const = 0;
};

// Deterministic feature-hash embedder for tests and offline use.
std::unique_ptr<Embedder> make_hash_embedder(std::size_t dimension = 64);
// POST /embeddings against an OpenAI-style endpoint.
std::unique_ptr<Embedder> make_http_embedder(std::string base_url, std::string model,
                                             std::string api_key_env);

// On-disk store: one record file per run plus an index of (run_id, vector).
// Vectors are L2-normalized at insertion so cosine similarity is the dot
// product. Retrieval is an exact linear scan.
class VectorStore {
public:
    explicit VectorStore(std::string directory);

    std::size_t size() const { return index_.size(); }

    // Throws ConfigError on duplicate run_id.
    void add(const RunRecord& record);

    struct Hit {
        std::string run_id;
        double similarity = 0.0;
    };
    // Top-k by non-increasing similarity; ties broken by insertion order.
    std::vector<Hit> query(const std::vector<double>& vector, std::size_t k) const;

    RunRecord load(const std::string& run_id) const;

private:
    std::string dir_;
    std::vector<std::pair<std::string, std::vector<double>>> index_;
};

std::vector<double> l2_normalize(std::vector<double> v);
double dot(const std::vector<double>& a, const std::vector<double>& b);

// Deterministic retrieval query from the information available after the
// first completed window.
std::string bootstrap_query(const std::string& goal, const std::string& machine,
                            const KnobSet& set, const Configuration& start_config,
                            const MeasurementRecord& first_window);

std::vector<RunRecord> retrieve(const VectorStore& store, const Embedder& embedder,
                                const std::string& query, std::size_t k);

// Transfer-setting retrieval: runs whose run_id starts with exclude_prefix
// are held out of the ranking (same-workload exclusion).
std::vector<RunRecord> retrieve_excluding(const VectorStore& store, const Embedder& embedder,
                                          const std::string& query, std::size_t k,
                                          const std::string& exclude_prefix);

// One reasoning request that compresses the retrieved runs into a short
// textual prior. A gateway error yields nullopt and the session stays cold.
std::optional<MemoryPrior> synthesize_prior(const std::vector<RunRecord>& runs,
                                            Gateway& gateway, const ResponseSchema& schema,
                                            int window);

void store_run(VectorStore& store, const Embedder& embedder, RunRecord record);

} // namespace knobtune
