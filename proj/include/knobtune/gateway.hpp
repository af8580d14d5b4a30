#pragma once

#include "knobtune/registry.hpp"

#include <cstdint>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace knobtune {

enum class ModelRole { instant, reasoning };

std::string to_string(ModelRole r);

struct ModelEndpoint {
    std::string backend;  // scripted | http | noop
    std::string base_url;
    std::string model_name;
    double temperature = 0.7;
    std::string api_key_env;
    ModelRole role = ModelRole::instant;
    double timeout_s = 30.0;
    std::optional<double> price_input_per_token;
    std::optional<double> price_output_per_token;
    std::string script_path;    // scripted backend
    int latency_windows = 0;    // deterministic backends: windows until arrival
};

// Permitted reply fields, derived from the active tunable set.
class ResponseSchema {
public:
    ResponseSchema(const KnobSet& set, bool allow_trim = false);

    const KnobSet& set() const { return *set_; }
    bool allow_trim() const { return allow_trim_; }
    // Deterministic JSON-schema-style descriptor of the reply object.
    std::string descriptor() const;

private:
    const KnobSet* set_;
    bool allow_trim_;
};

struct TrimDirectives {
    // Ordinal bounds (integer values / enum indices), aligned at install.
    std::map<std::string, std::pair<std::int64_t, std::int64_t>> narrow;
    std::map<std::string, KnobValue> freeze;

    bool empty() const { return narrow.empty() && freeze.empty(); }
};

struct TokenUsage {
    std::int64_t input = 0;
    std::int64_t output = 0;
};

struct TunerResponse {
    std::map<std::string, KnobValue> updates;  // keys ⊆ schema permitted fields
    std::string justification;
    bool converged = false;
    std::vector<std::string> commands;  // quarantined: recorded, never executed
    std::optional<TrimDirectives> trim;
    TokenUsage usage;
    double latency_s = 0.0;
    bool errored = false;
    std::string error;

    static TunerResponse noop(const std::string& error_text = "");
    nlohmann::json to_json() const;
};

// Parses a structured reply against the schema. Malformed input is a value,
// not an exception: the result is an errored no-op carrying the raw text.
// Unknown fields (top-level or update keys) are quarantined into commands.
TunerResponse parse_structured(const std::string& reply_text, const ResponseSchema& schema);

class ModelBackend {
public:
    virtual ~ModelBackend() = default;
    virtual TunerResponse complete(const ModelEndpoint& endpoint, const std::string& prompt,
                                   const ResponseSchema& schema) = 0;
    // Deterministic backends resolve eagerly and deliver at a scheduled
    // window; HTTP resolves on a worker thread.
    virtual bool deterministic() const { return true; }
};

std::unique_ptr<ModelBackend> make_scripted_backend(const std::string& script_path);
std::unique_ptr<ModelBackend> make_noop_backend();
std::unique_ptr<ModelBackend> make_http_backend();

struct RequestLogEntry {
    ModelRole role = ModelRole::instant;
    int window = 0;
    TokenUsage usage;
    double latency_s = 0.0;
    bool errored = false;
};

struct UsageTotals {
    std::int64_t input = 0;
    std::int64_t output = 0;
    std::map<std::string, std::pair<std::int64_t, std::int64_t>> per_role;
    std::optional<double> cost;
};

// Issues prompts, parses replies, accounts usage. One retry on transport
// errors, then the failure surfaces as an errored no-op response.
class Gateway {
public:
    void configure(ModelRole role, ModelEndpoint endpoint);
    bool has_role(ModelRole role) const;
    const ModelEndpoint* endpoint(ModelRole role) const;

    TunerResponse request(ModelRole role, const std::string& prompt,
                          const ResponseSchema& schema, int window);

    // One concurrent in-flight request per role. Deterministic backends
    // resolve eagerly and become visible at issue window + latency_windows
    // (replay-stable); http backends run on a worker thread and become due
    // when the reply lands.
    struct AsyncHandle {
        bool taken = true;
        bool deterministic = true;
        int due_window = 0;
        TunerResponse response;
        std::shared_future<TunerResponse> future;

        bool pending() const { return !taken; }
        bool due(int window) const {
            if (taken)
                return false;
            if (deterministic)
                return window >= due_window;
            return future.wait_for(std::chrono::seconds(0)) == std::future_status::ready;
        }
        TunerResponse take() {
            taken = true;
            return deterministic ? response : future.get();
        }
    };

    AsyncHandle begin_request(ModelRole role, const std::string& prompt,
                              const ResponseSchema& schema, int window);

    std::vector<RequestLogEntry> request_log() const;  // snapshot under the log lock
    UsageTotals account_usage() const;

private:
    TunerResponse do_request(ModelRole role, const std::string& prompt,
                             const ResponseSchema& schema, int window);

    std::map<ModelRole, ModelEndpoint> endpoints_;
    std::map<ModelRole, std::unique_ptr<ModelBackend>> backends_;
    mutable std::mutex log_mu_;  // worker threads append completion entries
    std::vector<RequestLogEntry> log_;
};

} // namespace knobtune
