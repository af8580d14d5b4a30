#include "knobtune/gateway.hpp"

#include "knobtune/errors.hpp"
#include "knobtune/kvdoc.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace knobtune {

std::string to_string(ModelRole r) {
    return r == ModelRole::instant ? "instant" : "reasoning";
}

ResponseSchema::ResponseSchema(const KnobSet& set, bool allow_trim)
    : set_(&set), allow_trim_(allow_trim) {}

std::string ResponseSchema::descriptor() const {
    nlohmann::ordered_json updates = {{"type", "object"}, {"properties", nlohmann::ordered_json::object()}};
    for (const auto& m : set_->members()) {
        nlohmann::ordered_json field;
        switch (m.kind) {
        case ValueKind::integer:
            field = {{"type", "integer"}, {"minimum", m.domain.min}, {"maximum", m.domain.max}};
            break;
        case ValueKind::boolean:
            field = {{"type", "boolean"}};
            break;
        case ValueKind::enumerated:
            field = {{"type", "string"}, {"enum", m.enum_values}};
            break;
        }
        updates["properties"][m.name] = field;
    }
    nlohmann::ordered_json schema = {
        {"type", "object"},
        {"properties",
         nlohmann::ordered_json{{"updates", updates},
                                {"justification", {{"type", "string"}}},
                                {"converged", {{"type", "boolean"}}},
                                {"commands", {{"type", "array"}, {"items", {{"type", "string"}}}}}}},
        {"required", nlohmann::ordered_json::array({"updates", "justification", "converged"})}};
    if (allow_trim_) {
        schema["properties"]["trim"] = {
            {"type", "object"},
            {"properties",
             nlohmann::ordered_json{
                 {"narrow", {{"type", "object"}}},
                 {"freeze", {{"type", "object"}}}}}};
    }
    return schema.dump(2);
}

TunerResponse TunerResponse::noop(const std::string& error_text) {
    TunerResponse r;
    r.errored = !error_text.empty();
    r.error = error_text;
    return r;
}

nlohmann::json TunerResponse::to_json() const {
    nlohmann::json u = nlohmann::json::object();
    for (const auto& [k, v] : updates)
        u[k] = v.to_json();
    nlohmann::json j = {{"updates", u},
                        {"justification", justification},
                        {"converged", converged},
                        {"commands", commands},
                        {"usage", {{"in", usage.input}, {"out", usage.output}}},
                        {"latency_s", latency_s},
                        {"errored", errored}};
    if (!error.empty())
        j["error"] = error;
    if (trim) {
        nlohmann::json n = nlohmann::json::object();
        for (const auto& [k, b] : trim->narrow)
            n[k] = {b.first, b.second};
        nlohmann::json f = nlohmann::json::object();
        for (const auto& [k, v] : trim->freeze)
            f[k] = v.to_json();
        j["trim"] = {{"narrow", n}, {"freeze", f}};
    }
    return j;
}

namespace {

// Coerce a json value into the knob's kind; nullopt when it cannot be.
std::optional<KnobValue> coerce(const KnobSpec& spec, const nlohmann::json& j) {
    switch (spec.kind) {
    case ValueKind::integer:
        if (j.is_number_integer())
            return KnobValue::of_int(j.get<std::int64_t>());
        if (j.is_number_float()) {
            const double d = j.get<double>();
            if (d == static_cast<double>(static_cast<std::int64_t>(d)))
                return KnobValue::of_int(static_cast<std::int64_t>(d));
            return std::nullopt;
        }
        if (j.is_string())
            return spec.parse_raw(j.get<std::string>());
        return std::nullopt;
    case ValueKind::boolean:
        if (j.is_boolean())
            return KnobValue::of_bool(j.get<bool>());
        if (j.is_number_integer())
            return KnobValue::of_bool(j.get<std::int64_t>() != 0);
        if (j.is_string())
            return spec.parse_raw(j.get<std::string>());
        return std::nullopt;
    case ValueKind::enumerated:
        if (j.is_string())
            return KnobValue::of_token(j.get<std::string>());
        return std::nullopt;
    }
    return std::nullopt;
}

std::optional<std::int64_t> trim_bound(const KnobSpec& spec, const nlohmann::json& j) {
    if (j.is_number_integer())
        return j.get<std::int64_t>();
    if (j.is_string()) {
        auto v = spec.parse_raw(j.get<std::string>());
        if (v)
            return spec.ordinal(*v);
    }
    return std::nullopt;
}

} // namespace

TunerResponse parse_structured(const std::string& reply_text, const ResponseSchema& schema) {
    nlohmann::json j = nlohmann::json::parse(reply_text, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
        TunerResponse r = TunerResponse::noop("malformed reply");
        r.justification = reply_text.substr(0, 200);
        return r;
    }
    TunerResponse r;
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& key = it.key();
        if (key == "updates" && it.value().is_object()) {
            for (auto u = it.value().begin(); u != it.value().end(); ++u) {
                const KnobSpec* spec = schema.set().find(u.key());
                if (!spec) {
                    r.commands.push_back("dropped:" + u.key() + "=" + u.value().dump());
                    continue;
                }
                auto v = coerce(*spec, u.value());
                if (!v) {
                    r.commands.push_back("dropped:" + u.key() + "=" + u.value().dump());
                    continue;
                }
                r.updates[u.key()] = *v;
            }
        } else if (key == "justification" && it.value().is_string()) {
            r.justification = it.value().get<std::string>();
        } else if (key == "converged" && it.value().is_boolean()) {
            r.converged = it.value().get<bool>();
        } else if (key == "commands" && it.value().is_array()) {
            for (const auto& c : it.value())
                r.commands.push_back(c.is_string() ? c.get<std::string>() : c.dump());
        } else if (key == "trim" && schema.allow_trim() && it.value().is_object()) {
            TrimDirectives t;
            const auto& tv = it.value();
            if (tv.contains("narrow") && tv["narrow"].is_object()) {
                for (auto n = tv["narrow"].begin(); n != tv["narrow"].end(); ++n) {
                    const KnobSpec* spec = schema.set().find(n.key());
                    if (!spec || !n.value().is_array() || n.value().size() != 2) {
                        r.commands.push_back("dropped:trim.narrow." + n.key());
                        continue;
                    }
                    auto lo = trim_bound(*spec, n.value()[0]);
                    auto hi = trim_bound(*spec, n.value()[1]);
                    if (!lo || !hi) {
                        r.commands.push_back("dropped:trim.narrow." + n.key());
                        continue;
                    }
                    t.narrow[n.key()] = {*lo, *hi};
                }
            }
            if (tv.contains("freeze") && tv["freeze"].is_object()) {
                for (auto f = tv["freeze"].begin(); f != tv["freeze"].end(); ++f) {
                    const KnobSpec* spec = schema.set().find(f.key());
                    std::optional<KnobValue> v;
                    if (spec)
                        v = coerce(*spec, f.value());
                    if (!v) {
                        r.commands.push_back("dropped:trim.freeze." + f.key());
                        continue;
                    }
                    t.freeze[f.key()] = *v;
                }
            }
            if (!t.empty())
                r.trim = t;
        } else {
            // Unknown fields are quarantined: recorded, never executed.
            r.commands.push_back("quarantined:" + key + "=" + it.value().dump());
        }
    }
    return r;
}

namespace {

class NoopBackend : public ModelBackend {
public:
    TunerResponse complete(const ModelEndpoint&, const std::string& prompt,
                           const ResponseSchema&) override {
        TunerResponse r;
        r.usage.input = static_cast<std::int64_t>(prompt.size() / 4);
        r.usage.output = 8;
        return r;
    }
};

class ScriptedBackend : public ModelBackend {
public:
    explicit ScriptedBackend(const std::string& path) {
        std::istringstream in(read_file(path));
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty() || line[0] == '#')
                continue;
            nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
            if (j.is_discarded() || !j.is_object())
                throw ConfigError("script " + path + " line " + std::to_string(lineno) +
                                  ": not a json object");
            const std::string role = j.value("role", "instant");
            if (role == "reasoning")
                reasoning_.push_back(j);
            else
                instant_.push_back(j);
        }
    }

    TunerResponse complete(const ModelEndpoint& endpoint, const std::string& prompt,
                           const ResponseSchema& schema) override {
        auto& queue = endpoint.role == ModelRole::reasoning ? reasoning_ : instant_;
        auto& next = endpoint.role == ModelRole::reasoning ? reasoning_next_ : instant_next_;
        TunerResponse r;
        if (next >= queue.size()) {
            r = TunerResponse::noop("script exhausted");
        } else {
            nlohmann::json j = queue[next++];
            j.erase("role");
            r = parse_structured(j.dump(), schema);
        }
        r.usage.input = static_cast<std::int64_t>(prompt.size() / 4);
        r.usage.output = 48;
        return r;
    }

private:
    std::vector<nlohmann::json> instant_, reasoning_;
    std::size_t instant_next_ = 0, reasoning_next_ = 0;
};

} // namespace

std::unique_ptr<ModelBackend> make_scripted_backend(const std::string& script_path) {
    return std::make_unique<ScriptedBackend>(script_path);
}

std::unique_ptr<ModelBackend> make_noop_backend() {
    return std::make_unique<NoopBackend>();
}

void Gateway::configure(ModelRole role, ModelEndpoint endpoint) {
    endpoint.role = role;
    if (endpoint.backend == "scripted") {
        backends_[role] = make_scripted_backend(endpoint.script_path);
    } else if (endpoint.backend == "noop") {
        backends_[role] = make_noop_backend();
    } else if (endpoint.backend == "http") {
        backends_[role] = make_http_backend();
    } else {
        throw ConfigError("unknown model backend: " + endpoint.backend);
    }
    endpoints_[role] = std::move(endpoint);
}

bool Gateway::has_role(ModelRole role) const {
    return endpoints_.count(role) > 0;
}

const ModelEndpoint* Gateway::endpoint(ModelRole role) const {
    auto it = endpoints_.find(role);
    return it == endpoints_.end() ? nullptr : &it->second;
}

TunerResponse Gateway::do_request(ModelRole role, const std::string& prompt,
                                  const ResponseSchema& schema, int window) {
    auto it = backends_.find(role);
    if (it == backends_.end())
        throw ConfigError("no endpoint configured for role " + to_string(role));
    const ModelEndpoint& ep = endpoints_.at(role);
    const auto t0 = std::chrono::steady_clock::now();
    TunerResponse r;
    try {
        r = it->second->complete(ep, prompt, schema);
    } catch (const std::exception& first) {
        try {
            r = it->second->complete(ep, prompt, schema);
        } catch (const std::exception& second) {
            r = TunerResponse::noop(std::string("transport failure after retry: ") +
                                    second.what());
        }
        (void)first;
    }
    r.latency_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    {
        std::lock_guard<std::mutex> g(log_mu_);
        log_.push_back({role, window, r.usage, r.latency_s, r.errored});
    }
    return r;
}

TunerResponse Gateway::request(ModelRole role, const std::string& prompt,
                               const ResponseSchema& schema, int window) {
    return do_request(role, prompt, schema, window);
}

Gateway::AsyncHandle Gateway::begin_request(ModelRole role, const std::string& prompt,
                                            const ResponseSchema& schema, int window) {
    AsyncHandle h;
    h.taken = false;
    const ModelEndpoint* ep = endpoint(role);
    auto it = backends_.find(role);
    if (it != backends_.end() && !it->second->deterministic()) {
        // The reply computes on a worker thread while the fast loop keeps
        // acting; the schema is captured by value (it only points at the
        // session-owned knob set).
        h.deterministic = false;
        h.due_window = window;
        const ResponseSchema schema_copy = schema;
        h.future = std::async(std::launch::async,
                              [this, role, prompt, schema_copy, window] {
                                  return do_request(role, prompt, schema_copy, window);
                              })
                       .share();
        return h;
    }
    h.response = do_request(role, prompt, schema, window);
    h.due_window = window + (ep ? ep->latency_windows : 0);
    return h;
}

std::vector<RequestLogEntry> Gateway::request_log() const {
    std::lock_guard<std::mutex> g(log_mu_);
    return log_;
}

UsageTotals Gateway::account_usage() const {
    std::lock_guard<std::mutex> g(log_mu_);
    UsageTotals t;
    double cost = 0.0;
    bool any_price = false;
    for (const auto& e : log_) {
        t.input += e.usage.input;
        t.output += e.usage.output;
        auto& [in, out] = t.per_role[to_string(e.role)];
        in += e.usage.input;
        out += e.usage.output;
        const ModelEndpoint* ep = endpoint(e.role);
        if (ep && ep->price_input_per_token && ep->price_output_per_token) {
            any_price = true;
            cost += static_cast<double>(e.usage.input) * *ep->price_input_per_token +
                    static_cast<double>(e.usage.output) * *ep->price_output_per_token;
        }
    }
    if (any_price)
        t.cost = cost;
    return t;
}

} // namespace knobtune
