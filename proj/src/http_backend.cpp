#include "knobtune/errors.hpp"
#include "knobtune/gateway.hpp"
#include "knobtune/memory.hpp"

#include <cstdlib>

#include <httplib.h>

namespace knobtune {

namespace {

// Chat-completions wire protocol with a structured-output constraint where
// the server supports it; the schema also rides in the prompt for strict
// parsing either way.
class HttpBackend : public ModelBackend {
public:
    TunerResponse complete(const ModelEndpoint& endpoint, const std::string& prompt,
                           const ResponseSchema& schema) override {
        std::string host = endpoint.base_url;
        std::string path_prefix;
        auto scheme_end = host.find("://");
        if (scheme_end != std::string::npos)
            host = host.substr(scheme_end + 3);
        auto slash = host.find('/');
        if (slash != std::string::npos) {
            path_prefix = host.substr(slash);
            host = host.substr(0, slash);
        }
        httplib::Client client(host);
        client.set_connection_timeout(static_cast<int>(endpoint.timeout_s), 0);
        client.set_read_timeout(static_cast<int>(endpoint.timeout_s), 0);

        httplib::Headers headers;
        if (!endpoint.api_key_env.empty()) {
            const char* key = std::getenv(endpoint.api_key_env.c_str());
            if (!key)
                throw SessionError("api key env var not set: " + endpoint.api_key_env);
            headers.emplace("Authorization", std::string("Bearer ") + key);
        }

        nlohmann::json body = {
            {"model", endpoint.model_name},
            {"temperature", endpoint.temperature},
            {"messages", nlohmann::json::array({{{"role", "user"}, {"content", prompt}}})},
            {"response_format", {{"type", "json_object"}}},
        };
        auto res = client.Post(path_prefix + "/chat/completions", headers, body.dump(),
                               "application/json");
        if (!res)
            throw std::runtime_error("http transport error: " + httplib::to_string(res.error()));
        if (res->status != 200)
            throw std::runtime_error("http status " + std::to_string(res->status) + ": " +
                                     res->body.substr(0, 200));
        nlohmann::json reply = nlohmann::json::parse(res->body, nullptr, false);
        if (reply.is_discarded())
            throw std::runtime_error("http reply is not json");
        std::string content;
        try {
            content = reply.at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const std::exception&) {
            throw std::runtime_error("http reply missing choices[0].message.content");
        }
        TunerResponse r = parse_structured(content, schema);
        if (reply.contains("usage")) {
            r.usage.input = reply["usage"].value("prompt_tokens", 0);
            r.usage.output = reply["usage"].value("completion_tokens", 0);
        }
        return r;
    }

    bool deterministic() const override { return false; }
};

class HttpEmbedder : public Embedder {
public:
    HttpEmbedder(std::string base_url, std::string model, std::string api_key_env)
        : base_url_(std::move(base_url)), model_(std::move(model)),
          api_key_env_(std::move(api_key_env)) {}

    std::vector<double> embed(const std::string& text) const override {
        std::string host = base_url_;
        std::string path_prefix;
        auto scheme_end = host.find("://");
        if (scheme_end != std::string::npos)
            host = host.substr(scheme_end + 3);
        auto slash = host.find('/');
        if (slash != std::string::npos) {
            path_prefix = host.substr(slash);
            host = host.substr(0, slash);
        }
        httplib::Client client(host);
        httplib::Headers headers;
        if (!api_key_env_.empty()) {
            const char* key = std::getenv(api_key_env_.c_str());
            if (!key)
                throw SessionError("api key env var not set: " + api_key_env_);
            headers.emplace("Authorization", std::string("Bearer ") + key);
        }
        nlohmann::json body = {{"model", model_}, {"input", text}};
        auto res = client.Post(path_prefix + "/embeddings", headers, body.dump(),
                               "application/json");
        if (!res || res->status != 200)
            throw SessionError("embedding endpoint failed");
        nlohmann::json reply = nlohmann::json::parse(res->body);
        auto v = reply.at("data").at(0).at("embedding").get<std::vector<double>>();
        return l2_normalize(std::move(v));
    }

    std::size_t dimension() const override { return 0; }  // endpoint-defined

private:
    std::string base_url_;
    std::string model_;
    std::string api_key_env_;
};

} // namespace

std::unique_ptr<ModelBackend> make_http_backend() {
    return std::make_unique<HttpBackend>();
}

std::unique_ptr<Embedder> make_http_embedder(std::string base_url, std::string model,
                                             std::string api_key_env) {
    return std::make_unique<HttpEmbedder>(std::move(base_url), std::move(model),
                                          std::move(api_key_env));
}

} // namespace knobtune
