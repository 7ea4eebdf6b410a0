#pragma once

#include "exsel/error.hpp"
#include "exsel/scorer.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdlib>
#include <optional>
#include <string>
#include <thread>

namespace exsel {

struct RemoteScorerConfig {
    std::string endpoint;  // e.g. "http://localhost:8080"
    std::string token;     // bearer token, empty for none
    int retries = 3;       // extra attempts after the first failure
    std::chrono::milliseconds initial_backoff{100};
    std::chrono::milliseconds max_backoff{2000};
    std::chrono::milliseconds timeout{30000};

    /// Fills endpoint/token from SCORER_ENDPOINT / SCORER_TOKEN when unset.
    static RemoteScorerConfig from_environment(std::string endpoint = {}) {
        RemoteScorerConfig cfg;
        cfg.endpoint = std::move(endpoint);
        if (cfg.endpoint.empty()) {
            if (const char* e = std::getenv("SCORER_ENDPOINT")) cfg.endpoint = e;
        }
        if (const char* t = std::getenv("SCORER_TOKEN")) cfg.token = t;
        return cfg;
    }
};

/// Scorer backed by an HTTP JSON service:
///   POST /score    {"prompt", "continuation"} -> {"logprob"}
///   POST /generate {"prompt", "max_tokens"}   -> {"text"}
class RemoteScorer : public Scorer {
  public:
    explicit RemoteScorer(RemoteScorerConfig config) : config_(std::move(config)) {
        if (config_.endpoint.empty()) throw ParameterError("remote scorer: no endpoint configured");
        if (config_.retries < 0) throw ParameterError("remote scorer: retries must be non-negative");
        while (!config_.endpoint.empty() && config_.endpoint.back() == '/') config_.endpoint.pop_back();
    }

    const RemoteScorerConfig& config() const { return config_; }

    double score(const ScoreRequest& request) const override {
        const nlohmann::json body = {{"prompt", request.prompt_text}, {"continuation", request.continuation_text}};
        const auto reply = post("/score", body);
        auto it = reply.find("logprob");
        if (it == reply.end() || !it->is_number()) throw ProtocolError("remote scorer: /score reply lacks numeric \"logprob\"");
        return it->get<double>();
    }

    std::string generate(const std::string& prompt, int max_tokens = 64) const override {
        const nlohmann::json body = {{"prompt", prompt}, {"max_tokens", max_tokens}};
        const auto reply = post("/generate", body);
        auto it = reply.find("text");
        if (it == reply.end() || !it->is_string()) throw ProtocolError("remote scorer: /generate reply lacks string \"text\"");
        return it->get<std::string>();
    }

  private:
    nlohmann::json post(const std::string& path, const nlohmann::json& body) const {
        // one client per call: httplib clients are not safe to share across threads
        httplib::Client client(config_.endpoint);
        const auto secs = std::chrono::duration_cast<std::chrono::seconds>(config_.timeout);
        const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(config_.timeout - secs);
        client.set_connection_timeout(secs.count(), usecs.count());
        client.set_read_timeout(secs.count(), usecs.count());
        client.set_write_timeout(secs.count(), usecs.count());
        httplib::Headers headers;
        if (!config_.token.empty()) headers.emplace("Authorization", "Bearer " + config_.token);
        const std::string payload = body.dump();

        auto backoff = config_.initial_backoff;
        std::string last_error;
        const int attempts = config_.retries + 1;
        for (int attempt = 1; attempt <= attempts; ++attempt) {
            auto res = client.Post(path, headers, payload, "application/json");
            if (res && res->status == 200) {
                try {
                    return nlohmann::json::parse(res->body);
                } catch (const nlohmann::json::parse_error& e) {
                    throw ProtocolError("remote scorer: malformed JSON from " + path + ": " + e.what());
                }
            }
            if (res) {
                last_error = "HTTP " + std::to_string(res->status) + " from " + path;
                // client errors other than throttling will not improve on retry
                if (res->status >= 400 && res->status < 500 && res->status != 408 && res->status != 429) {
                    throw TransportError("remote scorer: " + last_error, attempt);
                }
            } else {
                last_error = "request to " + config_.endpoint + path + " failed: " + httplib::to_string(res.error());
            }
            if (attempt < attempts) {
                std::this_thread::sleep_for(backoff);
                backoff = std::min(backoff * 2, config_.max_backoff);
            }
        }
        throw TransportError("remote scorer: " + last_error, attempts);
    }

    RemoteScorerConfig config_;
};

}  // namespace exsel
