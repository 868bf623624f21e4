#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <semaphore>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "t2sa/digest.hpp"
#include "t2sa/error.hpp"
#include "t2sa/parallel.hpp"
#include "t2sa/text.hpp"
#include "t2sa/tokenizer.hpp"
#include "t2sa/types.hpp"

namespace t2sa {

struct GatewayConfig {
    std::string base_url = "http://127.0.0.1:8000/v1";
    std::string api_key;
    std::string embed_model_id = "embedding-model";
    std::string chat_model_id = "chat-model";
    std::string score_model_id = "score-model";
    std::size_t max_in_flight = 4;
    std::size_t retry_limit = 3;  // retries after the first attempt
    std::chrono::milliseconds timeout{60000};
    std::chrono::milliseconds retry_backoff{200};
    std::size_t batch_size = 64;
    std::string cache_dir;  // empty keeps the embedding cache in memory
    std::string log_path;   // empty disables the request log

    void validate() const {
        if (max_in_flight < 1) throw UsageError("max_in_flight must be >= 1");
        if (batch_size < 1) throw UsageError("embedding batch size must be >= 1");
        if (timeout.count() <= 0) throw UsageError("timeout must be positive");
    }

    // Everything except the secret.
    ordered_json echo() const {
        return {{"base_url", base_url},           {"embed_model_id", embed_model_id},
                {"chat_model_id", chat_model_id}, {"score_model_id", score_model_id},
                {"max_in_flight", max_in_flight}, {"retry_limit", retry_limit},
                {"timeout_ms", timeout.count()},  {"batch_size", batch_size}};
    }

    static std::string api_key_from_env(const char* var = "T2SA_API_KEY") {
        const char* v = std::getenv(var);
        return v ? std::string(v) : std::string();
    }
};

struct EmbeddingVector {
    std::vector<double> values;
    std::string model_id;
    std::string text_hash;

    std::vector<double> normalized() const {
        double norm = 0.0;
        for (double v : values) norm += v * v;
        norm = std::sqrt(norm);
        std::vector<double> out(values);
        if (norm > 0.0)
            for (double& v : out) v /= norm;
        return out;
    }
};

struct ChatParams {
    std::optional<double> temperature;
    std::optional<int> max_tokens;
};

struct TokenUsage {
    std::size_t prompt_tokens = 0;
    std::size_t completion_tokens = 0;
};

struct ChatResult {
    std::string text;
    std::size_t attempts = 1;
    std::optional<TokenUsage> usage;
};

struct GatewayStats {
    std::size_t http_requests = 0;
    std::size_t retries = 0;
    std::size_t embed_requests = 0;
    std::size_t chat_requests = 0;
    std::size_t score_requests = 0;
    std::size_t cache_hits = 0;
    std::size_t prompt_tokens = 0;
    std::size_t completion_tokens = 0;
};

// Embedding cache keyed by (model id, content digest), optionally backed by
// an append-only JSONL file.
class EmbeddingCache {
public:
    explicit EmbeddingCache(const std::string& dir = {}) {
        if (dir.empty()) return;
        std::filesystem::create_directories(dir);
        path_ = (std::filesystem::path(dir) / "embeddings.jsonl").string();
        std::ifstream in(path_);
        std::string line;
        while (std::getline(in, line)) {
            if (text::trim(line).empty()) continue;
            nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
            // A torn final write leaves an unparseable line; skip it.
            if (j.is_discarded() || !j.is_object()) continue;
            entries_[key(j.value("model", ""), j.value("digest", ""))] = j.value("values", std::vector<double>{});
        }
    }

    std::optional<std::vector<double>> get(const std::string& model, const std::string& digest) const {
        std::lock_guard lock(mutex_);
        auto it = entries_.find(key(model, digest));
        if (it == entries_.end()) return std::nullopt;
        return it->second;
    }

    void put(const std::string& model, const std::string& digest, const std::vector<double>& values) {
        std::lock_guard lock(mutex_);
        if (!entries_.emplace(key(model, digest), values).second) return;
        if (path_.empty()) return;
        std::ofstream out(path_, std::ios::app);
        out << nlohmann::json{{"model", model}, {"digest", digest}, {"values", values}}.dump() << '\n';
        out.flush();
        if (!out) throw DataError("failed writing embedding cache: " + path_);
    }

    std::size_t size() const {
        std::lock_guard lock(mutex_);
        return entries_.size();
    }

private:
    static std::string key(const std::string& model, const std::string& digest) { return model + '\t' + digest; }

    mutable std::mutex mutex_;
    std::string path_;
    std::unordered_map<std::string, std::vector<double>> entries_;
};

// Client for chat-completions, embeddings and score endpoints. Safe to share
// between threads; at most max_in_flight HTTP requests are outstanding.
class ModelGateway {
public:
    explicit ModelGateway(GatewayConfig config, const Tokenizer& tokenizer = default_tokenizer())
        : config_(std::move(config)),
          tokenizer_(&tokenizer),
          cache_(config_.cache_dir),
          slots_(std::make_unique<std::counting_semaphore<>>(static_cast<std::ptrdiff_t>(
              config_.max_in_flight < 1 ? 1 : config_.max_in_flight))) {
        config_.validate();
        static const std::regex url(R"(^(https?://[^/]+)(/.*)?$)");
        std::smatch m;
        if (!std::regex_match(config_.base_url, m, url)) throw UsageError("malformed endpoint URL: " + config_.base_url);
        origin_ = m[1].str();
        prefix_ = m[2].matched ? m[2].str() : std::string();
        while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
    }

    const GatewayConfig& config() const noexcept { return config_; }

    std::size_t count_tokens(std::string_view text) const { return tokenizer_->count(text); }

    // Order-preserving; each text is looked up in the cache first and the
    // rest are sent in batches of config.batch_size.
    std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) {
        if (texts.empty()) throw UsageError("embed needs at least one text");
        const std::string& model = config_.embed_model_id;

        std::vector<std::string> digests;
        digests.reserve(texts.size());
        for (const auto& t : texts) digests.push_back(sha256_hex(t));

        std::vector<std::size_t> pending;  // first occurrence of each uncached digest
        {
            std::map<std::string, bool> seen;
            for (std::size_t i = 0; i < texts.size(); ++i) {
                if (seen.contains(digests[i])) continue;
                seen[digests[i]] = true;
                if (cache_.get(model, digests[i])) {
                    bump(&GatewayStats::cache_hits);
                } else {
                    pending.push_back(i);
                }
            }
        }

        const std::size_t batch = config_.batch_size;
        const std::size_t batches = (pending.size() + batch - 1) / batch;
        std::vector<std::vector<std::vector<double>>> fetched(batches);
        parallel_for(batches, config_.max_in_flight, [&](std::size_t b) {
            std::size_t lo = b * batch;
            std::size_t hi = std::min(lo + batch, pending.size());
            nlohmann::json input = nlohmann::json::array();
            for (std::size_t k = lo; k < hi; ++k) input.push_back(texts[pending[k]]);
            bump(&GatewayStats::embed_requests);
            auto response = post_json("/embeddings", {{"model", model}, {"input", input}}, "embeddings request");
            fetched[b] = parse_embeddings(response, hi - lo);
        });

        for (std::size_t b = 0; b < batches; ++b) {
            for (std::size_t k = 0; k < fetched[b].size(); ++k) {
                check_dimension(model, fetched[b][k].size());
                cache_.put(model, digests[pending[b * batch + k]], fetched[b][k]);
            }
        }

        std::vector<EmbeddingVector> out;
        out.reserve(texts.size());
        for (std::size_t i = 0; i < texts.size(); ++i) {
            auto values = cache_.get(model, digests[i]);
            if (!values) throw ProtocolError("embedding missing for text " + std::to_string(i));
            check_dimension(model, values->size());
            out.push_back({std::move(*values), model, digests[i]});
        }
        return out;
    }

    ChatResult chat(const std::string& system_prompt, const std::string& user_prompt, const ChatParams& params = {}) {
        if (text::trim(system_prompt).empty() || text::trim(user_prompt).empty())
            throw UsageError("chat prompts must be non-empty");
        nlohmann::json body = {{"model", config_.chat_model_id},
                               {"messages",
                                {{{"role", "system"}, {"content", system_prompt}},
                                 {{"role", "user"}, {"content", user_prompt}}}}};
        if (params.temperature) body["temperature"] = *params.temperature;
        if (params.max_tokens) body["max_tokens"] = *params.max_tokens;

        bump(&GatewayStats::chat_requests);
        std::size_t attempts = 0;
        auto response = post_json("/chat/completions", body, "chat request", &attempts);

        ChatResult result;
        result.attempts = attempts;
        try {
            const auto& choices = response.at("choices");
            if (!choices.is_array() || choices.empty()) throw ProtocolError("chat response has no choices");
            const auto& content = choices.at(0).at("message").at("content");
            result.text = content.is_string() ? content.get<std::string>() : std::string();
            if (response.contains("usage") && response["usage"].is_object()) {
                TokenUsage u{response["usage"].value("prompt_tokens", std::size_t{0}),
                             response["usage"].value("completion_tokens", std::size_t{0})};
                add(&GatewayStats::prompt_tokens, u.prompt_tokens);
                add(&GatewayStats::completion_tokens, u.completion_tokens);
                result.usage = u;
            }
        } catch (const nlohmann::json::exception& e) {
            throw ProtocolError(std::string("malformed chat response: ") + e.what());
        }
        log({{"endpoint", "chat/completions"},
             {"attempts", attempts},
             {"request", body},
             {"response", result.text},
             {"usage", result.usage ? nlohmann::json{{"prompt_tokens", result.usage->prompt_tokens},
                                                     {"completion_tokens", result.usage->completion_tokens}}
                                    : nlohmann::json(nullptr)}});
        if (text::trim(result.text).empty()) throw EmptyCompletionError("chat service returned an empty completion");
        return result;
    }

    // Pair score from an external scorer (e.g. a served cross-encoder).
    double score(const std::string& text_1, const std::string& text_2) {
        bump(&GatewayStats::score_requests);
        auto response = post_json("/score", {{"model", config_.score_model_id}, {"text_1", text_1}, {"text_2", text_2}},
                                  "score request");
        try {
            const auto& data = response.at("data");
            if (!data.is_array() || data.size() != 1) throw ProtocolError("score response must carry one entry");
            return data.at(0).at("score").get<double>();
        } catch (const nlohmann::json::exception& e) {
            throw ProtocolError(std::string("malformed score response: ") + e.what());
        }
    }

    GatewayStats stats() const {
        std::lock_guard lock(stats_mutex_);
        return stats_;
    }

    std::size_t cache_size() const { return cache_.size(); }

private:
    void bump(std::size_t GatewayStats::*field) { add(field, 1); }
    void add(std::size_t GatewayStats::*field, std::size_t n) {
        std::lock_guard lock(stats_mutex_);
        stats_.*field += n;
    }

    void check_dimension(const std::string& model, std::size_t dim) {
        std::lock_guard lock(dim_mutex_);
        auto [it, inserted] = dimensions_.emplace(model, dim);
        if (!inserted && it->second != dim)
            throw ProtocolError("embedding dimension mismatch for model " + model + ": " + std::to_string(it->second) +
                                " vs " + std::to_string(dim));
    }

    std::vector<std::vector<double>> parse_embeddings(const nlohmann::json& response, std::size_t expected) {
        try {
            const auto& data = response.at("data");
            if (!data.is_array() || data.size() != expected)
                throw ProtocolError("embeddings response has " + std::to_string(data.size()) + " entries, expected " +
                                    std::to_string(expected));
            std::vector<std::vector<double>> out(expected);
            std::vector<bool> filled(expected, false);
            std::optional<std::size_t> dim;
            for (const auto& item : data) {
                auto index = item.at("index").get<std::size_t>();
                if (index >= expected || filled[index])
                    throw ProtocolError("embeddings response has bad or repeated index " + std::to_string(index));
                out[index] = item.at("embedding").get<std::vector<double>>();
                filled[index] = true;
                if (dim && *dim != out[index].size())
                    throw ProtocolError("embedding dimension mismatch within one response");
                dim = out[index].size();
            }
            if (dim && *dim == 0) throw ProtocolError("service returned empty embeddings");
            return out;
        } catch (const nlohmann::json::exception& e) {
            throw ProtocolError(std::string("malformed embeddings response: ") + e.what());
        }
    }

    nlohmann::json post_json(const std::string& path, const nlohmann::json& body, const std::string& what,
                             std::size_t* attempts_out = nullptr) {
        const std::string payload = body.dump();
        std::string last_error;
        for (std::size_t attempt = 0; attempt <= config_.retry_limit; ++attempt) {
            if (attempt > 0) {
                bump(&GatewayStats::retries);
                auto wait = config_.retry_backoff * (1LL << std::min<std::size_t>(attempt - 1, 6));
                std::this_thread::sleep_for(wait);
            }
            httplib::Result res;
            {
                slots_->acquire();
                struct Release {
                    std::counting_semaphore<>* s;
                    ~Release() { s->release(); }
                } release{slots_.get()};
                httplib::Client client(origin_);
                auto secs = std::chrono::duration_cast<std::chrono::seconds>(config_.timeout);
                auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(config_.timeout - secs);
                client.set_connection_timeout(secs.count(), usecs.count());
                client.set_read_timeout(secs.count(), usecs.count());
                client.set_write_timeout(secs.count(), usecs.count());
                if (!config_.api_key.empty()) client.set_bearer_token_auth(config_.api_key);
                bump(&GatewayStats::http_requests);
                res = client.Post(prefix_ + path, payload, "application/json");
            }
            if (attempts_out) *attempts_out = attempt + 1;
            if (!res) {
                last_error = httplib::to_string(res.error());
                continue;
            }
            if (res->status == 429 || res->status >= 500) {
                last_error = "HTTP " + std::to_string(res->status);
                continue;
            }
            if (res->status >= 400)
                throw TransportError(what + " rejected with HTTP " + std::to_string(res->status) + ": " + res->body);
            auto j = nlohmann::json::parse(res->body, nullptr, false);
            if (j.is_discarded()) throw ProtocolError(what + " returned invalid JSON");
            return j;
        }
        throw TransportError(what + " failed after " + std::to_string(config_.retry_limit + 1) +
                             " attempts: " + last_error);
    }

    void log(const nlohmann::json& entry) {
        if (config_.log_path.empty()) return;
        std::lock_guard lock(log_mutex_);
        std::ofstream out(config_.log_path, std::ios::app);
        out << entry.dump() << '\n';
    }

    GatewayConfig config_;
    const Tokenizer* tokenizer_;
    EmbeddingCache cache_;
    std::unique_ptr<std::counting_semaphore<>> slots_;
    std::string origin_;
    std::string prefix_;

    mutable std::mutex stats_mutex_;
    GatewayStats stats_;
    std::mutex dim_mutex_;
    std::map<std::string, std::size_t> dimensions_;
    std::mutex log_mutex_;
};

}  // namespace t2sa
