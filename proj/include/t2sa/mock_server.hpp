#pragma once

#include <algorithm>
#include <atomic>
#include <memory>
#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <mutex>
#include <regex>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "t2sa/error.hpp"
#include "t2sa/text.hpp"

namespace t2sa {

struct MockReply {
    int status = 200;
    std::string content;
    std::chrono::milliseconds delay{0};
};

struct ChatCall {
    std::string system;
    std::string user;
    std::size_t sequence = 0;  // 0-based arrival order of chat requests
};

using ChatHandler = std::function<MockReply(const ChatCall&)>;
using EmbeddingHandler = std::function<std::vector<double>(const std::string&)>;
using ScoreHandler = std::function<double(const std::string&, const std::string&)>;

// Signed feature hashing of content words; deterministic and cheap, and
// texts sharing vocabulary land close in cosine terms.
inline std::vector<double> hashed_embedding(std::string_view s, std::size_t dim = 256) {
    std::vector<double> v(dim, 0.0);
    for (const auto& w : text::content_words(s)) {
        auto h = text::fnv1a(w);
        v[h % dim] += (h >> 63) ? -1.0 : 1.0;
    }
    return v;
}

namespace mock {

// Extracts the story and chunk from a judge prompt built from the default
// user template.
inline bool split_judge_prompt(const std::string& user, std::string& story, std::string& chunk) {
    auto s = user.find("User Story:");
    auto c = user.find("Chunk Text:", s == std::string::npos ? 0 : s);
    if (s == std::string::npos || c == std::string::npos) return false;
    auto a = user.rfind("Answer:");
    if (a == std::string::npos || a < c) a = user.size();
    story = std::string(text::trim(std::string_view(user).substr(s + 11, c - s - 11)));
    chunk = std::string(text::trim(std::string_view(user).substr(c + 11, a - c - 11)));
    return true;
}

inline std::size_t shared_content_words(std::string_view a, std::string_view b) {
    auto wa = text::content_words(a);
    auto wb = text::content_words(b);
    std::size_t n = 0;
    for (const auto& w : wa) n += wb.count(w);
    return n;
}

inline MockReply keyword_full_context(const std::string& user, std::size_t min_shared) {
    auto story_pos = user.find("User Story:");
    auto chunks_pos = user.find("\nChunks:\n");
    if (story_pos == std::string::npos || chunks_pos == std::string::npos) return {200, "none"};
    std::string story(text::trim(std::string_view(user).substr(story_pos + 11, chunks_pos - story_pos - 11)));
    static const std::regex marker(R"(^\[(\d+)\] ?(.*)$)");
    std::map<std::size_t, std::string> chunks;
    std::size_t current = 0;
    bool open = false;
    for (const auto& line : text::split_lines(user.substr(chunks_pos + 9))) {
        std::smatch m;
        if (std::regex_match(line, m, marker)) {
            current = std::stoul(m[1].str());
            chunks[current] = m[2].str();
            open = true;
        } else if (open && !text::starts_with_ci(line, "Answer:")) {
            chunks[current] += "\n" + line;
        }
    }
    std::string answer;
    for (const auto& [idx, body] : chunks) {
        if (shared_content_words(story, body) < min_shared) continue;
        if (!answer.empty()) answer += ", ";
        answer += std::to_string(idx);
    }
    return {200, answer.empty() ? "none" : answer};
}

}  // namespace mock

// In-process HTTP service speaking the chat-completions, embeddings and
// score wire shapes, with scripting, fault injection and a concurrency probe.
class MockServer {
public:
    MockServer() {
        chat_handler_ = constant("1");
        embedding_handler_ = [](const std::string& s) { return hashed_embedding(s); };
        score_handler_ = [](const std::string& a, const std::string& b) {
            auto wa = text::content_words(a);
            auto wb = text::content_words(b);
            std::size_t inter = 0;
            for (const auto& w : wa) inter += wb.count(w);
            std::size_t uni = wa.size() + wb.size() - inter;
            return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
        };
        server_.new_task_queue = [] { return new httplib::ThreadPool(32); };
        server_.Post("/v1/chat/completions",
                     [this](const httplib::Request& req, httplib::Response& res) { handle_chat(req, res); });
        server_.Post("/v1/embeddings",
                     [this](const httplib::Request& req, httplib::Response& res) { handle_embeddings(req, res); });
        server_.Post("/v1/score",
                     [this](const httplib::Request& req, httplib::Response& res) { handle_score(req, res); });
        server_.Get("/health", [](const httplib::Request&, httplib::Response& res) {
            res.set_content(R"({"status":"ok"})", "application/json");
        });
    }

    ~MockServer() { stop(); }

    MockServer(const MockServer&) = delete;
    MockServer& operator=(const MockServer&) = delete;

    // Binds to 127.0.0.1 (port 0 picks a free one) and serves on a thread.
    int start(int port = 0) {
        port_ = port == 0 ? server_.bind_to_any_port("127.0.0.1") : (server_.bind_to_port("127.0.0.1", port) ? port : -1);
        if (port_ < 0) throw TransportError("mock server could not bind");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
        return port_;
    }

    void stop() {
        if (thread_.joinable()) {
            server_.stop();
            thread_.join();
        }
    }

    // Blocks until stop() is called from another thread.
    void wait() {
        if (thread_.joinable()) thread_.join();
    }

    int port() const noexcept { return port_; }
    std::string url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1"; }

    void set_chat_handler(ChatHandler h) {
        std::lock_guard lock(mutex_);
        chat_handler_ = std::move(h);
    }
    void set_embedding_handler(EmbeddingHandler h) {
        std::lock_guard lock(mutex_);
        embedding_handler_ = std::move(h);
    }
    void set_score_handler(ScoreHandler h) {
        std::lock_guard lock(mutex_);
        score_handler_ = std::move(h);
    }
    // Returns embedding data entries in reverse order; clients must map by index.
    void set_reverse_embedding_order(bool on) { reverse_embeddings_ = on; }
    // Fixed latency added to every request.
    void set_latency(std::chrono::milliseconds d) { latency_ms_ = d.count(); }
    // The next n requests (any endpoint) fail with `status`, or stall for
    // `delay` first when status is 200.
    void fail_next(std::size_t n, int status = 500, std::chrono::milliseconds delay = {}) {
        std::lock_guard lock(mutex_);
        for (std::size_t i = 0; i < n; ++i) faults_.push_back({status, {}, delay});
    }

    std::size_t max_in_flight_observed() const noexcept { return max_in_flight_.load(); }
    std::size_t in_flight() const noexcept { return in_flight_.load(); }
    std::size_t requests(const std::string& endpoint) const {
        std::lock_guard lock(mutex_);
        auto it = counts_.find(endpoint);
        return it == counts_.end() ? 0 : it->second;
    }
    std::size_t chat_requests() const { return requests("chat"); }
    std::size_t embedding_requests() const { return requests("embeddings"); }
    void reset_probe() {
        std::lock_guard lock(mutex_);
        counts_.clear();
        max_in_flight_ = in_flight_.load();
    }

    static ChatHandler constant(std::string reply) {
        return [reply = std::move(reply)](const ChatCall&) { return MockReply{200, reply}; };
    }

    // Replies in the order this handler is called; the last reply repeats once
    // the script runs out.
    static ChatHandler sequence(std::vector<MockReply> replies) {
        auto next = std::make_shared<std::atomic<std::size_t>>(0);
        return [replies = std::move(replies), next](const ChatCall&) {
            if (replies.empty()) return MockReply{200, ""};
            return replies[std::min(next->fetch_add(1), replies.size() - 1)];
        };
    }

    // "1" iff story and chunk share >= min_shared content words. Full-context
    // prompts get the list of qualifying chunk numbers.
    static ChatHandler keyword_judge(std::size_t min_shared) {
        return [min_shared](const ChatCall& call) {
            if (call.user.find("\nChunks:\n") != std::string::npos)
                return mock::keyword_full_context(call.user, min_shared);
            std::string story, chunk;
            if (!mock::split_judge_prompt(call.user, story, chunk)) return MockReply{200, "0"};
            return MockReply{200, mock::shared_content_words(story, chunk) >= min_shared ? "1" : "0"};
        };
    }

private:
    struct Probe {
        MockServer* self;
        explicit Probe(MockServer* s, const std::string& endpoint) : self(s) {
            auto now = ++self->in_flight_;
            auto seen = self->max_in_flight_.load();
            while (now > seen && !self->max_in_flight_.compare_exchange_weak(seen, now)) {
            }
            std::lock_guard lock(self->mutex_);
            ++self->counts_[endpoint];
        }
        ~Probe() { --self->in_flight_; }
    };

    // Applies latency and any queued fault; returns true when the request
    // was answered with an injected failure.
    bool inject(httplib::Response& res) {
        MockReply fault{200, {}, {}};
        bool has_fault = false;
        {
            std::lock_guard lock(mutex_);
            if (!faults_.empty()) {
                fault = faults_.front();
                faults_.erase(faults_.begin());
                has_fault = true;
            }
        }
        auto latency = latency_ms_.load();
        if (latency > 0) std::this_thread::sleep_for(std::chrono::milliseconds(latency));
        if (!has_fault) return false;
        if (fault.delay.count() > 0) std::this_thread::sleep_for(fault.delay);
        if (fault.status == 200) return false;
        error(res, fault.status, "injected failure");
        return true;
    }

    static void error(httplib::Response& res, int status, const std::string& message) {
        res.status = status;
        res.set_content(nlohmann::json{{"error", {{"message", message}}}}.dump(), "application/json");
    }

    void handle_chat(const httplib::Request& req, httplib::Response& res) {
        Probe probe(this, "chat");
        if (inject(res)) return;
        auto body = nlohmann::json::parse(req.body, nullptr, false);
        if (body.is_discarded() || !body.contains("messages")) return error(res, 400, "bad chat request");
        ChatCall call;
        for (const auto& m : body["messages"]) {
            if (m.value("role", "") == "system") call.system = m.value("content", "");
            if (m.value("role", "") == "user") call.user = m.value("content", "");
        }
        ChatHandler handler;
        {
            std::lock_guard lock(mutex_);
            call.sequence = chat_sequence_++;
            handler = chat_handler_;
        }
        MockReply reply = handler(call);
        if (reply.delay.count() > 0) std::this_thread::sleep_for(reply.delay);
        if (reply.status != 200) return error(res, reply.status, "scripted failure");
        auto words = [](const std::string& s) { return text::split(text::collapse_whitespace(s), ' ').size(); };
        nlohmann::json out = {
            {"id", "mock-" + std::to_string(call.sequence)},
            {"object", "chat.completion"},
            {"model", body.value("model", "")},
            {"choices",
             {{{"index", 0}, {"message", {{"role", "assistant"}, {"content", reply.content}}}, {"finish_reason", "stop"}}}},
            {"usage",
             {{"prompt_tokens", words(call.system) + words(call.user)}, {"completion_tokens", words(reply.content)}}}};
        res.set_content(out.dump(), "application/json");
    }

    void handle_embeddings(const httplib::Request& req, httplib::Response& res) {
        Probe probe(this, "embeddings");
        if (inject(res)) return;
        auto body = nlohmann::json::parse(req.body, nullptr, false);
        if (body.is_discarded() || !body.contains("input")) return error(res, 400, "bad embeddings request");
        std::vector<std::string> inputs;
        if (body["input"].is_string()) inputs.push_back(body["input"].get<std::string>());
        else inputs = body["input"].get<std::vector<std::string>>();
        EmbeddingHandler handler;
        {
            std::lock_guard lock(mutex_);
            handler = embedding_handler_;
        }
        nlohmann::json data = nlohmann::json::array();
        for (std::size_t i = 0; i < inputs.size(); ++i)
            data.push_back({{"object", "embedding"}, {"index", i}, {"embedding", handler(inputs[i])}});
        if (reverse_embeddings_) std::reverse(data.begin(), data.end());
        res.set_content(nlohmann::json{{"object", "list"}, {"model", body.value("model", "")}, {"data", data}}.dump(),
                        "application/json");
    }

    void handle_score(const httplib::Request& req, httplib::Response& res) {
        Probe probe(this, "score");
        if (inject(res)) return;
        auto body = nlohmann::json::parse(req.body, nullptr, false);
        if (body.is_discarded() || !body.contains("text_1") || !body.contains("text_2"))
            return error(res, 400, "bad score request");
        ScoreHandler handler;
        {
            std::lock_guard lock(mutex_);
            handler = score_handler_;
        }
        double s = handler(body["text_1"].get<std::string>(), body["text_2"].get<std::string>());
        res.set_content(nlohmann::json{{"data", {{{"index", 0}, {"score", s}}}}}.dump(), "application/json");
    }

    httplib::Server server_;
    std::thread thread_;
    int port_ = -1;

    mutable std::mutex mutex_;
    ChatHandler chat_handler_;
    EmbeddingHandler embedding_handler_;
    ScoreHandler score_handler_;
    std::vector<MockReply> faults_;
    std::map<std::string, std::size_t> counts_;
    std::size_t chat_sequence_ = 0;

    std::atomic<bool> reverse_embeddings_{false};
    std::atomic<long long> latency_ms_{0};
    std::atomic<std::size_t> in_flight_{0};
    std::atomic<std::size_t> max_in_flight_{0};
};

}  // namespace t2sa
