#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "t2sa/annotation.hpp"
#include "t2sa/blocking.hpp"
#include "t2sa/chunker.hpp"
#include "t2sa/error.hpp"
#include "t2sa/gateway.hpp"
#include "t2sa/stories.hpp"
#include "t2sa/transcript.hpp"

namespace t2sa {

// Default corpus used when a POST /sessions body omits stories or chunks.
struct AnnotationCorpus {
    std::vector<Chunk> chunks;
    std::vector<UserStory> stories;
};

// Session registry over a durable store. Sessions not in memory are loaded
// from the store on first access, so a restarted service picks up where
// the previous process stopped.
class AnnotationService {
public:
    AnnotationService(std::string store_dir, ModelGateway* gateway = nullptr, AnnotationCorpus defaults = {},
                      std::size_t snapshot_every = 50)
        : store_(std::move(store_dir), snapshot_every), gateway_(gateway), defaults_(std::move(defaults)) {}

    // Body fields, all optional except where no default corpus exists:
    //   annotator_id, stories [{id,text}], chunks [chunk json] or
    //   transcripts [{id,text,format}] with chunking {strategy,window,stride},
    //   embeddings {chunks:{id:[...]}, stories:{id:[...]}}.
    ordered_json create(const nlohmann::json& body) {
        std::string annotator = body.value("annotator_id", std::string("anonymous"));
        auto stories = stories_from(body);
        auto chunks = chunks_from(body);
        auto table = embeddings_from(body, chunks, stories);
        auto session = AnnotationSession::open(AnnotationStore::new_session_id(), annotator, std::move(stories),
                                               std::move(chunks), table);
        store_.create(session);
        auto entry = std::make_shared<Entry>();
        entry->session = std::move(session);
        std::unique_lock lock(registry_mutex_);
        auto id = entry->session.id();
        sessions_[id] = entry;
        return summary(entry->session);
    }

    std::vector<std::string> list() const { return store_.session_ids(); }

    ordered_json get(const std::string& id) {
        auto e = entry(id);
        std::lock_guard lock(e->mutex);
        auto out = summary(e->session);
        ordered_json events = ordered_json::array();
        for (const auto& ev : e->session.events()) events.push_back(event_to_json(ev));
        out["events"] = events;
        return out;
    }

    ordered_json stories(const std::string& id) {
        auto e = entry(id);
        std::lock_guard lock(e->mutex);
        return summary(e->session)["stories"];
    }

    ordered_json candidates(const std::string& id, const std::string& story_id) {
        auto e = entry(id);
        std::lock_guard lock(e->mutex);
        return story_view_to_json(e->session, e->session.view(story_id));
    }

    // Persisted (fsync'd) before returning.
    ordered_json label(const std::string& id, const std::string& story_id, const std::string& chunk_id, int value,
                       bool amend, const std::string& note) {
        auto e = entry(id);
        std::lock_guard lock(e->mutex);
        auto trial = e->session;
        auto ev = amend ? trial.amend(story_id, chunk_id, value, note) : trial.record_label(story_id, chunk_id, value, note);
        store_.record(trial, ev);
        e->session = std::move(trial);
        return story_view_to_json(e->session, e->session.view(story_id));
    }

    ordered_json pin(const std::string& id, const std::string& story_id, const std::string& chunk_id) {
        auto e = entry(id);
        std::lock_guard lock(e->mutex);
        auto trial = e->session;
        auto ev = trial.pin_chunk(story_id, chunk_id);
        store_.record(trial, ev);
        e->session = std::move(trial);
        return story_view_to_json(e->session, e->session.view(story_id));
    }

    LabelExport export_csv(const std::string& id) {
        auto e = entry(id);
        std::lock_guard lock(e->mutex);
        return export_labels(e->session);
    }

    // Case-insensitive substring search over chunk text, for pinning.
    ordered_json search(const std::string& id, const std::string& query, std::size_t limit = 50) {
        auto e = entry(id);
        std::lock_guard lock(e->mutex);
        auto q = text::to_lower(text::trim(query));
        ordered_json out = ordered_json::array();
        for (const auto& c : e->session.chunks()) {
            if (out.size() >= limit) break;
            if (q.empty() || text::to_lower(c.text).find(q) != std::string::npos) out.push_back(chunk_to_json(c));
        }
        return out;
    }

private:
    struct Entry {
        std::mutex mutex;
        AnnotationSession session;
    };

    std::shared_ptr<Entry> entry(const std::string& id) {
        {
            std::shared_lock lock(registry_mutex_);
            auto it = sessions_.find(id);
            if (it != sessions_.end()) return it->second;
        }
        auto loaded = std::make_shared<Entry>();
        loaded->session = store_.load(id);
        std::unique_lock lock(registry_mutex_);
        auto [it, inserted] = sessions_.emplace(id, loaded);
        return it->second;
    }

    static ordered_json summary(const AnnotationSession& s) {
        ordered_json stories = ordered_json::array();
        std::size_t done = 0;
        for (const auto& st : s.stories()) {
            auto v = s.view(st.story.id);
            done += v.status == StoryStatus::done;
            stories.push_back({{"story_id", st.story.id},
                               {"text", st.story.text},
                               {"status", std::string(to_string(v.status))},
                               {"positives", v.positives},
                               {"labeled", v.labeled},
                               {"exhausted", v.exhausted},
                               {"extended", v.extended},
                               {"pending_candidates", v.candidates.size()}});
        }
        return {{"session_id", s.id()},
                {"annotator_id", s.annotator()},
                {"created", s.created()},
                {"updated", s.updated()},
                {"chunks", s.chunks().size()},
                {"stories_done", done},
                {"stories", stories}};
    }

    std::vector<UserStory> stories_from(const nlohmann::json& body) const {
        if (!body.contains("stories")) {
            if (defaults_.stories.empty()) throw UsageError("request needs stories (no default corpus loaded)");
            return defaults_.stories;
        }
        std::vector<UserStory> out;
        std::size_t n = 0;
        for (const auto& s : body.at("stories")) {
            ++n;
            if (s.is_string()) out.push_back(make_story("s" + std::to_string(n), s.get<std::string>()));
            else out.push_back(make_story(s.value("id", "s" + std::to_string(n)), s.at("text").get<std::string>()));
        }
        return out;
    }

    std::vector<Chunk> chunks_from(const nlohmann::json& body) const {
        if (body.contains("chunks")) {
            std::vector<Chunk> out;
            for (const auto& c : body.at("chunks")) out.push_back(chunk_from_json(c));
            return out;
        }
        if (body.contains("transcripts")) {
            ChunkingConfig cfg;
            if (body.contains("chunking")) {
                const auto& c = body.at("chunking");
                cfg = ChunkingConfig::defaults_for(parse_chunk_strategy(c.value("strategy", std::string("turns"))));
                cfg.window = c.value("window", cfg.window);
                cfg.stride = c.value("stride", cfg.stride);
            }
            cfg.validate();
            std::vector<Chunk> out;
            for (const auto& t : body.at("transcripts")) {
                auto id = t.at("id").get<std::string>();
                auto content = t.at("text").get<std::string>();
                std::vector<Chunk> chunks;
                if (cfg.strategy == ChunkStrategy::lines) {
                    chunks = chunk_by_lines(id, content);
                } else {
                    auto format = parse_transcript_format(t.value("format", std::string("plain")));
                    chunks = chunk_transcript(parse_transcript(content, format, id, id), cfg);
                }
                for (auto& c : chunks) out.push_back(std::move(c));
            }
            return out;
        }
        if (defaults_.chunks.empty()) throw UsageError("request needs chunks or transcripts (no default corpus loaded)");
        return defaults_.chunks;
    }

    EmbeddingTable embeddings_from(const nlohmann::json& body, const std::vector<Chunk>& chunks,
                                   const std::vector<UserStory>& stories) const {
        if (body.contains("embeddings")) {
            EmbeddingTable table;
            const auto& e = body.at("embeddings");
            for (const auto& [id, v] : e.at("chunks").items()) table.add_chunk(id, v.get<std::vector<double>>());
            for (const auto& [id, v] : e.at("stories").items()) table.add_story(id, v.get<std::vector<double>>());
            for (const auto& c : chunks) table.chunk(c.id);
            for (const auto& s : stories) table.story(s.id);
            return table;
        }
        if (gateway_ == nullptr) throw UsageError("request needs embeddings (no embedding endpoint configured)");
        return embed_corpus(*gateway_, chunks, stories);
    }

    AnnotationStore store_;
    ModelGateway* gateway_;
    AnnotationCorpus defaults_;
    std::shared_mutex registry_mutex_;
    std::map<std::string, std::shared_ptr<Entry>> sessions_;
};

inline int http_status_for(const Error& e) {
    if (e.code() == "not_found") return 404;
    if (e.code() == "conflict") return 409;
    switch (e.kind()) {
        case ErrorKind::usage: return 400;
        case ErrorKind::data: return 422;
        case ErrorKind::transport: return 502;
    }
    return 500;
}

inline void send_error(httplib::Response& res, int status, const std::string& code, const std::string& message,
                       const ordered_json& detail = ordered_json::object()) {
    res.status = status;
    res.set_content(ordered_json{{"code", code}, {"message", message}, {"detail", detail}}.dump(), "application/json");
}

// HTTP front end for AnnotationService. Error bodies are {code, message,
// detail}.
class AnnotationServer {
public:
    explicit AnnotationServer(AnnotationService& service, std::string static_dir = {}) : service_(&service) {
        routes();
        if (!static_dir.empty() && !server_.set_mount_point("/", static_dir))
            throw UsageError("static directory not found: " + static_dir);
    }

    ~AnnotationServer() { stop(); }

    AnnotationServer(const AnnotationServer&) = delete;
    AnnotationServer& operator=(const AnnotationServer&) = delete;

    int start(const std::string& host = "127.0.0.1", int port = 0) {
        port_ = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
        if (port_ < 0) throw TransportError("annotation server could not bind " + host + ":" + std::to_string(port));
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

    void wait() {
        if (thread_.joinable()) thread_.join();
    }

    int port() const noexcept { return port_; }

private:
    template <typename Fn>
    static void guarded(httplib::Response& res, Fn&& fn) {
        try {
            fn();
        } catch (const Error& e) {
            send_error(res, http_status_for(e), e.code(), e.what());
        } catch (const nlohmann::json::exception& e) {
            send_error(res, 400, "bad_request", "malformed JSON body", {{"reason", e.what()}});
        } catch (const std::exception& e) {
            send_error(res, 500, "internal", e.what());
        }
    }

    static nlohmann::json body_of(const httplib::Request& req) {
        if (req.body.empty()) return nlohmann::json::object();
        auto j = nlohmann::json::parse(req.body);
        if (!j.is_object()) throw UsageError("request body must be a JSON object");
        return j;
    }

    static void reply(httplib::Response& res, const ordered_json& j, int status = 200) {
        res.status = status;
        res.set_content(j.dump(), "application/json");
    }

    static int label_value(const nlohmann::json& body) {
        const auto& v = body.at("label");
        if (v.is_boolean()) return v.get<bool>() ? 1 : 0;
        if (!v.is_number_integer()) throw UsageError("label must be 0 or 1");
        return v.get<int>();
    }

    void routes() {
        server_.Get("/health", [](const httplib::Request&, httplib::Response& res) {
            res.set_content(R"({"status":"ok"})", "application/json");
        });
        server_.Get("/sessions", [this](const httplib::Request&, httplib::Response& res) {
            guarded(res, [&] { reply(res, ordered_json{{"sessions", service_->list()}}); });
        });
        server_.Post("/sessions", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] { reply(res, service_->create(body_of(req)), 201); });
        });
        server_.Get(R"(/sessions/([\w-]+))", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] { reply(res, service_->get(req.matches[1])); });
        });
        server_.Get(R"(/sessions/([\w-]+)/stories)", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] { reply(res, service_->stories(req.matches[1])); });
        });
        server_.Get(R"(/sessions/([\w-]+)/stories/([^/]+)/candidates)",
                    [this](const httplib::Request& req, httplib::Response& res) {
                        guarded(res, [&] { reply(res, service_->candidates(req.matches[1], req.matches[2])); });
                    });
        server_.Post(R"(/sessions/([\w-]+)/labels)", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                auto b = body_of(req);
                reply(res, service_->label(req.matches[1], b.at("story_id").get<std::string>(),
                                           b.at("chunk_id").get<std::string>(), label_value(b), b.value("amend", false),
                                           b.value("note", std::string{})));
            });
        });
        server_.Post(R"(/sessions/([\w-]+)/pins)", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                auto b = body_of(req);
                reply(res, service_->pin(req.matches[1], b.at("story_id").get<std::string>(),
                                         b.at("chunk_id").get<std::string>()));
            });
        });
        server_.Get(R"(/sessions/([\w-]+)/chunks)", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                std::size_t limit = 50;
                if (req.has_param("limit")) limit = std::stoul(req.get_param_value("limit"));
                reply(res, ordered_json{{"chunks", service_->search(req.matches[1], req.get_param_value("q"), limit)}});
            });
        });
        server_.Get(R"(/sessions/([\w-]+)/export)", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                auto ex = service_->export_csv(req.matches[1]);
                res.set_header("X-T2SA-Partial", ex.partial ? "true" : "false");
                res.set_header("X-T2SA-Rows", std::to_string(ex.rows));
                res.set_content(ex.csv, "text/csv");
            });
        });
    }

    AnnotationService* service_;
    httplib::Server server_;
    std::thread thread_;
    int port_ = -1;
};

}  // namespace t2sa
