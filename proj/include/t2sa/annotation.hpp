#pragma once

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <ctime>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "t2sa/blocking.hpp"
#include "t2sa/error.hpp"
#include "t2sa/json_io.hpp"
#include "t2sa/labels_csv.hpp"
#include "t2sa/metrics.hpp"
#include "t2sa/stories.hpp"
#include "t2sa/text.hpp"
#include "t2sa/types.hpp"

namespace t2sa {

inline constexpr std::size_t kInitialCandidates = 5;
inline constexpr std::size_t kRequiredPositives = 2;

enum class StoryStatus { pending, needs_more_positives, done };

inline std::string_view to_string(StoryStatus s) {
    switch (s) {
        case StoryStatus::pending: return "pending";
        case StoryStatus::needs_more_positives: return "needs_more_positives";
        case StoryStatus::done: return "done";
    }
    return "pending";
}

inline std::string utc_now() {
    auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

struct LabelEvent {
    std::size_t seq = 0;
    std::string kind;  // "label", "amend" or "pin"
    std::string story_id;
    std::string chunk_id;
    int label = 0;
    std::string note;
    std::string at;
};

inline ordered_json event_to_json(const LabelEvent& e) {
    ordered_json j{{"seq", e.seq}, {"kind", e.kind}, {"story_id", e.story_id}, {"chunk_id", e.chunk_id}};
    if (e.kind != "pin") j["label"] = e.label;
    if (!e.note.empty()) j["note"] = e.note;
    j["at"] = e.at;
    return j;
}

inline LabelEvent event_from_json(const nlohmann::json& j) {
    LabelEvent e;
    e.seq = j.at("seq").get<std::size_t>();
    e.kind = j.at("kind").get<std::string>();
    e.story_id = j.at("story_id").get<std::string>();
    e.chunk_id = j.at("chunk_id").get<std::string>();
    e.label = j.value("label", 0);
    e.note = j.value("note", std::string{});
    e.at = j.value("at", std::string{});
    return e;
}

struct Candidate {
    std::string chunk_id;
    std::size_t rank = 0;  // 1-based position in the frozen ranking
    double similarity = 0.0;
    bool pinned = false;
};

struct StoryView {
    std::string story_id;
    StoryStatus status = StoryStatus::pending;
    std::size_t positives = 0;
    std::size_t labeled = 0;
    bool exhausted = false;  // done because the ranking ran out
    bool extended = false;   // offering candidates past the initial five
    std::vector<Candidate> candidates;
};

// One annotator's pass over a story set. Rankings are frozen at open time;
// everything else is derived from the event list, so replaying the events
// restores the session exactly.
class AnnotationSession {
public:
    struct StoryState {
        UserStory story;
        std::vector<std::size_t> ranking;  // chunk positions, most similar first
        std::vector<double> similarity;    // by chunk position
        std::map<std::string, int> labels;
        std::vector<std::string> pins;  // pin order
    };

    AnnotationSession() = default;

    static AnnotationSession open(std::string session_id, std::string annotator_id, std::vector<UserStory> stories,
                                  std::vector<Chunk> chunks, const EmbeddingTable& embeddings) {
        if (stories.empty()) throw DataError("annotation session needs at least one story");
        if (chunks.empty()) throw DataError("annotation session needs at least one chunk");
        AnnotationSession s;
        s.id_ = std::move(session_id);
        s.annotator_ = std::move(annotator_id);
        s.created_ = s.updated_ = utc_now();
        s.chunks_ = std::move(chunks);
        for (std::size_t i = 0; i < s.chunks_.size(); ++i)
            if (!s.chunk_pos_.emplace(s.chunks_[i].id, i).second) throw DataError("duplicate chunk id: " + s.chunks_[i].id);
        for (auto& story : stories) {
            if (s.story_pos_.contains(story.id)) throw DataError("duplicate story id: " + story.id);
            StoryState st;
            st.ranking = rank_chunks(embeddings, s.chunks_, story);
            st.similarity.resize(s.chunks_.size());
            for (std::size_t i = 0; i < s.chunks_.size(); ++i)
                st.similarity[i] = embeddings.similarity(s.chunks_[i].id, story.id);
            st.story = std::move(story);
            s.story_pos_[st.story.id] = s.stories_.size();
            s.stories_.push_back(std::move(st));
        }
        return s;
    }

    const std::string& id() const noexcept { return id_; }
    const std::string& annotator() const noexcept { return annotator_; }
    const std::string& created() const noexcept { return created_; }
    const std::string& updated() const noexcept { return updated_; }
    const std::vector<Chunk>& chunks() const noexcept { return chunks_; }
    const std::vector<StoryState>& stories() const noexcept { return stories_; }
    const std::vector<LabelEvent>& events() const noexcept { return events_; }

    const Chunk& chunk(const std::string& id) const {
        auto it = chunk_pos_.find(id);
        if (it == chunk_pos_.end()) throw NotFoundError("unknown chunk: " + id);
        return chunks_[it->second];
    }

    std::vector<std::size_t> frozen_ranking(const std::string& story_id) const { return state(story_id).ranking; }

    StoryView view(const std::string& story_id) const { return compute(state(story_id)); }

    std::vector<Candidate> next_candidates(const std::string& story_id) const { return view(story_id).candidates; }

    // Validates and applies; the caller persists the returned event before
    // acknowledging.
    LabelEvent record_label(const std::string& story_id, const std::string& chunk_id, int label,
                            const std::string& note = {}) {
        check_label(label);
        const auto& st = state(story_id);
        chunk(chunk_id);
        if (st.labels.contains(chunk_id))
            throw ConflictError("chunk " + chunk_id + " is already labeled for story " + story_id + "; use amend");
        auto v = compute(st);
        bool offered = std::any_of(v.candidates.begin(), v.candidates.end(),
                                   [&](const Candidate& c) { return c.chunk_id == chunk_id; });
        if (!offered) throw ConflictError("chunk " + chunk_id + " is not currently offered for story " + story_id);
        return apply(make_event("label", story_id, chunk_id, label, note));
    }

    // Supersedes an earlier decision; the original stays in the history.
    LabelEvent amend(const std::string& story_id, const std::string& chunk_id, int label, const std::string& note = {}) {
        check_label(label);
        const auto& st = state(story_id);
        chunk(chunk_id);
        if (!st.labels.contains(chunk_id))
            throw ConflictError("chunk " + chunk_id + " has no label to amend for story " + story_id);
        return apply(make_event("amend", story_id, chunk_id, label, note));
    }

    LabelEvent pin_chunk(const std::string& story_id, const std::string& chunk_id) {
        const auto& st = state(story_id);
        chunk(chunk_id);
        if (st.labels.contains(chunk_id)) throw ConflictError("chunk " + chunk_id + " is already labeled for story " + story_id);
        if (std::find(st.pins.begin(), st.pins.end(), chunk_id) != st.pins.end())
            throw ConflictError("chunk " + chunk_id + " is already pinned for story " + story_id);
        return apply(make_event("pin", story_id, chunk_id, 0, {}));
    }

    // Replays a persisted event without re-checking offer rules.
    LabelEvent apply(LabelEvent e) {
        auto& st = state_mut(e.story_id);
        chunk(e.chunk_id);
        if (e.kind == "label" || e.kind == "amend") {
            check_label(e.label);
            st.labels[e.chunk_id] = e.label;
            std::erase(st.pins, e.chunk_id);
        } else if (e.kind == "pin") {
            st.pins.push_back(e.chunk_id);
        } else {
            throw DataError("unknown annotation event: " + e.kind);
        }
        next_seq_ = std::max(next_seq_, e.seq + 1);
        updated_ = e.at.empty() ? updated_ : e.at;
        events_.push_back(e);
        return e;
    }

    // Current decision per pair, story order then labeling order.
    std::vector<AlignmentLabel> decisions() const {
        std::vector<AlignmentLabel> out;
        std::set<PairKey> seen;
        for (const auto& st : stories_) {
            for (const auto& e : events_) {
                if (e.story_id != st.story.id || e.kind == "pin") continue;
                PairKey key{e.chunk_id, e.story_id};
                if (!seen.insert(key).second) continue;
                out.push_back({key, st.labels.at(e.chunk_id), Provenance::gold, std::nullopt});
            }
        }
        return out;
    }

    bool complete() const {
        return std::all_of(stories_.begin(), stories_.end(),
                           [&](const StoryState& st) { return compute(st).status == StoryStatus::done; });
    }

    ordered_json setup_json() const {
        ordered_json stories = ordered_json::array();
        for (const auto& st : stories_) {
            ordered_json sim = ordered_json::array();
            for (double d : st.similarity) sim.push_back(d);
            stories.push_back({{"id", st.story.id}, {"text", st.story.text}, {"ranking", st.ranking}, {"similarity", sim}});
        }
        ordered_json chunks = ordered_json::array();
        for (const auto& c : chunks_) chunks.push_back(chunk_to_json(c));
        return {{"session_id", id_}, {"annotator_id", annotator_}, {"created", created_}, {"stories", stories},
                {"chunks", chunks}};
    }

    static AnnotationSession from_setup(const nlohmann::json& j) {
        AnnotationSession s;
        s.id_ = j.at("session_id").get<std::string>();
        s.annotator_ = j.at("annotator_id").get<std::string>();
        s.created_ = s.updated_ = j.value("created", std::string{});
        for (const auto& c : j.at("chunks")) {
            s.chunk_pos_[c.at("id").get<std::string>()] = s.chunks_.size();
            s.chunks_.push_back(chunk_from_json(c));
        }
        for (const auto& js : j.at("stories")) {
            StoryState st;
            st.story = make_story(js.at("id").get<std::string>(), js.at("text").get<std::string>());
            st.ranking = js.at("ranking").get<std::vector<std::size_t>>();
            st.similarity = js.at("similarity").get<std::vector<double>>();
            if (st.ranking.size() != s.chunks_.size() || st.similarity.size() != s.chunks_.size())
                throw DataError("session " + s.id_ + ": ranking does not match chunk list");
            s.story_pos_[st.story.id] = s.stories_.size();
            s.stories_.push_back(std::move(st));
        }
        return s;
    }

private:
    static void check_label(int label) {
        if (label != 0 && label != 1) throw UsageError("label must be 0 or 1");
    }

    const StoryState& state(const std::string& story_id) const {
        auto it = story_pos_.find(story_id);
        if (it == story_pos_.end()) throw NotFoundError("unknown story: " + story_id);
        return stories_[it->second];
    }
    StoryState& state_mut(const std::string& story_id) {
        return const_cast<StoryState&>(std::as_const(*this).state(story_id));
    }

    LabelEvent make_event(std::string kind, const std::string& story_id, const std::string& chunk_id, int label,
                          const std::string& note) const {
        return {next_seq_, std::move(kind), story_id, chunk_id, label, note, utc_now()};
    }

    bool overlaps_any(std::size_t pos, const std::vector<std::size_t>& others) const {
        for (auto o : others)
            if (o != pos && chunks_overlap(chunks_[pos], chunks_[o])) return true;
        return false;
    }

    // Walks the frozen ranking. Already-labeled chunks keep their slot;
    // unlabeled chunks are offered only if they share no turn with anything
    // labeled, pinned or already offered. Pinned chunks never use a slot.
    StoryView compute(const StoryState& st) const {
        StoryView v;
        v.story_id = st.story.id;
        std::vector<std::size_t> blockers;
        for (const auto& [cid, label] : st.labels) {
            blockers.push_back(chunk_pos_.at(cid));
            v.positives += label == 1;
        }
        v.labeled = st.labels.size();
        std::set<std::size_t> pinned;
        for (const auto& cid : st.pins) {
            pinned.insert(chunk_pos_.at(cid));
            blockers.push_back(chunk_pos_.at(cid));
        }
        std::set<std::string> pinned_ever;
        for (const auto& e : events_)
            if (e.kind == "pin" && e.story_id == st.story.id) pinned_ever.insert(e.chunk_id);

        std::vector<std::size_t> rank_of(chunks_.size());
        for (std::size_t r = 0; r < st.ranking.size(); ++r) rank_of[st.ranking[r]] = r;
        for (const auto& cid : st.pins) {
            auto pos = chunk_pos_.at(cid);
            v.candidates.push_back({cid, rank_of[pos] + 1, st.similarity[pos], true});
        }

        std::size_t slots = 0;
        std::size_t r = 0;
        std::vector<std::size_t> offered;
        // Initial slate.
        for (; r < st.ranking.size() && slots < kInitialCandidates; ++r) {
            auto pos = st.ranking[r];
            const auto& cid = chunks_[pos].id;
            if (pinned_ever.contains(cid) || pinned.contains(pos)) continue;
            if (st.labels.contains(cid)) {
                ++slots;
                continue;
            }
            if (overlaps_any(pos, blockers)) continue;
            offered.push_back(pos);
            blockers.push_back(pos);
            ++slots;
        }
        bool initial_complete = offered.empty();
        if (initial_complete && v.positives < kRequiredPositives) {
            // Extension: one further candidate at a time.
            for (; r < st.ranking.size(); ++r) {
                auto pos = st.ranking[r];
                const auto& cid = chunks_[pos].id;
                if (pinned_ever.contains(cid) || st.labels.contains(cid)) continue;
                if (overlaps_any(pos, blockers)) continue;
                offered.push_back(pos);
                v.extended = true;
                break;
            }
        } else if (initial_complete) {
            // Labels past the initial slate mean the ranking was extended.
            for (; r < st.ranking.size(); ++r)
                if (st.labels.contains(chunks_[st.ranking[r]].id) && !pinned_ever.contains(chunks_[st.ranking[r]].id))
                    v.extended = true;
        }
        for (auto pos : offered) v.candidates.push_back({chunks_[pos].id, rank_of[pos] + 1, st.similarity[pos], false});

        const bool waiting = !v.candidates.empty();
        if (!initial_complete || (waiting && !v.extended)) {
            v.status = StoryStatus::pending;
        } else if (v.positives >= kRequiredPositives) {
            v.status = waiting ? StoryStatus::pending : StoryStatus::done;
        } else if (waiting) {
            v.status = StoryStatus::needs_more_positives;
        } else {
            v.status = StoryStatus::done;
            v.exhausted = true;
        }
        return v;
    }

    std::string id_;
    std::string annotator_;
    std::string created_;
    std::string updated_;
    std::vector<Chunk> chunks_;
    std::map<std::string, std::size_t> chunk_pos_;
    std::vector<StoryState> stories_;
    std::map<std::string, std::size_t> story_pos_;
    std::vector<LabelEvent> events_;
    std::size_t next_seq_ = 1;
};

inline ordered_json story_view_to_json(const AnnotationSession& s, const StoryView& v) {
    ordered_json cands = ordered_json::array();
    for (const auto& c : v.candidates) {
        const auto& ch = s.chunk(c.chunk_id);
        cands.push_back({{"chunk_id", c.chunk_id},
                         {"rank", c.rank},
                         {"similarity", c.similarity},
                         {"pinned", c.pinned},
                         {"transcript_id", ch.transcript_id},
                         {"span_start", ch.span.start},
                         {"span_end", ch.span.end},
                         {"text", ch.text}});
    }
    return {{"story_id", v.story_id},   {"status", std::string(to_string(v.status))},
            {"positives", v.positives}, {"labeled", v.labeled},
            {"exhausted", v.exhausted}, {"extended", v.extended},
            {"candidates", cands}};
}

struct LabelExport {
    std::string csv;
    bool partial = true;
    std::size_t rows = 0;
};

inline LabelExport export_labels(const AnnotationSession& s) {
    auto d = s.decisions();
    return {write_labels_csv(d), !s.complete(), d.size()};
}

// ---- durable store -------------------------------------------------------

// Per session: "<id>.jsonl" holds the setup line followed by events, each
// fsync'd before the call returns; "<id>.snapshot.json" is rewritten every
// `snapshot_every` events and lets a restart skip replaying the prefix.
class AnnotationStore {
public:
    explicit AnnotationStore(std::string dir, std::size_t snapshot_every = 50)
        : dir_(std::move(dir)), snapshot_every_(snapshot_every) {
        if (dir_.empty()) throw UsageError("annotation store needs a directory");
        std::filesystem::create_directories(dir_);
    }

    const std::string& dir() const noexcept { return dir_; }

    static std::string new_session_id() {
        static thread_local std::mt19937_64 rng{std::random_device{}()};
        char buf[32];
        std::snprintf(buf, sizeof buf, "s-%016llx", static_cast<unsigned long long>(rng()));
        return buf;
    }

    void create(const AnnotationSession& s) {
        auto path = journal_path(s.id());
        if (std::filesystem::exists(path)) throw ConflictError("session already exists: " + s.id());
        append(path, ordered_json{{"setup", s.setup_json()}}.dump() + "\n");
    }

    void record(const AnnotationSession& s, const LabelEvent& e) {
        append(journal_path(s.id()), event_to_json(e).dump() + "\n");
        if (snapshot_every_ > 0 && s.events().size() % snapshot_every_ == 0) snapshot(s);
    }

    void snapshot(const AnnotationSession& s) {
        ordered_json events = ordered_json::array();
        for (const auto& e : s.events()) events.push_back(event_to_json(e));
        ordered_json j{{"setup", s.setup_json()}, {"events", events}};
        auto path = snapshot_path(s.id());
        auto tmp = path + ".tmp";
        write_synced(tmp, j.dump(), O_TRUNC);
        std::filesystem::rename(tmp, path);
    }

    std::vector<std::string> session_ids() const {
        std::vector<std::string> out;
        for (const auto& e : std::filesystem::directory_iterator(dir_)) {
            auto p = e.path();
            if (p.extension() == ".jsonl") out.push_back(p.stem().string());
        }
        std::sort(out.begin(), out.end());
        return out;
    }

    // Snapshot first, then any journal events newer than it. A torn final
    // journal line (crash mid-append, never acknowledged) is ignored.
    AnnotationSession load(const std::string& id) const {
        auto jpath = journal_path(id);
        if (!std::filesystem::exists(jpath)) throw NotFoundError("unknown session: " + id);
        auto content = text::read_file(jpath);
        auto lines = text::split_lines(content);
        const bool complete_tail = !content.empty() && content.back() == '\n';
        if (lines.empty()) throw DataError("session journal is empty: " + jpath);

        AnnotationSession s;
        std::size_t applied = 0;
        auto spath = snapshot_path(id);
        if (std::filesystem::exists(spath)) {
            auto snap = nlohmann::json::parse(text::read_file(spath));
            s = AnnotationSession::from_setup(snap.at("setup"));
            for (const auto& e : snap.at("events")) s.apply(event_from_json(e));
        } else {
            s = AnnotationSession::from_setup(nlohmann::json::parse(lines[0]).at("setup"));
        }
        applied = s.events().empty() ? 0 : s.events().back().seq;
        for (std::size_t i = 1; i < lines.size(); ++i) {
            if (text::trim(lines[i]).empty()) continue;
            const bool last = i + 1 == lines.size();
            if (last && !complete_tail) break;
            LabelEvent e;
            try {
                e = event_from_json(nlohmann::json::parse(lines[i]));
            } catch (const nlohmann::json::exception&) {
                if (last) break;
                throw DataError(jpath + ":" + std::to_string(i + 1) + ": corrupt session event");
            }
            if (e.seq <= applied) continue;
            s.apply(e);
        }
        return s;
    }

private:
    std::string journal_path(const std::string& id) const { return dir_ + "/" + checked(id) + ".jsonl"; }
    std::string snapshot_path(const std::string& id) const { return dir_ + "/" + checked(id) + ".snapshot.json"; }

    static const std::string& checked(const std::string& id) {
        if (id.empty() || id.size() > 64 ||
            !std::all_of(id.begin(), id.end(), [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_'; }))
            throw NotFoundError("invalid session id: " + id);
        return id;
    }

    static void append(const std::string& path, const std::string& data) { write_synced(path, data, O_APPEND); }

    static void write_synced(const std::string& path, const std::string& data, int mode) {
        int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_CLOEXEC | mode, 0644);
        if (fd < 0) throw DataError("cannot open " + path + ": " + std::strerror(errno));
        std::size_t off = 0;
        while (off < data.size()) {
            auto n = ::write(fd, data.data() + off, data.size() - off);
            if (n < 0) {
                if (errno == EINTR) continue;
                int err = errno;
                ::close(fd);
                throw DataError("write failed on " + path + ": " + std::strerror(err));
            }
            off += static_cast<std::size_t>(n);
        }
        if (::fsync(fd) != 0) {
            int err = errno;
            ::close(fd);
            throw DataError("fsync failed on " + path + ": " + std::strerror(err));
        }
        ::close(fd);
    }

    std::string dir_;
    std::size_t snapshot_every_;
};

// ---- agreement -----------------------------------------------------------

struct Disagreement {
    PairKey pair;
    std::vector<int> labels;  // one per file, file order
};

struct AgreementReport {
    KappaResult kappa;
    std::size_t shared_pairs = 0;
    std::vector<std::size_t> pairs_per_file;
    std::vector<Disagreement> disagreements;
};

// Fleiss' kappa over the pairs every file labels.
inline AgreementReport agreement(std::span<const std::vector<AlignmentLabel>> files) {
    if (files.size() < 2) throw UsageError("agreement needs at least two label files");
    std::vector<std::map<PairKey, int>> maps;
    AgreementReport out;
    for (const auto& f : files) {
        std::map<PairKey, int> m;
        for (const auto& l : f) m[l.pair] = l.label;
        out.pairs_per_file.push_back(m.size());
        maps.push_back(std::move(m));
    }
    std::vector<std::vector<std::size_t>> counts;
    for (const auto& [pair, _] : maps[0]) {
        std::vector<int> labels;
        for (const auto& m : maps) {
            auto it = m.find(pair);
            if (it == m.end()) break;
            labels.push_back(it->second);
        }
        if (labels.size() != maps.size()) continue;
        std::vector<std::size_t> row(2, 0);
        for (int l : labels) ++row[static_cast<std::size_t>(l)];
        counts.push_back(row);
        if (row[0] != 0 && row[1] != 0) out.disagreements.push_back({pair, labels});
    }
    if (counts.empty()) throw DataError("label files share no labeled pairs");
    out.shared_pairs = counts.size();
    out.kappa = fleiss_kappa(counts);
    return out;
}

inline ordered_json agreement_to_json(const AgreementReport& r, std::span<const std::string> names) {
    ordered_json dis = ordered_json::array();
    for (const auto& d : r.disagreements)
        dis.push_back({{"story_id", d.pair.story_id}, {"chunk_id", d.pair.chunk_id}, {"labels", d.labels}});
    ordered_json kappa = r.kappa.defined ? ordered_json(r.kappa.kappa) : ordered_json(nullptr);
    return {{"files", names},
            {"raters", r.kappa.raters},
            {"shared_pairs", r.shared_pairs},
            {"pairs_per_file", r.pairs_per_file},
            {"kappa", kappa},
            {"kappa_defined", r.kappa.defined},
            {"observed_agreement", r.kappa.observed_agreement},
            {"expected_agreement", r.kappa.expected_agreement},
            {"disagreements", dis}};
}

}  // namespace t2sa
