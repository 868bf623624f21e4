#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <map>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "t2sa/error.hpp"
#include "t2sa/gateway.hpp"
#include "t2sa/labels_csv.hpp"
#include "t2sa/text.hpp"
#include "t2sa/tokenizer.hpp"
#include "t2sa/types.hpp"

namespace t2sa {

// Unit-normalized embeddings keyed by chunk and story id.
class EmbeddingTable {
public:
    void add_chunk(const std::string& id, std::vector<double> v) { chunks_[id] = normalize(std::move(v)); }
    void add_story(const std::string& id, std::vector<double> v) { stories_[id] = normalize(std::move(v)); }

    const std::vector<double>& chunk(const std::string& id) const { return lookup(chunks_, id, "chunk"); }
    const std::vector<double>& story(const std::string& id) const { return lookup(stories_, id, "story"); }

    bool has_chunk(const std::string& id) const { return chunks_.contains(id); }
    bool has_story(const std::string& id) const { return stories_.contains(id); }

    // Cosine similarity; a zero vector scores 0 against everything.
    double similarity(const std::string& chunk_id, const std::string& story_id) const {
        const auto& a = chunk(chunk_id);
        const auto& b = story(story_id);
        if (a.size() != b.size())
            throw DataError("embedding dimension mismatch between chunk " + chunk_id + " and story " + story_id);
        double dot = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
        return dot;
    }

private:
    static std::vector<double> normalize(std::vector<double> v) {
        double n = 0.0;
        for (double x : v) n += x * x;
        if (n > 0.0) {
            n = std::sqrt(n);
            for (double& x : v) x /= n;
        }
        return v;
    }

    static const std::vector<double>& lookup(const std::map<std::string, std::vector<double>, std::less<>>& m,
                                             const std::string& id, const char* what) {
        auto it = m.find(id);
        if (it == m.end()) throw DataError(std::string("missing embedding for ") + what + " " + id);
        return it->second;
    }

    std::map<std::string, std::vector<double>, std::less<>> chunks_;
    std::map<std::string, std::vector<double>, std::less<>> stories_;
};

inline EmbeddingTable embed_corpus(ModelGateway& gateway, std::span<const Chunk> chunks,
                                   std::span<const UserStory> stories) {
    std::vector<std::string> texts;
    texts.reserve(chunks.size() + stories.size());
    for (const auto& c : chunks) texts.push_back(c.text);
    for (const auto& s : stories) texts.push_back(s.text);
    auto vectors = gateway.embed(texts);
    EmbeddingTable table;
    for (std::size_t i = 0; i < chunks.size(); ++i) table.add_chunk(chunks[i].id, std::move(vectors[i].values));
    for (std::size_t i = 0; i < stories.size(); ++i)
        table.add_story(stories[i].id, std::move(vectors[chunks.size() + i].values));
    return table;
}

// Chunk positions for one story, most similar first; ties keep chunk order.
inline std::vector<std::size_t> rank_chunks(const EmbeddingTable& table, std::span<const Chunk> chunks,
                                            const UserStory& story) {
    std::vector<double> sim(chunks.size());
    for (std::size_t i = 0; i < chunks.size(); ++i) sim[i] = table.similarity(chunks[i].id, story.id);
    std::vector<std::size_t> order(chunks.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return sim[a] > sim[b]; });
    return order;
}

using Rankings = std::vector<std::vector<std::size_t>>;  // one ranking per story, story order

inline Rankings rank_all(const EmbeddingTable& table, std::span<const Chunk> chunks, std::span<const UserStory> stories) {
    Rankings r;
    r.reserve(stories.size());
    for (const auto& s : stories) r.push_back(rank_chunks(table, chunks, s));
    return r;
}

struct PairCostModel {
    const Tokenizer* tokenizer = &default_tokenizer();
    std::uint64_t overhead = 0;  // per-pair constant, e.g. the judge prompt

    std::uint64_t story_tokens(const UserStory& s) const { return tokenizer->count(s.text); }
    std::uint64_t pair_cost(const Chunk& c, const UserStory& s) const {
        return c.token_count + story_tokens(s) + overhead;
    }
};

struct StoryCandidates {
    std::string story_id;
    std::vector<std::string> chunk_ids;  // similarity order
};

struct CandidateSet {
    std::set<PairKey> pairs;
    std::size_t k = 0;
    std::uint64_t token_cost = 0;
    std::vector<StoryCandidates> coverage;
};

inline CandidateSet block_from_rankings(std::span<const UserStory> stories, std::span<const Chunk> chunks,
                                        const Rankings& rankings, std::size_t k, const PairCostModel& cost = {}) {
    if (k < 1) throw UsageError("blocking K must be at least 1");
    if (rankings.size() != stories.size()) throw DataError("rankings do not match the story list");
    CandidateSet out;
    out.k = k;
    const std::size_t keep = std::min(k, chunks.size());
    for (std::size_t j = 0; j < stories.size(); ++j) {
        const auto story_cost = cost.story_tokens(stories[j]);
        StoryCandidates sc{stories[j].id, {}};
        for (std::size_t r = 0; r < keep; ++r) {
            const auto& c = chunks[rankings[j][r]];
            sc.chunk_ids.push_back(c.id);
            out.pairs.insert({c.id, stories[j].id});
            out.token_cost += c.token_count + story_cost + cost.overhead;
        }
        out.coverage.push_back(std::move(sc));
    }
    return out;
}

// B_K: the union over stories of each story's top-K chunks.
inline CandidateSet block_top_k(std::span<const UserStory> stories, std::span<const Chunk> chunks,
                                const EmbeddingTable& table, std::size_t k, const PairCostModel& cost = {}) {
    if (k < 1) throw UsageError("blocking K must be at least 1");
    return block_from_rankings(stories, chunks, rank_all(table, chunks, stories), k, cost);
}

struct RecallResult {
    double value = 1.0;
    bool reference_empty = false;
    std::size_t hits = 0;
    std::size_t total = 0;
};

inline RecallResult recall_against(const CandidateSet& candidates, const std::set<PairKey>& reference) {
    RecallResult r;
    r.total = reference.size();
    if (reference.empty()) {
        r.reference_empty = true;
        return r;
    }
    for (const auto& p : reference) r.hits += candidates.pairs.contains(p);
    r.value = static_cast<double>(r.hits) / static_cast<double>(r.total);
    return r;
}

inline std::uint64_t full_product_cost(std::span<const UserStory> stories, std::span<const Chunk> chunks,
                                       const PairCostModel& cost = {}) {
    std::uint64_t chunk_tokens = 0;
    for (const auto& c : chunks) chunk_tokens += c.token_count;
    std::uint64_t total = 0;
    for (const auto& s : stories) total += chunk_tokens + chunks.size() * (cost.story_tokens(s) + cost.overhead);
    return total;
}

inline double token_fraction(const CandidateSet& candidates, std::span<const UserStory> stories,
                             std::span<const Chunk> chunks, const PairCostModel& cost = {}) {
    const auto full = full_product_cost(stories, chunks, cost);
    if (full == 0) return candidates.pairs.empty() ? 0.0 : 1.0;
    return static_cast<double>(candidates.token_cost) / static_cast<double>(full);
}

struct KStar {
    std::size_t k_star = 0;
    double token_fraction = 0.0;
    double recall = 0.0;
    std::uint64_t matcher_calls = 0;
};

inline void check_reference(const std::set<PairKey>& reference, std::span<const UserStory> stories,
                            std::span<const Chunk> chunks) {
    std::set<std::string_view> chunk_ids, story_ids;
    for (const auto& c : chunks) chunk_ids.insert(c.id);
    for (const auto& s : stories) story_ids.insert(s.id);
    for (const auto& p : reference) {
        if (!chunk_ids.contains(p.chunk_id)) throw DataError("reference pair names unknown chunk: " + p.chunk_id);
        if (!story_ids.contains(p.story_id)) throw DataError("reference pair names unknown story: " + p.story_id);
    }
}

// Grows K one rank at a time, reusing the rankings, until the candidate
// set reaches the target recall.
inline KStar min_tokens_for_recall(std::span<const UserStory> stories, std::span<const Chunk> chunks,
                                   const Rankings& rankings, const std::set<PairKey>& reference, double target_recall,
                                   const PairCostModel& cost = {}) {
    if (!(target_recall > 0.0 && target_recall <= 1.0)) throw UsageError("target recall must lie in (0, 1]");
    if (reference.empty()) throw DataError("target-recall search needs a non-empty reference set");
    if (rankings.size() != stories.size()) throw DataError("rankings do not match the story list");
    check_reference(reference, stories, chunks);

    const auto full = full_product_cost(stories, chunks, cost);
    std::vector<std::uint64_t> story_cost(stories.size());
    for (std::size_t j = 0; j < stories.size(); ++j) story_cost[j] = cost.story_tokens(stories[j]) + cost.overhead;

    std::size_t hits = 0;
    std::uint64_t tokens = 0;
    for (std::size_t k = 1; k <= chunks.size(); ++k) {
        for (std::size_t j = 0; j < stories.size(); ++j) {
            const auto& c = chunks[rankings[j][k - 1]];
            hits += reference.contains(PairKey{c.id, stories[j].id});
            tokens += c.token_count + story_cost[j];
        }
        double recall = static_cast<double>(hits) / static_cast<double>(reference.size());
        if (recall >= target_recall) {
            double fraction = full == 0 ? 1.0 : static_cast<double>(tokens) / static_cast<double>(full);
            return {k, fraction, recall, static_cast<std::uint64_t>(k * stories.size())};
        }
    }
    throw DataError("target recall unreachable even with K = |C|");
}

struct SweepRow {
    double target_recall = 0.0;
    KStar result;
};

inline std::vector<SweepRow> recall_sweep(std::span<const UserStory> stories, std::span<const Chunk> chunks,
                                          const Rankings& rankings, const std::set<PairKey>& reference,
                                          std::span<const double> targets, const PairCostModel& cost = {}) {
    std::vector<SweepRow> rows;
    for (double t : targets) rows.push_back({t, min_tokens_for_recall(stories, chunks, rankings, reference, t, cost)});
    return rows;
}

inline std::string format_fixed(double v, int digits = 6) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

inline std::string sweep_csv(std::span<const SweepRow> rows) {
    std::string out = "target_recall,k_star,token_fraction,matcher_calls\n";
    for (const auto& r : rows) {
        out += format_fixed(r.target_recall) + "," + std::to_string(r.result.k_star) + "," +
               format_fixed(r.result.token_fraction) + "," + std::to_string(r.result.matcher_calls) + "\n";
    }
    return out;
}

// One row per retained pair, rank counted from 1 within the story.
inline std::string candidates_csv(const CandidateSet& candidates) {
    std::string out = "story_id,chunk_id,rank\n";
    for (const auto& sc : candidates.coverage) {
        for (std::size_t r = 0; r < sc.chunk_ids.size(); ++r)
            out += detail::csv_field(sc.story_id) + "," + detail::csv_field(sc.chunk_ids[r]) + "," +
                   std::to_string(r + 1) + "\n";
    }
    return out;
}

// Every chunk-story pair sharing at least min_shared content words.
inline std::set<PairKey> keyword_reference(std::span<const UserStory> stories, std::span<const Chunk> chunks,
                                           std::size_t min_shared) {
    if (min_shared < 1) throw UsageError("keyword reference needs min_shared >= 1");
    std::vector<std::set<std::string>> chunk_words;
    chunk_words.reserve(chunks.size());
    for (const auto& c : chunks) chunk_words.push_back(text::content_words(c.text));
    std::set<PairKey> out;
    for (const auto& s : stories) {
        auto sw = text::content_words(s.text);
        for (std::size_t i = 0; i < chunks.size(); ++i) {
            std::size_t shared = 0;
            for (const auto& w : sw) shared += chunk_words[i].count(w);
            if (shared >= min_shared) out.insert({chunks[i].id, s.id});
        }
    }
    return out;
}

inline std::set<PairKey> positive_pairs(const std::vector<AlignmentLabel>& labels) {
    std::set<PairKey> out;
    for (const auto& l : labels)
        if (l.label == 1) out.insert(l.pair);
    return out;
}

}  // namespace t2sa
