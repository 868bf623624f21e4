#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "t2sa/error.hpp"

namespace t2sa {

using ordered_json = nlohmann::ordered_json;

enum class SourceKind { interview, description };

struct Turn {
    std::size_t index = 0;
    std::string speaker;
    std::string text;
};

struct Transcript {
    std::string id;
    std::vector<Turn> turns;
    SourceKind source_kind = SourceKind::interview;
};

enum class ChunkStrategy { turns, tokens, lines };

inline std::string_view to_string(ChunkStrategy s) {
    switch (s) {
        case ChunkStrategy::turns: return "turns";
        case ChunkStrategy::tokens: return "tokens";
        case ChunkStrategy::lines: return "lines";
    }
    return "turns";
}

inline ChunkStrategy parse_chunk_strategy(std::string_view s) {
    if (s == "turns") return ChunkStrategy::turns;
    if (s == "tokens") return ChunkStrategy::tokens;
    if (s == "lines") return ChunkStrategy::lines;
    throw UsageError("unknown chunking strategy: " + std::string(s));
}

// Inclusive index range: turn indices for turns, line numbers for lines,
// byte offsets into the rendered transcript for tokens.
struct Span {
    std::size_t start = 0;
    std::size_t end = 0;

    bool intersects(const Span& o) const noexcept { return start <= o.end && o.start <= end; }
    friend bool operator==(const Span&, const Span&) = default;
};

struct Chunk {
    std::string id;
    std::string transcript_id;
    ChunkStrategy strategy = ChunkStrategy::turns;
    Span span;
    std::string text;
    std::size_t token_count = 0;
};

struct ConnextraParts {
    std::string role;
    std::string goal;
    std::optional<std::string> benefit;
};

struct UserStory {
    std::string id;
    std::string text;
    std::optional<ConnextraParts> parts;
};

struct PairKey {
    std::string chunk_id;
    std::string story_id;

    auto operator<=>(const PairKey&) const = default;
    bool operator==(const PairKey&) const = default;
};

enum class Provenance { gold, matcher, oracle };

inline std::string_view to_string(Provenance p) {
    switch (p) {
        case Provenance::gold: return "gold";
        case Provenance::matcher: return "matcher";
        case Provenance::oracle: return "oracle";
    }
    return "gold";
}

struct AlignmentLabel {
    PairKey pair;
    int label = 0;
    Provenance provenance = Provenance::gold;
    std::optional<double> score;
};

// Sparse label set over chunks x stories. Pairs outside `judged` are
// implicitly 0, as are judged pairs outside `positives`.
struct AlignmentMatrix {
    std::vector<std::string> chunks;
    std::vector<std::string> stories;
    std::set<PairKey> positives;
    std::set<PairKey> judged;

    void validate() const {
        std::set<std::string_view> chunk_set(chunks.begin(), chunks.end());
        std::set<std::string_view> story_set(stories.begin(), stories.end());
        if (chunk_set.size() != chunks.size()) throw DataError("duplicate chunk id in matrix");
        if (story_set.size() != stories.size()) throw DataError("duplicate story id in matrix");
        for (const auto& p : judged) {
            if (!chunk_set.contains(p.chunk_id)) throw DataError("judged pair references unknown chunk: " + p.chunk_id);
            if (!story_set.contains(p.story_id)) throw DataError("judged pair references unknown story: " + p.story_id);
        }
        for (const auto& p : positives) {
            if (!judged.contains(p))
                throw DataError("positive pair (" + p.chunk_id + ", " + p.story_id + ") was never judged");
        }
    }

    static AlignmentMatrix from_labels(std::vector<std::string> chunk_ids, std::vector<std::string> story_ids,
                                       const std::vector<AlignmentLabel>& labels) {
        AlignmentMatrix m{std::move(chunk_ids), std::move(story_ids), {}, {}};
        for (const auto& l : labels) {
            if (!m.judged.insert(l.pair).second)
                throw DataError("duplicate label for pair (" + l.pair.chunk_id + ", " + l.pair.story_id + ")");
            if (l.label == 1) m.positives.insert(l.pair);
        }
        m.validate();
        return m;
    }
};

struct StoryEvidence {
    std::string story_id;
    bool supported = false;
    std::vector<std::string> evidence;  // chunk ids, chunk order
    std::size_t judged = 0;
    std::size_t pruned = 0;
};

struct ChunkCoverage {
    std::string chunk_id;
    bool covered = false;
    std::vector<std::string> stories;  // story ids, story order
};

struct ReportDiagnostics {
    std::size_t judged_pairs = 0;
    std::size_t judged_negatives = 0;
    std::size_t pruned_pairs = 0;
    std::size_t parse_warnings = 0;
    std::size_t recovered_parses = 0;
    std::size_t score_warnings = 0;

    bool operator==(const ReportDiagnostics&) const = default;
};

struct AlignmentReport {
    double correctness = 0.0;
    double completeness = 0.0;
    std::vector<StoryEvidence> per_story;
    std::vector<ChunkCoverage> per_chunk;
    std::uint64_t token_cost = 0;
    std::uint64_t matcher_calls = 0;
    ordered_json config_echo = ordered_json::object();
    ReportDiagnostics diagnostics;
};

}  // namespace t2sa
