#pragma once

#include <algorithm>
#include <charconv>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "t2sa/error.hpp"
#include "t2sa/text.hpp"
#include "t2sa/tokenizer.hpp"
#include "t2sa/transcript.hpp"
#include "t2sa/types.hpp"

namespace t2sa {

struct ChunkingConfig {
    ChunkStrategy strategy = ChunkStrategy::turns;
    std::size_t window = 3;
    std::size_t stride = 1;

    static ChunkingConfig defaults_for(ChunkStrategy s) {
        switch (s) {
            case ChunkStrategy::tokens: return {s, 200, 100};
            case ChunkStrategy::lines: return {s, 1, 1};
            case ChunkStrategy::turns: break;
        }
        return {ChunkStrategy::turns, 3, 1};
    }

    void validate() const {
        if (window < 1) throw UsageError("chunk window must be >= 1");
        if (stride < 1) throw UsageError("chunk stride must be >= 1");
        if (strategy == ChunkStrategy::turns && stride > window)
            throw UsageError("turn chunking needs stride <= window");
        if (strategy == ChunkStrategy::tokens && stride >= window)
            throw UsageError("token chunking needs stride < window");
    }
};

// "<transcript>:<strategy>:<start>-<end>"
inline std::string make_chunk_id(std::string_view transcript_id, ChunkStrategy strategy, Span span) {
    return std::string(transcript_id) + ":" + std::string(to_string(strategy)) + ":" + std::to_string(span.start) +
           "-" + std::to_string(span.end);
}

struct ChunkIdParts {
    std::string transcript_id;
    ChunkStrategy strategy = ChunkStrategy::turns;
    Span span;
};

inline ChunkIdParts parse_chunk_id(std::string_view id) {
    auto bad = [&] { return DataError("malformed chunk id: " + std::string(id)); };
    auto last = id.rfind(':');
    if (last == std::string_view::npos || last == 0) throw bad();
    auto mid = id.rfind(':', last - 1);
    if (mid == std::string_view::npos) throw bad();
    ChunkIdParts out;
    out.transcript_id = std::string(id.substr(0, mid));
    try {
        out.strategy = parse_chunk_strategy(id.substr(mid + 1, last - mid - 1));
    } catch (const UsageError&) {
        throw bad();
    }
    std::string_view range = id.substr(last + 1);
    auto dash = range.find('-');
    if (dash == std::string_view::npos) throw bad();
    auto parse = [&](std::string_view s, std::size_t& v) {
        auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc() || p != s.data() + s.size() || s.empty()) throw bad();
    };
    parse(range.substr(0, dash), out.span.start);
    parse(range.substr(dash + 1), out.span.end);
    if (out.span.end < out.span.start) throw bad();
    return out;
}

inline std::string render_turns(const Transcript& t, std::size_t first, std::size_t last) {
    std::string out;
    for (std::size_t i = first; i <= last; ++i) {
        if (i > first) out += '\n';
        out += render_turn(t.turns[i]);
    }
    return out;
}

// Sliding windows over speaker turns. The last window is always emitted so
// the final turn is covered; a transcript no longer than the window yields
// exactly one chunk.
inline std::vector<Chunk> chunk_by_turns(const Transcript& t, std::size_t window, std::size_t stride,
                                         const Tokenizer& tokenizer = default_tokenizer()) {
    ChunkingConfig{ChunkStrategy::turns, window, stride}.validate();
    const std::size_t k = t.turns.size();
    if (k == 0) throw DataError("cannot chunk empty transcript " + t.id);

    std::vector<std::size_t> starts;
    if (k <= window) {
        starts.push_back(0);
    } else {
        for (std::size_t s = 0; s + window <= k; s += stride) starts.push_back(s);
        if (starts.back() + window < k) starts.push_back(k - window);
    }

    std::vector<Chunk> chunks;
    chunks.reserve(starts.size());
    for (std::size_t s : starts) {
        Span span{s, std::min(s + window, k) - 1};
        std::string body = render_turns(t, span.start, span.end);
        std::size_t tokens = tokenizer.count(body);
        chunks.push_back({make_chunk_id(t.id, ChunkStrategy::turns, span), t.id, ChunkStrategy::turns, span,
                          std::move(body), tokens});
    }
    return chunks;
}

// Sliding token windows over the rendered transcript. Spans are byte
// offsets (inclusive) so the chunk text is an exact substring.
inline std::vector<Chunk> chunk_by_tokens(const Transcript& t, std::size_t window, std::size_t stride,
                                          const Tokenizer& tokenizer = default_tokenizer()) {
    ChunkingConfig{ChunkStrategy::tokens, window, stride}.validate();
    std::string full = render_transcript(t);
    auto tokens = tokenizer.split(full);
    if (tokens.empty()) throw DataError("cannot chunk empty text of transcript " + t.id);

    std::vector<Chunk> chunks;
    for (std::size_t s = 0; s < tokens.size(); s += stride) {
        std::size_t e = std::min(s + window, tokens.size());
        Span span{tokens[s].begin, tokens[e - 1].end - 1};
        chunks.push_back({make_chunk_id(t.id, ChunkStrategy::tokens, span), t.id, ChunkStrategy::tokens, span,
                          full.substr(span.start, span.end - span.start + 1), e - s});
        if (e == tokens.size()) break;
    }
    return chunks;
}

// One chunk per non-empty line; spans are 0-based line numbers.
inline std::vector<Chunk> chunk_by_lines(std::string_view transcript_id, std::string_view content,
                                         const Tokenizer& tokenizer = default_tokenizer()) {
    std::vector<Chunk> chunks;
    auto lines = text::split_lines(content);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        std::string_view line = text::trim(lines[i]);
        if (line.empty()) continue;
        Span span{i, i};
        chunks.push_back({make_chunk_id(transcript_id, ChunkStrategy::lines, span), std::string(transcript_id),
                          ChunkStrategy::lines, span, std::string(line), tokenizer.count(line)});
    }
    return chunks;
}

// Turn and token strategies. Line chunking works on raw text, see
// chunk_by_lines.
inline std::vector<Chunk> chunk_transcript(const Transcript& t, const ChunkingConfig& config,
                                           const Tokenizer& tokenizer = default_tokenizer()) {
    switch (config.strategy) {
        case ChunkStrategy::turns: return chunk_by_turns(t, config.window, config.stride, tokenizer);
        case ChunkStrategy::tokens: return chunk_by_tokens(t, config.window, config.stride, tokenizer);
        case ChunkStrategy::lines: break;
    }
    throw UsageError("line chunking operates on raw text; use chunk_by_lines");
}

inline bool chunk_ids_overlap(std::string_view a, std::string_view b) {
    auto pa = parse_chunk_id(a);
    auto pb = parse_chunk_id(b);
    if (pa.transcript_id != pb.transcript_id)
        throw DataError("cannot compare chunks across transcripts: " + std::string(a) + " vs " + std::string(b));
    if (pa.strategy != pb.strategy)
        throw DataError("cannot compare chunks across strategies: " + std::string(a) + " vs " + std::string(b));
    return pa.span.intersects(pb.span);
}

inline bool chunks_overlap(const Chunk& a, const Chunk& b) {
    if (a.transcript_id != b.transcript_id)
        throw DataError("cannot compare chunks across transcripts: " + a.id + " vs " + b.id);
    if (a.strategy != b.strategy) throw DataError("cannot compare chunks across strategies: " + a.id + " vs " + b.id);
    return a.span.intersects(b.span);
}

}  // namespace t2sa
