#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <regex>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "t2sa/digest.hpp"
#include "t2sa/error.hpp"
#include "t2sa/gateway.hpp"
#include "t2sa/metrics.hpp"
#include "t2sa/prompts.hpp"
#include "t2sa/text.hpp"
#include "t2sa/types.hpp"

namespace t2sa {

enum class MatcherKind { llm_judge, bi_encoder, external_scorer, keyword_oracle };

inline std::string_view to_string(MatcherKind k) {
    switch (k) {
        case MatcherKind::llm_judge: return "llm_judge";
        case MatcherKind::bi_encoder: return "bi_encoder";
        case MatcherKind::external_scorer: return "external_scorer";
        case MatcherKind::keyword_oracle: return "keyword_oracle";
    }
    return "llm_judge";
}

inline MatcherKind parse_matcher_kind(std::string_view s) {
    if (s == "llm_judge") return MatcherKind::llm_judge;
    if (s == "bi_encoder") return MatcherKind::bi_encoder;
    if (s == "external_scorer") return MatcherKind::external_scorer;
    if (s == "keyword_oracle") return MatcherKind::keyword_oracle;
    throw UsageError("unknown matcher: " + std::string(s));
}

enum class ParseStatus { clean, recovered, defaulted };

inline std::string_view to_string(ParseStatus s) {
    switch (s) {
        case ParseStatus::clean: return "clean";
        case ParseStatus::recovered: return "recovered";
        case ParseStatus::defaulted: return "defaulted";
    }
    return "clean";
}

inline ParseStatus parse_parse_status(std::string_view s) {
    if (s == "recovered") return ParseStatus::recovered;
    if (s == "defaulted") return ParseStatus::defaulted;
    return ParseStatus::clean;
}

struct PairVerdict {
    std::string chunk_id;
    std::string story_id;
    int label = 0;
    std::optional<double> score;
    std::optional<std::string> raw_response;
    ParseStatus parse_status = ParseStatus::clean;
    std::size_t attempts = 1;
    std::optional<std::string> warning;
};

// ---- LLM judge -----------------------------------------------------------

struct JudgeOptions {
    std::size_t parse_retry_limit = 2;  // re-asks after an unparseable answer
    double temperature = 0.0;
    int max_tokens = 4;
};

// Exactly "1" or "0" once surrounding whitespace is removed.
inline std::optional<int> parse_judge_answer(std::string_view raw) {
    auto t = text::trim(raw);
    if (t == "1") return 1;
    if (t == "0") return 0;
    return std::nullopt;
}

inline std::string judge_user_prompt(const PromptAssets& prompts, const Chunk& chunk, const UserStory& story) {
    return render_template(prompts.judge_user, {{"story", story.text}, {"chunk", chunk.text}});
}

// Parse state machine: clean on a first-attempt answer, recovered when a
// re-ask parses, defaulted (label 0) once re-asks are exhausted.
inline PairVerdict judge_pair(ModelGateway& gateway, const PromptAssets& prompts, const Chunk& chunk,
                              const UserStory& story, const JudgeOptions& options = {}) {
    const std::string system = render_template(prompts.judge_system, {});
    const std::string user = judge_user_prompt(prompts, chunk, story);
    PairVerdict v{chunk.id, story.id, 0, std::nullopt, std::nullopt, ParseStatus::clean, 0, std::nullopt};
    for (std::size_t attempt = 0; attempt <= options.parse_retry_limit; ++attempt) {
        std::string raw;
        try {
            raw = gateway.chat(system, user, {options.temperature, options.max_tokens}).text;
        } catch (const EmptyCompletionError&) {
            raw.clear();
        } catch (const TransportError& e) {
            throw TransportError("pair (" + chunk.id + ", " + story.id + "): " + e.what());
        }
        v.attempts = attempt + 1;
        v.raw_response = raw;
        if (auto label = parse_judge_answer(raw)) {
            v.label = *label;
            v.parse_status = attempt == 0 ? ParseStatus::clean : ParseStatus::recovered;
            return v;
        }
    }
    v.label = 0;
    v.parse_status = ParseStatus::defaulted;
    v.warning = "unparseable judge answer after " + std::to_string(v.attempts) + " attempts; defaulted to 0";
    return v;
}

// ---- score-based matchers ------------------------------------------------

struct ScoreResult {
    double score = 0.0;
    std::optional<std::string> warning;
};

inline ScoreResult cosine_similarity(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size())
        throw DataError("embedding dimension mismatch: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return {0.0, "zero embedding vector; similarity set to 0"};
    return {dot / (std::sqrt(na) * std::sqrt(nb)), std::nullopt};
}

inline ScoreResult bi_encoder_score(ModelGateway& gateway, const Chunk& chunk, const UserStory& story) {
    auto vectors = gateway.embed({chunk.text, story.text});
    return cosine_similarity(vectors[0].values, vectors[1].values);
}

// Ties count as positive.
inline int threshold_match(double score, double threshold) noexcept { return score >= threshold ? 1 : 0; }

struct ScoredLabel {
    double score = 0.0;
    int gold = 0;
};

struct Calibration {
    double threshold = 0.0;
    double macro_f1 = 0.0;
};

// Tries -inf, every midpoint between consecutive distinct scores, and +inf;
// keeps the best macro-F1, preferring the lowest threshold on ties.
inline Calibration calibrate_threshold(std::span<const ScoredLabel> pairs) {
    std::size_t positives = 0;
    for (const auto& p : pairs) positives += p.gold == 1;
    if (positives == 0 || positives == pairs.size())
        throw DataError("threshold calibration needs both positive and negative gold labels");

    std::vector<ScoredLabel> sorted(pairs.begin(), pairs.end());
    std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.score < b.score; });

    // Threshold -inf: everything predicted positive.
    Confusion c{positives, sorted.size() - positives, 0, 0};
    Calibration best{-std::numeric_limits<double>::infinity(), macro_f1(c)};
    std::size_t i = 0;
    while (i < sorted.size()) {
        // Move the whole group of equal scores below the threshold.
        double value = sorted[i].score;
        while (i < sorted.size() && sorted[i].score == value) {
            if (sorted[i].gold == 1) {
                --c.tp;
                ++c.fn;
            } else {
                --c.fp;
                ++c.tn;
            }
            ++i;
        }
        double threshold = i < sorted.size() ? (value + sorted[i].score) / 2.0 : std::numeric_limits<double>::infinity();
        double f1 = macro_f1(c);
        if (f1 > best.macro_f1 + 1e-12) best = {threshold, f1};
    }
    return best;
}

// ---- keyword oracle ------------------------------------------------------

inline int keyword_oracle_match(std::string_view chunk_text, std::string_view story_text, std::size_t min_shared) {
    if (min_shared < 1) throw UsageError("keyword oracle needs min_shared >= 1");
    auto a = text::content_words(chunk_text);
    auto b = text::content_words(story_text);
    std::size_t shared = 0;
    for (const auto& w : a) shared += b.count(w);
    return shared >= min_shared ? 1 : 0;
}

// ---- full-context ablation -----------------------------------------------

inline constexpr std::size_t kMaxFullContextBatch = 200;

struct IndexListParse {
    std::vector<std::size_t> indices;  // 0-based within the batch, ascending, unique
    std::size_t dropped = 0;           // numbers outside 1..batch_size
    bool none = false;
    bool unparseable = false;
};

// Chunks are numbered from 1 in the prompt. "none" is a recognised empty
// answer; a reply with no numbers at all is unparseable.
inline IndexListParse parse_index_list(std::string_view raw, std::size_t batch_size) {
    IndexListParse out;
    std::string lowered = text::to_lower(text::trim(raw));
    while (!lowered.empty() && (lowered.back() == '.' || lowered.back() == '!')) lowered.pop_back();
    if (lowered == "none" || lowered == "\"none\"") {
        out.none = true;
        return out;
    }
    static const std::regex number(R"(\d+)");
    std::set<std::size_t> found;
    bool any = false;
    for (auto it = std::sregex_iterator(lowered.begin(), lowered.end(), number); it != std::sregex_iterator(); ++it) {
        any = true;
        std::size_t n = 0;
        try {
            n = std::stoul(it->str());
        } catch (const std::exception&) {
            ++out.dropped;
            continue;
        }
        if (n < 1 || n > batch_size) {
            ++out.dropped;
            continue;
        }
        found.insert(n - 1);
    }
    out.unparseable = !any;
    out.indices.assign(found.begin(), found.end());
    return out;
}

inline std::string full_context_user_prompt(const PromptAssets& prompts, const UserStory& story,
                                            std::span<const Chunk> batch) {
    std::string listing;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        if (i > 0) listing += '\n';
        listing += "[" + std::to_string(i + 1) + "] " + batch[i].text;
    }
    return render_template(prompts.full_context_user, {{"story", story.text}, {"chunks", listing}});
}

struct FullContextResult {
    std::vector<std::size_t> chunk_indices;  // 0-based into the full chunk list
    std::size_t batches = 0;
    std::size_t warnings = 0;
    std::vector<std::string> raw_responses;
    std::vector<IndexListParse> parses;  // per batch
};

// Asks for supporting chunk numbers over batches of at most batch_size
// chunks and maps answers back to global positions.
inline FullContextResult full_context_match(ModelGateway& gateway, const PromptAssets& prompts, const UserStory& story,
                                            std::span<const Chunk> chunks,
                                            std::size_t batch_size = kMaxFullContextBatch,
                                            const ChatParams& params = {0.0, std::nullopt}) {
    if (batch_size < 1 || batch_size > kMaxFullContextBatch)
        throw UsageError("full-context batch size must be in 1.." + std::to_string(kMaxFullContextBatch));
    FullContextResult out;
    const std::string system = render_template(prompts.full_context_system, {});
    for (std::size_t offset = 0; offset < chunks.size(); offset += batch_size) {
        auto batch = chunks.subspan(offset, std::min(batch_size, chunks.size() - offset));
        std::string raw;
        try {
            raw = gateway.chat(system, full_context_user_prompt(prompts, story, batch), params).text;
        } catch (const EmptyCompletionError&) {
            raw.clear();
        } catch (const TransportError& e) {
            throw TransportError("story " + story.id + ", batch at " + std::to_string(offset) + ": " + e.what());
        }
        ++out.batches;
        out.raw_responses.push_back(raw);
        auto parsed = parse_index_list(raw, batch.size());
        if (parsed.unparseable) ++out.warnings;
        if (parsed.dropped > 0) ++out.warnings;
        for (auto i : parsed.indices) out.chunk_indices.push_back(offset + i);
        out.parses.push_back(std::move(parsed));
    }
    return out;
}

// ---- matcher interface ---------------------------------------------------

class Matcher {
public:
    virtual ~Matcher() = default;
    virtual PairVerdict match(const Chunk& chunk, const UserStory& story) const = 0;
    virtual MatcherKind kind() const = 0;
    virtual ordered_json describe() const = 0;
};

class KeywordOracleMatcher final : public Matcher {
public:
    explicit KeywordOracleMatcher(std::size_t min_shared = 2) : min_shared_(min_shared) {
        if (min_shared_ < 1) throw UsageError("keyword oracle needs min_shared >= 1");
    }

    PairVerdict match(const Chunk& chunk, const UserStory& story) const override {
        PairVerdict v;
        v.chunk_id = chunk.id;
        v.story_id = story.id;
        v.label = keyword_oracle_match(chunk.text, story.text, min_shared_);
        return v;
    }
    MatcherKind kind() const override { return MatcherKind::keyword_oracle; }
    ordered_json describe() const override { return {{"kind", "keyword_oracle"}, {"min_shared", min_shared_}}; }

private:
    std::size_t min_shared_;
};

class LlmJudgeMatcher final : public Matcher {
public:
    LlmJudgeMatcher(ModelGateway& gateway, PromptAssets prompts, JudgeOptions options = {})
        : gateway_(&gateway), prompts_(std::move(prompts)), options_(options) {}

    PairVerdict match(const Chunk& chunk, const UserStory& story) const override {
        return judge_pair(*gateway_, prompts_, chunk, story, options_);
    }
    MatcherKind kind() const override { return MatcherKind::llm_judge; }
    ordered_json describe() const override {
        return {{"kind", "llm_judge"},
                {"temperature", options_.temperature},
                {"max_tokens", options_.max_tokens},
                {"parse_retry_limit", options_.parse_retry_limit},
                {"system_prompt_sha256", sha256_hex(prompts_.judge_system)},
                {"user_prompt_sha256", sha256_hex(prompts_.judge_user)}};
    }

private:
    ModelGateway* gateway_;
    PromptAssets prompts_;
    JudgeOptions options_;
};

class BiEncoderMatcher final : public Matcher {
public:
    BiEncoderMatcher(ModelGateway& gateway, double threshold) : gateway_(&gateway), threshold_(threshold) {
        if (!(threshold >= -1.0 && threshold <= 1.0)) throw UsageError("bi-encoder threshold must lie in [-1, 1]");
    }

    PairVerdict match(const Chunk& chunk, const UserStory& story) const override {
        auto s = bi_encoder_score(*gateway_, chunk, story);
        PairVerdict v;
        v.chunk_id = chunk.id;
        v.story_id = story.id;
        v.score = s.score;
        v.label = threshold_match(s.score, threshold_);
        v.warning = s.warning;
        return v;
    }
    MatcherKind kind() const override { return MatcherKind::bi_encoder; }
    ordered_json describe() const override { return {{"kind", "bi_encoder"}, {"threshold", threshold_}}; }

private:
    ModelGateway* gateway_;
    double threshold_;
};

// Stand-in for a served cross-encoder: any endpoint returning a pair score.
class ExternalScorerMatcher final : public Matcher {
public:
    ExternalScorerMatcher(ModelGateway& gateway, double threshold) : gateway_(&gateway), threshold_(threshold) {
        if (!std::isfinite(threshold)) throw UsageError("external scorer threshold must be finite");
    }

    PairVerdict match(const Chunk& chunk, const UserStory& story) const override {
        double s = 0.0;
        try {
            s = gateway_->score(story.text, chunk.text);
        } catch (const TransportError& e) {
            throw TransportError("pair (" + chunk.id + ", " + story.id + "): " + e.what());
        }
        PairVerdict v;
        v.chunk_id = chunk.id;
        v.story_id = story.id;
        v.score = s;
        v.label = threshold_match(s, threshold_);
        return v;
    }
    MatcherKind kind() const override { return MatcherKind::external_scorer; }
    ordered_json describe() const override { return {{"kind", "external_scorer"}, {"threshold", threshold_}}; }

private:
    ModelGateway* gateway_;
    double threshold_;
};

}  // namespace t2sa
