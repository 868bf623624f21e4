#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "t2sa/blocking.hpp"
#include "t2sa/chunker.hpp"
#include "t2sa/digest.hpp"
#include "t2sa/error.hpp"
#include "t2sa/gateway.hpp"
#include "t2sa/journal.hpp"
#include "t2sa/json_io.hpp"
#include "t2sa/labels_csv.hpp"
#include "t2sa/matchers.hpp"
#include "t2sa/metrics.hpp"
#include "t2sa/parallel.hpp"
#include "t2sa/prompts.hpp"
#include "t2sa/stories.hpp"
#include "t2sa/transcript.hpp"

namespace t2sa {

// ---- configuration -------------------------------------------------------

enum class BlockingMode { off, top_k, target_recall };
enum class ReferenceSource { gold, oracle };

inline std::string_view to_string(BlockingMode m) {
    switch (m) {
        case BlockingMode::off: return "off";
        case BlockingMode::top_k: return "top_k";
        case BlockingMode::target_recall: return "target_recall";
    }
    return "off";
}

inline std::string_view to_string(ReferenceSource r) { return r == ReferenceSource::gold ? "gold" : "oracle"; }

inline ReferenceSource parse_reference_source(std::string_view s) {
    if (s == "gold") return ReferenceSource::gold;
    if (s == "oracle") return ReferenceSource::oracle;
    throw UsageError("unknown reference source: " + std::string(s));
}

struct BlockingConfig {
    BlockingMode mode = BlockingMode::off;
    std::size_t k = 0;
    double target_recall = 0.95;
    ReferenceSource reference = ReferenceSource::oracle;
    std::string gold_path;
    std::size_t oracle_min_shared = 2;

    void validate() const {
        if (mode == BlockingMode::top_k && k < 1) throw UsageError("blocking K must be at least 1");
        if (mode == BlockingMode::target_recall) {
            if (!(target_recall > 0.0 && target_recall <= 1.0)) throw UsageError("target recall must lie in (0, 1]");
            if (reference == ReferenceSource::gold && gold_path.empty())
                throw UsageError("gold reference needs a labels file");
            if (oracle_min_shared < 1) throw UsageError("oracle min_shared must be >= 1");
        }
    }
};

struct MatcherConfig {
    MatcherKind kind = MatcherKind::llm_judge;
    bool full_context = false;
    double threshold = 0.5;
    std::size_t min_shared = 2;
    JudgeOptions judge;
    std::string prompts_dir;
    std::size_t full_context_batch = kMaxFullContextBatch;

    void validate() const {
        if (full_context && kind != MatcherKind::llm_judge) throw UsageError("full-context mode needs the llm_judge matcher");
        if (full_context && (full_context_batch < 1 || full_context_batch > kMaxFullContextBatch))
            throw UsageError("full-context batch size must be in 1.." + std::to_string(kMaxFullContextBatch));
        if (kind == MatcherKind::keyword_oracle && min_shared < 1) throw UsageError("oracle min_shared must be >= 1");
    }
};

struct RunConfig {
    std::vector<std::string> transcript_paths;
    std::optional<TranscriptFormat> transcript_format;  // guessed from the extension when unset
    std::string stories_path;
    std::optional<StoryFormat> story_format;
    ChunkingConfig chunking;
    MatcherConfig matcher;
    BlockingConfig blocking;
    GatewayConfig gateway;
    std::uint64_t pair_overhead = 0;
    std::string output_path;
    std::string journal_path;
    bool resume = false;
    std::uint64_t seed = 0;  // echoed only; every stage is deterministic

    void validate() const {
        if (transcript_paths.empty()) throw UsageError("at least one transcript is required");
        if (stories_path.empty()) throw UsageError("a stories file is required");
        if (resume && journal_path.empty()) throw UsageError("--resume needs a journal path");
        chunking.validate();
        matcher.validate();
        blocking.validate();
        gateway.validate();
    }
};

// ---- corpus --------------------------------------------------------------

struct TranscriptSource {
    std::string id;
    std::string sha256;
};

struct Corpus {
    std::vector<TranscriptSource> sources;
    std::vector<Chunk> chunks;
    std::vector<UserStory> stories;
    std::string stories_sha256;
};

inline std::string stories_digest(std::span<const UserStory> stories) {
    std::string joined;
    for (const auto& s : stories) joined += s.id + "\t" + s.text + "\n";
    return sha256_hex(joined);
}

// Transcripts are chunked independently, so no chunk crosses a file
// boundary; chunk order follows the given transcript order.
inline Corpus make_corpus(std::span<const Transcript> transcripts, std::vector<UserStory> stories,
                          const ChunkingConfig& chunking, const Tokenizer& tokenizer = default_tokenizer()) {
    chunking.validate();
    Corpus c;
    std::set<std::string> ids;
    for (const auto& t : transcripts) {
        if (!ids.insert(t.id).second) throw DataError("duplicate transcript id: " + t.id);
        c.sources.push_back({t.id, sha256_hex(render_transcript(t))});
        auto chunks = chunking.strategy == ChunkStrategy::lines
                          ? chunk_by_lines(t.id, render_transcript(t), tokenizer)
                          : chunk_transcript(t, chunking, tokenizer);
        for (auto& ch : chunks) c.chunks.push_back(std::move(ch));
    }
    if (stories.empty()) throw DataError("no stories to align");
    c.stories = std::move(stories);
    c.stories_sha256 = stories_digest(c.stories);
    return c;
}

inline StoryFormat guess_story_format(const std::string& path) {
    return std::filesystem::path(path).extension() == ".jsonl" ? StoryFormat::jsonl : StoryFormat::lines;
}

inline Corpus load_corpus(const RunConfig& config, const Tokenizer& tokenizer = default_tokenizer()) {
    Corpus c;
    std::set<std::string> ids;
    for (const auto& path : config.transcript_paths) {
        auto content = text::read_file(path);
        std::string id = std::filesystem::path(path).stem().string();
        if (!ids.insert(id).second) throw DataError("duplicate transcript id: " + id + " (" + path + ")");
        c.sources.push_back({id, sha256_hex(content)});
        std::vector<Chunk> chunks;
        if (config.chunking.strategy == ChunkStrategy::lines) {
            chunks = chunk_by_lines(id, content, tokenizer);
        } else {
            auto format = config.transcript_format.value_or(guess_transcript_format(path));
            chunks = chunk_transcript(parse_transcript(content, format, id, path), config.chunking, tokenizer);
        }
        for (auto& ch : chunks) c.chunks.push_back(std::move(ch));
    }
    c.stories = load_stories(config.stories_path, config.story_format.value_or(guess_story_format(config.stories_path)));
    c.stories_sha256 = stories_digest(c.stories);
    return c;
}

// ---- matcher construction ------------------------------------------------

inline bool needs_gateway(const MatcherConfig& m) { return m.kind != MatcherKind::keyword_oracle; }

inline std::unique_ptr<Matcher> make_matcher(const MatcherConfig& m, ModelGateway* gateway) {
    if (needs_gateway(m) && gateway == nullptr)
        throw UsageError("matcher " + std::string(to_string(m.kind)) + " needs a model endpoint");
    switch (m.kind) {
        case MatcherKind::keyword_oracle: return std::make_unique<KeywordOracleMatcher>(m.min_shared);
        case MatcherKind::llm_judge:
            return std::make_unique<LlmJudgeMatcher>(*gateway, PromptAssets::load(m.prompts_dir), m.judge);
        case MatcherKind::bi_encoder: return std::make_unique<BiEncoderMatcher>(*gateway, m.threshold);
        case MatcherKind::external_scorer: return std::make_unique<ExternalScorerMatcher>(*gateway, m.threshold);
    }
    throw UsageError("unsupported matcher");
}

// ---- alignment -----------------------------------------------------------

struct RunHooks {
    // Called after each verdict is journaled with the count completed in
    // this process. Throwing aborts the run (used to simulate crashes).
    std::function<void(const PairVerdict&, std::size_t)> on_verdict;
};

struct ResolvedBlocking {
    ordered_json echo;
    std::optional<CandidateSet> candidates;  // empty means the full product
};

inline ResolvedBlocking resolve_blocking(const Corpus& corpus, const RunConfig& config, ModelGateway* gateway,
                                         const PairCostModel& cost) {
    const auto& b = config.blocking;
    const std::size_t n_chunks = corpus.chunks.size();
    ResolvedBlocking out;
    // K >= |C| prunes nothing, so it is reported and run exactly like
    // direct mode.
    if (b.mode == BlockingMode::off || (b.mode == BlockingMode::top_k && b.k >= n_chunks)) {
        out.echo = {{"mode", "off"}};
        return out;
    }
    if (gateway == nullptr) throw UsageError("blocking needs an embedding endpoint");
    auto table = with_stage("embed", [&] { return embed_corpus(*gateway, corpus.chunks, corpus.stories); });
    auto rankings = rank_all(table, corpus.chunks, corpus.stories);
    if (b.mode == BlockingMode::top_k) {
        out.echo = {{"mode", "top_k"}, {"k", b.k}};
        out.candidates = block_from_rankings(corpus.stories, corpus.chunks, rankings, b.k, cost);
        return out;
    }
    std::set<PairKey> reference =
        b.reference == ReferenceSource::gold
            ? positive_pairs(load_labels_csv(b.gold_path))
            : keyword_reference(corpus.stories, corpus.chunks, b.oracle_min_shared);
    auto ks = min_tokens_for_recall(corpus.stories, corpus.chunks, rankings, reference, b.target_recall, cost);
    out.echo = {{"mode", "target_recall"},
                {"target_recall", b.target_recall},
                {"reference", std::string(to_string(b.reference))},
                {"k", ks.k_star},
                {"reference_recall", ks.recall}};
    if (b.reference == ReferenceSource::oracle) out.echo["oracle_min_shared"] = b.oracle_min_shared;
    out.candidates = block_from_rankings(corpus.stories, corpus.chunks, rankings, ks.k_star, cost);
    return out;
}

inline ordered_json models_echo(const RunConfig& config, bool embeds) {
    ordered_json m = ordered_json::object();
    const auto& g = config.gateway;
    switch (config.matcher.kind) {
        case MatcherKind::llm_judge: m["chat"] = g.chat_model_id; break;
        case MatcherKind::bi_encoder: embeds = true; break;
        case MatcherKind::external_scorer: m["score"] = g.score_model_id; break;
        case MatcherKind::keyword_oracle: break;
    }
    if (embeds) m["embed"] = g.embed_model_id;
    return m;
}

// Endpoint, output and journal paths are left out so reports depend only
// on inputs and the settings that can change verdicts.
inline ordered_json make_config_echo(const Corpus& corpus, const RunConfig& config, const Matcher& matcher,
                                     const ResolvedBlocking& blocking) {
    ordered_json transcripts = ordered_json::array();
    for (const auto& s : corpus.sources) transcripts.push_back({{"id", s.id}, {"sha256", s.sha256}});
    ordered_json e;
    e["transcripts"] = transcripts;
    e["stories"] = {{"count", corpus.stories.size()}, {"sha256", corpus.stories_sha256}};
    e["chunking"] = {{"strategy", std::string(to_string(config.chunking.strategy))},
                     {"window", config.chunking.window},
                     {"stride", config.chunking.stride},
                     {"chunks", corpus.chunks.size()}};
    auto m = matcher.describe();
    if (config.matcher.full_context) {
        m["mode"] = "full_context";
        m["batch_size"] = config.matcher.full_context_batch;
    }
    e["matcher"] = m;
    e["blocking"] = blocking.echo;
    e["models"] = models_echo(config, blocking.candidates.has_value());
    e["pair_overhead"] = config.pair_overhead;
    e["seed"] = config.seed;
    return e;
}

inline AlignmentReport build_report(const Corpus& corpus, const std::set<PairKey>& judged,
                                    const std::map<PairKey, PairVerdict>& verdicts, std::uint64_t token_cost,
                                    std::uint64_t matcher_calls, ordered_json echo) {
    AlignmentMatrix m;
    for (const auto& c : corpus.chunks) m.chunks.push_back(c.id);
    for (const auto& s : corpus.stories) m.stories.push_back(s.id);
    m.judged = judged;

    AlignmentReport r;
    auto& d = r.diagnostics;
    for (const auto& p : judged) {
        auto it = verdicts.find(p);
        if (it == verdicts.end()) throw DataError("missing verdict for pair (" + p.chunk_id + ", " + p.story_id + ")");
        const auto& v = it->second;
        if (v.label == 1) m.positives.insert(p);
        else ++d.judged_negatives;
        if (v.parse_status == ParseStatus::defaulted) ++d.parse_warnings;
        else if (v.parse_status == ParseStatus::recovered) ++d.recovered_parses;
        if (v.warning && v.parse_status != ParseStatus::defaulted) ++d.score_warnings;
    }
    d.judged_pairs = judged.size();
    d.pruned_pairs = m.chunks.size() * m.stories.size() - judged.size();

    r.correctness = correctness(m);
    r.completeness = completeness(m);

    std::map<std::string, std::size_t> judged_per_story;
    for (const auto& p : judged) ++judged_per_story[p.story_id];
    std::map<std::string, std::vector<std::string>> evidence, covering;
    for (const auto& c : corpus.chunks)
        for (const auto& s : corpus.stories)
            if (m.positives.contains({c.id, s.id})) evidence[s.id].push_back(c.id);
    for (const auto& s : corpus.stories)
        for (const auto& c : corpus.chunks)
            if (m.positives.contains({c.id, s.id})) covering[c.id].push_back(s.id);

    for (const auto& s : corpus.stories) {
        StoryEvidence se;
        se.story_id = s.id;
        se.evidence = evidence[s.id];
        se.supported = !se.evidence.empty();
        se.judged = judged_per_story[s.id];
        se.pruned = corpus.chunks.size() - se.judged;
        r.per_story.push_back(std::move(se));
    }
    for (const auto& c : corpus.chunks) {
        ChunkCoverage cc;
        cc.chunk_id = c.id;
        cc.stories = covering[c.id];
        cc.covered = !cc.stories.empty();
        r.per_chunk.push_back(std::move(cc));
    }
    r.token_cost = token_cost;
    r.matcher_calls = matcher_calls;
    r.config_echo = std::move(echo);
    return r;
}

// Chunks -> optional blocking -> matcher over candidate pairs -> report.
// Pairs outside the candidate set count as 0 and are reported as pruned.
inline AlignmentReport align_corpus(const Corpus& corpus, const RunConfig& config, ModelGateway* gateway,
                                    const RunHooks& hooks = {}) {
    if (corpus.chunks.empty()) throw DataError("no chunks to align");
    if (corpus.stories.empty()) throw DataError("no stories to align");
    config.matcher.validate();
    config.blocking.validate();

    const PairCostModel cost{&default_tokenizer(), config.pair_overhead};
    auto matcher = make_matcher(config.matcher, gateway);
    auto blocking = resolve_blocking(corpus, config, gateway, cost);
    auto echo = make_config_echo(corpus, config, *matcher, blocking);

    // Candidate pairs per story, in chunk order.
    std::vector<std::vector<std::size_t>> per_story(corpus.stories.size());
    std::map<std::string, std::size_t> chunk_pos;
    for (std::size_t i = 0; i < corpus.chunks.size(); ++i) chunk_pos[corpus.chunks[i].id] = i;
    for (std::size_t j = 0; j < corpus.stories.size(); ++j) {
        if (blocking.candidates) {
            for (const auto& id : blocking.candidates->coverage[j].chunk_ids) per_story[j].push_back(chunk_pos.at(id));
            std::sort(per_story[j].begin(), per_story[j].end());
        } else {
            per_story[j].resize(corpus.chunks.size());
            for (std::size_t i = 0; i < corpus.chunks.size(); ++i) per_story[j][i] = i;
        }
    }
    std::set<PairKey> judged;
    std::uint64_t token_cost = 0;
    for (std::size_t j = 0; j < corpus.stories.size(); ++j) {
        for (auto i : per_story[j]) {
            judged.insert({corpus.chunks[i].id, corpus.stories[j].id});
            token_cost += cost.pair_cost(corpus.chunks[i], corpus.stories[j]);
        }
    }

    std::unique_ptr<VerdictJournal> journal;
    if (!config.journal_path.empty())
        journal = std::make_unique<VerdictJournal>(config.journal_path, sha256_hex(echo.dump()), config.resume);

    std::map<PairKey, PairVerdict> verdicts;
    if (journal)
        for (const auto& [k, v] : journal->recovered())
            if (judged.contains(k)) verdicts.emplace(k, v);

    std::mutex mutex;
    std::atomic<std::size_t> done{0};
    const std::size_t workers = gateway ? gateway->config().max_in_flight : 1;
    std::uint64_t matcher_calls = 0;

    if (!config.matcher.full_context) {
        std::vector<std::pair<std::size_t, std::size_t>> pending;
        for (std::size_t j = 0; j < corpus.stories.size(); ++j)
            for (auto i : per_story[j])
                if (!verdicts.contains({corpus.chunks[i].id, corpus.stories[j].id})) pending.emplace_back(i, j);

        with_stage("match", [&] {
            parallel_for(pending.size(), workers, [&](std::size_t n) {
                auto [i, j] = pending[n];
                auto v = matcher->match(corpus.chunks[i], corpus.stories[j]);
                if (journal) journal->append(v);
                {
                    std::lock_guard lock(mutex);
                    verdicts[{v.chunk_id, v.story_id}] = v;
                }
                auto count = ++done;
                if (hooks.on_verdict) hooks.on_verdict(v, count);
            });
        });
        matcher_calls = judged.size();
    } else {
        const auto prompts = PromptAssets::load(config.matcher.prompts_dir);
        const ChatParams params{config.matcher.judge.temperature, std::nullopt};
        const std::size_t batch = config.matcher.full_context_batch;
        std::vector<std::size_t> pending;
        for (std::size_t j = 0; j < corpus.stories.size(); ++j) {
            bool complete = true;
            for (auto i : per_story[j]) complete = complete && verdicts.contains({corpus.chunks[i].id, corpus.stories[j].id});
            if (!complete) pending.push_back(j);
        }
        with_stage("match", [&] {
            parallel_for(pending.size(), workers, [&](std::size_t n) {
                const std::size_t j = pending[n];
                const auto& story = corpus.stories[j];
                std::vector<Chunk> listed;
                for (auto i : per_story[j]) listed.push_back(corpus.chunks[i]);
                auto result = full_context_match(*gateway, prompts, story, listed, batch, params);
                std::set<std::size_t> selected(result.chunk_indices.begin(), result.chunk_indices.end());
                std::vector<PairVerdict> vs;
                for (std::size_t pos = 0; pos < listed.size(); ++pos) {
                    PairVerdict v;
                    v.chunk_id = listed[pos].id;
                    v.story_id = story.id;
                    v.label = selected.contains(pos) ? 1 : 0;
                    if (result.parses[pos / batch].unparseable) {
                        v.parse_status = ParseStatus::defaulted;
                        v.warning = "unparseable chunk list; defaulted to 0";
                    }
                    vs.push_back(std::move(v));
                }
                if (journal) journal->append_all(vs);
                std::lock_guard lock(mutex);
                for (auto& v : vs) {
                    auto count = ++done;
                    verdicts[{v.chunk_id, v.story_id}] = v;
                    if (hooks.on_verdict) hooks.on_verdict(v, count);
                }
            });
        });
        for (std::size_t j = 0; j < corpus.stories.size(); ++j)
            matcher_calls += (per_story[j].size() + batch - 1) / batch;
    }

    return with_stage("report", [&] { return build_report(corpus, judged, verdicts, token_cost, matcher_calls, echo); });
}

inline AlignmentReport run_alignment(const RunConfig& config, const RunHooks& hooks = {}) {
    config.validate();
    auto corpus = with_stage("load", [&] { return load_corpus(config); });
    std::unique_ptr<ModelGateway> gateway;
    const bool blocking_needs_embeddings =
        config.blocking.mode == BlockingMode::target_recall ||
        (config.blocking.mode == BlockingMode::top_k && config.blocking.k < corpus.chunks.size());
    if (needs_gateway(config.matcher) || blocking_needs_embeddings)
        gateway = std::make_unique<ModelGateway>(config.gateway);
    auto report = align_corpus(corpus, config, gateway.get(), hooks);
    if (!config.output_path.empty())
        with_stage("write", [&] { write_text_file(config.output_path, dump_fixed(report_to_json(report))); });
    return report;
}

// ---- evaluation ----------------------------------------------------------

struct EvalReport {
    Confusion confusion;
    ClassScores positive;
    ClassScores negative;
    double macro_f1 = 0.0;
    std::size_t parse_failures = 0;
    std::size_t pairs = 0;
};

inline EvalReport evaluate_confusion(const Confusion& c, std::size_t parse_failures = 0) {
    return {c, positive_scores(c), negative_scores(c), macro_f1(c), parse_failures, c.total()};
}

// Scores every gold pair; a gold pair absent from the predictions counts as
// predicted 0.
inline EvalReport evaluate(const std::set<PairKey>& predicted_positive, const std::vector<AlignmentLabel>& gold,
                           const std::set<std::string>& chunk_ids, const std::set<std::string>& story_ids,
                           std::size_t parse_failures = 0) {
    Confusion c;
    std::set<PairKey> seen;
    for (const auto& g : gold) {
        if (!chunk_ids.contains(g.pair.chunk_id)) throw DataError("gold label references unknown chunk id: " + g.pair.chunk_id);
        if (!story_ids.contains(g.pair.story_id)) throw DataError("gold label references unknown story id: " + g.pair.story_id);
        if (!seen.insert(g.pair).second)
            throw DataError("duplicate gold pair (" + g.pair.story_id + ", " + g.pair.chunk_id + ")");
        const bool pred = predicted_positive.contains(g.pair);
        if (g.label == 1) (pred ? c.tp : c.fn)++;
        else (pred ? c.fp : c.tn)++;
    }
    return evaluate_confusion(c, parse_failures);
}

inline AlignmentMatrix matrix_from_report(const AlignmentReport& r) {
    AlignmentMatrix m;
    for (const auto& c : r.per_chunk) m.chunks.push_back(c.chunk_id);
    for (const auto& s : r.per_story) {
        m.stories.push_back(s.story_id);
        for (const auto& c : s.evidence) m.positives.insert({c, s.story_id});
    }
    m.judged = m.positives;
    m.validate();
    return m;
}

inline EvalReport evaluate_report(const AlignmentReport& report, const std::vector<AlignmentLabel>& gold) {
    auto m = matrix_from_report(report);
    return evaluate(m.positives, gold, {m.chunks.begin(), m.chunks.end()}, {m.stories.begin(), m.stories.end()},
                    report.diagnostics.parse_warnings);
}

inline ordered_json eval_to_json(const EvalReport& e) {
    auto cls = [](const ClassScores& s) {
        return ordered_json{{"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1}};
    };
    return {{"macro_f1", e.macro_f1},
            {"positive", cls(e.positive)},
            {"negative", cls(e.negative)},
            {"confusion", {{"tp", e.confusion.tp}, {"fp", e.confusion.fp}, {"fn", e.confusion.fn}, {"tn", e.confusion.tn}}},
            {"pairs", e.pairs},
            {"parse_failures", e.parse_failures}};
}

// ---- story generation ----------------------------------------------------

struct GeneratedStory {
    UserStory story;
    bool recovered = false;    // list decoration was stripped
    bool template_ok = false;  // matches the Connextra template
};

struct GenerationResult {
    std::vector<GeneratedStory> stories;
    bool truncated = false;
    std::size_t lines_seen = 0;
};

// One story per non-empty line. Bullets and numbering are stripped and
// flagged; lines outside the template are kept but flagged.
inline GenerationResult parse_generated_stories(std::string_view completion, std::size_t max_n) {
    if (max_n < 1) throw UsageError("max_n must be >= 1");
    static const std::regex decoration(R"(^(?:[-*+]|•|\d{1,3}[.)]|\(\d{1,3}\))\s+)");
    GenerationResult out;
    for (const auto& raw : text::split_lines(completion)) {
        std::string line(text::trim(raw));
        if (line.empty()) continue;
        ++out.lines_seen;
        bool recovered = false;
        std::smatch m;
        if (std::regex_search(line, m, decoration)) {
            line = std::string(text::trim(line.substr(static_cast<std::size_t>(m.length(0)))));
            recovered = true;
        }
        if (line.empty()) continue;
        if (out.stories.size() == max_n) {
            out.truncated = true;
            continue;
        }
        GeneratedStory g;
        g.story = make_story("s" + std::to_string(out.stories.size() + 1), line);
        g.recovered = recovered;
        g.template_ok = g.story.parts.has_value();
        out.stories.push_back(std::move(g));
    }
    return out;
}

inline std::string generation_user_prompt(const PromptAssets& prompts, std::string_view specification, std::size_t max_n) {
    return render_template(prompts.generation_user,
                           {{"specification", std::string(specification)}, {"max_n", std::to_string(max_n)}});
}

inline GenerationResult generate_stories(ModelGateway& gateway, const PromptAssets& prompts, std::string_view specification,
                                         std::size_t max_n = 50, const ChatParams& params = {}) {
    if (max_n < 1) throw UsageError("max_n must be >= 1");
    auto reply = gateway.chat(render_template(prompts.generation_system, {}),
                              generation_user_prompt(prompts, specification, max_n), params);
    return parse_generated_stories(reply.text, max_n);
}

inline ordered_json generation_to_json(const GenerationResult& g) {
    ordered_json stories = ordered_json::array();
    for (const auto& s : g.stories)
        stories.push_back({{"id", s.story.id}, {"text", s.story.text}, {"recovered", s.recovered}, {"template_ok", s.template_ok}});
    return {{"stories", stories}, {"truncated", g.truncated}, {"lines_seen", g.lines_seen}};
}

// ---- story-set comparison ------------------------------------------------

struct ComparisonRow {
    std::string name;
    double correctness = 0.0;
    double completeness = 0.0;
    std::size_t supported_stories = 0;
    std::size_t total_stories = 0;
    std::size_t covered_chunks = 0;
    std::size_t total_chunks = 0;
};

struct Comparison {
    std::vector<ComparisonRow> rows;
    std::optional<std::pair<std::size_t, std::size_t>> diff_pair;
    std::optional<DiffReport> diff;
};

struct NamedReport {
    std::string name;
    AlignmentReport report;
};

inline Comparison compare_story_sets(std::span<const NamedReport> reports,
                                     std::optional<std::pair<std::size_t, std::size_t>> diff_pair = std::nullopt) {
    if (reports.empty()) throw UsageError("compare needs at least one report");
    std::vector<AlignmentMatrix> matrices;
    for (const auto& r : reports) matrices.push_back(matrix_from_report(r.report));
    const std::set<std::string> universe(matrices[0].chunks.begin(), matrices[0].chunks.end());
    for (std::size_t i = 1; i < matrices.size(); ++i)
        if (std::set<std::string>(matrices[i].chunks.begin(), matrices[i].chunks.end()) != universe)
            throw DataError("report " + reports[i].name + " covers a different chunk universe than " + reports[0].name);

    Comparison out;
    for (std::size_t i = 0; i < reports.size(); ++i) {
        const auto cr = correctness_ratio(matrices[i]);
        const auto cp = completeness_ratio(matrices[i]);
        out.rows.push_back({reports[i].name, cr.value(), cp.value(), cr.numerator, cr.denominator, cp.numerator,
                            cp.denominator});
    }
    if (!diff_pair && reports.size() >= 2) diff_pair = std::pair<std::size_t, std::size_t>{0, 1};
    if (diff_pair) {
        auto [a, b] = *diff_pair;
        if (a >= reports.size() || b >= reports.size()) throw UsageError("diff pair index out of range");
        out.diff_pair = diff_pair;
        out.diff = coverage_diff(matrices[a], matrices[b]);
    }
    return out;
}

inline ordered_json comparison_to_json(const Comparison& c, std::span<const NamedReport> reports) {
    ordered_json rows = ordered_json::array();
    for (const auto& r : c.rows)
        rows.push_back({{"name", r.name},
                        {"correctness", r.correctness},
                        {"completeness", r.completeness},
                        {"supported_stories", r.supported_stories},
                        {"stories", r.total_stories},
                        {"covered_chunks", r.covered_chunks},
                        {"chunks", r.total_chunks}});
    ordered_json out{{"rows", rows}};
    if (c.diff) {
        const auto& d = *c.diff;
        out["diff"] = {{"a", reports[c.diff_pair->first].name},
                       {"b", reports[c.diff_pair->second].name},
                       {"only_a", d.only_a},
                       {"only_b", d.only_b},
                       {"unique_stories_a", d.unique_stories_a},
                       {"unique_stories_b", d.unique_stories_b}};
    }
    return out;
}

inline std::string comparison_table(const Comparison& c, std::span<const NamedReport> reports) {
    std::string out;
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-24s %12s %12s %10s %10s\n", "set", "correctness", "completeness", "supported",
                  "covered");
    out += buf;
    for (const auto& r : c.rows) {
        std::snprintf(buf, sizeof buf, "%-24s %12.4f %12.4f %4zu/%-5zu %4zu/%-5zu\n", r.name.c_str(), r.correctness,
                      r.completeness, r.supported_stories, r.total_stories, r.covered_chunks, r.total_chunks);
        out += buf;
    }
    if (c.diff) {
        std::snprintf(buf, sizeof buf, "chunks covered only by %s: %zu (stories: %zu)\n",
                      reports[c.diff_pair->first].name.c_str(), c.diff->only_a.size(), c.diff->unique_stories_a.size());
        out += buf;
        std::snprintf(buf, sizeof buf, "chunks covered only by %s: %zu (stories: %zu)\n",
                      reports[c.diff_pair->second].name.c_str(), c.diff->only_b.size(), c.diff->unique_stories_b.size());
        out += buf;
    }
    return out;
}

}  // namespace t2sa
