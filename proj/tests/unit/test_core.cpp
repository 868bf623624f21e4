#include <cmath>
#include <set>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "t2sa/chunker.hpp"
#include "t2sa/json_io.hpp"
#include "t2sa/labels_csv.hpp"
#include "t2sa/metrics.hpp"
#include "t2sa/prompts.hpp"
#include "t2sa/stories.hpp"
#include "t2sa/transcript.hpp"

#include "generators.hpp"
#include "oracles.hpp"

using namespace t2sa;

namespace {

AlignmentMatrix matrix(std::vector<std::string> chunks, std::vector<std::string> stories,
                       std::set<PairKey> positives) {
    AlignmentMatrix m{std::move(chunks), std::move(stories), positives, positives};
    return m;
}

Transcript turns(std::size_t k, const std::string& id = "t") {
    Transcript t{id, {}, SourceKind::interview};
    for (std::size_t i = 0; i < k; ++i) t.turns.push_back({i, i % 2 ? "B" : "A", "utterance " + std::to_string(i)});
    return t;
}

}  // namespace

// ---- transcripts ---------------------------------------------------------

TEST(Transcript, JsonlMapsLinesToTurns) {
    auto t = parse_transcript(R"({"speaker":"Analyst","text":"What do you need?"}
{"speaker":"Stakeholder","text":"A dashboard."})",
                              TranscriptFormat::jsonl, "int1");
    ASSERT_EQ(t.turns.size(), 2u);
    EXPECT_EQ(t.turns[0].index, 0u);
    EXPECT_EQ(t.turns[1].index, 1u);
    EXPECT_EQ(t.turns[0].speaker, "Analyst");
    EXPECT_EQ(t.turns[1].text, "A dashboard.");
}

TEST(Transcript, PlainContinuationJoinsPreviousTurnWithSpace) {
    auto t = parse_transcript("A: hi\nmore\nB: yo", TranscriptFormat::plain, "p");
    ASSERT_EQ(t.turns.size(), 2u);
    EXPECT_EQ(t.turns[0].text, "hi more");
    EXPECT_EQ(t.turns[1].speaker, "B");
    EXPECT_EQ(t.turns[1].text, "yo");
}

TEST(Transcript, EmptyFileIsAnError) {
    EXPECT_THROW(parse_transcript("", TranscriptFormat::plain, "e"), DataError);
    EXPECT_THROW(parse_transcript("  \n\n", TranscriptFormat::jsonl, "e"), DataError);
}

TEST(Transcript, MalformedLinesReportLineNumbers) {
    try {
        parse_transcript("{\"speaker\":\"A\",\"text\":\"ok\"}\nnot json", TranscriptFormat::jsonl, "x", "x.jsonl");
        FAIL();
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("x.jsonl:2"), std::string::npos) << e.what();
    }
    try {
        parse_transcript("\nopening words without a speaker", TranscriptFormat::plain, "x", "x.txt");
        FAIL();
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("x.txt:2"), std::string::npos) << e.what();
    }
}

TEST(Transcript, LongPrefixBeforeColonIsContinuationNotSpeaker) {
    auto t = parse_transcript("Client: we have three needs\nthe first one of them is simple: login", TranscriptFormat::plain, "p");
    ASSERT_EQ(t.turns.size(), 1u);
    EXPECT_EQ(t.turns[0].text, "we have three needs the first one of them is simple: login");
}

TEST(Transcript, RenderIsSpeakerPrefixedLines) {
    auto t = parse_transcript("A: one\nB: two", TranscriptFormat::plain, "p");
    EXPECT_EQ(render_transcript(t), "A: one\nB: two");
}

// ---- stories -------------------------------------------------------------

TEST(Stories, ConnextraStoryParses) {
    auto s = make_story("s1",
                        "As a customer, I want to reset my password online, so that I can regain access without "
                        "calling support.");
    ASSERT_TRUE(s.parts.has_value());
    EXPECT_EQ(s.parts->role, "customer");
    EXPECT_EQ(s.parts->goal, "reset my password online");
    EXPECT_EQ(s.parts->benefit.value_or(""), "I can regain access without calling support");
}

TEST(Stories, NonTemplateLineKeptWithoutParts) {
    auto s = make_story("s1", "System must log events");
    EXPECT_EQ(s.text, "System must log events");
    EXPECT_FALSE(s.parts.has_value());
}

TEST(Stories, BlankLinesSkippedAndIdsInOrder) {
    auto stories = parse_stories("As a user, I want to log in.\n\nSystem must log events\n", StoryFormat::lines);
    ASSERT_EQ(stories.size(), 2u);
    EXPECT_EQ(stories[0].id, "s1");
    EXPECT_EQ(stories[1].id, "s2");
}

TEST(Stories, JsonlKeepsProvidedIds) {
    auto stories = parse_stories(R"({"id":"h7","text":"As an admin, I want to ban users."}
{"text":"no id here"})",
                                 StoryFormat::jsonl);
    EXPECT_EQ(stories[0].id, "h7");
    EXPECT_EQ(stories[1].id, "s2");
    EXPECT_EQ(stories[0].parts->role, "admin");
}

TEST(Stories, NoStoriesIsAnError) { EXPECT_THROW(parse_stories("\n \n", StoryFormat::lines), DataError); }

TEST(Stories, PartsReassembleToNormalizedText) {
    for (const char* text : {"As a customer, I want to reset my password online, so that I can regain access.",
                             "as an Operator,  I want to  export logs", "As a user, I want pizza, so that I eat."}) {
        auto s = make_story("s", text);
        ASSERT_TRUE(s.parts.has_value()) << text;
        auto rendered = render_connextra(*s.parts);
        auto again = parse_connextra(rendered);
        ASSERT_TRUE(again.has_value()) << rendered;
        EXPECT_EQ(normalize_story_text(render_connextra(*again)), normalize_story_text(rendered));
    }
}

// ---- labels CSV ----------------------------------------------------------

TEST(LabelsCsv, RoundTrip) {
    std::vector<AlignmentLabel> labels{{{"t:turns:0-2", "s1"}, 1, Provenance::gold, std::nullopt},
                                       {{"t:turns:1-3", "s\"2,x"}, 0, Provenance::gold, std::nullopt}};
    auto csv = write_labels_csv(labels);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "story_id,chunk_id,label");
    auto back = parse_labels_csv(csv);
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(back[1].pair.story_id, "s\"2,x");
    EXPECT_EQ(back[1].label, 0);
    EXPECT_EQ(back[0].pair.chunk_id, "t:turns:0-2");
}

TEST(LabelsCsv, RejectsBadHeaderLabelAndDuplicates) {
    EXPECT_THROW(parse_labels_csv("chunk_id,story_id,label\n"), DataError);
    EXPECT_THROW(parse_labels_csv("story_id,chunk_id,label\ns1,c1,2\n"), DataError);
    EXPECT_THROW(parse_labels_csv("story_id,chunk_id,label\ns1,c1,1\ns1,c1,0\n"), DataError);
}

// ---- correctness / completeness ------------------------------------------

TEST(Metrics, CorrectnessExamples) {
    EXPECT_EQ(correctness(matrix({"c1"}, {"s1", "s2", "s3", "s4"}, {})), 0.0);
    EXPECT_EQ(correctness(matrix({"c1", "c2"}, {"s1", "s2"}, {{"c1", "s1"}, {"c2", "s2"}})), 1.0);
    auto r = correctness_ratio(matrix({"c1", "c2"}, {"s1", "s2", "s3"}, {{"c1", "s1"}, {"c2", "s1"}}));
    EXPECT_EQ(r, (Ratio{1, 3}));
}

TEST(Metrics, CompletenessCountsAChunkOnce) {
    EXPECT_EQ(completeness(matrix({"c1", "c2"}, {"s1"}, {})), 0.0);
    auto r = completeness_ratio(matrix({"c1", "c2", "c3"}, {"s1", "s2"}, {{"c1", "s1"}, {"c1", "s2"}}));
    EXPECT_EQ(r, (Ratio{1, 3}));
    EXPECT_EQ(completeness(matrix({"c1", "c2"}, {"s1"}, {{"c1", "s1"}, {"c2", "s1"}})), 1.0);
}

TEST(Metrics, EmptyUniversesAreErrors) {
    EXPECT_THROW(correctness(matrix({"c1"}, {}, {})), DataError);
    EXPECT_THROW(completeness(matrix({}, {"s1"}, {})), DataError);
}

TEST(Metrics, PositiveOutsideJudgedIsRejected) {
    AlignmentMatrix m{{"c1"}, {"s1"}, {{"c1", "s1"}}, {}};
    EXPECT_THROW(m.validate(), DataError);
}

TEST(MetricsProperty, MatchesBruteForceAndStaysInRange) {
    gen::Rng rng(11);
    for (int trial = 0; trial < 300; ++trial) {
        auto rm = gen::random_matrix(rng);
        auto cr = correctness_ratio(rm.matrix);
        auto cp = completeness_ratio(rm.matrix);
        auto [cn, cd] = oracle::correctness(rm.dense, rm.matrix.stories.size());
        auto [pn, pd] = oracle::completeness(rm.dense);
        ASSERT_EQ(cr.numerator, cn);
        ASSERT_EQ(cr.denominator, cd);
        ASSERT_EQ(cp.numerator, pn);
        ASSERT_EQ(cp.denominator, pd);
        ASSERT_GE(cr.value(), 0.0);
        ASSERT_LE(cr.value(), 1.0);
        ASSERT_LE(cp.value(), 1.0);
    }
}

TEST(MetricsProperty, AddingAPositiveNeverDecreasesEitherMetric) {
    gen::Rng rng(12);
    for (int trial = 0; trial < 200; ++trial) {
        auto m = gen::random_matrix(rng).matrix;
        double c0 = correctness(m), p0 = completeness(m);
        PairKey k{m.chunks[rng.below(m.chunks.size())], m.stories[rng.below(m.stories.size())]};
        m.judged.insert(k);
        m.positives.insert(k);
        ASSERT_GE(correctness(m), c0);
        ASSERT_GE(completeness(m), p0);
    }
}

TEST(MetricsProperty, DuplicatingAStoryRowKeepsBothMetrics) {
    gen::Rng rng(13);
    for (int trial = 0; trial < 200; ++trial) {
        auto m = gen::random_matrix(rng).matrix;
        auto before_c = correctness_ratio(m);
        double before_p = completeness(m);
        std::string src = m.stories[rng.below(m.stories.size())];
        std::string dup = src + "_dup";
        m.stories.push_back(dup);
        for (const auto& c : m.chunks) {
            if (m.judged.contains({c, src})) m.judged.insert({c, dup});
            if (m.positives.contains({c, src})) m.positives.insert({c, dup});
        }
        ASSERT_EQ(completeness(m), before_p);
        // The copy shares its source's support status.
        auto after = correctness_ratio(m);
        bool src_supported = false;
        for (const auto& p : m.positives) src_supported = src_supported || p.story_id == src;
        ASSERT_EQ(after.numerator, before_c.numerator + (src_supported ? 1 : 0));
        ASSERT_EQ(after.denominator, before_c.denominator + 1);
    }
}

// ---- macro-F1 ------------------------------------------------------------

TEST(MacroF1, HandComputedExamples) {
    LabelMap gold{{{"c1", "s"}, 1}, {{"c2", "s"}, 1}, {{"c3", "s"}, 0}, {{"c4", "s"}, 0}};
    LabelMap pred{{{"c1", "s"}, 1}, {{"c2", "s"}, 0}, {{"c3", "s"}, 0}, {{"c4", "s"}, 1}};
    EXPECT_DOUBLE_EQ(macro_f1(pred, gold), 0.5);
    EXPECT_DOUBLE_EQ(macro_f1(gold, gold), 1.0);
    LabelMap ones{{{"c1", "s"}, 1}, {{"c2", "s"}, 1}};
    EXPECT_DOUBLE_EQ(macro_f1(ones, ones), 1.0);
}

TEST(MacroF1, FixedConfusionTable) {
    // tp=88 fp=20 fn=21 tn=107
    // F1(1) = 176/217, F1(0) = 214/255
    Confusion c{88, 20, 21, 107};
    EXPECT_NEAR(macro_f1(c), (176.0 / 217.0 + 214.0 / 255.0) / 2.0, 1e-12);
}

TEST(MacroF1, PredictedButAbsentFromGoldScoresZeroForThatClass) {
    // Gold all 0, one false positive: F1(1) = 0, F1(0) = 2*3/(2*3+1).
    Confusion c{0, 1, 0, 3};
    EXPECT_NEAR(macro_f1(c), (0.0 + 6.0 / 7.0) / 2.0, 1e-12);
}

TEST(MacroF1, KeyMismatchIsAnError) {
    LabelMap a{{{"c1", "s"}, 1}};
    LabelMap b{{{"c2", "s"}, 1}};
    EXPECT_THROW(macro_f1(a, b), DataError);
}

TEST(MacroF1Property, FlipSymmetryAndBruteForce) {
    gen::Rng rng(21);
    for (int trial = 0; trial < 300; ++trial) {
        std::size_t n = rng.between(1, 30);
        std::vector<int> p(n), g(n);
        LabelMap pm, gm, pf, gf;
        for (std::size_t i = 0; i < n; ++i) {
            p[i] = rng.chance(0.4);
            g[i] = rng.chance(0.4);
            PairKey k{"c" + std::to_string(i), "s"};
            pm[k] = p[i];
            gm[k] = g[i];
            pf[k] = 1 - p[i];
            gf[k] = 1 - g[i];
        }
        ASSERT_NEAR(macro_f1(pm, gm), oracle::macro_f1(p, g), 1e-12);
        ASSERT_NEAR(macro_f1(pm, gm), macro_f1(pf, gf), 1e-12);
    }
}

// ---- Fleiss' kappa -------------------------------------------------------

TEST(FleissKappa, PerfectAgreementIsOne) {
    std::vector<std::vector<std::size_t>> counts{{3, 0}, {0, 3}, {3, 0}};
    auto k = fleiss_kappa(counts);
    EXPECT_TRUE(k.defined);
    EXPECT_NEAR(k.kappa, 1.0, 1e-12);
}

TEST(FleissKappa, FourItemExampleMatchesBruteForce) {
    // (label1, label0) counts (3,0),(0,3),(2,1),(1,2)
    std::vector<std::vector<std::size_t>> counts{{0, 3}, {3, 0}, {1, 2}, {2, 1}};
    std::vector<std::vector<int>> raw{{1, 1, 1}, {0, 0, 0}, {1, 1, 0}, {1, 0, 0}};
    EXPECT_NEAR(fleiss_kappa(counts).kappa, oracle::fleiss_kappa(raw, 2), 1e-12);
    // P_bar = (1+1+1/3+1/3)/4 = 2/3, P_e = 1/2
    EXPECT_NEAR(fleiss_kappa(counts).kappa, 1.0 / 3.0, 1e-12);
}

TEST(FleissKappa, SingleCategoryIsUndefined) {
    std::vector<std::vector<std::size_t>> counts{{3, 0}, {3, 0}};
    auto k = fleiss_kappa(counts);
    EXPECT_FALSE(k.defined);
    EXPECT_TRUE(std::isnan(k.kappa));
}

TEST(FleissKappa, RaggedCountsRejected) {
    std::vector<std::vector<std::size_t>> counts{{3, 0}, {1, 1}};
    EXPECT_THROW(fleiss_kappa(counts), DataError);
}

// ---- coverage diff -------------------------------------------------------

TEST(CoverageDiff, SetAlgebraAndMirror) {
    auto a = matrix({"c1", "c2", "c3"}, {"a1"}, {{"c1", "a1"}, {"c2", "a1"}});
    auto b = matrix({"c1", "c2", "c3"}, {"b1"}, {{"c2", "b1"}, {"c3", "b1"}});
    auto d = coverage_diff(a, b);
    EXPECT_EQ(d.only_a, std::vector<std::string>{"c1"});
    EXPECT_EQ(d.only_b, std::vector<std::string>{"c3"});
    EXPECT_EQ(d.a_stories.at("c1"), std::vector<std::string>{"a1"});
    auto r = coverage_diff(b, a);
    EXPECT_EQ(r.only_a, d.only_b);
    EXPECT_EQ(r.only_b, d.only_a);
    auto same = coverage_diff(a, a);
    EXPECT_TRUE(same.only_a.empty());
    EXPECT_TRUE(same.only_b.empty());
}

TEST(CoverageDiff, MismatchedUniverseRejected) {
    auto a = matrix({"c1"}, {"s"}, {});
    auto b = matrix({"c2"}, {"s"}, {});
    EXPECT_THROW(coverage_diff(a, b), DataError);
}

TEST(CoverageDiffProperty, MatchesBruteForceSetDifference) {
    gen::Rng rng(31);
    for (int trial = 0; trial < 100; ++trial) {
        auto a = gen::random_matrix(rng, 10, 6);
        auto b = a;
        b.matrix.positives.clear();
        b.matrix.judged.clear();
        for (std::size_t i = 0; i < b.matrix.chunks.size(); ++i)
            for (const auto& s : b.matrix.stories)
                if (rng.chance(0.2)) {
                    b.matrix.judged.insert({b.matrix.chunks[i], s});
                    b.matrix.positives.insert({b.matrix.chunks[i], s});
                }
        std::set<std::string> ca, cb;
        for (const auto& p : a.matrix.positives) ca.insert(p.chunk_id);
        for (const auto& p : b.matrix.positives) cb.insert(p.chunk_id);
        std::vector<std::string> only_a, only_b;
        for (const auto& c : a.matrix.chunks) {
            if (ca.contains(c) && !cb.contains(c)) only_a.push_back(c);
            if (cb.contains(c) && !ca.contains(c)) only_b.push_back(c);
        }
        auto d = coverage_diff(a.matrix, b.matrix);
        ASSERT_EQ(d.only_a, only_a);
        ASSERT_EQ(d.only_b, only_b);
    }
}

// ---- chunker -------------------------------------------------------------

TEST(Chunker, FiveTurnsWindowThree) {
    auto chunks = chunk_by_turns(turns(5), 3, 1);
    ASSERT_EQ(chunks.size(), 3u);
    EXPECT_EQ(chunks[0].span, (Span{0, 2}));
    EXPECT_EQ(chunks[1].span, (Span{1, 3}));
    EXPECT_EQ(chunks[2].span, (Span{2, 4}));
    EXPECT_EQ(chunks[0].id, "t:turns:0-2");
    EXPECT_EQ(chunks[0].text, "A: utterance 0\nB: utterance 1\nA: utterance 2");
}

TEST(Chunker, ShortTranscriptGivesOneChunk) {
    auto chunks = chunk_by_turns(turns(2), 3, 1);
    ASSERT_EQ(chunks.size(), 1u);
    EXPECT_EQ(chunks[0].span, (Span{0, 1}));
}

TEST(Chunker, SevenTurnsWindowTwo) {
    auto chunks = chunk_by_turns(turns(7), 2, 1);
    ASSERT_EQ(chunks.size(), 6u);
    for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(chunks[i].span, (Span{i, i + 1}));
}

TEST(Chunker, FinalWindowAlwaysIncluded) {
    auto chunks = chunk_by_turns(turns(8), 3, 3);
    ASSERT_EQ(chunks.size(), 3u);
    EXPECT_EQ(chunks.back().span, (Span{5, 7}));
}

TEST(Chunker, InvalidConfigRejected) {
    EXPECT_THROW(chunk_by_turns(turns(5), 0, 1), UsageError);
    EXPECT_THROW(chunk_by_turns(turns(5), 2, 3), UsageError);
    EXPECT_THROW(chunk_by_tokens(turns(5), 100, 100), UsageError);
    Transcript empty{"e", {}, SourceKind::interview};
    EXPECT_THROW(chunk_by_turns(empty, 3, 1), DataError);
}

namespace {
Transcript token_transcript(std::size_t n_tokens) {
    // One speaker-less turn so rendered text is exactly the tokens.
    std::string body;
    for (std::size_t i = 0; i < n_tokens; ++i) body += (i ? " w" : "w") + std::to_string(i);
    return Transcript{"tok", {{0, "", body}}, SourceKind::description};
}
}  // namespace

TEST(Chunker, TokenWindows) {
    auto c = chunk_by_tokens(token_transcript(500), 200, 100);
    ASSERT_EQ(c.size(), 4u);
    EXPECT_EQ(c[0].text.substr(0, 3), "w0 ");
    EXPECT_EQ(c[1].text.substr(0, 5), "w100 ");
    EXPECT_EQ(c[3].text.substr(0, 5), "w300 ");
    EXPECT_EQ(c[3].token_count, 200u);
    EXPECT_EQ(chunk_by_tokens(token_transcript(150), 200, 100).size(), 1u);
    EXPECT_EQ(chunk_by_tokens(token_transcript(500), 400, 200).size(), 2u);
}

TEST(Chunker, TokenSpansAreExactSubstrings) {
    auto t = parse_transcript("A: one two three\nB: four five\nA: six", TranscriptFormat::plain, "x");
    auto full = render_transcript(t);
    for (const auto& c : chunk_by_tokens(t, 3, 2))
        EXPECT_EQ(full.substr(c.span.start, c.span.end - c.span.start + 1), c.text);
}

TEST(Chunker, Lines) {
    auto c = chunk_by_lines("d", "first line\n\nsecond\nthird\n");
    ASSERT_EQ(c.size(), 3u);
    EXPECT_EQ(c[1].text, "second");
    EXPECT_EQ(c[1].span, (Span{2, 2}));
    auto one = chunk_by_lines("d", "only line");
    ASSERT_EQ(one.size(), 1u);
    EXPECT_EQ(one[0].text, "only line");
    EXPECT_TRUE(chunk_by_lines("d", "").empty());
    std::string desc;
    for (int i = 0; i < 37; ++i) desc += "The system shall do thing " + std::to_string(i) + ".\n";
    EXPECT_EQ(chunk_by_lines("d", desc).size(), 37u);
}

TEST(Chunker, Overlap) {
    auto c = chunk_by_turns(turns(6), 3, 1);
    EXPECT_TRUE(chunks_overlap(c[0], c[2]));   // [0,2] vs [2,4]
    EXPECT_FALSE(chunks_overlap(c[0], c[3]));  // [0,2] vs [3,5]
    EXPECT_TRUE(chunks_overlap(c[1], c[1]));
    EXPECT_TRUE(chunk_ids_overlap("t:turns:0-2", "t:turns:2-4"));
    EXPECT_FALSE(chunk_ids_overlap("t:turns:0-2", "t:turns:3-5"));
    auto other = chunk_by_turns(turns(6, "u"), 3, 1);
    EXPECT_THROW(chunks_overlap(c[0], other[0]), DataError);
}

TEST(Chunker, IdRoundTripWithColonsInTranscriptId) {
    auto p = parse_chunk_id("proj:a:turns:4-6");
    EXPECT_EQ(p.transcript_id, "proj:a");
    EXPECT_EQ(p.strategy, ChunkStrategy::turns);
    EXPECT_EQ(p.span, (Span{4, 6}));
    EXPECT_THROW(parse_chunk_id("nonsense"), DataError);
    EXPECT_THROW(parse_chunk_id("t:turns:5-2"), DataError);
}

TEST(ChunkerProperty, WindowThreeStrideOneLaw) {
    gen::Rng rng(41);
    for (std::size_t k = 3; k <= 50; ++k) {
        for (int rep = 0; rep < 4; ++rep) {
            auto t = gen::random_transcript(rng, k);
            auto chunks = chunk_by_turns(t, 3, 1);
            ASSERT_EQ(chunks.size(), k - 2);
            std::vector<int> covered(k, 0);
            for (const auto& c : chunks)
                for (auto i = c.span.start; i <= c.span.end; ++i) covered[i] = 1;
            for (std::size_t i = 0; i < k; ++i) ASSERT_EQ(covered[i], 1) << "turn " << i;
            for (std::size_t i = 1; i < chunks.size(); ++i) {
                ASSERT_EQ(chunks[i].span.start, chunks[i - 1].span.start + 1);
                ASSERT_EQ(chunks[i - 1].span.end - chunks[i].span.start + 1, 2u);
            }
        }
    }
}

TEST(ChunkerProperty, GeneralWindowsCoverEveryTurnDeterministically) {
    gen::Rng rng(42);
    for (int trial = 0; trial < 300; ++trial) {
        std::size_t k = rng.between(1, 40), w = rng.between(1, 8), s = rng.between(1, w);
        auto t = gen::random_transcript(rng, k);
        auto a = chunk_by_turns(t, w, s);
        auto b = chunk_by_turns(t, w, s);
        ASSERT_EQ(a.size(), b.size());
        std::vector<int> covered(k, 0);
        for (std::size_t i = 0; i < a.size(); ++i) {
            ASSERT_EQ(a[i].id, b[i].id);
            ASSERT_EQ(a[i].text, b[i].text);
            ASSERT_EQ(a[i].token_count, count_tokens(a[i].text));
            ASSERT_EQ(a[i].text, render_turns(t, a[i].span.start, a[i].span.end));
            for (auto j = a[i].span.start; j <= a[i].span.end; ++j) covered[j] = 1;
        }
        for (int c : covered) ASSERT_EQ(c, 1);
        if (s == 1 && k >= w) {
            ASSERT_EQ(a.size(), k - w + 1);
        }
    }
}

// ---- JSON I/O ------------------------------------------------------------

TEST(JsonIo, ReportRoundTripAndFixedFloats) {
    AlignmentReport r;
    r.correctness = 1.0 / 3.0;
    r.completeness = 0.5;
    r.per_story = {{"s1", true, {"t:turns:0-2"}, 2, 0}, {"s2", false, {}, 2, 0}};
    r.per_chunk = {{"t:turns:0-2", true, {"s1"}}, {"t:turns:1-3", false, {}}};
    r.token_cost = 42;
    r.matcher_calls = 4;
    r.config_echo = {{"seed", 1}};
    r.diagnostics.judged_pairs = 4;
    r.diagnostics.judged_negatives = 3;
    auto text = dump_fixed(report_to_json(r));
    EXPECT_NE(text.find("\"correctness\": 0.333333333"), std::string::npos) << text;
    auto back = report_from_json(ordered_json::parse(text));
    EXPECT_NEAR(back.correctness, r.correctness, 1e-9);
    ASSERT_EQ(back.per_story.size(), 2u);
    EXPECT_EQ(back.per_story[0].evidence, r.per_story[0].evidence);
    EXPECT_EQ(back.per_chunk[1].covered, false);
    EXPECT_EQ(back.diagnostics, r.diagnostics);
    EXPECT_EQ(dump_fixed(report_to_json(back)), text);
}

TEST(JsonIo, ChunksJsonlRoundTrip) {
    auto chunks = chunk_by_turns(turns(4), 3, 1);
    auto back = parse_chunks_jsonl(write_chunks_jsonl(chunks));
    ASSERT_EQ(back.size(), chunks.size());
    for (std::size_t i = 0; i < chunks.size(); ++i) {
        EXPECT_EQ(back[i].id, chunks[i].id);
        EXPECT_EQ(back[i].text, chunks[i].text);
        EXPECT_EQ(back[i].span, chunks[i].span);
        EXPECT_EQ(back[i].token_count, chunks[i].token_count);
    }
}

// ---- prompts -------------------------------------------------------------

TEST(Prompts, TemplateSubstitutionIsSinglePass) {
    auto out = render_template("User Story: <story>\n\nChunk Text: <chunk>\n\nAnswer:\n",
                               {{"story", "I want <chunk> tags"}, {"chunk", "A: hello"}});
    EXPECT_EQ(out, "User Story: I want <chunk> tags\n\nChunk Text: A: hello\n\nAnswer:");
    EXPECT_EQ(render_template("keep <unknown> marker", {}), "keep <unknown> marker");
}

TEST(Prompts, BuiltInDefaultsMatchShippedFiles) {
    auto loaded = PromptAssets::load(T2SA_PROMPTS_DIR);
    PromptAssets builtin;
    EXPECT_EQ(loaded.judge_system, builtin.judge_system);
    EXPECT_EQ(loaded.judge_user, builtin.judge_user);
    EXPECT_EQ(loaded.generation_system, builtin.generation_system);
    EXPECT_EQ(loaded.generation_user, builtin.generation_user);
    EXPECT_EQ(loaded.full_context_system, builtin.full_context_system);
    EXPECT_EQ(loaded.full_context_user, builtin.full_context_user);
}
