#include <cmath>
#include <set>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "t2sa/blocking.hpp"

#include "generators.hpp"
#include "oracles.hpp"

using namespace t2sa;

namespace {

Chunk chunk(const std::string& id, std::size_t tokens) {
    return Chunk{id, "t", ChunkStrategy::turns, {0, 0}, "x", tokens};
}

// Unit story vector e0; chunk i sits at cosine sim[i] from it.
std::vector<double> at_similarity(double s) { return {s, std::sqrt(std::max(0.0, 1.0 - s * s))}; }

struct Fixture {
    std::vector<Chunk> chunks;
    std::vector<UserStory> stories;
    EmbeddingTable table;
    std::vector<std::vector<double>> sim;  // [story][chunk]
};

Fixture random_fixture(gen::Rng& rng, std::size_t nc, std::size_t ns) {
    Fixture f;
    const std::size_t dim = 6;
    std::vector<std::vector<double>> cv(nc), sv(ns);
    auto vec = [&] {
        std::vector<double> v(dim);
        for (auto& x : v) x = rng.normal();
        return v;
    };
    for (std::size_t i = 0; i < nc; ++i) {
        f.chunks.push_back(chunk("c" + std::to_string(i), rng.between(1, 50)));
        cv[i] = vec();
        f.table.add_chunk(f.chunks[i].id, cv[i]);
    }
    for (std::size_t j = 0; j < ns; ++j) {
        f.stories.push_back({"s" + std::to_string(j), "story words " + std::to_string(j), std::nullopt});
        sv[j] = vec();
        f.table.add_story(f.stories[j].id, sv[j]);
    }
    f.sim.assign(ns, std::vector<double>(nc));
    for (std::size_t j = 0; j < ns; ++j)
        for (std::size_t i = 0; i < nc; ++i) f.sim[j][i] = f.table.similarity(f.chunks[i].id, f.stories[j].id);
    return f;
}

}  // namespace

TEST(EmbeddingTable, NormalizesAndReportsMissing) {
    EmbeddingTable t;
    t.add_chunk("c", {3, 4});
    t.add_story("s", {6, 8});
    EXPECT_NEAR(t.similarity("c", "s"), 1.0, 1e-12);
    EXPECT_THROW(t.similarity("c", "nope"), DataError);
    t.add_story("z", {0, 0});
    EXPECT_EQ(t.similarity("c", "z"), 0.0);
    t.add_story("d3", {1, 0, 0});
    EXPECT_THROW(t.similarity("c", "d3"), DataError);
}

TEST(Blocking, TopTwoOfThree) {
    std::vector<Chunk> chunks{chunk("c1", 10), chunk("c2", 10), chunk("c3", 10)};
    std::vector<UserStory> stories{{"s", "story", std::nullopt}};
    EmbeddingTable t;
    t.add_story("s", {1, 0});
    t.add_chunk("c1", at_similarity(0.9));
    t.add_chunk("c2", at_similarity(0.5));
    t.add_chunk("c3", at_similarity(0.1));
    auto b = block_top_k(stories, chunks, t, 2);
    EXPECT_EQ(b.pairs, (std::set<PairKey>{{"c1", "s"}, {"c2", "s"}}));
    EXPECT_EQ(b.coverage[0].chunk_ids, (std::vector<std::string>{"c1", "c2"}));
    EXPECT_THROW(block_top_k(stories, chunks, t, 0), UsageError);
}

TEST(Blocking, TiesKeepChunkOrder) {
    std::vector<Chunk> chunks{chunk("c1", 1), chunk("c2", 1), chunk("c3", 1)};
    std::vector<UserStory> stories{{"s", "story", std::nullopt}};
    EmbeddingTable t;
    t.add_story("s", {1, 0});
    for (const auto& c : chunks) t.add_chunk(c.id, {1, 1});
    auto b = block_top_k(stories, chunks, t, 2);
    EXPECT_EQ(b.coverage[0].chunk_ids, (std::vector<std::string>{"c1", "c2"}));
}

TEST(Blocking, RecallThreeOfFour) {
    CandidateSet b;
    b.pairs = {{"c1", "s1"}, {"c2", "s1"}, {"c3", "s2"}};
    std::set<PairKey> ref{{"c1", "s1"}, {"c2", "s1"}, {"c3", "s2"}, {"c4", "s2"}};
    auto r = recall_against(b, ref);
    EXPECT_DOUBLE_EQ(r.value, 0.75);
    auto empty = recall_against(b, {});
    EXPECT_TRUE(empty.reference_empty);
    EXPECT_DOUBLE_EQ(empty.value, 1.0);
}

TEST(Blocking, TokenFractionQuarter) {
    // Uniform chunk lengths, K = |C|/4, zero story and overhead cost.
    std::vector<Chunk> chunks;
    for (int i = 0; i < 8; ++i) chunks.push_back(chunk("c" + std::to_string(i), 5));
    std::vector<UserStory> stories{{"s1", "", std::nullopt}, {"s2", "", std::nullopt}};
    EmbeddingTable t;
    gen::Rng rng(3);
    for (const auto& c : chunks) t.add_chunk(c.id, {rng.normal(), rng.normal()});
    for (const auto& s : stories) t.add_story(s.id, {rng.normal(), rng.normal()});
    auto b = block_top_k(stories, chunks, t, 2);
    EXPECT_DOUBLE_EQ(token_fraction(b, stories, chunks), 0.25);
}

TEST(Blocking, PairCostIncludesStoryAndOverhead) {
    std::vector<Chunk> chunks{chunk("c1", 10), chunk("c2", 20)};
    std::vector<UserStory> stories{{"s", "three story words", std::nullopt}};
    PairCostModel cost;
    cost.overhead = 100;
    EXPECT_EQ(full_product_cost(stories, chunks, cost), 10u + 20u + 2u * (3u + 100u));
}

TEST(BlockingProperty, TopKMatchesBruteForceAndFullKIsProduct) {
    gen::Rng rng(61);
    for (int trial = 0; trial < 100; ++trial) {
        auto f = random_fixture(rng, rng.between(1, 30), rng.between(1, 6));
        std::size_t k = rng.between(1, f.chunks.size() + 2);
        auto b = block_top_k(f.stories, f.chunks, f.table, k);
        std::set<PairKey> want;
        std::uint64_t tokens = 0;
        for (std::size_t j = 0; j < f.stories.size(); ++j)
            for (auto i : oracle::top_k(f.sim[j], k)) {
                want.insert({f.chunks[i].id, f.stories[j].id});
                tokens += f.chunks[i].token_count + count_tokens(f.stories[j].text);
            }
        ASSERT_EQ(b.pairs, want);
        ASSERT_EQ(b.token_cost, tokens);
        auto full = block_top_k(f.stories, f.chunks, f.table, f.chunks.size());
        ASSERT_EQ(full.pairs.size(), f.chunks.size() * f.stories.size());
        ASSERT_DOUBLE_EQ(token_fraction(full, f.stories, f.chunks), 1.0);
    }
}

TEST(BlockingProperty, RecallIsMonotoneInK) {
    gen::Rng rng(62);
    for (int trial = 0; trial < 50; ++trial) {
        auto f = random_fixture(rng, rng.between(2, 30), rng.between(1, 5));
        std::set<PairKey> ref;
        for (const auto& c : f.chunks)
            for (const auto& s : f.stories)
                if (rng.chance(0.15)) ref.insert({c.id, s.id});
        if (ref.empty()) ref.insert({f.chunks[0].id, f.stories[0].id});
        auto rankings = rank_all(f.table, f.chunks, f.stories);
        double prev = 0.0;
        for (std::size_t k = 1; k <= f.chunks.size(); ++k) {
            double r = recall_against(block_from_rankings(f.stories, f.chunks, rankings, k), ref).value;
            ASSERT_GE(r, prev - 1e-15);
            prev = r;
        }
        ASSERT_DOUBLE_EQ(prev, 1.0);
    }
}

TEST(BlockingProperty, KStarIsSmallestSufficientK) {
    gen::Rng rng(63);
    for (int trial = 0; trial < 60; ++trial) {
        auto f = random_fixture(rng, rng.between(2, 25), rng.between(1, 5));
        std::set<PairKey> ref;
        for (const auto& c : f.chunks)
            for (const auto& s : f.stories)
                if (rng.chance(0.2)) ref.insert({c.id, s.id});
        if (ref.empty()) ref.insert({f.chunks.back().id, f.stories[0].id});
        double target = rng.uniform(0.05, 1.0);
        auto rankings = rank_all(f.table, f.chunks, f.stories);
        auto ks = min_tokens_for_recall(f.stories, f.chunks, rankings, ref, target);
        std::size_t brute = 0;
        for (std::size_t k = 1; k <= f.chunks.size() && brute == 0; ++k)
            if (recall_against(block_from_rankings(f.stories, f.chunks, rankings, k), ref).value >= target) brute = k;
        ASSERT_EQ(ks.k_star, brute);
        auto at = block_from_rankings(f.stories, f.chunks, rankings, brute);
        ASSERT_NEAR(ks.token_fraction, token_fraction(at, f.stories, f.chunks), 1e-12);
        ASSERT_EQ(ks.matcher_calls, at.pairs.size());
    }
}

TEST(Blocking, KStarErrors) {
    std::vector<Chunk> chunks{chunk("c1", 1)};
    std::vector<UserStory> stories{{"s", "x", std::nullopt}};
    Rankings r{{0}};
    EXPECT_THROW(min_tokens_for_recall(stories, chunks, r, {}, 0.9), DataError);
    EXPECT_THROW(min_tokens_for_recall(stories, chunks, r, {{"c1", "s"}}, 0.0), UsageError);
    EXPECT_THROW(min_tokens_for_recall(stories, chunks, r, {{"zz", "s"}}, 0.5), DataError);
}

TEST(Blocking, SweepAndCandidateCsv) {
    std::vector<Chunk> chunks{chunk("c1", 2), chunk("c2", 2)};
    std::vector<UserStory> stories{{"s", "", std::nullopt}};
    Rankings r{{1, 0}};
    std::vector<double> targets{0.5, 1.0};
    auto rows = recall_sweep(stories, chunks, r, {{"c1", "s"}, {"c2", "s"}}, targets);
    EXPECT_EQ(sweep_csv(rows),
              "target_recall,k_star,token_fraction,matcher_calls\n"
              "0.500000,1,0.500000,1\n"
              "1.000000,2,1.000000,2\n");
    auto b = block_from_rankings(stories, chunks, r, 1);
    EXPECT_EQ(candidates_csv(b), "story_id,chunk_id,rank\ns,c2,1\n");
}

TEST(Blocking, KeywordReference) {
    std::vector<Chunk> chunks{Chunk{"c1", "t", ChunkStrategy::turns, {0, 0}, "reset the password today", 4},
                              Chunk{"c2", "t", ChunkStrategy::turns, {1, 1}, "weather is nice", 3}};
    std::vector<UserStory> stories{{"s1", "As a user, I want to reset my password", std::nullopt}};
    EXPECT_EQ(keyword_reference(stories, chunks, 2), (std::set<PairKey>{{"c1", "s1"}}));
    EXPECT_THROW(keyword_reference(stories, chunks, 0), UsageError);
}
