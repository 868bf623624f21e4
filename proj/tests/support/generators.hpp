#pragma once

// Seeded random generators and planted synthetic corpora for tests.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <unistd.h>

#include "t2sa/chunker.hpp"
#include "t2sa/stories.hpp"
#include "t2sa/types.hpp"

namespace gen {

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::size_t below(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_); }
    std::size_t between(std::size_t lo, std::size_t hi) {
        return std::uniform_int_distribution<std::size_t>(lo, hi)(engine_);
    }
    bool chance(double p) { return std::bernoulli_distribution(p)(engine_); }
    double uniform(double lo = 0.0, double hi = 1.0) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
    double normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }
    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
};

// Letters-only pseudo-word; distinct (prefix, n) give distinct words.
inline std::string word(const std::string& prefix, std::size_t n) {
    std::string s = prefix;
    do {
        s.push_back(static_cast<char>('a' + n % 26));
        n /= 26;
    } while (n > 0);
    return s + "x";
}

struct RandomMatrix {
    t2sa::AlignmentMatrix matrix;
    std::vector<std::vector<int>> dense;  // [chunk][story]
};

inline RandomMatrix random_matrix(Rng& rng, std::size_t max_chunks = 12, std::size_t max_stories = 12) {
    RandomMatrix out;
    std::size_t nc = rng.between(1, max_chunks);
    std::size_t ns = rng.between(1, max_stories);
    double density = rng.uniform(0.0, 0.5);
    for (std::size_t i = 0; i < nc; ++i) out.matrix.chunks.push_back("c" + std::to_string(i));
    for (std::size_t j = 0; j < ns; ++j) out.matrix.stories.push_back("s" + std::to_string(j));
    out.dense.assign(nc, std::vector<int>(ns, 0));
    for (std::size_t i = 0; i < nc; ++i)
        for (std::size_t j = 0; j < ns; ++j) {
            bool judged = rng.chance(0.8);
            if (!judged) continue;
            t2sa::PairKey key{out.matrix.chunks[i], out.matrix.stories[j]};
            out.matrix.judged.insert(key);
            if (rng.chance(density)) {
                out.matrix.positives.insert(key);
                out.dense[i][j] = 1;
            }
        }
    return out;
}

inline t2sa::Transcript random_transcript(Rng& rng, std::size_t turns, const std::string& id = "t") {
    t2sa::Transcript t;
    t.id = id;
    for (std::size_t i = 0; i < turns; ++i) {
        std::string text;
        std::size_t words = rng.between(1, 12);
        for (std::size_t w = 0; w < words; ++w) text += (w ? " " : "") + word("w", rng.below(500));
        t.turns.push_back({i, i % 2 == 0 ? "Interviewer" : "Client", text});
    }
    return t;
}

// Transcript and stories with known support: story j is supported exactly
// by the chunks containing one of its key turns. Every word is a
// pseudo-word starting with `prefix`, so corpora with different prefixes
// share no vocabulary.
struct PlantedCorpus {
    t2sa::Transcript transcript;
    std::vector<t2sa::UserStory> stories;
    std::vector<t2sa::Chunk> chunks;         // window 3, stride 1
    std::set<t2sa::PairKey> truth;           // supported (chunk, story) pairs
    std::vector<std::vector<std::size_t>> key_turns;  // per story
};

inline PlantedCorpus planted_corpus(Rng& rng, const std::string& id, const std::string& prefix, std::size_t turns,
                                    std::size_t n_stories, std::size_t unsupported = 0) {
    PlantedCorpus pc;
    pc.transcript.id = id;
    // Story vocabulary: role, three goal words, benefit.
    std::vector<std::vector<std::string>> story_words(n_stories);
    std::size_t next = 0;
    for (std::size_t j = 0; j < n_stories; ++j) {
        for (int k = 0; k < 5; ++k) story_words[j].push_back(word(prefix + "s", next++));
        const auto& w = story_words[j];
        pc.stories.push_back(t2sa::make_story("s" + std::to_string(j + 1), "As a " + w[0] + ", I want to " + w[1] + " " +
                                                                                w[2] + " " + w[3] + ", so that " + w[4] + "."));
    }
    // Key turns: each supported story gets one or two distinct turns.
    std::vector<std::vector<std::size_t>> stories_at(turns);
    pc.key_turns.assign(n_stories, {});
    for (std::size_t j = 0; j + unsupported < n_stories; ++j) {
        std::size_t count = rng.between(1, 2);
        for (std::size_t c = 0; c < count; ++c) {
            std::size_t t = rng.below(turns);
            if (std::find(pc.key_turns[j].begin(), pc.key_turns[j].end(), t) != pc.key_turns[j].end()) continue;
            pc.key_turns[j].push_back(t);
            stories_at[t].push_back(j);
        }
    }
    for (std::size_t t = 0; t < turns; ++t) {
        std::string text;
        std::size_t filler = rng.between(3, 9);
        for (std::size_t w = 0; w < filler; ++w) text += (w ? " " : "") + word(prefix + "f", rng.below(300));
        for (auto j : stories_at[t]) {
            // Two goal words: exactly the oracle's default threshold.
            text += " " + story_words[j][1] + " " + word(prefix + "f", rng.below(300)) + " " + story_words[j][2];
        }
        pc.transcript.turns.push_back({t, t % 2 == 0 ? "Interviewer" : "Client", text});
    }
    pc.chunks = t2sa::chunk_by_turns(pc.transcript, 3, 1);
    for (const auto& c : pc.chunks)
        for (std::size_t j = 0; j < n_stories; ++j)
            for (auto t : pc.key_turns[j])
                if (c.span.start <= t && t <= c.span.end) pc.truth.insert({c.id, pc.stories[j].id});
    return pc;
}

inline std::string plain_text(const t2sa::Transcript& t) {
    std::string out;
    for (const auto& turn : t.turns) out += turn.speaker + ": " + turn.text + "\n";
    return out;
}

inline std::string stories_text(const std::vector<t2sa::UserStory>& stories) {
    std::string out;
    for (const auto& s : stories) out += s.text + "\n";
    return out;
}

class TempDir {
public:
    TempDir() {
        std::string tmpl = (std::filesystem::temp_directory_path() / "t2sa-test-XXXXXX").string();
        if (::mkdtemp(tmpl.data()) == nullptr) std::abort();
        path_ = tmpl;
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    std::string file(const std::string& name) const { return (path_ / name).string(); }
    std::string write(const std::string& name, const std::string& content) const {
        auto p = file(name);
        std::ofstream(p, std::ios::binary) << content;
        return p;
    }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

inline std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace gen
