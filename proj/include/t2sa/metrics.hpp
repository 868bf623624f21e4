#pragma once

#include <algorithm>
#include <cstddef>
#include <limits>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "t2sa/error.hpp"
#include "t2sa/types.hpp"

namespace t2sa {

struct Ratio {
    std::size_t numerator = 0;
    std::size_t denominator = 1;

    double value() const noexcept { return static_cast<double>(numerator) / static_cast<double>(denominator); }
    bool operator==(const Ratio&) const = default;
};

// |{s : some chunk supports s}| / |S|
inline Ratio correctness_ratio(const AlignmentMatrix& m) {
    if (m.stories.empty()) throw DataError("correctness needs at least one story");
    m.validate();
    std::set<std::string_view> supported;
    for (const auto& p : m.positives) supported.insert(p.story_id);
    return {supported.size(), m.stories.size()};
}

// |{c : some story covers c}| / |C|; a chunk counts once however many
// stories cover it.
inline Ratio completeness_ratio(const AlignmentMatrix& m) {
    if (m.chunks.empty()) throw DataError("completeness needs at least one chunk");
    m.validate();
    std::set<std::string_view> covered;
    for (const auto& p : m.positives) covered.insert(p.chunk_id);
    return {covered.size(), m.chunks.size()};
}

inline double correctness(const AlignmentMatrix& m) { return correctness_ratio(m).value(); }
inline double completeness(const AlignmentMatrix& m) { return completeness_ratio(m).value(); }

// Counts are with respect to the positive class.
struct Confusion {
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;
    std::size_t tn = 0;

    std::size_t total() const noexcept { return tp + fp + fn + tn; }
    Confusion flipped() const noexcept { return {tn, fn, fp, tp}; }
    bool operator==(const Confusion&) const = default;
};

struct ClassScores {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

// A class that appears in neither predictions nor gold scores 1 on every
// measure; one that is predicted but never gold scores 0.
inline ClassScores class_scores(std::size_t tp, std::size_t fp, std::size_t fn) noexcept {
    if (tp + fp + fn == 0) return {1.0, 1.0, 1.0};
    ClassScores s;
    s.precision = tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
    s.recall = tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
    s.f1 = 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
    return s;
}

inline ClassScores positive_scores(const Confusion& c) noexcept { return class_scores(c.tp, c.fp, c.fn); }
inline ClassScores negative_scores(const Confusion& c) noexcept { return class_scores(c.tn, c.fn, c.fp); }

inline double macro_f1(const Confusion& c) noexcept {
    return (positive_scores(c).f1 + negative_scores(c).f1) / 2.0;
}

using LabelMap = std::map<PairKey, int>;

inline Confusion confusion(const LabelMap& pred, const LabelMap& gold) {
    if (pred.size() != gold.size()) throw DataError("prediction and gold pair sets differ in size");
    Confusion c;
    auto p = pred.begin();
    for (auto g = gold.begin(); g != gold.end(); ++g, ++p) {
        if (p->first != g->first)
            throw DataError("pair (" + g->first.chunk_id + ", " + g->first.story_id + ") missing from predictions");
        bool predicted = p->second == 1;
        bool actual = g->second == 1;
        if (predicted && actual) ++c.tp;
        else if (predicted) ++c.fp;
        else if (actual) ++c.fn;
        else ++c.tn;
    }
    return c;
}

inline double macro_f1(const LabelMap& pred, const LabelMap& gold) { return macro_f1(confusion(pred, gold)); }

struct KappaResult {
    double kappa = 0.0;
    bool defined = true;  // false when expected agreement is 1
    double observed_agreement = 0.0;
    double expected_agreement = 0.0;
    std::size_t items = 0;
    std::size_t raters = 0;
};

// Fleiss' kappa over per-item category counts. Every item must be rated by
// the same number of annotators (>= 2).
inline KappaResult fleiss_kappa(std::span<const std::vector<std::size_t>> counts) {
    if (counts.empty()) throw DataError("fleiss kappa needs at least one item");
    const std::size_t categories = counts.front().size();
    if (categories < 1) throw DataError("fleiss kappa needs at least one category");
    std::size_t n = 0;
    for (auto c : counts.front()) n += c;
    if (n < 2) throw DataError("fleiss kappa needs at least two ratings per item");

    std::vector<double> category_totals(categories, 0.0);
    double agreement_sum = 0.0;
    for (std::size_t i = 0; i < counts.size(); ++i) {
        const auto& row = counts[i];
        if (row.size() != categories) throw DataError("item " + std::to_string(i) + " has a different category count");
        std::size_t row_sum = 0;
        double squares = 0.0;
        for (std::size_t j = 0; j < categories; ++j) {
            row_sum += row[j];
            squares += static_cast<double>(row[j]) * static_cast<double>(row[j]);
            category_totals[j] += static_cast<double>(row[j]);
        }
        if (row_sum != n)
            throw DataError("ragged ratings: item " + std::to_string(i) + " has " + std::to_string(row_sum) +
                            " ratings, expected " + std::to_string(n));
        agreement_sum += (squares - static_cast<double>(n)) / (static_cast<double>(n) * static_cast<double>(n - 1));
    }

    KappaResult r;
    r.items = counts.size();
    r.raters = n;
    const double total = static_cast<double>(counts.size()) * static_cast<double>(n);
    r.observed_agreement = agreement_sum / static_cast<double>(counts.size());
    for (double t : category_totals) {
        double p = t / total;
        r.expected_agreement += p * p;
    }
    if (r.expected_agreement >= 1.0) {
        r.defined = false;
        r.kappa = std::numeric_limits<double>::quiet_NaN();
        return r;
    }
    r.kappa = (r.observed_agreement - r.expected_agreement) / (1.0 - r.expected_agreement);
    return r;
}

struct DiffReport {
    std::vector<std::string> only_a;  // chunk ids covered by a, not b
    std::vector<std::string> only_b;
    std::map<std::string, std::vector<std::string>> a_stories;  // exclusive chunk -> covering stories in a
    std::map<std::string, std::vector<std::string>> b_stories;
    std::vector<std::string> unique_stories_a;  // stories in a owning any exclusive chunk
    std::vector<std::string> unique_stories_b;
};

inline DiffReport coverage_diff(const AlignmentMatrix& a, const AlignmentMatrix& b) {
    a.validate();
    b.validate();
    if (std::set<std::string>(a.chunks.begin(), a.chunks.end()) != std::set<std::string>(b.chunks.begin(), b.chunks.end()))
        throw DataError("coverage diff needs both matrices over the same chunk universe");

    auto covering = [](const AlignmentMatrix& m) {
        std::map<std::string, std::vector<std::string>> out;
        for (const auto& p : m.positives) out[p.chunk_id].push_back(p.story_id);
        return out;
    };
    auto cov_a = covering(a);
    auto cov_b = covering(b);

    DiffReport d;
    auto fill = [](const AlignmentMatrix& owner, const auto& mine, const auto& theirs, std::vector<std::string>& only,
                   std::map<std::string, std::vector<std::string>>& stories, std::vector<std::string>& unique) {
        std::set<std::string> owners;
        for (const auto& chunk : owner.chunks) {
            auto it = mine.find(chunk);
            if (it == mine.end() || theirs.contains(chunk)) continue;
            only.push_back(chunk);
            stories[chunk] = it->second;
            owners.insert(it->second.begin(), it->second.end());
        }
        for (const auto& s : owner.stories)
            if (owners.contains(s)) unique.push_back(s);
    };
    fill(a, cov_a, cov_b, d.only_a, d.a_stories, d.unique_stories_a);
    fill(b, cov_b, cov_a, d.only_b, d.b_stories, d.unique_stories_b);
    return d;
}

}  // namespace t2sa
