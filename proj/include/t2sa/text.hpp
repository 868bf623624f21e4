#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "t2sa/error.hpp"

namespace t2sa::text {

inline bool is_space(char c) noexcept {
    return std::isspace(static_cast<unsigned char>(c)) != 0;
}

inline std::string_view trim(std::string_view s) noexcept {
    while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
    while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
    return s;
}

inline std::string to_lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

inline std::string collapse_whitespace(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    bool pending_space = false;
    for (char c : trim(s)) {
        if (is_space(c)) {
            pending_space = true;
            continue;
        }
        if (pending_space) out.push_back(' ');
        pending_space = false;
        out.push_back(c);
    }
    return out;
}

// Splits on '\n', dropping a trailing '\r' from each line. A final newline
// does not produce an extra empty line.
inline std::vector<std::string> split_lines(std::string_view s) {
    std::vector<std::string> lines;
    std::size_t pos = 0;
    while (pos < s.size()) {
        std::size_t nl = s.find('\n', pos);
        std::size_t end = nl == std::string_view::npos ? s.size() : nl;
        std::string_view line = s.substr(pos, end - pos);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        lines.emplace_back(line);
        if (nl == std::string_view::npos) break;
        pos = nl + 1;
    }
    return lines;
}

inline std::vector<std::string> split(std::string_view s, char delim) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (true) {
        std::size_t next = s.find(delim, pos);
        out.emplace_back(s.substr(pos, next == std::string_view::npos ? s.npos : next - pos));
        if (next == std::string_view::npos) break;
        pos = next + 1;
    }
    return out;
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline bool starts_with_ci(std::string_view s, std::string_view prefix) {
    if (s.size() < prefix.size()) return false;
    for (std::size_t i = 0; i < prefix.size(); ++i) {
        if (std::tolower(static_cast<unsigned char>(s[i])) !=
            std::tolower(static_cast<unsigned char>(prefix[i])))
            return false;
    }
    return true;
}

inline const std::set<std::string, std::less<>>& stopwords() {
    static const std::set<std::string, std::less<>> words = {
        "a",     "about", "above", "after", "again", "all",   "also",  "am",    "an",
        "and",   "any",   "are",   "as",    "at",    "be",    "been",  "before", "being",
        "but",   "by",    "can",   "could", "did",   "do",    "does",  "doing", "don",
        "for",   "from",  "had",   "has",   "have",  "having", "he",   "her",   "here",
        "him",   "his",   "how",   "i",     "if",    "in",    "into",  "is",    "it",
        "its",   "just",  "like",  "me",    "more",  "most",  "my",    "no",    "not",
        "now",   "of",    "on",    "one",   "only",  "or",    "other", "our",   "out",
        "over",  "s",     "same",  "she",   "should", "so",   "some",  "such",  "t",
        "than",  "that",  "the",   "their", "them",  "then",  "there", "these", "they",
        "this",  "those", "through", "to",  "too",   "uh",    "um",    "up",    "us",
        "very",  "want",  "was",   "we",    "well",  "were",  "what",  "when",  "where",
        "which", "while", "who",   "whom",  "why",   "will",  "with",  "would", "yeah",
        "yes",   "you",   "your",
    };
    return words;
}

// Lowercased alphanumeric words with stopwords removed.
inline std::set<std::string> content_words(std::string_view s) {
    std::set<std::string> out;
    std::string word;
    auto flush = [&] {
        if (!word.empty() && !stopwords().contains(word)) out.insert(word);
        word.clear();
    };
    for (char c : s) {
        auto u = static_cast<unsigned char>(c);
        if (std::isalnum(u) || u >= 0x80) {
            word.push_back(static_cast<char>(std::tolower(u)));
        } else {
            flush();
        }
    }
    flush();
    return out;
}

// FNV-1a, used where a stable non-cryptographic hash is enough.
inline std::uint64_t fnv1a(std::string_view s) noexcept {
    std::uint64_t h = 14695981039346656037ULL;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace t2sa::text
