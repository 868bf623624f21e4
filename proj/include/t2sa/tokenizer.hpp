#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "t2sa/text.hpp"

namespace t2sa {

// Byte offsets [begin, end) of one token.
struct TokenSpan {
    std::size_t begin = 0;
    std::size_t end = 0;
};

class Tokenizer {
public:
    virtual ~Tokenizer() = default;
    virtual std::vector<TokenSpan> split(std::string_view text) const = 0;
    virtual std::size_t count(std::string_view text) const { return split(text).size(); }
    virtual std::string name() const = 0;
};

class WhitespaceTokenizer final : public Tokenizer {
public:
    std::vector<TokenSpan> split(std::string_view s) const override {
        std::vector<TokenSpan> out;
        std::size_t i = 0;
        while (i < s.size()) {
            while (i < s.size() && text::is_space(s[i])) ++i;
            if (i == s.size()) break;
            std::size_t begin = i;
            while (i < s.size() && !text::is_space(s[i])) ++i;
            out.push_back({begin, i});
        }
        return out;
    }

    std::size_t count(std::string_view s) const override {
        std::size_t n = 0;
        bool in_token = false;
        for (char c : s) {
            bool space = text::is_space(c);
            if (!space && !in_token) ++n;
            in_token = !space;
        }
        return n;
    }

    std::string name() const override { return "whitespace"; }
};

inline const Tokenizer& default_tokenizer() {
    static const WhitespaceTokenizer tokenizer;
    return tokenizer;
}

inline std::size_t count_tokens(std::string_view text, const Tokenizer& tokenizer = default_tokenizer()) {
    return tokenizer.count(text);
}

}  // namespace t2sa
