#pragma once

#include <optional>
#include <regex>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "t2sa/error.hpp"
#include "t2sa/text.hpp"
#include "t2sa/types.hpp"

namespace t2sa {

// Lenient match of "As a/an <role>, I want (to) <goal>(, so that <benefit>)".
// Never throws; a line that does not fit simply has no parts.
inline std::optional<ConnextraParts> parse_connextra(std::string_view story) {
    static const std::regex pattern(
        R"(^\s*as\s+an?\s+(.+?)\s*,\s*i\s+want(?:\s+to)?\s+(.+?)(?:\s*,?\s+so\s+that\s+(.+?))?\s*\.?\s*$)",
        std::regex::icase | std::regex::optimize);
    std::string s = text::collapse_whitespace(story);
    std::smatch m;
    if (!std::regex_match(s, m, pattern)) return std::nullopt;
    ConnextraParts parts{m[1].str(), m[2].str(), std::nullopt};
    if (m[3].matched) parts.benefit = m[3].str();
    if (parts.role.empty() || parts.goal.empty()) return std::nullopt;
    return parts;
}

// Canonical comparison form: whitespace collapsed, lowercased, no trailing
// period.
inline std::string normalize_story_text(std::string_view story) {
    std::string s = text::to_lower(text::collapse_whitespace(story));
    while (!s.empty() && (s.back() == '.' || text::is_space(s.back()))) s.pop_back();
    return s;
}

inline std::string render_connextra(const ConnextraParts& p) {
    std::string out = "As a " + p.role + ", I want to " + p.goal;
    if (p.benefit) out += ", so that " + *p.benefit;
    return out + ".";
}

inline UserStory make_story(std::string id, std::string_view story_text) {
    std::string t(text::trim(story_text));
    if (t.empty()) throw DataError("story " + id + " has empty text");
    auto parts = parse_connextra(t);
    return UserStory{std::move(id), std::move(t), std::move(parts)};
}

enum class StoryFormat { lines, jsonl };

inline StoryFormat parse_story_format(std::string_view s) {
    if (s == "lines") return StoryFormat::lines;
    if (s == "jsonl") return StoryFormat::jsonl;
    throw UsageError("unknown story format: " + std::string(s));
}

inline std::vector<UserStory> parse_stories(std::string_view content, StoryFormat format,
                                            const std::string& origin = "<input>") {
    std::vector<UserStory> stories;
    auto lines = text::split_lines(content);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        std::string_view line = text::trim(lines[i]);
        if (line.empty()) continue;
        std::string default_id = "s" + std::to_string(stories.size() + 1);
        if (format == StoryFormat::lines) {
            stories.push_back(make_story(default_id, line));
            continue;
        }
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataError(origin + ":" + std::to_string(i + 1) + ": malformed JSON: " + e.what());
        }
        if (!j.is_object() || !j.contains("text") || !j["text"].is_string())
            throw DataError(origin + ":" + std::to_string(i + 1) + ": story object needs a string `text`");
        std::string id = default_id;
        if (j.contains("id")) {
            if (!j["id"].is_string()) throw DataError(origin + ":" + std::to_string(i + 1) + ": `id` must be a string");
            id = j["id"].get<std::string>();
        }
        try {
            stories.push_back(make_story(std::move(id), j["text"].get<std::string>()));
        } catch (const DataError& e) {
            throw DataError(origin + ":" + std::to_string(i + 1) + ": " + e.what());
        }
    }
    if (stories.empty()) throw DataError(origin + ": no stories found");
    std::set<std::string_view> ids;
    for (const auto& s : stories)
        if (!ids.insert(s.id).second) throw DataError(origin + ": duplicate story id " + s.id);
    return stories;
}

inline std::vector<UserStory> load_stories(const std::string& path, StoryFormat format) {
    return parse_stories(text::read_file(path), format, path);
}

}  // namespace t2sa
