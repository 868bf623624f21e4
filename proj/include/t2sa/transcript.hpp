#pragma once

#include <filesystem>
#include <regex>
#include <string>
#include <string_view>

#include <json.hpp>

#include "t2sa/error.hpp"
#include "t2sa/text.hpp"
#include "t2sa/types.hpp"

namespace t2sa {

enum class TranscriptFormat { jsonl, plain };

inline TranscriptFormat parse_transcript_format(std::string_view s) {
    if (s == "jsonl") return TranscriptFormat::jsonl;
    if (s == "plain") return TranscriptFormat::plain;
    throw UsageError("unknown transcript format: " + std::string(s));
}

// Picks the format from the extension: .jsonl is JSONL, anything else plain.
inline TranscriptFormat guess_transcript_format(const std::string& path) {
    return std::filesystem::path(path).extension() == ".jsonl" ? TranscriptFormat::jsonl : TranscriptFormat::plain;
}

namespace detail {

inline std::string line_ref(const std::string& origin, std::size_t line) {
    return origin + ":" + std::to_string(line);
}

inline Transcript parse_jsonl_transcript(std::string_view content, std::string id, const std::string& origin) {
    Transcript t{std::move(id), {}, SourceKind::interview};
    auto lines = text::split_lines(content);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        std::string_view line = text::trim(lines[i]);
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataError(line_ref(origin, i + 1) + ": malformed JSON: " + e.what());
        }
        if (!j.is_object() || !j.contains("speaker") || !j["speaker"].is_string() || !j.contains("text") ||
            !j["text"].is_string())
            throw DataError(line_ref(origin, i + 1) + ": expected an object with string `speaker` and `text`");
        std::string text_value = text::collapse_whitespace(j["text"].get<std::string>());
        if (text_value.empty()) throw DataError(line_ref(origin, i + 1) + ": turn text is empty");
        t.turns.push_back({t.turns.size(), std::string(text::trim(j["speaker"].get<std::string>())),
                           std::move(text_value)});
    }
    return t;
}

// "Speaker: utterance" opens a turn; the speaker label is one to four words.
// Any other non-blank line continues the previous turn, joined by a space.
inline Transcript parse_plain_transcript(std::string_view content, std::string id, const std::string& origin) {
    static const std::regex speaker_line(R"(^\s*([^\s:][^:]{0,39}?)\s*:(?:\s+(.*)|\s*)$)");
    Transcript t{std::move(id), {}, SourceKind::interview};
    std::vector<std::size_t> opened_at;
    auto lines = text::split_lines(content);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        std::string_view line = text::trim(lines[i]);
        if (line.empty()) continue;
        std::string line_str(line);
        std::smatch m;
        bool is_speaker = std::regex_match(line_str, m, speaker_line);
        if (is_speaker) {
            auto words = text::split(text::collapse_whitespace(m[1].str()), ' ');
            is_speaker = words.size() <= 4;
        }
        if (is_speaker) {
            t.turns.push_back({t.turns.size(), text::collapse_whitespace(m[1].str()),
                               text::collapse_whitespace(m[2].matched ? m[2].str() : std::string())});
            opened_at.push_back(i + 1);
            continue;
        }
        if (t.turns.empty())
            throw DataError(line_ref(origin, i + 1) + ": malformed line: continuation before any `Speaker:` line");
        auto& turn = t.turns.back();
        if (!turn.text.empty()) turn.text += ' ';
        turn.text += text::collapse_whitespace(line);
    }
    for (std::size_t k = 0; k < t.turns.size(); ++k) {
        if (t.turns[k].text.empty()) throw DataError(line_ref(origin, opened_at[k]) + ": turn text is empty");
    }
    return t;
}

}  // namespace detail

inline Transcript parse_transcript(std::string_view content, TranscriptFormat format, std::string id,
                                   const std::string& origin = "<input>") {
    if (text::trim(content).empty()) throw DataError(origin + ": empty transcript");
    Transcript t = format == TranscriptFormat::jsonl ? detail::parse_jsonl_transcript(content, std::move(id), origin)
                                                     : detail::parse_plain_transcript(content, std::move(id), origin);
    if (t.turns.empty()) throw DataError(origin + ": transcript has no turns");
    return t;
}

// The transcript id is the file stem.
inline Transcript load_transcript(const std::string& path, TranscriptFormat format) {
    return parse_transcript(text::read_file(path), format, std::filesystem::path(path).stem().string(), path);
}

inline std::string render_turn(const Turn& turn) {
    return turn.speaker.empty() ? turn.text : turn.speaker + ": " + turn.text;
}

// Full transcript, one "speaker: text" line per turn.
inline std::string render_transcript(const Transcript& t) {
    std::string out;
    for (const auto& turn : t.turns) {
        if (!out.empty()) out += '\n';
        out += render_turn(turn);
    }
    return out;
}

}  // namespace t2sa
