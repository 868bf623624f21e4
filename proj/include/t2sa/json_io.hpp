#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "t2sa/chunker.hpp"
#include "t2sa/error.hpp"
#include "t2sa/text.hpp"
#include "t2sa/types.hpp"

namespace t2sa {

namespace detail {

inline void dump_fixed(const ordered_json& j, std::string& out, int indent, int depth) {
    auto newline = [&](int d) {
        out += '\n';
        out.append(static_cast<std::size_t>(indent * d), ' ');
    };
    switch (j.type()) {
        case ordered_json::value_t::object: {
            if (j.empty()) {
                out += "{}";
                return;
            }
            out += '{';
            bool first = true;
            for (auto it = j.begin(); it != j.end(); ++it) {
                if (!first) out += ',';
                first = false;
                newline(depth + 1);
                out += ordered_json(it.key()).dump();
                out += ": ";
                dump_fixed(it.value(), out, indent, depth + 1);
            }
            newline(depth);
            out += '}';
            return;
        }
        case ordered_json::value_t::array: {
            if (j.empty()) {
                out += "[]";
                return;
            }
            out += '[';
            bool first = true;
            for (const auto& v : j) {
                if (!first) out += ',';
                first = false;
                newline(depth + 1);
                dump_fixed(v, out, indent, depth + 1);
            }
            newline(depth);
            out += ']';
            return;
        }
        case ordered_json::value_t::number_float: {
            char buf[64];
            std::snprintf(buf, sizeof buf, "%.9f", j.get<double>());
            out += buf;
            return;
        }
        default:
            out += j.dump();
    }
}

}  // namespace detail

// Pretty JSON where every floating value carries nine decimals, so reports
// are byte-stable and precise beyond six digits.
inline std::string dump_fixed(const ordered_json& j) {
    std::string out;
    detail::dump_fixed(j, out, 2, 0);
    out += '\n';
    return out;
}

inline void write_text_file(const std::string& path, const std::string& content) {
    std::error_code ec;
    if (auto parent = std::filesystem::path(path).parent_path(); !parent.empty())
        std::filesystem::create_directories(parent, ec);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write file: " + path);
    out << content;
    if (!out) throw DataError("failed writing file: " + path);
}

inline ordered_json report_to_json(const AlignmentReport& r) {
    ordered_json j;
    j["correctness"] = r.correctness;
    j["completeness"] = r.completeness;
    ordered_json per_story = ordered_json::object();
    for (const auto& s : r.per_story) {
        per_story[s.story_id] = {{"supported", s.supported},
                                 {"evidence", s.evidence},
                                 {"judged", s.judged},
                                 {"pruned", s.pruned}};
    }
    j["per_story"] = std::move(per_story);
    ordered_json per_chunk = ordered_json::object();
    for (const auto& c : r.per_chunk) per_chunk[c.chunk_id] = {{"covered", c.covered}, {"stories", c.stories}};
    j["per_chunk"] = std::move(per_chunk);
    j["token_cost"] = r.token_cost;
    j["matcher_calls"] = r.matcher_calls;
    j["config_echo"] = r.config_echo;
    const auto& d = r.diagnostics;
    j["diagnostics"] = {{"judged_pairs", d.judged_pairs},         {"judged_negatives", d.judged_negatives},
                        {"pruned_pairs", d.pruned_pairs},         {"parse_warnings", d.parse_warnings},
                        {"recovered_parses", d.recovered_parses}, {"score_warnings", d.score_warnings}};
    return j;
}

inline AlignmentReport report_from_json(const ordered_json& j) {
    try {
        AlignmentReport r;
        r.correctness = j.at("correctness").get<double>();
        r.completeness = j.at("completeness").get<double>();
        for (auto it = j.at("per_story").begin(); it != j.at("per_story").end(); ++it) {
            const auto& v = it.value();
            r.per_story.push_back({it.key(), v.at("supported").get<bool>(),
                                   v.at("evidence").get<std::vector<std::string>>(), v.value("judged", std::size_t{0}),
                                   v.value("pruned", std::size_t{0})});
        }
        for (auto it = j.at("per_chunk").begin(); it != j.at("per_chunk").end(); ++it) {
            const auto& v = it.value();
            r.per_chunk.push_back(
                {it.key(), v.at("covered").get<bool>(), v.at("stories").get<std::vector<std::string>>()});
        }
        r.token_cost = j.at("token_cost").get<std::uint64_t>();
        r.matcher_calls = j.at("matcher_calls").get<std::uint64_t>();
        r.config_echo = j.value("config_echo", ordered_json::object());
        if (j.contains("diagnostics")) {
            const auto& d = j["diagnostics"];
            r.diagnostics.judged_pairs = d.value("judged_pairs", std::size_t{0});
            r.diagnostics.judged_negatives = d.value("judged_negatives", std::size_t{0});
            r.diagnostics.pruned_pairs = d.value("pruned_pairs", std::size_t{0});
            r.diagnostics.parse_warnings = d.value("parse_warnings", std::size_t{0});
            r.diagnostics.recovered_parses = d.value("recovered_parses", std::size_t{0});
            r.diagnostics.score_warnings = d.value("score_warnings", std::size_t{0});
        }
        return r;
    } catch (const ordered_json::exception& e) {
        throw DataError(std::string("malformed report JSON: ") + e.what());
    }
}

inline AlignmentReport load_report(const std::string& path) {
    ordered_json j;
    try {
        j = ordered_json::parse(text::read_file(path));
    } catch (const ordered_json::exception& e) {
        throw DataError(path + ": malformed JSON: " + e.what());
    }
    return report_from_json(j);
}

inline ordered_json chunk_to_json(const Chunk& c) {
    return {{"id", c.id},
            {"transcript_id", c.transcript_id},
            {"span_start", c.span.start},
            {"span_end", c.span.end},
            {"text", c.text},
            {"token_count", c.token_count}};
}

inline Chunk chunk_from_json(const nlohmann::json& j) {
    try {
        Chunk c;
        c.id = j.at("id").get<std::string>();
        c.transcript_id = j.at("transcript_id").get<std::string>();
        c.span = {j.at("span_start").get<std::size_t>(), j.at("span_end").get<std::size_t>()};
        c.text = j.at("text").get<std::string>();
        c.token_count = j.at("token_count").get<std::size_t>();
        c.strategy = parse_chunk_id(c.id).strategy;
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed chunk JSON: ") + e.what());
    }
}

inline std::string write_chunks_jsonl(const std::vector<Chunk>& chunks) {
    std::string out;
    for (const auto& c : chunks) {
        out += chunk_to_json(c).dump();
        out += '\n';
    }
    return out;
}

inline std::vector<Chunk> parse_chunks_jsonl(std::string_view content, const std::string& origin = "<input>") {
    std::vector<Chunk> chunks;
    auto lines = text::split_lines(content);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (text::trim(lines[i]).empty()) continue;
        try {
            chunks.push_back(chunk_from_json(nlohmann::json::parse(lines[i])));
        } catch (const nlohmann::json::exception& e) {
            throw DataError(origin + ":" + std::to_string(i + 1) + ": " + e.what());
        } catch (const DataError& e) {
            throw DataError(origin + ":" + std::to_string(i + 1) + ": " + e.what());
        }
    }
    return chunks;
}

}  // namespace t2sa
