#pragma once

#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "t2sa/error.hpp"
#include "t2sa/text.hpp"
#include "t2sa/types.hpp"

namespace t2sa {

inline constexpr std::string_view kLabelsHeader = "story_id,chunk_id,label";

namespace detail {

inline std::vector<std::string> parse_csv_row(std::string_view line, const std::string& where) {
    std::vector<std::string> fields;
    std::string field;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                field.push_back('"');
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                field.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(std::move(field));
            field.clear();
        } else {
            field.push_back(c);
        }
    }
    if (quoted) throw DataError(where + ": unterminated quote");
    fields.push_back(std::move(field));
    return fields;
}

inline std::string csv_field(std::string_view s) {
    if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else out.push_back(c);
    }
    return out + "\"";
}

}  // namespace detail

// Rows of `story_id,chunk_id,label`; label must be 0 or 1 and pairs unique.
inline std::vector<AlignmentLabel> parse_labels_csv(std::string_view content, const std::string& origin = "<input>",
                                                    Provenance provenance = Provenance::gold) {
    auto lines = text::split_lines(content);
    std::size_t i = 0;
    while (i < lines.size() && text::trim(lines[i]).empty()) ++i;
    if (i == lines.size()) throw DataError(origin + ": missing header `" + std::string(kLabelsHeader) + "`");
    if (text::trim(lines[i]) != kLabelsHeader)
        throw DataError(origin + ":" + std::to_string(i + 1) + ": expected header `" + std::string(kLabelsHeader) + "`");

    std::vector<AlignmentLabel> labels;
    std::set<PairKey> seen;
    for (++i; i < lines.size(); ++i) {
        if (text::trim(lines[i]).empty()) continue;
        std::string where = origin + ":" + std::to_string(i + 1);
        auto fields = detail::parse_csv_row(lines[i], where);
        if (fields.size() != 3) throw DataError(where + ": expected 3 fields");
        std::string_view label = text::trim(fields[2]);
        if (label != "0" && label != "1") throw DataError(where + ": label must be 0 or 1");
        PairKey key{std::string(text::trim(fields[1])), std::string(text::trim(fields[0]))};
        if (key.chunk_id.empty() || key.story_id.empty()) throw DataError(where + ": empty id");
        if (!seen.insert(key).second) throw DataError(where + ": duplicate pair");
        labels.push_back({std::move(key), label == "1" ? 1 : 0, provenance, std::nullopt});
    }
    return labels;
}

inline std::vector<AlignmentLabel> load_labels_csv(const std::string& path, Provenance provenance = Provenance::gold) {
    return parse_labels_csv(text::read_file(path), path, provenance);
}

inline std::string write_labels_csv(const std::vector<AlignmentLabel>& labels) {
    std::ostringstream out;
    out << kLabelsHeader << '\n';
    for (const auto& l : labels)
        out << detail::csv_field(l.pair.story_id) << ',' << detail::csv_field(l.pair.chunk_id) << ',' << l.label << '\n';
    return out.str();
}

}  // namespace t2sa
