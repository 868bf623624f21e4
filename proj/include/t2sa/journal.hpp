#pragma once

#include <cerrno>
#include <cstring>
#include <fcntl.h>
#include <unistd.h>

#include <filesystem>
#include <map>
#include <mutex>
#include <string>
#include <string_view>

#include <json.hpp>

#include "t2sa/error.hpp"
#include "t2sa/matchers.hpp"
#include "t2sa/text.hpp"

namespace t2sa {

inline constexpr std::string_view kJournalTag = "t2sa-verdicts";

inline ordered_json verdict_to_json(const PairVerdict& v) {
    ordered_json j;
    j["chunk_id"] = v.chunk_id;
    j["story_id"] = v.story_id;
    j["label"] = v.label;
    if (v.score) j["score"] = *v.score;
    j["parse_status"] = std::string(to_string(v.parse_status));
    j["attempts"] = v.attempts;
    if (v.raw_response) j["raw_response"] = *v.raw_response;
    if (v.warning) j["warning"] = *v.warning;
    return j;
}

inline PairVerdict verdict_from_json(const nlohmann::json& j) {
    PairVerdict v;
    v.chunk_id = j.at("chunk_id").get<std::string>();
    v.story_id = j.at("story_id").get<std::string>();
    v.label = j.at("label").get<int>();
    if (v.label != 0 && v.label != 1) throw DataError("journal verdict label must be 0 or 1");
    if (j.contains("score")) v.score = j.at("score").get<double>();
    v.parse_status = parse_parse_status(j.value("parse_status", std::string("clean")));
    v.attempts = j.value("attempts", std::size_t{1});
    if (j.contains("raw_response")) v.raw_response = j.at("raw_response").get<std::string>();
    if (j.contains("warning")) v.warning = j.at("warning").get<std::string>();
    return v;
}

// Append-only JSONL verdict log. The first line carries a fingerprint of
// the run configuration; resuming under a different configuration is
// refused. Each verdict is a single write(2) so a killed process leaves at
// most one torn trailing line, which is discarded on reload.
class VerdictJournal {
public:
    VerdictJournal(std::string path, std::string fingerprint, bool resume)
        : path_(std::move(path)), fingerprint_(std::move(fingerprint)) {
        std::string body;
        if (resume && std::filesystem::exists(path_)) body = load();
        if (auto parent = std::filesystem::path(path_).parent_path(); !parent.empty())
            std::filesystem::create_directories(parent);
        // Rewrite via rename so a torn tail never gets glued to the next
        // entry and a crash mid-rewrite keeps the old file.
        ordered_json header{{"journal", kJournalTag}, {"version", 1}, {"fingerprint", fingerprint_}};
        const std::string tmp = path_ + ".tmp";
        fd_ = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
        if (fd_ < 0) throw DataError("cannot open journal " + tmp + ": " + std::strerror(errno));
        write_line(header.dump() + "\n" + body);
        ::fsync(fd_);
        ::close(fd_);
        std::filesystem::rename(tmp, path_);
        fd_ = ::open(path_.c_str(), O_WRONLY | O_APPEND | O_CLOEXEC);
        if (fd_ < 0) throw DataError("cannot open journal " + path_ + ": " + std::strerror(errno));
    }

    VerdictJournal(const VerdictJournal&) = delete;
    VerdictJournal& operator=(const VerdictJournal&) = delete;

    ~VerdictJournal() {
        if (fd_ >= 0) ::close(fd_);
    }

    const std::map<PairKey, PairVerdict>& recovered() const { return recovered_; }

    void append(const PairVerdict& v) {
        std::string line = verdict_to_json(v).dump() + "\n";
        std::lock_guard lock(mutex_);
        write_line(line);
    }

    void append_all(const std::vector<PairVerdict>& vs) {
        std::string lines;
        for (const auto& v : vs) lines += verdict_to_json(v).dump() + "\n";
        std::lock_guard lock(mutex_);
        write_line(lines);
    }

private:
    std::string load() {
        auto content = text::read_file(path_);
        auto lines = text::split_lines(content);
        const bool complete_tail = !content.empty() && content.back() == '\n';
        if (lines.empty()) return {};
        nlohmann::json header;
        try {
            header = nlohmann::json::parse(lines[0]);
        } catch (const nlohmann::json::exception&) {
            throw DataError("journal " + path_ + " has an unreadable header");
        }
        if (header.value("journal", std::string{}) != kJournalTag)
            throw DataError("journal " + path_ + " is not a verdict journal");
        if (header.value("fingerprint", std::string{}) != fingerprint_)
            throw UsageError("journal " + path_ + " was written under a different configuration; refusing to resume");

        std::string kept;
        for (std::size_t i = 1; i < lines.size(); ++i) {
            if (text::trim(lines[i]).empty()) continue;
            const bool last = i + 1 == lines.size();
            try {
                auto v = verdict_from_json(nlohmann::json::parse(lines[i]));
                if (last && !complete_tail) break;  // torn write that happened to parse
                recovered_[{v.chunk_id, v.story_id}] = std::move(v);
                kept += lines[i] + "\n";
            } catch (const nlohmann::json::exception&) {
                if (last) break;
                throw DataError(path_ + ":" + std::to_string(i + 1) + ": corrupt journal entry");
            }
        }
        return kept;
    }

    void write_line(const std::string& data) {
        std::size_t off = 0;
        while (off < data.size()) {
            auto n = ::write(fd_, data.data() + off, data.size() - off);
            if (n < 0) {
                if (errno == EINTR) continue;
                throw DataError("journal write failed: " + std::string(std::strerror(errno)));
            }
            off += static_cast<std::size_t>(n);
        }
    }

    std::string path_;
    std::string fingerprint_;
    int fd_ = -1;
    std::mutex mutex_;
    std::map<PairKey, PairVerdict> recovered_;
};

}  // namespace t2sa
