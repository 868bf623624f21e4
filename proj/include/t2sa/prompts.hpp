#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include "t2sa/error.hpp"
#include "t2sa/text.hpp"

namespace t2sa {

// Built-in copies of prompts/*.txt. The files are the editable assets; these
// keep the library usable without them.
namespace prompt_defaults {

inline constexpr std::string_view kJudgeSystem = R"(You are a senior requirements analyst.
Your task: decide whether the Chunk Text gives enough evidence to justify the User Story.

Decision rules
- Output 1 if a knowledgeable reader could infer the User Story from the Chunk Text alone.
- Otherwise output 0.

Note: Each Chunk Text is an excerpt from an informal interview transcript. Expect colloquial language, filler words ("uh", "you know"), and broken grammar; ignore these and focus on meaning.

Additional guidance
- User stories follow the format: "As a <type of user>, I want to <goal> so that <reason>."
- Pay special attention to the goal in the User Story.
- Verify that the type of user (e.g., "employee") is consistent with the Chunk Text.

Example (1 of 4)
User Story: As a match official, I want to report on match events live, so that I do not register them twice.
Chunk Text: <excerpt about referee recording events in real time>
Answer: 1

Example (2 of 4)
User Story: <replace with a few-shot user story>
Chunk Text: <replace with a few-shot chunk text>
Answer: <replace with 1 or 0>

Example (3 of 4)
User Story: <replace with a few-shot user story>
Chunk Text: <replace with a few-shot chunk text>
Answer: <replace with 1 or 0>

Example (4 of 4)
User Story: <replace with a few-shot user story>
Chunk Text: <replace with a few-shot chunk text>
Answer: <replace with 1 or 0>

Now answer for the next pair.
Return only one character, either 1 or 0, followed by nothing else.
)";

inline constexpr std::string_view kJudgeUser = R"(User Story: <story>

Chunk Text: <chunk>

Answer:
)";

inline constexpr std::string_view kGenerationSystem = R"(You are an expert requirements engineer and agile coach.
Your task is to read interviews with stakeholders and derive consistent user stories.
- A user story is a short, simple description of a feature told from the perspective of the person who desires the new capability: a user or customer of the system.
- A user story includes at least a type of user and a goal.
- A user story expresses a requirement for exactly one feature.
- A user story contains nothing more than type of user, goal and reason.

You MUST NOT use brackets.
User stories must be written in the standard format:
"As a <type of user>, I want to <goal>, so that <reason>"
Strictly follow this format.
)";

inline constexpr std::string_view kGenerationUser = R"(Here are some examples of valid user stories:

As a customer, I want to reset my password online, so that I can regain access without calling support.
As a project manager, I want to view a dashboard of team progress, so that I can monitor deadlines.
As a student, I want to download lecture slides, so that I can study offline.

Write a complete set of user stories deduced from the following interview transcript:
<specification>

Return all distinct user stories needed to cover the requirements in the transcript, with no overlap. Generate at most <max_n> user stories.

Output rules:
Only return the stories separated by newline.
Use the standard format: "As a <type of user>, I want to <goal>, so that <reason>".
One user story per line.
No bullet points, numbering, markdown or commentary — only the stories.
)";

inline constexpr std::string_view kFullContextSystem = R"(You are a senior requirements analyst.
You receive one User Story and a numbered list of chunks taken from an informal interview transcript.
Your task: find every chunk that gives enough evidence to justify the User Story.

Decision rules
- Include a chunk if a knowledgeable reader could infer the User Story from that chunk alone.
- Pay special attention to the goal in the User Story.
- Ignore filler words and broken grammar; focus on meaning.

Return only the numbers of the supporting chunks, separated by commas (for example: 3, 7).
If no chunk supports the User Story, return: none
)";

inline constexpr std::string_view kFullContextUser = R"(User Story: <story>

Chunks:
<chunks>

Answer:
)";

}  // namespace prompt_defaults

struct PromptAssets {
    std::string judge_system{prompt_defaults::kJudgeSystem};
    std::string judge_user{prompt_defaults::kJudgeUser};
    std::string generation_system{prompt_defaults::kGenerationSystem};
    std::string generation_user{prompt_defaults::kGenerationUser};
    std::string full_context_system{prompt_defaults::kFullContextSystem};
    std::string full_context_user{prompt_defaults::kFullContextUser};

    // Files present in `dir` override the defaults; missing ones keep them.
    static PromptAssets load(const std::string& dir) {
        PromptAssets p;
        if (dir.empty()) return p;
        if (!std::filesystem::is_directory(dir)) throw UsageError("prompt directory not found: " + dir);
        auto read = [&](const char* name, std::string& slot) {
            auto path = std::filesystem::path(dir) / name;
            if (std::filesystem::exists(path)) slot = text::read_file(path.string());
        };
        read("judge_system.txt", p.judge_system);
        read("judge_user.txt", p.judge_user);
        read("generation_system.txt", p.generation_system);
        read("generation_user.txt", p.generation_user);
        read("full_context_system.txt", p.full_context_system);
        read("full_context_user.txt", p.full_context_user);
        return p;
    }
};

// Single-pass substitution of `<slot>` markers. Substituted text is never
// rescanned, and markers without a binding (e.g. "<type of user>") stay.
inline std::string render_template(std::string_view tmpl, const std::map<std::string, std::string, std::less<>>& slots) {
    std::string out;
    out.reserve(tmpl.size());
    std::size_t i = 0;
    while (i < tmpl.size()) {
        if (tmpl[i] == '<') {
            auto close = tmpl.find('>', i);
            if (close != std::string_view::npos) {
                auto it = slots.find(tmpl.substr(i + 1, close - i - 1));
                if (it != slots.end()) {
                    out += it->second;
                    i = close + 1;
                    continue;
                }
            }
        }
        out.push_back(tmpl[i++]);
    }
    // Template files end with a newline; the prompt itself should not.
    while (!out.empty() && (out.back() == '\n' || out.back() == '\r')) out.pop_back();
    return out;
}

}  // namespace t2sa
