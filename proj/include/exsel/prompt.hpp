#pragma once

#include "exsel/corpus.hpp"
#include "exsel/error.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace exsel {

/// Line-structured prompt for one task. A demonstration block is
/// `body \n cue output`; the query block is `instruction \n body \n cue`.
/// Slots are written `{name}`: target_language, passage, question, input.
struct PromptTemplate {
    std::string task;
    std::string instruction;
    std::string body;
    std::string cue;
    std::string separator = "\n";
};

inline const std::vector<std::string>& known_slots() {
    static const std::vector<std::string> slots{"target_language", "passage", "question", "input"};
    return slots;
}

inline const std::map<std::string, std::string>& language_names() {
    static const std::map<std::string, std::string> names{
        {"as", "Assamese"},  {"awa", "Awadhi"},   {"bgc", "Haryanvi"},  {"bho", "Bhojpuri"},  {"bn", "Bengali"},
        {"brx", "Bodo"},     {"doi", "Dogri"},    {"en", "English"},    {"gbm", "Garhwali"},  {"gom", "Konkani"},
        {"gu", "Gujarati"},  {"hi", "Hindi"},     {"hne", "Chhattisgarhi"}, {"kn", "Kannada"}, {"kok", "Konkani"},
        {"ks", "Kashmiri"},  {"mag", "Magahi"},   {"mai", "Maithili"},  {"ml", "Malayalam"},  {"mni", "Manipuri"},
        {"mr", "Marathi"},   {"mup", "Malvi"},    {"mwr", "Marwari"},   {"ne", "Nepali"},     {"or", "Odia"},
        {"pa", "Punjabi"},   {"raj", "Rajasthani"}, {"sa", "Sanskrit"}, {"sat", "Santali"},   {"sd", "Sindhi"},
        {"si", "Sinhala"},   {"ta", "Tamil"},     {"te", "Telugu"},     {"ur", "Urdu"},
    };
    return names;
}

using WarningSink = std::function<void(const std::string&)>;

inline WarningSink stderr_warnings() {
    return [](const std::string& msg) { std::cerr << "warning: " << msg << '\n'; };
}

/// Display name for a language tag; unknown tags come back unchanged.
inline std::string language_display_name(const std::string& tag, const WarningSink& warn = stderr_warnings()) {
    const auto& names = language_names();
    auto it = names.find(tag);
    if (it != names.end()) return it->second;
    if (warn) warn("no display name for language tag \"" + tag + "\"");
    return tag;
}

namespace detail {

inline std::vector<std::string> slots_in(std::string_view pattern) {
    std::vector<std::string> out;
    std::size_t at = 0;
    while ((at = pattern.find('{', at)) != std::string_view::npos) {
        const auto close = pattern.find('}', at);
        if (close == std::string_view::npos) break;
        out.emplace_back(pattern.substr(at + 1, close - at - 1));
        at = close + 1;
    }
    return out;
}

inline std::string fill(std::string_view pattern, const std::map<std::string, std::string>& values) {
    std::string out;
    std::size_t at = 0;
    while (at < pattern.size()) {
        const auto open = pattern.find('{', at);
        const auto close = open == std::string_view::npos ? open : pattern.find('}', open);
        if (close == std::string_view::npos) {
            out.append(pattern.substr(at));
            break;
        }
        out.append(pattern.substr(at, open - at));
        const std::string slot(pattern.substr(open + 1, close - open - 1));
        auto it = values.find(slot);
        if (it == values.end()) throw TemplateError(slot, "template: no value for slot {" + slot + "}");
        out.append(it->second);
        at = close + 1;
    }
    return out;
}

}  // namespace detail

/// Checks that every slot is known and used at most once per block.
inline void validate_template(const PromptTemplate& t) {
    std::map<std::string, int> uses;
    for (const auto& s : detail::slots_in(t.instruction + "\n" + t.body)) ++uses[s];
    for (const auto& [slot, n] : uses) {
        if (std::find(known_slots().begin(), known_slots().end(), slot) == known_slots().end()) {
            throw TemplateError(slot, "template \"" + t.task + "\": unknown slot {" + slot + "}");
        }
        if (n != 1) throw TemplateError(slot, "template \"" + t.task + "\": slot {" + slot + "} used more than once");
    }
    if (t.cue.empty()) throw TemplateError("cue", "template \"" + t.task + "\": empty answer cue");
}

inline std::map<std::string, PromptTemplate> builtin_templates() {
    std::map<std::string, PromptTemplate> t;
    t["summarization"] = {"summarization", "Summarize the article in {target_language} language.",
                          "Summarize the following article: {input}", "Summary:", "\n"};
    t["crosslingual-qa"] = {"crosslingual-qa",
                            "Generate an answer in {target_language} language for the question based on the given passage.",
                            "{passage}\nQuestion: {question}", "Answer:", "\n"};
    t["translation"] = {"translation", "Translate the following sentence to English.", "Input: {input}", "Output:", "\n"};
    t["multilingual-qa"] = {"multilingual-qa", "Generate an answer for the next question in {target_language} language.",
                            "{passage}\nQuestion: {question}", "Answer:", "\n"};
    return t;
}

/// Built-ins overridden by the entries of a JSON object keyed by task:
/// {"translation": {"instruction": ..., "body": ..., "cue": ..., "separator": ...}}.
/// Missing fields keep the built-in value.
inline std::map<std::string, PromptTemplate> load_templates(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path);
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(path + ": " + e.what());
    }
    if (!doc.is_object()) throw ParseError(path + ": expected an object keyed by task");
    auto templates = builtin_templates();
    for (const auto& [task, spec] : doc.items()) {
        if (!spec.is_object()) throw ParseError(path + ": template \"" + task + "\" is not an object");
        PromptTemplate t = templates.count(task) ? templates[task] : PromptTemplate{task, "", "", "", "\n"};
        t.task = task;
        t.instruction = spec.value("instruction", t.instruction);
        t.body = spec.value("body", t.body);
        t.cue = spec.value("cue", t.cue);
        t.separator = spec.value("separator", t.separator);
        validate_template(t);
        templates[task] = std::move(t);
    }
    return templates;
}

/// Slot values taken from an example. For QA-style inputs the passage and
/// the question are separated by the last newline of `input_text`.
inline std::map<std::string, std::string> slot_values(const Example& ex, const WarningSink& warn) {
    std::map<std::string, std::string> v;
    v["input"] = ex.input_text;
    v["target_language"] = language_display_name(ex.language, warn);
    const auto nl = ex.input_text.rfind('\n');
    if (nl != std::string::npos) {
        v["passage"] = ex.input_text.substr(0, nl);
        v["question"] = ex.input_text.substr(nl + 1);
    }
    return v;
}

/// Demonstrations (already in prompt order) followed by the query block,
/// which ends at the answer cue.
inline std::string render(const PromptTemplate& t, std::span<const Example> demonstrations, const Example& query,
                          const WarningSink& warn = stderr_warnings()) {
    validate_template(t);
    std::string out;
    for (const auto& demo : demonstrations) {
        out += detail::fill(t.body, slot_values(demo, nullptr));
        out += "\n" + t.cue + " " + demo.output_text;
        out += t.separator;
    }
    const auto values = slot_values(query, warn);
    out += detail::fill(t.instruction, values);
    out += "\n" + detail::fill(t.body, values);
    out += "\n" + t.cue;
    return out;
}

}  // namespace exsel
