#include "support.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

using namespace exsel;
using support::make_example;

namespace {

std::string golden(const std::string& name) {
    std::ifstream in(std::string(EXSEL_GOLDEN_DIR) + "/" + name, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::size_t count(const std::string& hay, const std::string& needle) {
    std::size_t n = 0;
    for (auto at = hay.find(needle); at != std::string::npos; at = hay.find(needle, at + 1)) ++n;
    return n;
}

const WarningSink kQuiet = [](const std::string&) {};

}  // namespace

TEST(Render, TranslationZeroShot) {
    const auto t = builtin_templates().at("translation");
    EXPECT_EQ(render(t, std::vector<Example>{}, make_example("q", "s1", "", "hi"), kQuiet),
              "Translate the following sentence to English.\nInput: s1\nOutput:");
}

TEST(Render, OneDemonstrationPrecedesQuery) {
    const auto t = builtin_templates().at("translation");
    const std::vector<Example> demos{make_example("d", "a", "b", "hi")};
    const std::string p = render(t, demos, make_example("q", "c", "", "hi"), kQuiet);
    EXPECT_LT(p.find("Input: a"), p.find("Input: c"));
    EXPECT_EQ(count(p, "Output:"), 2u);
    EXPECT_TRUE(p.ends_with("Output:"));
}

TEST(Render, GoldenTranslation) {
    const auto t = builtin_templates().at("translation");
    const std::vector<Example> demos{make_example("d1", "Mera naam Ram hai.", "My name is Ram.", "hi"),
                                     make_example("d2", "Aaj mausam achha hai.", "The weather is nice today.", "hi")};
    EXPECT_EQ(render(t, demos, make_example("q", "Main ghar ja raha hoon.", "", "hi"), kQuiet),
              golden("translation_k2.txt"));
}

TEST(Render, GoldenCrosslingualQa) {
    const auto t = builtin_templates().at("crosslingual-qa");
    const std::vector<Example> demos{
        make_example("d1", "Delhi is the capital of India.\nWhat is the capital of India?", "Delhi", "hi"),
        make_example("d2", "The Ganga flows east.\nWhich way does the Ganga flow?", "east", "hi")};
    EXPECT_EQ(render(t, demos, make_example("q", "Mumbai is on the coast.\nWhere is Mumbai?", "", "hi"), kQuiet),
              golden("crosslingual_qa_k2.txt"));
}

TEST(Render, CueCountAndOrderInjectivity) {
    Rng rng(1);
    for (const auto& [task, t] : builtin_templates()) {
        std::vector<Example> demos;
        for (int i = 0; i < 4; ++i)
            demos.push_back(make_example("d" + std::to_string(i), "passage " + std::to_string(i) + "\nquestion " +
                                                                      std::to_string(i),
                                         "answer " + std::to_string(i), "bn"));
        const Example q = make_example("q", "p\nwhat", "", "bn");
        const std::string p = render(t, demos, q, kQuiet);
        EXPECT_EQ(count(p, t.cue), demos.size() + 1) << task;
        EXPECT_TRUE(p.ends_with(t.cue)) << task;
        auto swapped = demos;
        std::swap(swapped[0], swapped[3]);
        EXPECT_NE(render(t, swapped, q, kQuiet), p) << task;
    }
}

TEST(Render, MissingSlotNamesIt) {
    const auto t = builtin_templates().at("multilingual-qa");
    try {
        render(t, std::vector<Example>{}, make_example("q", "no newline here", "", "hi"), kQuiet);
        FAIL() << "expected a template error";
    } catch (const TemplateError& e) {
        EXPECT_NE(std::string(e.what()).find("passage"), std::string::npos) << e.what();
    }
}

TEST(Render, UnknownLanguageWarnsAndUsesTag) {
    const auto t = builtin_templates().at("summarization");
    std::vector<std::string> warnings;
    const std::string p = render(t, std::vector<Example>{}, make_example("q", "text", "", "xyz"),
                                 [&](const std::string& w) { warnings.push_back(w); });
    EXPECT_NE(p.find("in xyz language"), std::string::npos);
    ASSERT_EQ(warnings.size(), 1u);
    EXPECT_NE(warnings[0].find("xyz"), std::string::npos);
    EXPECT_EQ(language_display_name("or", kQuiet), "Odia");
}

TEST(Templates, JsonOverride) {
    const auto dir = support::temp_dir("templates");
    support::write_text(dir / "t.json",
                        R"({"translation": {"instruction": "Translate to {target_language}.", "separator": "\n\n"},
                            "custom": {"instruction": "Do it.", "body": "In: {input}", "cue": "Out:"}})");
    const auto ts = load_templates((dir / "t.json").string());
    const auto& tr = ts.at("translation");
    EXPECT_EQ(tr.cue, "Output:");
    const std::vector<Example> demos{make_example("d", "a", "b", "hi")};
    EXPECT_EQ(render(tr, demos, make_example("q", "c", "", "hi"), kQuiet),
              "Input: a\nOutput: b\n\nTranslate to Hindi.\nInput: c\nOutput:");
    EXPECT_EQ(render(ts.at("custom"), std::vector<Example>{}, make_example("q", "c", "", "hi"), kQuiet),
              "Do it.\nIn: c\nOut:");
    EXPECT_EQ(ts.count("summarization"), 1u);

    support::write_text(dir / "bad.json", R"({"translation": {"body": "{nope}"}})");
    EXPECT_THROW(load_templates((dir / "bad.json").string()), TemplateError);
    support::write_text(dir / "broken.json", "{");
    EXPECT_THROW(load_templates((dir / "broken.json").string()), ParseError);
}
