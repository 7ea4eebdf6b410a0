#include "metric_cases.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

using namespace exsel;

TEST(Metrics, FrozenOracleCases) {
    for (const auto& c : metric_cases::all()) {
        EXPECT_NEAR(chrf1(c.hypothesis, c.reference), c.chrf1, 1e-6) << c.hypothesis << " | " << c.reference;
        EXPECT_NEAR(token_f1(c.hypothesis, c.reference), c.token_f1, 1e-6) << c.hypothesis << " | " << c.reference;
    }
}

TEST(Metrics, IdentityAndDisjoint) {
    for (const char* s : {"a", "नमस्ते दुनिया", "x y z", "Hello, World!"}) {
        EXPECT_DOUBLE_EQ(chrf1(s, s), 100.0) << s;
        EXPECT_DOUBLE_EQ(token_f1(s, s), 1.0) << s;
    }
    EXPECT_EQ(chrf1("abc", "xyz"), 0.0);
}

TEST(Metrics, TokenF1Conventions) {
    EXPECT_DOUBLE_EQ(token_f1("a b", "b c"), 0.5);
    EXPECT_EQ(token_f1("", ""), 1.0);
    EXPECT_EQ(token_f1("x", ""), 0.0);
    EXPECT_EQ(token_f1("", "x"), 0.0);
    EXPECT_EQ(answer_tokens("Don't  STOP, now."), (std::vector<std::string>{"dont", "stop", "now"}));
}

TEST(Metrics, ChrfRecallNeverDropsWhenAppendingMatchedText) {
    // Extending a prefix of the reference keeps chrF non-decreasing here
    // because every appended character is matched.
    const std::string ref = "lowresourcelanguage";
    double prev = 0.0;
    for (std::size_t n = 1; n <= ref.size(); ++n) {
        const double v = chrf1(ref.substr(0, n), ref);
        EXPECT_GE(v, prev - 1e-12) << n;
        prev = v;
    }
    EXPECT_DOUBLE_EQ(prev, 100.0);
}

TEST(Metrics, Bounds) {
    Rng rng(1);
    const std::string alphabet = "abcde ";
    for (int t = 0; t < 200; ++t) {
        std::string h, r;
        for (std::size_t i = 0, n = rng.index(12); i < n; ++i) h += alphabet[rng.index(alphabet.size())];
        for (std::size_t i = 0, n = rng.index(12); i < n; ++i) r += alphabet[rng.index(alphabet.size())];
        const double c = chrf1(h, r);
        const double f = token_f1(h, r);
        EXPECT_GE(c, 0.0);
        EXPECT_LE(c, 100.0 + 1e-12);
        EXPECT_GE(f, 0.0);
        EXPECT_LE(f, 1.0 + 1e-12);
    }
}

TEST(EvaluateRun, Examples) {
    std::vector<EvalRecord> one{score_record("q", "same", "same")};
    EXPECT_DOUBLE_EQ(evaluate_run(one, "translation").chrf1, 100.0);
    std::vector<EvalRecord> two{score_record("a", "same", "same"), score_record("b", "abc", "xyz")};
    const auto s = evaluate_run(two, "translation");
    EXPECT_DOUBLE_EQ(s.chrf1, 50.0);
    EXPECT_EQ(s.count, 2u);
    EXPECT_THROW(evaluate_run(std::vector<EvalRecord>{}, "x"), ParameterError);
}

TEST(EvaluateRun, MatchesSummation) {
    Rng rng(2);
    std::vector<EvalRecord> recs;
    double c = 0.0, f = 0.0;
    for (int i = 0; i < 10; ++i) {
        EvalRecord r;
        r.chrf1 = 100.0 * rng.uniform();
        r.token_f1 = rng.uniform();
        c += r.chrf1;
        f += r.token_f1;
        recs.push_back(r);
    }
    const auto s = evaluate_run(recs, "multilingual-qa");
    EXPECT_NEAR(s.chrf1, c / 10.0, 1e-12);
    EXPECT_NEAR(s.token_f1, f / 10.0, 1e-12);
    EXPECT_EQ(s.task, "multilingual-qa");
}
