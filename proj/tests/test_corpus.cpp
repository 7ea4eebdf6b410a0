#include "support.hpp"

#include <gtest/gtest.h>

#include <limits>

using namespace exsel;
using support::temp_dir;
using support::write_text;

namespace {

const char* kTwoLines =
    "{\"id\":\"e1\",\"input\":\"x one\",\"output\":\"y one\",\"lang\":\"hi\"}\n"
    "{\"id\":\"e2\",\"input\":\"x two\",\"output\":\"y two\",\"lang\":\"hi\"}\n";

std::string emb_bytes(const RowMatrix& m) { return encode_embeddings(m); }

}  // namespace

TEST(Ingest, PreservesFileOrder) {
    const auto dir = temp_dir("ingest-order");
    write_text(dir / "hi.jsonl", kTwoLines);
    const ExampleBank bank = ingest_bank((dir / "hi.jsonl").string(), "hi");
    ASSERT_EQ(bank.size(), 2u);
    EXPECT_EQ(bank.examples[0].id, "e1");
    EXPECT_EQ(bank.examples[1].id, "e2");
    EXPECT_EQ(bank.examples[1].output_text, "y two");
    EXPECT_FALSE(bank.has_embeddings());
}

TEST(Ingest, IsIdempotent) {
    const auto dir = temp_dir("ingest-idem");
    write_text(dir / "hi.jsonl", kTwoLines);
    const auto a = ingest_bank((dir / "hi.jsonl").string(), "hi");
    const auto b = ingest_bank((dir / "hi.jsonl").string(), "hi");
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a.examples[i].id, b.examples[i].id);
        EXPECT_EQ(a.examples[i].input_text, b.examples[i].input_text);
        EXPECT_EQ(a.examples[i].output_text, b.examples[i].output_text);
    }
}

TEST(Ingest, DuplicateIdIsRejectedByName) {
    const auto dir = temp_dir("ingest-dup");
    write_text(dir / "hi.jsonl",
               "{\"id\":\"e1\",\"input\":\"a\",\"output\":\"b\",\"lang\":\"hi\"}\n"
               "{\"id\":\"e1\",\"input\":\"c\",\"output\":\"d\",\"lang\":\"hi\"}\n");
    try {
        ingest_bank((dir / "hi.jsonl").string(), "hi");
        FAIL() << "expected a validation error";
    } catch (const ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("\"e1\""), std::string::npos) << e.what();
    }
}

TEST(Ingest, EmptyFileGivesEmptyBank) {
    const auto dir = temp_dir("ingest-empty");
    write_text(dir / "hi.jsonl", "");
    const auto bank = ingest_bank((dir / "hi.jsonl").string(), "hi");
    EXPECT_TRUE(bank.empty());
}

TEST(Ingest, MalformedLineNamesLineNumber) {
    const auto dir = temp_dir("ingest-bad");
    write_text(dir / "hi.jsonl", std::string(kTwoLines) + "{not json\n");
    try {
        ingest_bank((dir / "hi.jsonl").string(), "hi");
        FAIL() << "expected a parse error";
    } catch (const ParseError& e) {
        EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
    }
}

TEST(Ingest, MissingFieldAndWrongLanguage) {
    const auto dir = temp_dir("ingest-fields");
    write_text(dir / "a.jsonl", "{\"id\":\"e1\",\"input\":\"a\",\"lang\":\"hi\"}\n");
    EXPECT_THROW(ingest_bank((dir / "a.jsonl").string(), "hi"), ParseError);
    write_text(dir / "b.jsonl", "{\"id\":\"e1\",\"input\":\"a\",\"output\":\"b\",\"lang\":\"bn\"}\n");
    EXPECT_THROW(ingest_bank((dir / "b.jsonl").string(), "hi"), ValidationError);
    write_text(dir / "c.jsonl", "{\"id\":\"e1\",\"input\":\"\",\"output\":\"b\",\"lang\":\"hi\"}\n");
    EXPECT_THROW(ingest_bank((dir / "c.jsonl").string(), "hi"), ValidationError);
    EXPECT_THROW(ingest_bank((dir / "missing.jsonl").string(), "hi"), ParseError);
}

TEST(Ingest, QueryFilesMayOmitOutput) {
    const auto dir = temp_dir("ingest-queries");
    write_text(dir / "q.jsonl", "{\"id\":\"q1\",\"input\":\"a\",\"lang\":\"hi\"}\n");
    const auto q = read_examples((dir / "q.jsonl").string(), false);
    ASSERT_EQ(q.size(), 1u);
    EXPECT_EQ(q[0].output_text, "");
}

TEST(Ingest, WriteExamplesRoundTrips) {
    const auto dir = temp_dir("ingest-write");
    std::vector<Example> ex{support::make_example("a", "नमस्ते \"x\"", "line\nbreak", "hi"),
                            support::make_example("b", "in", "out", "hi")};
    write_examples((dir / "w.jsonl").string(), ex);
    const auto back = read_examples((dir / "w.jsonl").string(), true);
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(back[0].input_text, ex[0].input_text);
    EXPECT_EQ(back[0].output_text, ex[0].output_text);
}

TEST(Embeddings, AttachHappyPath) {
    const auto dir = temp_dir("emb-ok");
    write_text(dir / "hi.jsonl",
               std::string(kTwoLines) + "{\"id\":\"e3\",\"input\":\"x3\",\"output\":\"y3\",\"lang\":\"hi\"}\n");
    RowMatrix m(3, 4);
    m << 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12;
    write_text(dir / "hi.emb", emb_bytes(m));
    const auto bank = attach_embeddings(ingest_bank((dir / "hi.jsonl").string(), "hi"), (dir / "hi.emb").string());
    ASSERT_EQ(bank.base_embeddings.rows(), 3);
    ASSERT_EQ(bank.dim(), 4);
    EXPECT_EQ(bank.base_embeddings(2, 3), 12.0);  // stored as-is, not normalized
}

TEST(Embeddings, RowCountMismatch) {
    ExampleBank bank;
    bank.language = "hi";
    for (int i = 0; i < 3; ++i) bank.examples.push_back(support::make_example("e" + std::to_string(i), "a", "b", "hi"));
    try {
        attach_embeddings(bank, RowMatrix::Ones(2, 4));
        FAIL() << "expected a shape error";
    } catch (const ShapeError& e) {
        EXPECT_NE(std::string(e.what()).find("expected 3 rows, found 2"), std::string::npos) << e.what();
    }
}

TEST(Embeddings, NanNamesRow) {
    ExampleBank bank;
    bank.language = "hi";
    for (int i = 0; i < 3; ++i) bank.examples.push_back(support::make_example("e" + std::to_string(i), "a", "b", "hi"));
    RowMatrix m = RowMatrix::Ones(3, 4);
    m(1, 2) = std::numeric_limits<double>::quiet_NaN();
    try {
        attach_embeddings(bank, m);
        FAIL() << "expected a data error";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("row 1"), std::string::npos) << e.what();
    }
    // the same through the file format
    const auto dir = temp_dir("emb-nan");
    write_text(dir / "n.emb", emb_bytes(m));
    EXPECT_THROW(read_embeddings((dir / "n.emb").string()), DataError);
}

TEST(Embeddings, FileFormatLayout) {
    RowMatrix m(2, 3);
    m << 1.5, -2, 0, 3, 4.25, -1;
    const std::string bytes = encode_embeddings(m);
    ASSERT_EQ(bytes.size(), 4u + 16u + 6u * 4u);
    EXPECT_EQ(bytes.substr(0, 4), "EMB1");
    EXPECT_EQ(detail::load_le<std::uint64_t>(bytes.data() + 4), 2u);
    EXPECT_EQ(detail::load_le<std::uint64_t>(bytes.data() + 12), 3u);
    EXPECT_EQ(detail::load_le<float>(bytes.data() + 20 + 4 * 4), 4.25f);  // row 1, col 1
    const RowMatrix back = decode_embeddings(bytes);
    EXPECT_EQ(back, m);
}

TEST(Embeddings, CorruptFiles) {
    EXPECT_THROW(decode_embeddings("EMB2" + std::string(16, '\0')), ParseError);
    EXPECT_THROW(decode_embeddings("EMB1"), ParseError);
    std::string truncated = encode_embeddings(RowMatrix::Ones(2, 2));
    truncated.pop_back();
    EXPECT_THROW(decode_embeddings(truncated), ShapeError);
}

TEST(Embeddings, QueryRowsFallBackToBankRows) {
    exsel::Rng rng(1);
    ExampleBank bank = support::random_bank(rng, 4, 3);
    EXPECT_EQ(bank.query_row(2), bank.bank_row(2));
    const RowMatrix q = support::random_rows(rng, 4, 3);
    bank = attach_query_embeddings(std::move(bank), q);
    EXPECT_EQ(bank.query_row(2), Vector(q.row(2).transpose()));
    EXPECT_THROW(attach_query_embeddings(bank, RowMatrix::Ones(4, 2)), ShapeError);
}

TEST(MeanEmbedding, Examples) {
    ExampleBank bank;
    bank.language = "xx";
    bank.examples = {support::make_example("a", "a", "a"), support::make_example("b", "b", "b")};
    bank.base_embeddings = RowMatrix(2, 2);
    bank.base_embeddings << 1, 0, 0, 1;
    EXPECT_EQ(bank_mean_embedding(bank), Vector::Constant(2, 0.5));

    ExampleBank one;
    one.examples = {support::make_example("a", "a", "a")};
    one.base_embeddings = RowMatrix(1, 2);
    one.base_embeddings << 2, 3;
    EXPECT_EQ(bank_mean_embedding(one), Vector(one.base_embeddings.row(0).transpose()));

    EXPECT_THROW(bank_mean_embedding(ExampleBank{}), EmptyInputError);
}

TEST(MeanEmbedding, MatchesSummation) {
    exsel::Rng rng(2);
    const ExampleBank bank = support::random_bank(rng, 100, 7);
    Vector sum = Vector::Zero(7);
    for (std::size_t i = 0; i < 100; ++i) sum += bank.bank_row(i);
    EXPECT_LT((bank_mean_embedding(bank) - sum / 100.0).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(MeanEmbedding, ConstantRowsExact) {
    exsel::Rng rng(3);
    ExampleBank bank = support::random_bank(rng, 9, 5);
    const Vector w = support::random_vector(rng, 5);
    for (Eigen::Index i = 0; i < 9; ++i) bank.base_embeddings.row(i) = w.transpose();
    const Vector mean = bank_mean_embedding(bank);
    for (Eigen::Index j = 0; j < 5; ++j) EXPECT_NEAR(mean[j], w[j], 4 * std::numeric_limits<double>::epsilon() * std::abs(w[j]));
}

TEST(Cosine, Examples) {
    Vector a(2), b(2);
    a << 3, 4;
    EXPECT_NEAR(cosine_similarity(a, a), 1.0, 1e-15);
    a << 1, 0;
    b << 0, 1;
    EXPECT_EQ(cosine_similarity(a, b), 0.0);
    Vector u(3), v(3);
    u << 1, 2, 2;
    v << 2, 1, 2;
    EXPECT_NEAR(cosine_similarity(u, v), 8.0 / 9.0, 1e-15);
    EXPECT_THROW(cosine_similarity(Vector::Zero(3), v), DegenerateError);
    EXPECT_THROW(cosine_similarity(a, v), ShapeError);
}

TEST(Cosine, SymmetricAndScaleInvariant) {
    exsel::Rng rng(4);
    for (int t = 0; t < 200; ++t) {
        const Vector u = support::random_vector(rng, 6);
        const Vector v = support::random_vector(rng, 6);
        const double alpha = 0.01 + 10 * rng.uniform();
        const double beta = 0.01 + 10 * rng.uniform();
        const double c = cosine_similarity(u, v);
        EXPECT_EQ(c, cosine_similarity(v, u));
        EXPECT_NEAR(c, cosine_similarity(alpha * u, beta * v), 1e-12);
        EXPECT_LE(std::abs(c), 1.0);
    }
}

TEST(MergeBanks, ConcatenatesAndRejectsIdClash) {
    exsel::Rng rng(5);
    const auto a = support::random_bank(rng, 3, 4, "aa");
    const auto b = support::random_bank(rng, 2, 4, "bb");
    const auto m = merge_banks({&a, &b});
    ASSERT_EQ(m.size(), 5u);
    EXPECT_EQ(m.examples[3].id, b.examples[0].id);
    EXPECT_EQ(m.bank_row(4), b.bank_row(1));
    EXPECT_THROW(merge_banks({&a, &a}), ValidationError);
    const auto c = support::random_bank(rng, 2, 5, "cc");
    EXPECT_THROW(merge_banks({&a, &c}), ShapeError);
}

TEST(Tokenize, UnicodeWordsCaseFolded) {
    EXPECT_EQ(text::tokenize("Hello, WORLD! hello"), (std::vector<std::string>{"hello", "world", "hello"}));
    EXPECT_EQ(text::tokenize("मेरा नाम।राम"), (std::vector<std::string>{"मेरा", "नाम", "राम"}));
    EXPECT_EQ(text::tokenize("ΑΒΓ Привет"), (std::vector<std::string>{"αβγ", "привет"}));
    EXPECT_TRUE(text::tokenize("  ,.;  ").empty());
}

TEST(Hashing, DeriveSeedSeparatesStreams) {
    EXPECT_NE(derive_seed(1, 1, 7), derive_seed(1, 2, 7));
    EXPECT_NE(derive_seed(1, 1, 7), derive_seed(2, 1, 7));
    EXPECT_NE(derive_seed(1, 1, 7), derive_seed(1, 1, 8));
    EXPECT_EQ(derive_seed(9, 3, 4), derive_seed(9, 3, 4));
    EXPECT_EQ(hex64(0xabcULL), "0000000000000abc");
}

TEST(Hashing, SampleWithoutReplacementIsDistinct) {
    exsel::Rng rng(6);
    for (int t = 0; t < 50; ++t) {
        auto s = rng.sample_without_replacement(10, 4);
        ASSERT_EQ(s.size(), 4u);
        std::sort(s.begin(), s.end());
        EXPECT_EQ(std::adjacent_find(s.begin(), s.end()), s.end());
        EXPECT_LT(s.back(), 10u);
    }
}
