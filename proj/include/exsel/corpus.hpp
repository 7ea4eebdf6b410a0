#pragma once

#include "exsel/common.hpp"
#include "exsel/error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

namespace exsel {

struct Example {
    std::string id;
    std::string input_text;
    std::string output_text;
    std::string language;

    /// Text an embedding producer should encode for the bank-side role.
    std::string bank_side_text() const { return input_text + " " + output_text; }
};

/// A language-tagged list of examples with row-aligned base embeddings.
///
/// `base_embeddings` holds the bank-side encoding of each example (input
/// and output concatenated). `query_embeddings` optionally holds the
/// query-side encoding (input only) used when an example of this bank acts
/// as a query during training or validation; when absent the bank-side
/// rows are used for both roles.
struct ExampleBank {
    std::string language;
    std::vector<Example> examples;
    RowMatrix base_embeddings;
    std::optional<RowMatrix> query_embeddings;

    std::size_t size() const { return examples.size(); }
    bool empty() const { return examples.empty(); }
    bool has_embeddings() const {
        return base_embeddings.rows() == static_cast<Eigen::Index>(examples.size()) && base_embeddings.cols() > 0;
    }
    Eigen::Index dim() const { return base_embeddings.cols(); }

    Vector bank_row(std::size_t i) const { return base_embeddings.row(static_cast<Eigen::Index>(i)).transpose(); }
    Vector query_row(std::size_t i) const {
        const auto& m = query_embeddings ? *query_embeddings : base_embeddings;
        return m.row(static_cast<Eigen::Index>(i)).transpose();
    }
};

struct BankCollection {
    ExampleBank target;
    ExampleBank validation;
    std::vector<ExampleBank> auxiliaries;
};

namespace detail {

inline void check_example(const Example& e, std::size_t line) {
    if (e.id.empty()) throw ValidationError("line " + std::to_string(line) + ": empty id");
    if (e.input_text.empty()) throw ValidationError("line " + std::to_string(line) + ": empty input for id \"" + e.id + "\"");
    if (e.language.empty()) throw ValidationError("line " + std::to_string(line) + ": empty language tag for id \"" + e.id + "\"");
}

inline std::string required_string(const nlohmann::json& obj, const char* key, std::size_t line) {
    auto it = obj.find(key);
    if (it == obj.end() || !it->is_string()) {
        throw ParseError("line " + std::to_string(line) + ": missing or non-string field \"" + key + "\"");
    }
    return it->get<std::string>();
}

}  // namespace detail

/// Parses one bank JSONL record; `line` is used in error messages only.
inline Example parse_example_line(const std::string& text, std::size_t line, bool output_required = true) {
    nlohmann::json obj;
    try {
        obj = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError("line " + std::to_string(line) + ": " + e.what());
    }
    if (!obj.is_object()) throw ParseError("line " + std::to_string(line) + ": expected a JSON object");
    Example ex;
    ex.id = detail::required_string(obj, "id", line);
    ex.input_text = detail::required_string(obj, "input", line);
    if (output_required || obj.contains("output")) ex.output_text = detail::required_string(obj, "output", line);
    ex.language = detail::required_string(obj, "lang", line);
    return ex;
}

inline std::vector<Example> read_examples(const std::string& path, bool output_required) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path);
    std::vector<Example> out;
    std::unordered_set<std::string> seen;
    std::string text;
    std::size_t line = 0;
    while (std::getline(in, text)) {
        ++line;
        if (!text.empty() && text.back() == '\r') text.pop_back();
        if (text.find_first_not_of(" \t") == std::string::npos) continue;
        Example ex = parse_example_line(text, line, output_required);
        detail::check_example(ex, line);
        if (!seen.insert(ex.id).second) {
            throw ValidationError("duplicate id \"" + ex.id + "\" at line " + std::to_string(line));
        }
        out.push_back(std::move(ex));
    }
    return out;
}

/// Reads a bank JSONL file. Records whose "lang" differs from `language`
/// are rejected. Examples keep file order; no embeddings are attached.
inline ExampleBank ingest_bank(const std::string& path, const std::string& language) {
    ExampleBank bank;
    bank.language = language;
    bank.examples = read_examples(path, true);
    for (std::size_t i = 0; i < bank.examples.size(); ++i) {
        if (!language.empty() && bank.examples[i].language != language) {
            throw ValidationError("example \"" + bank.examples[i].id + "\" has language \"" +
                                  bank.examples[i].language + "\", expected \"" + language + "\"");
        }
    }
    return bank;
}

/// Writes one JSON object per line in the format read by read_examples.
inline void write_examples(const std::string& path, const std::vector<Example>& examples) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path);
    for (const auto& ex : examples) {
        const nlohmann::json obj = {{"id", ex.id}, {"input", ex.input_text}, {"output", ex.output_text}, {"lang", ex.language}};
        out << obj.dump() << '\n';
    }
    if (!out) throw DataError("write failed: " + path);
}

// ---------------------------------------------------------------------------
// EMB1 embedding files: "EMB1", u64 rows, u64 dim, rows*dim f32, little-endian.

namespace detail {

template <typename T>
T load_le(const char* p) {
    T v;
    std::memcpy(&v, p, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
        auto* b = reinterpret_cast<unsigned char*>(&v);
        for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    }
    return v;
}

template <typename T>
void store_le(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
        for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(buf[i], buf[sizeof(T) - 1 - i]);
    }
    out.append(buf, sizeof(T));
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ParseError("cannot write " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ParseError("short write to " + path);
}

}  // namespace detail

inline std::string encode_embeddings(const RowMatrix& m) {
    std::string out = "EMB1";
    detail::store_le<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
    detail::store_le<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
    out.reserve(out.size() + static_cast<std::size_t>(m.size()) * 4);
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) detail::store_le<float>(out, static_cast<float>(m(r, c)));
    return out;
}

/// Decodes an EMB1 buffer. Values are widened to double; no normalization.
inline RowMatrix decode_embeddings(const std::string& bytes) {
    if (bytes.size() < 20 || bytes.compare(0, 4, "EMB1") != 0) throw ParseError("embedding file: bad magic");
    const auto rows = detail::load_le<std::uint64_t>(bytes.data() + 4);
    const auto dim = detail::load_le<std::uint64_t>(bytes.data() + 12);
    if (dim == 0 && rows > 0) throw ShapeError("embedding file: zero dimension");
    if (rows != 0 && dim > (bytes.size() - 20) / 4 / rows) {
        throw ShapeError("embedding file: header claims " + std::to_string(rows) + "x" + std::to_string(dim) +
                         " but payload holds " + std::to_string((bytes.size() - 20) / 4) + " floats");
    }
    const std::size_t expected = 20 + rows * dim * 4;
    if (bytes.size() != expected) {
        throw ShapeError("embedding file: expected " + std::to_string(expected) + " bytes, found " +
                         std::to_string(bytes.size()));
    }
    RowMatrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(dim));
    const char* p = bytes.data() + 20;
    for (std::uint64_t r = 0; r < rows; ++r) {
        for (std::uint64_t c = 0; c < dim; ++c, p += 4) {
            const float v = detail::load_le<float>(p);
            if (!std::isfinite(v)) {
                throw DataError("embedding file: non-finite value at row " + std::to_string(r) + ", column " +
                                std::to_string(c));
            }
            m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = v;
        }
    }
    return m;
}

inline RowMatrix read_embeddings(const std::string& path) { return decode_embeddings(detail::read_file(path)); }

inline void write_embeddings(const std::string& path, const RowMatrix& m) {
    detail::write_file(path, encode_embeddings(m));
}

inline void check_embedding_rows(const RowMatrix& m, std::size_t expected) {
    if (static_cast<std::size_t>(m.rows()) != expected) {
        throw ShapeError("expected " + std::to_string(expected) + " rows, found " + std::to_string(m.rows()));
    }
}

inline ExampleBank attach_embeddings(ExampleBank bank, RowMatrix embeddings) {
    check_embedding_rows(embeddings, bank.size());
    if (!embeddings.allFinite()) {
        for (Eigen::Index r = 0; r < embeddings.rows(); ++r)
            if (!embeddings.row(r).allFinite()) throw DataError("non-finite embedding value at row " + std::to_string(r));
    }
    bank.base_embeddings = std::move(embeddings);
    return bank;
}

inline ExampleBank attach_embeddings(ExampleBank bank, const std::string& path) {
    return attach_embeddings(std::move(bank), read_embeddings(path));
}

inline ExampleBank attach_query_embeddings(ExampleBank bank, RowMatrix embeddings) {
    check_embedding_rows(embeddings, bank.size());
    if (bank.has_embeddings() && embeddings.cols() != bank.dim()) {
        throw ShapeError("query embeddings have dimension " + std::to_string(embeddings.cols()) +
                         ", bank embeddings have " + std::to_string(bank.dim()));
    }
    bank.query_embeddings = std::move(embeddings);
    return bank;
}

inline Vector bank_mean_embedding(const ExampleBank& bank) {
    if (bank.empty()) throw EmptyInputError("bank \"" + bank.language + "\" is empty");
    if (!bank.has_embeddings()) throw ShapeError("bank \"" + bank.language + "\" has no embeddings attached");
    return bank.base_embeddings.colwise().mean().transpose();
}

inline double cosine_similarity(const Vector& u, const Vector& v) {
    if (u.size() != v.size()) {
        throw ShapeError("cosine_similarity: dimensions " + std::to_string(u.size()) + " and " + std::to_string(v.size()));
    }
    const double nu = u.norm();
    const double nv = v.norm();
    if (nu == 0.0 || nv == 0.0) throw DegenerateError("cosine_similarity: zero-norm vector");
    return std::clamp(u.dot(v) / (nu * nv), -1.0, 1.0);
}

/// Concatenates banks into one pool (target first). Ids must stay unique.
inline ExampleBank merge_banks(const std::vector<const ExampleBank*>& banks, std::string language = "mixed") {
    ExampleBank out;
    out.language = std::move(language);
    Eigen::Index rows = 0;
    Eigen::Index dim = -1;
    bool any_query = false;
    for (const auto* b : banks) {
        if (!b->has_embeddings() && !b->empty()) throw ShapeError("merge_banks: bank \"" + b->language + "\" has no embeddings");
        if (b->empty()) continue;
        if (dim >= 0 && b->dim() != dim) throw ShapeError("merge_banks: embedding dimensions differ");
        dim = b->dim();
        rows += static_cast<Eigen::Index>(b->size());
        any_query = any_query || b->query_embeddings.has_value();
    }
    if (dim < 0) return out;
    out.base_embeddings.resize(rows, dim);
    RowMatrix query(any_query ? rows : 0, dim);
    std::unordered_set<std::string> seen;
    Eigen::Index at = 0;
    for (const auto* b : banks) {
        for (std::size_t i = 0; i < b->size(); ++i, ++at) {
            if (!seen.insert(b->examples[i].id).second) {
                throw ValidationError("merge_banks: id \"" + b->examples[i].id + "\" appears in more than one bank");
            }
            out.examples.push_back(b->examples[i]);
            out.base_embeddings.row(at) = b->base_embeddings.row(static_cast<Eigen::Index>(i));
            if (any_query) query.row(at) = b->query_row(i).transpose();
        }
    }
    if (any_query) out.query_embeddings = std::move(query);
    return out;
}

}  // namespace exsel
