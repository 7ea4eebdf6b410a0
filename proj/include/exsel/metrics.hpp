#pragma once

#include "exsel/error.hpp"
#include "exsel/text.hpp"

#include <algorithm>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace exsel {

namespace detail {

inline std::map<std::u32string, int> char_ngrams(const std::u32string& s, std::size_t n) {
    std::map<std::u32string, int> out;
    if (s.size() < n) return out;
    for (std::size_t i = 0; i + n <= s.size(); ++i) ++out[s.substr(i, n)];
    return out;
}

}  // namespace detail

/// Character n-gram F1 (orders 1-6, whitespace removed, case-sensitive).
/// Precision and recall are averaged over the orders for which both sides
/// have n-grams, then combined. Returns a value in [0, 100].
inline double chrf1(const std::string& hypothesis, const std::string& reference, std::size_t max_order = 6) {
    auto strip = [](const std::string& s) {
        std::u32string out;
        for (char32_t c : text::decode_utf8(s))
            if (!text::is_space(c)) out.push_back(c);
        return out;
    };
    const std::u32string hyp = strip(hypothesis);
    const std::u32string ref = strip(reference);
    double sum_p = 0.0;
    double sum_r = 0.0;
    std::size_t effective = 0;
    for (std::size_t n = 1; n <= max_order; ++n) {
        if (hyp.size() < n || ref.size() < n) continue;
        const auto h = detail::char_ngrams(hyp, n);
        const auto r = detail::char_ngrams(ref, n);
        double match = 0.0;
        for (const auto& [gram, count] : h) {
            auto it = r.find(gram);
            if (it != r.end()) match += std::min(count, it->second);
        }
        sum_p += match / static_cast<double>(hyp.size() - n + 1);
        sum_r += match / static_cast<double>(ref.size() - n + 1);
        ++effective;
    }
    if (effective == 0) return 0.0;
    const double p = sum_p / static_cast<double>(effective);
    const double r = sum_r / static_cast<double>(effective);
    if (p + r == 0.0) return 0.0;
    return 100.0 * 2.0 * p * r / (p + r);
}

/// Lower-cased whitespace tokens with punctuation characters deleted
/// ("didn't" becomes "didnt").
inline std::vector<std::string> answer_tokens(const std::string& s) {
    std::vector<std::string> tokens;
    std::string current;
    for (char32_t c : text::decode_utf8(s)) {
        if (text::is_space(c)) {
            if (!current.empty()) tokens.push_back(std::move(current));
            current.clear();
        } else if (!text::is_punct(c)) {
            text::append_utf8(current, text::fold_case(c));
        }
    }
    if (!current.empty()) tokens.push_back(std::move(current));
    return tokens;
}

/// Bag-of-tokens F1 in [0, 1]. Two empty answers agree perfectly.
inline double token_f1(const std::string& hypothesis, const std::string& reference) {
    const auto h = answer_tokens(hypothesis);
    const auto r = answer_tokens(reference);
    if (h.empty() && r.empty()) return 1.0;
    if (h.empty() || r.empty()) return 0.0;
    std::map<std::string, int> ref_counts;
    for (const auto& t : r) ++ref_counts[t];
    int same = 0;
    for (const auto& t : h) {
        auto it = ref_counts.find(t);
        if (it != ref_counts.end() && it->second > 0) {
            --it->second;
            ++same;
        }
    }
    if (same == 0) return 0.0;
    const double p = static_cast<double>(same) / static_cast<double>(h.size());
    const double rc = static_cast<double>(same) / static_cast<double>(r.size());
    return 2.0 * p * rc / (p + rc);
}

struct EvalRecord {
    std::string query_id;
    std::string hypothesis;
    std::string reference;
    double chrf1 = 0.0;
    double token_f1 = 0.0;
};

inline EvalRecord score_record(std::string query_id, std::string hypothesis, std::string reference) {
    EvalRecord r{std::move(query_id), std::move(hypothesis), std::move(reference), 0.0, 0.0};
    r.chrf1 = exsel::chrf1(r.hypothesis, r.reference);
    r.token_f1 = exsel::token_f1(r.hypothesis, r.reference);
    return r;
}

struct EvalSummary {
    std::string task;
    std::size_t count = 0;
    double chrf1 = 0.0;
    double token_f1 = 0.0;
};

inline EvalSummary evaluate_run(std::span<const EvalRecord> records, std::string task) {
    if (records.empty()) throw ParameterError("evaluate_run: no records");
    EvalSummary s;
    s.task = std::move(task);
    for (const auto& r : records) {
        s.chrf1 += r.chrf1;
        s.token_f1 += r.token_f1;
    }
    s.count = records.size();
    s.chrf1 /= static_cast<double>(s.count);
    s.token_f1 /= static_cast<double>(s.count);
    return s;
}

}  // namespace exsel
