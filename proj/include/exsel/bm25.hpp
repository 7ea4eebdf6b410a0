#pragma once

#include "exsel/corpus.hpp"
#include "exsel/error.hpp"
#include "exsel/text.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

namespace exsel {

struct Posting {
    std::size_t doc;
    std::uint32_t freq;

    friend bool operator==(const Posting&, const Posting&) = default;
};

struct Bm25Params {
    double k1 = 1.2;
    double b = 0.75;
};

/// Inverted index over the bank-side text of each example.
class InvertedIndex {
  public:
    std::size_t num_docs() const { return doc_lengths_.size(); }
    double avg_doc_length() const { return avg_length_; }
    std::size_t doc_length(std::size_t doc) const { return doc_lengths_[doc]; }
    const std::string& doc_id(std::size_t doc) const { return doc_ids_[doc]; }

    /// Postings sorted by doc index, or an empty span for unknown terms.
    std::span<const Posting> postings(const std::string& term) const {
        auto it = postings_.find(term);
        if (it == postings_.end()) return {};
        return it->second;
    }

    std::size_t vocabulary_size() const { return postings_.size(); }

    /// Robertson-Sparck Jones IDF, shifted so it is never negative.
    double idf(std::size_t df) const {
        const double n = static_cast<double>(num_docs());
        const double f = static_cast<double>(df);
        return std::log((n - f + 0.5) / (f + 0.5) + 1.0);
    }

    friend InvertedIndex build_index(const ExampleBank& bank);

  private:
    std::unordered_map<std::string, std::vector<Posting>> postings_;
    std::vector<std::size_t> doc_lengths_;
    std::vector<std::string> doc_ids_;
    double avg_length_ = 0.0;
};

inline InvertedIndex build_index(const ExampleBank& bank) {
    if (bank.empty()) throw EmptyInputError("build_index: bank \"" + bank.language + "\" is empty");
    InvertedIndex index;
    index.doc_lengths_.reserve(bank.size());
    std::size_t total = 0;
    for (std::size_t doc = 0; doc < bank.size(); ++doc) {
        const auto tokens = text::tokenize(bank.examples[doc].bank_side_text());
        std::map<std::string, std::uint32_t> counts;
        for (const auto& t : tokens) ++counts[t];
        for (auto& [term, freq] : counts) index.postings_[term].push_back({doc, freq});
        index.doc_lengths_.push_back(tokens.size());
        index.doc_ids_.push_back(bank.examples[doc].id);
        total += tokens.size();
    }
    index.avg_length_ = static_cast<double>(total) / static_cast<double>(bank.size());
    return index;
}

struct Candidate {
    std::size_t index;
    double score;
};

struct CandidateSet {
    std::string owner;
    std::vector<Candidate> candidates;
    std::size_t capacity = 0;

    std::size_t size() const { return candidates.size(); }
};

/// BM25 scores of every indexed document for a query token multiset.
inline std::vector<double> bm25_scores(const InvertedIndex& index, const std::vector<std::string>& query_tokens,
                                       const Bm25Params& params = {}) {
    std::vector<double> scores(index.num_docs(), 0.0);
    std::map<std::string, std::uint32_t> query_counts;
    for (const auto& t : query_tokens) ++query_counts[t];
    const double avg = index.avg_doc_length() > 0.0 ? index.avg_doc_length() : 1.0;
    for (const auto& [term, qf] : query_counts) {
        const auto postings = index.postings(term);
        if (postings.empty()) continue;
        const double idf = index.idf(postings.size());
        for (const auto& p : postings) {
            const double f = p.freq;
            const double norm = 1.0 - params.b + params.b * static_cast<double>(index.doc_length(p.doc)) / avg;
            scores[p.doc] += qf * idf * f * (params.k1 + 1.0) / (f + params.k1 * norm);
        }
    }
    return scores;
}

namespace detail {

inline CandidateSet top_candidates(const std::vector<double>& scores, const InvertedIndex* index,
                                   const std::vector<std::string>* ids, const std::string& owner, std::size_t F,
                                   bool drop_nonpositive) {
    CandidateSet set;
    set.owner = owner;
    set.capacity = F;
    std::vector<Candidate> all;
    for (std::size_t doc = 0; doc < scores.size(); ++doc) {
        const std::string& id = index ? index->doc_id(doc) : (*ids)[doc];
        if (id == owner) continue;
        if (drop_nonpositive && !(scores[doc] > 0.0)) continue;
        all.push_back({doc, scores[doc]});
    }
    const std::size_t keep = std::min(F, all.size());
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(keep), all.end(),
                      [](const Candidate& a, const Candidate& b) {
                          return a.score > b.score || (a.score == b.score && a.index < b.index);
                      });
    all.resize(keep);
    set.candidates = std::move(all);
    return set;
}

}  // namespace detail

/// Top-F documents by BM25 against the sample's bank-side text. The document
/// sharing the sample's id is excluded; zero-score documents are dropped.
inline CandidateSet mine_candidates(const InvertedIndex& index, const Example& sample, std::size_t F,
                                    const Bm25Params& params = {}) {
    if (F < 1) throw ParameterError("mine_candidates: F must be at least 1");
    const auto scores = bm25_scores(index, text::tokenize(sample.bank_side_text()), params);
    return detail::top_candidates(scores, &index, nullptr, sample.id, F, true);
}

/// Fallback miner ranking the pool by cosine of base embeddings to `query`.
inline CandidateSet mine_candidates_by_embedding(const ExampleBank& pool, const Example& sample, const Vector& query,
                                                 std::size_t F) {
    if (F < 1) throw ParameterError("mine_candidates_by_embedding: F must be at least 1");
    if (!pool.has_embeddings()) throw ShapeError("mine_candidates_by_embedding: pool has no embeddings");
    std::vector<double> scores(pool.size());
    std::vector<std::string> ids(pool.size());
    for (std::size_t i = 0; i < pool.size(); ++i) {
        scores[i] = cosine_similarity(pool.bank_row(i), query);
        ids[i] = pool.examples[i].id;
    }
    return detail::top_candidates(scores, nullptr, &ids, sample.id, F, false);
}

}  // namespace exsel
