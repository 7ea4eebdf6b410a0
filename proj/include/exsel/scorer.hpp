#pragma once

#include "exsel/corpus.hpp"
#include "exsel/error.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

namespace exsel {

struct ScoreRequest {
    std::string prompt_text;        // one rendered demonstration followed by the sample input
    std::string continuation_text;  // the sample's gold output
};

struct ScoredCandidate {
    std::size_t index;
    double logprob;
};

/// Demonstration block used when scoring a candidate a for a sample (x, y).
inline std::string scoring_demo_block(const Example& demo) { return demo.input_text + "\n" + demo.output_text + "\n"; }

/// Builds the request for log p(y | a, x) with exactly one demonstration.
inline ScoreRequest make_score_request(const Example& demo, const Example& sample) {
    if (sample.output_text.empty()) throw ValidationError("score request: sample \"" + sample.id + "\" has no output");
    return {scoring_demo_block(demo) + sample.input_text, sample.output_text};
}

/// Language-model backend. Implementations must tolerate concurrent calls.
class Scorer {
  public:
    virtual ~Scorer() = default;

    /// Sum of continuation-token log-probabilities given the prompt.
    virtual double score(const ScoreRequest& request) const = 0;

    /// Greedy continuation of `prompt`.
    virtual std::string generate(const std::string& prompt, int max_tokens = 64) const = 0;

    /// Scores all requests with at most `max_in_flight` concurrent calls.
    /// Results are returned in request order.
    std::vector<double> score_batch(const std::vector<ScoreRequest>& requests, std::size_t max_in_flight = 1) const {
        std::vector<double> out(requests.size());
        if (max_in_flight <= 1 || requests.size() <= 1) {
            for (std::size_t i = 0; i < requests.size(); ++i) out[i] = checked(score(requests[i]));
            return out;
        }
        std::atomic<std::size_t> next{0};
        std::exception_ptr failure;
        std::mutex failure_mutex;
        auto worker = [&] {
            for (std::size_t i = next++; i < requests.size(); i = next++) {
                try {
                    out[i] = checked(score(requests[i]));
                } catch (...) {
                    std::lock_guard lock(failure_mutex);
                    if (!failure) failure = std::current_exception();
                    next = requests.size();
                }
            }
        };
        {
            std::vector<std::jthread> pool;
            const std::size_t n = std::min(max_in_flight, requests.size());
            for (std::size_t t = 0; t < n; ++t) pool.emplace_back(worker);
        }
        if (failure) std::rethrow_exception(failure);
        return out;
    }

  private:
    static double checked(double v) {
        if (!std::isfinite(v)) throw ProtocolError("scorer returned a non-finite log-probability");
        return v;
    }
};

/// Index of the highest log-probability; the lowest index wins ties.
inline std::size_t best_candidate(const std::vector<ScoredCandidate>& scored) {
    if (scored.empty()) throw EmptyInputError("best_candidate: no candidates");
    const ScoredCandidate* best = &scored.front();
    for (const auto& c : scored) {
        if (c.logprob > best->logprob || (c.logprob == best->logprob && c.index < best->index)) best = &c;
    }
    return best->index;
}

/// Deterministic offline stand-in for a language model.
///
/// score(y | a, x) = -|e(a) - e(x, y)|^2 where e is the unit-normalized
/// bank-side base embedding of the registered example. The request is
/// resolved back to examples by text: the continuation plus the trailing
/// input identify the sample, the remaining prefix identifies the
/// demonstration. Unresolvable requests raise ProtocolError.
///
/// generate() returns the gold output of the registered example whose
/// embedding is nearest (by cosine) to the query found at the end of the
/// prompt.
class OracleScorer : public Scorer {
  public:
    OracleScorer() = default;

    explicit OracleScorer(const std::vector<const ExampleBank*>& banks) {
        for (const auto* b : banks) add_bank(*b);
    }

    void add_bank(const ExampleBank& bank) {
        if (!bank.has_embeddings() && !bank.empty()) throw ShapeError("oracle scorer: bank without embeddings");
        for (std::size_t i = 0; i < bank.size(); ++i) {
            const Example& ex = bank.examples[i];
            Vector e = bank.bank_row(i);
            const double n = e.norm();
            if (n == 0.0) throw DegenerateError("oracle scorer: zero embedding for \"" + ex.id + "\"");
            e /= n;
            const std::size_t slot = entries_.size();
            entries_.push_back({ex, std::move(e), bank.query_row(i)});
            demo_lookup_.try_emplace(scoring_demo_block(ex), slot);
            by_output_[ex.output_text].push_back(slot);
            by_input_.try_emplace(ex.input_text, slot);
        }
    }

    /// Registers query-only inputs (no gold output) so generate() can find them.
    void add_queries(const std::vector<Example>& queries, const RowMatrix& query_embeddings) {
        check_embedding_rows(query_embeddings, queries.size());
        for (std::size_t i = 0; i < queries.size(); ++i) {
            extra_queries_.try_emplace(queries[i].input_text,
                                       query_embeddings.row(static_cast<Eigen::Index>(i)).transpose());
        }
    }

    double score(const ScoreRequest& request) const override {
        auto it = by_output_.find(request.continuation_text);
        if (it != by_output_.end()) {
            for (std::size_t slot : it->second) {
                const std::string& x = entries_[slot].example.input_text;
                const std::string& p = request.prompt_text;
                if (p.size() < x.size() || p.compare(p.size() - x.size(), x.size(), x) != 0) continue;
                auto demo = demo_lookup_.find(p.substr(0, p.size() - x.size()));
                if (demo == demo_lookup_.end()) continue;
                return -(entries_[demo->second].unit - entries_[slot].unit).squaredNorm();
            }
        }
        throw ProtocolError("oracle scorer: request does not match any registered (demonstration, sample) pair");
    }

    std::string generate(const std::string& prompt, int /*max_tokens*/ = 64) const override {
        const Vector* query = nullptr;
        std::size_t best_pos = 0;
        std::size_t best_len = 0;
        auto consider = [&](const std::string& input, const Vector& emb) {
            const auto pos = prompt.rfind(input);
            if (pos == std::string::npos) return;
            if (!query || pos > best_pos || (pos == best_pos && input.size() > best_len)) {
                query = &emb;
                best_pos = pos;
                best_len = input.size();
            }
        };
        for (const auto& [input, slot] : by_input_) consider(input, entries_[slot].query);
        for (const auto& [input, emb] : extra_queries_) consider(input, emb);
        if (!query || entries_.empty()) throw ProtocolError("oracle scorer: prompt does not contain a known query");
        std::size_t nearest = 0;
        double best = -2.0;
        for (std::size_t s = 0; s < entries_.size(); ++s) {
            const double c = cosine_similarity(entries_[s].unit, *query);
            if (c > best) {
                best = c;
                nearest = s;
            }
        }
        return entries_[nearest].example.output_text;
    }

  private:
    struct Entry {
        Example example;
        Vector unit;   // normalized bank-side embedding
        Vector query;  // query-side embedding
    };
    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::size_t> demo_lookup_;
    std::unordered_map<std::string, std::vector<std::size_t>> by_output_;
    std::unordered_map<std::string, std::size_t> by_input_;
    std::unordered_map<std::string, Vector> extra_queries_;
};

}  // namespace exsel
