#pragma once

#include "exsel/bm25.hpp"
#include "exsel/common.hpp"
#include "exsel/corpus.hpp"
#include "exsel/error.hpp"
#include "exsel/scorer.hpp"

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace exsel {

/// Trainable embedding map: x -> normalize(W x) over frozen base embeddings.
struct RetrieverParams {
    Matrix projection;
    std::uint64_t version = 0;

    static RetrieverParams identity(Eigen::Index dim) { return {Matrix::Identity(dim, dim), 0}; }

    Eigen::Index dim() const { return projection.rows(); }

    void validate() const {
        if (projection.rows() != projection.cols()) throw ShapeError("retriever projection is not square");
        if (!projection.allFinite()) throw DataError("retriever projection has non-finite entries");
    }
};

inline constexpr double kMinProjectedNorm = 1e-12;

/// Unit-norm projection of one base embedding.
inline Vector embed(const RetrieverParams& params, const Vector& base) {
    if (base.size() != params.dim()) {
        throw ShapeError("embed: base dimension " + std::to_string(base.size()) + ", retriever dimension " +
                         std::to_string(params.dim()));
    }
    Vector u = params.projection * base;
    const double n = u.norm();
    if (!(n >= kMinProjectedNorm)) throw DegenerateError("embed: projected vector has norm " + std::to_string(n));
    return u / n;
}

/// Embeds every row of `bases` (one example per row).
inline RowMatrix embed_rows(const RetrieverParams& params, const RowMatrix& bases) {
    if (bases.cols() != params.dim()) throw ShapeError("embed_rows: dimension mismatch");
    RowMatrix out = bases * params.projection.transpose();
    for (Eigen::Index r = 0; r < out.rows(); ++r) {
        const double n = out.row(r).norm();
        if (!(n >= kMinProjectedNorm)) {
            throw DegenerateError("embed: projected row " + std::to_string(r) + " has norm " + std::to_string(n));
        }
        out.row(r) /= n;
    }
    return out;
}

namespace detail {

/// Forward state of normalize(W b), kept for the backward pass.
struct Projected {
    Vector unit;
    double norm;
};

inline Projected project(const Matrix& W, const Vector& base) {
    Vector u = W * base;
    const double n = u.norm();
    if (!(n >= kMinProjectedNorm)) throw DegenerateError("embed: projected vector has norm " + std::to_string(n));
    return {u / n, n};
}

/// Accumulates dL/dW given dL/d(unit) for unit = W b / |W b|.
inline void backprop_projection(Matrix& grad, const Projected& p, const Vector& base, const Vector& grad_unit) {
    const Vector g = (grad_unit - p.unit * p.unit.dot(grad_unit)) / p.norm;
    grad.noalias() += g * base.transpose();
}

}  // namespace detail

/// One training sample for the relevance loss: the query-side embedding of
/// the sample, the bank-side embeddings of its mined candidates, and the
/// position of the scorer-best candidate within them.
struct RelevanceItem {
    std::size_t sample = 0;
    CandidateSet candidates;
    std::size_t positive = 0;  // position in candidates, not a bank index
    Vector query;
    RowMatrix candidate_embeddings;

    void validate() const {
        if (candidate_embeddings.rows() == 0) throw ValidationError("relevance item has no candidates");
        if (positive >= static_cast<std::size_t>(candidate_embeddings.rows())) {
            throw ValidationError("relevance item: positive outside the candidate set");
        }
        if (candidate_embeddings.cols() != query.size()) throw ShapeError("relevance item: dimension mismatch");
    }
};

using RelevanceBatch = std::vector<RelevanceItem>;

namespace detail {

/// Softmax NLL of one item; adds (1/scale) * dLoss/dW to `grad` if given.
inline double relevance_item(const Matrix& W, const RelevanceItem& item, Matrix* grad, double scale) {
    const auto n = static_cast<std::size_t>(item.candidate_embeddings.rows());
    const Projected qx = project(W, item.query);
    std::vector<Projected> cands;
    cands.reserve(n);
    Vector sims(static_cast<Eigen::Index>(n));
    for (std::size_t j = 0; j < n; ++j) {
        cands.push_back(project(W, item.candidate_embeddings.row(static_cast<Eigen::Index>(j)).transpose()));
        sims[static_cast<Eigen::Index>(j)] = qx.unit.dot(cands.back().unit);
    }
    const double mx = sims.maxCoeff();
    const Vector ex = (sims.array() - mx).exp().matrix();
    const double z = ex.sum();
    const double loss = std::log(z) + mx - sims[static_cast<Eigen::Index>(item.positive)];
    if (grad) {
        Vector gs = ex / z;
        gs[static_cast<Eigen::Index>(item.positive)] -= 1.0;
        gs *= scale;
        Vector g_query = Vector::Zero(W.rows());
        for (std::size_t j = 0; j < n; ++j) {
            const double w = gs[static_cast<Eigen::Index>(j)];
            g_query += w * cands[j].unit;
            backprop_projection(*grad, cands[j], item.candidate_embeddings.row(static_cast<Eigen::Index>(j)).transpose(),
                                w * qx.unit);
        }
        backprop_projection(*grad, qx, item.query, g_query);
    }
    // exact zero when the softmax is degenerate in the positive's favour
    return loss > 0.0 ? loss : 0.0;
}

}  // namespace detail

/// Mean softmax negative log-likelihood of the positives over their candidate sets.
inline double relevance_loss(const RetrieverParams& params, std::span<const RelevanceItem> batch) {
    if (batch.empty()) throw EmptyInputError("relevance_loss: empty batch");
    double total = 0.0;
    for (const auto& item : batch) total += detail::relevance_item(params.projection, item, nullptr, 0.0);
    return total / static_cast<double>(batch.size());
}

/// Loss and its gradient with respect to the projection, in one pass.
inline double relevance_loss_and_grad(const RetrieverParams& params, std::span<const RelevanceItem> batch, Matrix& grad) {
    if (batch.empty()) throw EmptyInputError("relevance_grad: empty batch");
    grad = Matrix::Zero(params.dim(), params.dim());
    const double scale = 1.0 / static_cast<double>(batch.size());
    double total = 0.0;
    for (const auto& item : batch) total += detail::relevance_item(params.projection, item, &grad, scale);
    return total * scale;
}

inline Matrix relevance_grad(const RetrieverParams& params, std::span<const RelevanceItem> batch) {
    Matrix grad;
    relevance_loss_and_grad(params, batch, grad);
    return grad;
}

// ---------------------------------------------------------------------------

struct AdamConfig {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

class Adam {
  public:
    Adam(Eigen::Index dim, AdamConfig config)
        : config_(config), m_(Matrix::Zero(dim, dim)), v_(Matrix::Zero(dim, dim)) {}

    void step(RetrieverParams& params, const Matrix& grad) {
        ++t_;
        m_ = config_.beta1 * m_ + (1.0 - config_.beta1) * grad;
        v_ = config_.beta2 * v_ + (1.0 - config_.beta2) * grad.cwiseProduct(grad);
        const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
        params.projection.array() -=
            config_.learning_rate * (m_.array() / c1) / ((v_.array() / c2).sqrt() + config_.epsilon);
        ++params.version;
    }

    long steps() const { return t_; }

  private:
    AdamConfig config_;
    Matrix m_;
    Matrix v_;
    long t_ = 0;
};

// ---------------------------------------------------------------------------

struct RelevanceConfig {
    std::size_t batch_size = 64;
    std::size_t epochs = 120;
    AdamConfig adam{};
    std::size_t candidates = 50;  // F
    Bm25Params bm25{};
    bool candidates_by_embedding = false;
    std::size_t max_in_flight = 1;  // concurrent scorer calls
    std::uint64_t seed = 0;
};

/// Mines candidates for each query sample from `pool` and labels the
/// scorer-best one. Samples with no candidates are dropped.
inline RelevanceBatch label_samples(const ExampleBank& queries, const ExampleBank& pool, const Scorer& scorer,
                                    const RelevanceConfig& config) {
    if (queries.empty()) throw EmptyInputError("label_samples: bank \"" + queries.language + "\" is empty");
    if (!queries.has_embeddings() || !pool.has_embeddings()) throw ShapeError("label_samples: embeddings not attached");
    if (queries.dim() != pool.dim()) throw ShapeError("label_samples: embedding dimensions differ");

    std::vector<CandidateSet> sets;
    sets.reserve(queries.size());
    if (config.candidates_by_embedding) {
        for (std::size_t i = 0; i < queries.size(); ++i)
            sets.push_back(mine_candidates_by_embedding(pool, queries.examples[i], queries.bank_row(i), config.candidates));
    } else {
        const InvertedIndex index = build_index(pool);
        for (std::size_t i = 0; i < queries.size(); ++i)
            sets.push_back(mine_candidates(index, queries.examples[i], config.candidates, config.bm25));
    }

    std::vector<ScoreRequest> requests;
    for (std::size_t i = 0; i < queries.size(); ++i)
        for (const auto& c : sets[i].candidates) requests.push_back(make_score_request(pool.examples[c.index], queries.examples[i]));
    const std::vector<double> logprobs = scorer.score_batch(requests, config.max_in_flight);

    RelevanceBatch out;
    std::size_t at = 0;
    for (std::size_t i = 0; i < queries.size(); ++i) {
        const auto& set = sets[i];
        if (set.candidates.empty()) continue;
        std::vector<ScoredCandidate> scored;
        for (std::size_t j = 0; j < set.size(); ++j) scored.push_back({j, logprobs[at++]});
        RelevanceItem item;
        item.sample = i;
        item.positive = best_candidate(scored);
        item.query = queries.query_row(i);
        item.candidate_embeddings.resize(static_cast<Eigen::Index>(set.size()), pool.dim());
        for (std::size_t j = 0; j < set.size(); ++j)
            item.candidate_embeddings.row(static_cast<Eigen::Index>(j)) =
                pool.base_embeddings.row(static_cast<Eigen::Index>(set.candidates[j].index));
        item.candidates = set;
        out.push_back(std::move(item));
    }
    return out;
}

struct RelevanceTrainResult {
    RetrieverParams params;
    std::vector<double> loss_trace;  // full-data loss before training, then after each epoch
};

/// Minibatch Adam on precomputed labels, starting from `init`.
inline RelevanceTrainResult train_relevance_on(const RelevanceBatch& labels, RetrieverParams init,
                                               const RelevanceConfig& config) {
    if (labels.empty()) throw EmptyInputError("train_relevance: no labeled samples");
    if (config.batch_size == 0) throw ParameterError("train_relevance: batch size must be positive");
    init.validate();
    for (const auto& item : labels) {
        item.validate();
        if (item.query.size() != init.dim()) throw ShapeError("train_relevance: retriever and data dimensions differ");
    }

    RelevanceTrainResult result{std::move(init), {}};
    result.loss_trace.push_back(relevance_loss(result.params, labels));
    Adam opt(result.params.dim(), config.adam);
    Rng rng(config.seed);
    std::vector<std::size_t> order(labels.size());
    Matrix grad;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        rng.shuffle(order);
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t stop = std::min(order.size(), start + config.batch_size);
            // fixed summation order within the batch keeps runs reproducible
            std::vector<std::size_t> members(order.begin() + static_cast<std::ptrdiff_t>(start),
                                             order.begin() + static_cast<std::ptrdiff_t>(stop));
            std::sort(members.begin(), members.end());
            grad = Matrix::Zero(result.params.dim(), result.params.dim());
            const double scale = 1.0 / static_cast<double>(members.size());
            for (std::size_t m : members) detail::relevance_item(result.params.projection, labels[m], &grad, scale);
            opt.step(result.params, grad);
        }
        result.loss_trace.push_back(relevance_loss(result.params, labels));
    }
    return result;
}

/// Labels the bank against itself and trains from `init`.
inline RetrieverParams train_relevance(const ExampleBank& bank, const Scorer& scorer, const RelevanceConfig& config,
                                       RetrieverParams init) {
    if (bank.empty()) throw EmptyInputError("train_relevance: bank \"" + bank.language + "\" is empty");
    return train_relevance_on(label_samples(bank, bank, scorer, config), std::move(init), config).params;
}

// ---------------------------------------------------------------------------
// RTV1 checkpoints: "RTV1", u64 d, d*d f32 row-major, u64 version.

inline std::string encode_checkpoint(const RetrieverParams& params) {
    params.validate();
    std::string out = "RTV1";
    const auto d = static_cast<std::uint64_t>(params.dim());
    detail::store_le<std::uint64_t>(out, d);
    for (Eigen::Index r = 0; r < params.dim(); ++r)
        for (Eigen::Index c = 0; c < params.dim(); ++c)
            detail::store_le<float>(out, static_cast<float>(params.projection(r, c)));
    detail::store_le<std::uint64_t>(out, params.version);
    return out;
}

inline RetrieverParams decode_checkpoint(const std::string& bytes) {
    if (bytes.size() < 12 || bytes.compare(0, 4, "RTV1") != 0) throw ParseError("checkpoint: bad magic");
    const auto d = detail::load_le<std::uint64_t>(bytes.data() + 4);
    if (d == 0 || d > (1u << 16) || bytes.size() != 12 + d * d * 4 + 8) {
        throw ShapeError("checkpoint: size " + std::to_string(bytes.size()) + " inconsistent with dimension " +
                         std::to_string(d));
    }
    RetrieverParams p;
    p.projection.resize(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
    const char* at = bytes.data() + 12;
    for (std::uint64_t r = 0; r < d; ++r)
        for (std::uint64_t c = 0; c < d; ++c, at += 4)
            p.projection(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = detail::load_le<float>(at);
    p.version = detail::load_le<std::uint64_t>(at);
    p.validate();
    return p;
}

inline void write_checkpoint(const std::string& path, const RetrieverParams& params) {
    detail::write_file(path, encode_checkpoint(params));
}

inline RetrieverParams read_checkpoint(const std::string& path) { return decode_checkpoint(detail::read_file(path)); }

}  // namespace exsel
