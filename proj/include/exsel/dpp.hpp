#pragma once

#include "exsel/common.hpp"
#include "exsel/corpus.hpp"
#include "exsel/error.hpp"
#include "exsel/retriever.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace exsel {

/// Diagonal jitter added before every Cholesky factorization.
inline constexpr double kDppJitter = 1e-10;

/// Marker returned by log_det for subsets whose kernel is singular even after jitter.
inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// Query-conditioned L-ensemble kernel Z = diag(r) S diag(r), with
/// r_i = exp(lambda <e_i, q>) and S the Gram matrix of unit embeddings.
struct DppKernel {
    Matrix Z;
    Vector relevance;
    Matrix similarity;
    Vector query_similarity;  // <e_i, q>
    std::string query_id;

    std::size_t size() const { return static_cast<std::size_t>(Z.rows()); }
};

inline DppKernel kernel_from_embeddings(const RowMatrix& unit_rows, const Vector& unit_query, double tradeoff,
                                        std::string query_id = {}) {
    if (!(tradeoff > 0.0)) throw ParameterError("build_kernel: trade-off must be positive");
    DppKernel k;
    k.query_id = std::move(query_id);
    k.query_similarity = unit_rows * unit_query;
    k.relevance = (tradeoff * k.query_similarity.array()).exp().matrix();
    k.similarity = unit_rows * unit_rows.transpose();
    k.similarity.diagonal().setOnes();
    k.Z = k.relevance.asDiagonal() * k.similarity * k.relevance.asDiagonal();
    return k;
}

inline DppKernel build_kernel(const RetrieverParams& params, const RowMatrix& bank_embeddings, const Vector& query_base,
                              double tradeoff = 1.0, std::string query_id = {}) {
    return kernel_from_embeddings(embed_rows(params, bank_embeddings), embed(params, query_base), tradeoff,
                                  std::move(query_id));
}

namespace detail {

inline void check_subset(std::size_t n, std::span<const std::size_t> subset) {
    for (std::size_t a = 0; a < subset.size(); ++a) {
        if (subset[a] >= n) {
            throw ParameterError("subset index " + std::to_string(subset[a]) + " out of range for kernel of size " +
                                 std::to_string(n));
        }
        for (std::size_t b = 0; b < a; ++b)
            if (subset[a] == subset[b]) throw ParameterError("subset index " + std::to_string(subset[a]) + " repeated");
    }
}

inline Matrix principal(const Matrix& Z, std::span<const std::size_t> subset) {
    const auto m = static_cast<Eigen::Index>(subset.size());
    Matrix out(m, m);
    for (Eigen::Index a = 0; a < m; ++a)
        for (Eigen::Index b = 0; b < m; ++b)
            out(a, b) = Z(static_cast<Eigen::Index>(subset[static_cast<std::size_t>(a)]),
                          static_cast<Eigen::Index>(subset[static_cast<std::size_t>(b)]));
    return out;
}

}  // namespace detail

/// log det of a symmetric matrix plus jitter*I via Cholesky, or kNegInf
/// when the factorization fails.
inline double log_det_cholesky(Matrix m, double jitter = kDppJitter) {
    if (m.rows() == 0) return 0.0;
    m.diagonal().array() += jitter;
    Eigen::LLT<Matrix> llt(m);
    if (llt.info() != Eigen::Success) return kNegInf;
    const auto& L = llt.matrixLLT();
    double sum = 0.0;
    for (Eigen::Index i = 0; i < L.rows(); ++i) sum += std::log(L(i, i));
    return 2.0 * sum;
}

/// log det(Z_S) of a principal submatrix; empty subsets give 0.
inline double log_det(const DppKernel& kernel, std::span<const std::size_t> subset) {
    detail::check_subset(kernel.size(), subset);
    return log_det_cholesky(detail::principal(kernel.Z, subset));
}

struct GreedyMapResult {
    std::vector<std::size_t> selected;  // in selection order
    std::vector<double> gains;          // log-det increase of each addition

    double log_det() const { return std::accumulate(gains.begin(), gains.end(), 0.0); }
};

/// Greedy MAP inference with incremental Cholesky updates, O(K^2 n).
///
/// Each step adds the item with the largest log-det gain log(d_i^2), where
/// d_i^2 is the Schur complement of item i against the selected set.
/// Ties go to the lower index. Stops early when every remaining addition
/// would make the subset singular.
inline GreedyMapResult greedy_map(const DppKernel& kernel, std::size_t K) {
    const std::size_t n = kernel.size();
    if (K > n) throw ParameterError("greedy_map: K=" + std::to_string(K) + " exceeds kernel size " + std::to_string(n));
    GreedyMapResult out;
    Matrix C = Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(std::max<std::size_t>(K, 1)));
    Vector d2 = kernel.Z.diagonal().array() + kDppJitter;
    std::vector<bool> taken(n, false);
    for (std::size_t step = 0; step < K; ++step) {
        std::size_t best = n;
        double best_gain = kNegInf;
        for (std::size_t i = 0; i < n; ++i) {
            if (taken[i]) continue;
            const double v = d2[static_cast<Eigen::Index>(i)];
            if (!(v > 0.0)) continue;
            const double g = std::log(v);
            if (best == n || g > best_gain) {
                best = i;
                best_gain = g;
            }
        }
        if (best == n) break;
        const auto j = static_cast<Eigen::Index>(best);
        const auto s = static_cast<Eigen::Index>(step);
        const double dj = std::sqrt(d2[j]);
        taken[best] = true;
        out.selected.push_back(best);
        out.gains.push_back(best_gain);
        for (std::size_t i = 0; i < n; ++i) {
            if (taken[i]) continue;
            const auto ii = static_cast<Eigen::Index>(i);
            const double dot = s > 0 ? C.row(j).head(s).dot(C.row(ii).head(s)) : 0.0;
            const double e = (kernel.Z(j, ii) - dot) / dj;
            C(ii, s) = e;
            d2[ii] -= e * e;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Contrastive hinge loss over (positive, negative) subset pairs.

struct SubsetSample {
    std::size_t sample = 0;
    std::vector<std::size_t> positive;
    std::vector<std::vector<std::size_t>> negatives;

    void validate(std::size_t pool_size) const {
        detail::check_subset(pool_size, positive);
        for (const auto& neg : negatives) {
            if (neg.size() != positive.size()) throw ValidationError("subset sample: negative and positive sizes differ");
            detail::check_subset(pool_size, neg);
        }
    }
};

/// One DPP training instance: a query, its candidate pool (bank-side base
/// embeddings, one row per item) and subsets indexing into that pool.
struct DppItem {
    Vector query;
    RowMatrix pool;
    SubsetSample subsets;
};

struct DppLossStats {
    double loss = 0.0;
    std::size_t flagged = 0;  // samples whose positive subset needed extra jitter
};

namespace detail {

struct SubsetLogDet {
    double value;
    Matrix inverse;  // (Z_E + jitter I)^-1
    bool escalated;
};

/// Jittered log-det with its inverse; escalates jitter until Cholesky succeeds.
inline SubsetLogDet subset_log_det(const Matrix& Z, std::span<const std::size_t> subset) {
    const Matrix base = principal(Z, subset);
    const auto m = base.rows();
    double jitter = kDppJitter;
    for (int attempt = 0; attempt < 9; ++attempt, jitter *= 10.0) {
        Matrix M = base;
        M.diagonal().array() += jitter;
        Eigen::LLT<Matrix> llt(M);
        if (llt.info() != Eigen::Success) continue;
        double sum = 0.0;
        for (Eigen::Index i = 0; i < m; ++i) sum += std::log(llt.matrixLLT()(i, i));
        return {2.0 * sum, llt.solve(Matrix::Identity(m, m)), attempt > 0};
    }
    throw DataError("dpp: subset kernel not positive definite even with jitter 1e-2");
}

/// Adds sign * d logdet(Z_E) / d(unit vectors) into grad_rows / grad_query.
inline void accumulate_log_det_grad(const DppKernel& k, std::span<const std::size_t> subset, const Matrix& inverse,
                                    const RowMatrix& unit_rows, const Vector& unit_query, double tradeoff, double sign,
                                    RowMatrix& grad_rows, Vector& grad_query) {
    const auto m = static_cast<Eigen::Index>(subset.size());
    for (Eigen::Index a = 0; a < m; ++a) {
        const auto ia = static_cast<Eigen::Index>(subset[static_cast<std::size_t>(a)]);
        double h = 0.0;
        for (Eigen::Index b = 0; b < m; ++b) {
            const auto ib = static_cast<Eigen::Index>(subset[static_cast<std::size_t>(b)]);
            h += inverse(a, b) * k.Z(ia, ib);
            if (b != a) {
                const double w = 2.0 * inverse(a, b) * k.relevance[ia] * k.relevance[ib];
                grad_rows.row(ia) += sign * w * unit_rows.row(ib);
            }
        }
        h *= 2.0 * tradeoff * sign;
        grad_rows.row(ia) += h * unit_query.transpose();
        grad_query += h * unit_rows.row(ia).transpose();
    }
}

/// Hinge loss of one item; adds scale * gradient into `grad` when given.
inline double dpp_item(const Matrix& W, const DppItem& item, double tradeoff, Matrix* grad, double scale,
                       bool* flagged) {
    const auto& sub = item.subsets;
    const auto n = static_cast<std::size_t>(item.pool.rows());
    sub.validate(n);

    std::vector<bool> used(n, false);
    for (auto i : sub.positive) used[i] = true;
    for (const auto& neg : sub.negatives)
        for (auto i : neg) used[i] = true;

    RowMatrix unit_rows = RowMatrix::Zero(static_cast<Eigen::Index>(n), W.rows());
    std::vector<Projected> proj(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (!used[i]) continue;
        proj[i] = project(W, item.pool.row(static_cast<Eigen::Index>(i)).transpose());
        unit_rows.row(static_cast<Eigen::Index>(i)) = proj[i].unit.transpose();
    }
    const Projected q = project(W, item.query);
    const DppKernel k = kernel_from_embeddings(unit_rows, q.unit, tradeoff);

    const SubsetLogDet pos = subset_log_det(k.Z, sub.positive);
    if (flagged) *flagged = pos.escalated;
    double loss = 0.0;
    RowMatrix grad_rows;
    Vector grad_query;
    if (grad) {
        grad_rows = RowMatrix::Zero(unit_rows.rows(), unit_rows.cols());
        grad_query = Vector::Zero(W.rows());
    }
    std::size_t active = 0;
    for (const auto& neg_subset : sub.negatives) {
        const SubsetLogDet neg = subset_log_det(k.Z, neg_subset);
        const double margin = neg.value - pos.value;
        if (!(margin > 0.0)) continue;
        loss += margin;
        ++active;
        if (grad) accumulate_log_det_grad(k, neg_subset, neg.inverse, unit_rows, q.unit, tradeoff, 1.0, grad_rows, grad_query);
    }
    if (grad && active > 0) {
        accumulate_log_det_grad(k, sub.positive, pos.inverse, unit_rows, q.unit, tradeoff, -static_cast<double>(active),
                                grad_rows, grad_query);
        for (std::size_t i = 0; i < n; ++i) {
            if (!used[i]) continue;
            const auto ii = static_cast<Eigen::Index>(i);
            backprop_projection(*grad, proj[i], item.pool.row(ii).transpose(), scale * grad_rows.row(ii).transpose());
        }
        backprop_projection(*grad, q, item.query, scale * grad_query);
    }
    return loss;
}

}  // namespace detail

/// Mean over items of sum_neg max(0, logdet Z_neg - logdet Z_pos). The
/// kernel is rebuilt from `params` for every item.
inline DppLossStats dpp_loss(const RetrieverParams& params, std::span<const DppItem> items, double tradeoff = 1.0) {
    if (items.empty()) throw EmptyInputError("dpp_loss: no items");
    DppLossStats stats;
    for (const auto& item : items) {
        bool flagged = false;
        stats.loss += detail::dpp_item(params.projection, item, tradeoff, nullptr, 0.0, &flagged);
        stats.flagged += flagged ? 1 : 0;
    }
    stats.loss /= static_cast<double>(items.size());
    return stats;
}

inline DppLossStats dpp_loss_and_grad(const RetrieverParams& params, std::span<const DppItem> items, double tradeoff,
                                      Matrix& grad) {
    if (items.empty()) throw EmptyInputError("dpp_loss: no items");
    grad = Matrix::Zero(params.dim(), params.dim());
    const double scale = 1.0 / static_cast<double>(items.size());
    DppLossStats stats;
    for (const auto& item : items) {
        bool flagged = false;
        stats.loss += detail::dpp_item(params.projection, item, tradeoff, &grad, scale, &flagged);
        stats.flagged += flagged ? 1 : 0;
    }
    stats.loss *= scale;
    return stats;
}

// ---------------------------------------------------------------------------

struct DppConfig {
    std::size_t epochs = 10;
    std::size_t batch_size = 64;
    AdamConfig adam{};
    std::size_t k = 16;           // in-context examples per subset
    std::size_t subsets = 8;      // 1 positive + (subsets - 1) negatives
    double tradeoff = 1.0;        // lambda in r_i = exp(lambda <e_i, q>)
    std::size_t pool_size = 100;  // candidate pool per training sample
    std::uint64_t seed = 0;
};

namespace detail {

/// Indices of the `count` rows most similar to `unit_query`, excluding `skip`.
inline std::vector<std::size_t> top_by_similarity(const RowMatrix& unit_rows, const Vector& unit_query, std::size_t count,
                                                  std::size_t skip) {
    const Vector sims = unit_rows * unit_query;
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < static_cast<std::size_t>(unit_rows.rows()); ++i)
        if (i != skip) idx.push_back(i);
    const std::size_t keep = std::min(count, idx.size());
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(keep), idx.end(),
                      [&](std::size_t a, std::size_t b) {
                          const double sa = sims[static_cast<Eigen::Index>(a)];
                          const double sb = sims[static_cast<Eigen::Index>(b)];
                          return sa > sb || (sa == sb && a < b);
                      });
    idx.resize(keep);
    return idx;
}

}  // namespace detail

/// Builds the training instance for sample `i` of `bank` under `params`:
/// pool = most similar items (excluding the sample), positive = greedy MAP,
/// negatives = uniform K-subsets of the pool drawn without replacement.
inline DppItem make_dpp_item(const ExampleBank& bank, const RowMatrix& unit_rows, const RetrieverParams& params,
                             std::size_t i, const DppConfig& config, Rng& rng) {
    const Vector query = bank.query_row(i);
    const Vector unit_query = embed(params, query);
    const auto pool_idx = detail::top_by_similarity(unit_rows, unit_query, config.pool_size, i);
    DppItem item;
    item.query = query;
    item.subsets.sample = i;
    item.pool.resize(static_cast<Eigen::Index>(pool_idx.size()), bank.dim());
    RowMatrix pool_units(static_cast<Eigen::Index>(pool_idx.size()), bank.dim());
    for (std::size_t a = 0; a < pool_idx.size(); ++a) {
        item.pool.row(static_cast<Eigen::Index>(a)) = bank.base_embeddings.row(static_cast<Eigen::Index>(pool_idx[a]));
        pool_units.row(static_cast<Eigen::Index>(a)) = unit_rows.row(static_cast<Eigen::Index>(pool_idx[a]));
    }
    const DppKernel k = kernel_from_embeddings(pool_units, unit_query, config.tradeoff);
    item.subsets.positive = greedy_map(k, std::min(config.k, pool_idx.size())).selected;
    const std::size_t kk = item.subsets.positive.size();
    for (std::size_t s = 1; s < config.subsets; ++s)
        item.subsets.negatives.push_back(rng.sample_without_replacement(pool_idx.size(), kk));
    return item;
}

struct DppTrainResult {
    RetrieverParams params;
    std::vector<double> loss_trace;  // mean minibatch loss per epoch
    std::size_t flagged = 0;         // positive subsets that needed extra jitter
};

/// Diversity fine-tuning of `init` on `bank` (normally target plus selected
/// auxiliaries). Subsets are redrawn under the current parameters at every
/// minibatch.
inline DppTrainResult train_dpp(RetrieverParams init, const ExampleBank& bank, const DppConfig& config) {
    init.validate();
    if (bank.size() < 2) throw EmptyInputError("train_dpp: need at least two examples");
    if (!bank.has_embeddings() || bank.dim() != init.dim()) throw ShapeError("train_dpp: embedding dimension mismatch");
    if (config.k == 0 || config.subsets < 2 || config.batch_size == 0 || config.pool_size == 0) {
        throw ParameterError("train_dpp: k, pool size and batch size must be positive, subsets at least 2");
    }
    DppTrainResult result{std::move(init), {}, 0};
    Adam opt(result.params.dim(), config.adam);
    Rng rng(config.seed);
    std::vector<std::size_t> order(bank.size());
    Matrix grad;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        rng.shuffle(order);
        double epoch_loss = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t stop = std::min(order.size(), start + config.batch_size);
            std::vector<std::size_t> members(order.begin() + static_cast<std::ptrdiff_t>(start),
                                             order.begin() + static_cast<std::ptrdiff_t>(stop));
            std::sort(members.begin(), members.end());
            const RowMatrix unit_rows = embed_rows(result.params, bank.base_embeddings);
            std::vector<DppItem> items;
            items.reserve(members.size());
            for (std::size_t m : members) items.push_back(make_dpp_item(bank, unit_rows, result.params, m, config, rng));
            const DppLossStats stats = dpp_loss_and_grad(result.params, items, config.tradeoff, grad);
            result.flagged += stats.flagged;
            epoch_loss += stats.loss;
            ++batches;
            opt.step(result.params, grad);
        }
        result.loss_trace.push_back(epoch_loss / static_cast<double>(batches));
    }
    return result;
}

// ---------------------------------------------------------------------------

struct RetrievalResult {
    std::vector<std::size_t> selected;  // bank indices in prompt order
    std::vector<double> similarities;   // <e_i, q> for each selected item, same order
    double log_det = 0.0;
};

namespace detail {

inline void order_for_prompt(RetrievalResult& r, const Vector& sims) {
    std::vector<std::size_t> sel = r.selected;
    std::stable_sort(sel.begin(), sel.end(), [&](std::size_t a, std::size_t b) {
        const double sa = sims[static_cast<Eigen::Index>(a)];
        const double sb = sims[static_cast<Eigen::Index>(b)];
        return sa < sb || (sa == sb && a < b);
    });
    r.selected = std::move(sel);
    r.similarities.clear();
    for (auto i : r.selected) r.similarities.push_back(sims[static_cast<Eigen::Index>(i)]);
}

}  // namespace detail

/// Diverse retrieval: greedy MAP of K items from `bank` (or from its
/// `shortlist` most similar items when non-zero), ordered by ascending
/// similarity so the most similar example sits next to the query.
inline RetrievalResult retrieve(const RetrieverParams& params, const ExampleBank& bank, const Vector& query_base,
                                std::size_t K, double tradeoff = 1.0, std::size_t shortlist = 0) {
    if (K < 1) throw ParameterError("retrieve: K must be at least 1");
    if (K > bank.size()) {
        throw ParameterError("retrieve: K=" + std::to_string(K) + " exceeds bank size " + std::to_string(bank.size()));
    }
    const RowMatrix units = embed_rows(params, bank.base_embeddings);
    const Vector q = embed(params, query_base);
    const Vector sims = units * q;
    std::vector<std::size_t> pool;
    if (shortlist > 0 && shortlist < bank.size()) {
        pool = detail::top_by_similarity(units, q, std::max(shortlist, K), bank.size());
    } else {
        pool.resize(bank.size());
        std::iota(pool.begin(), pool.end(), std::size_t{0});
    }
    RowMatrix pool_units(static_cast<Eigen::Index>(pool.size()), units.cols());
    for (std::size_t a = 0; a < pool.size(); ++a)
        pool_units.row(static_cast<Eigen::Index>(a)) = units.row(static_cast<Eigen::Index>(pool[a]));
    const DppKernel k = kernel_from_embeddings(pool_units, q, tradeoff);
    const GreedyMapResult map = greedy_map(k, K);
    RetrievalResult r;
    for (auto a : map.selected) r.selected.push_back(pool[a]);
    r.log_det = map.log_det();
    detail::order_for_prompt(r, sims);
    return r;
}

/// Relevance-only retrieval: the K most similar items, ascending similarity.
inline RetrievalResult retrieve_top_k(const RetrieverParams& params, const ExampleBank& bank, const Vector& query_base,
                                      std::size_t K, double tradeoff = 1.0) {
    if (K < 1) throw ParameterError("retrieve: K must be at least 1");
    if (K > bank.size()) {
        throw ParameterError("retrieve: K=" + std::to_string(K) + " exceeds bank size " + std::to_string(bank.size()));
    }
    const RowMatrix units = embed_rows(params, bank.base_embeddings);
    const Vector q = embed(params, query_base);
    const Vector sims = units * q;
    RetrievalResult r;
    r.selected = detail::top_by_similarity(units, q, K, bank.size());
    RowMatrix chosen(static_cast<Eigen::Index>(K), units.cols());
    for (std::size_t a = 0; a < K; ++a) chosen.row(static_cast<Eigen::Index>(a)) = units.row(static_cast<Eigen::Index>(r.selected[a]));
    r.log_det = log_det_cholesky(kernel_from_embeddings(chosen, q, tradeoff).Z);
    detail::order_for_prompt(r, sims);
    return r;
}

}  // namespace exsel
