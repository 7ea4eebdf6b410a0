#pragma once

#include "exsel/common.hpp"
#include "exsel/corpus.hpp"
#include "exsel/error.hpp"
#include "exsel/retriever.hpp"
#include "exsel/scorer.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <future>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace exsel {

/// Linear-interpolation percentile (the "linear" method of numpy).
inline double percentile(std::vector<double> values, double pct) {
    if (values.empty()) throw EmptyInputError("percentile: no values");
    if (!(pct >= 0.0 && pct <= 100.0)) throw ParameterError("percentile must lie in [0, 100]");
    std::sort(values.begin(), values.end());
    const double rank = pct / 100.0 * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(rank));
    const auto hi = static_cast<std::size_t>(std::ceil(rank));
    const double frac = rank - static_cast<double>(lo);
    if (lo == hi) return values[lo];
    return values[lo] + frac * (values[hi] - values[lo]);
}

struct AuxSelection {
    std::map<std::string, double> similarities;  // language -> cosine to the target mean
    double threshold = 0.0;
    std::vector<std::string> selected;       // in candidate order
    std::vector<std::size_t> selected_index;  // positions in the candidate list
};

/// Keeps the candidate banks whose mean base embedding is at least as
/// similar to the target's as the delta-th percentile of all candidates.
inline AuxSelection select_auxiliary(const ExampleBank& target, std::span<const ExampleBank> candidates, double delta) {
    if (candidates.empty()) throw ParameterError("select_auxiliary: no candidate banks");
    if (!(delta >= 0.0 && delta <= 100.0)) throw ParameterError("select_auxiliary: delta must lie in [0, 100]");
    const Vector target_mean = bank_mean_embedding(target);
    std::vector<double> sims;
    AuxSelection out;
    for (const auto& bank : candidates) {
        if (bank.language == target.language) {
            throw ValidationError("select_auxiliary: candidate shares the target language \"" + bank.language + "\"");
        }
        const double s = cosine_similarity(bank_mean_embedding(bank), target_mean);
        sims.push_back(s);
        out.similarities[bank.language] = s;
    }
    out.threshold = percentile(sims, delta);
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        if (sims[i] >= out.threshold) {
            out.selected.push_back(candidates[i].language);
            out.selected_index.push_back(i);
        }
    }
    return out;
}

/// Entrywise mean of the projection matrices.
inline RetrieverParams merge_params(std::span<const RetrieverParams> params) {
    if (params.empty()) throw EmptyInputError("merge_params: nothing to merge");
    RetrieverParams out;
    out.projection = Matrix::Zero(params.front().dim(), params.front().dim());
    std::uint64_t version = 0;
    for (const auto& p : params) {
        if (p.projection.rows() != out.projection.rows() || p.projection.cols() != out.projection.cols()) {
            throw ShapeError("merge_params: dimension " + std::to_string(p.projection.rows()) + " vs " +
                             std::to_string(out.projection.rows()));
        }
        out.projection += p.projection;
        version = std::max(version, p.version);
    }
    out.projection /= static_cast<double>(params.size());
    out.version = version;
    return out;
}

/// 1-based rank of the labeled positive under the retriever's similarity
/// ordering of the item's candidates; ties resolve toward lower positions.
inline std::size_t positive_rank(const RetrieverParams& params, const RelevanceItem& item) {
    const Vector q = embed(params, item.query);
    const RowMatrix c = embed_rows(params, item.candidate_embeddings);
    const Vector sims = c * q;
    const auto pos = static_cast<Eigen::Index>(item.positive);
    std::size_t rank = 1;
    for (Eigen::Index j = 0; j < sims.size(); ++j) {
        if (sims[j] > sims[pos] || (sims[j] == sims[pos] && j < pos)) ++rank;
    }
    return rank;
}

/// Mean reciprocal rank of the scorer-best candidates.
inline double validate(const RetrieverParams& params, std::span<const RelevanceItem> labels) {
    if (labels.empty()) throw EmptyInputError("validate: empty validation set");
    double sum = 0.0;
    for (const auto& item : labels) sum += 1.0 / static_cast<double>(positive_rank(params, item));
    return sum / static_cast<double>(labels.size());
}

/// Labels validation samples against the target bank, then scores `params`.
inline double validate(const RetrieverParams& params, const ExampleBank& validation, const ExampleBank& target,
                       const Scorer& scorer, const RelevanceConfig& config) {
    if (validation.empty()) throw EmptyInputError("validate: validation bank is empty");
    return validate(params, label_samples(validation, target, scorer, config));
}

/// Content fingerprint of a bank (texts and embeddings, not ids or language).
inline std::uint64_t bank_fingerprint(const ExampleBank& bank) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](std::string_view s) { h = splitmix64(h ^ fnv1a64(s)); };
    for (const auto& ex : bank.examples) {
        mix(ex.input_text);
        mix(ex.output_text);
    }
    mix(encode_embeddings(bank.base_embeddings));
    if (bank.query_embeddings) mix(encode_embeddings(*bank.query_embeddings));
    return h;
}

struct AltMinConfig {
    RelevanceConfig relevance{};
    std::size_t iterations = 10;
    std::uint64_t seed = 0;
    bool parallel_banks = false;
    // Replaces the MRR validation when set (e.g. generation-based scoring).
    std::function<double(const RetrieverParams&)> validator;
};

/// Alternating-minimization bookkeeping.
struct TrainState {
    std::size_t iteration = 0;                    // completed outer iterations
    std::vector<RetrieverParams> specialized;     // phi_i of the last iteration, target first
    RetrieverParams merged;                       // rho of the last iteration
    std::vector<double> trace;                    // validation MRR of rho per iteration
    std::vector<double> target_trace;             // validation MRR of phi_target per iteration
    std::vector<std::string> checkpoint_checksums;  // RTV1 checksum of rho per iteration
    RetrieverParams best;                         // rho*
    double best_score = 0.0;
    std::size_t best_iteration = 0;               // 1-based
};

/// Specialize/Merge loop. Bank 0 of the specialization set is the target,
/// followed by the auxiliaries in the given order. Each iteration trains
/// every bank from the current merged parameters (identity at the start),
/// averages them, and records the validation MRR; the best iteration's
/// merged parameters (earliest on ties) are kept as rho*.
inline TrainState run_alternating_minimization(const BankCollection& banks, const Scorer& scorer,
                                               const AltMinConfig& config) {
    if (config.iterations == 0) throw ParameterError("alternating minimization: iterations must be positive");
    if (banks.target.empty()) throw EmptyInputError("alternating minimization: target bank is empty");
    if (banks.validation.language != banks.target.language) {
        throw ValidationError("validation bank language \"" + banks.validation.language + "\" differs from target \"" +
                              banks.target.language + "\"");
    }
    std::vector<const ExampleBank*> members{&banks.target};
    for (const auto& aux : banks.auxiliaries) {
        if (aux.language == banks.target.language) {
            throw ValidationError("auxiliary bank shares the target language \"" + aux.language + "\"");
        }
        if (aux.dim() != banks.target.dim()) throw ShapeError("auxiliary \"" + aux.language + "\" has a different dimension");
        members.push_back(&aux);
    }

    std::vector<RelevanceBatch> labels;
    std::vector<std::uint64_t> stream_keys;
    for (const auto* bank : members) {
        try {
            labels.push_back(label_samples(*bank, *bank, scorer, config.relevance));
        } catch (const Error& e) {
            throw Error("labeling bank \"" + bank->language + "\": " + e.what());
        }
        stream_keys.push_back(bank_fingerprint(*bank));
    }
    RelevanceBatch validation_labels;
    if (!config.validator) {
        validation_labels = label_samples(banks.validation, banks.target, scorer, config.relevance);
        if (validation_labels.empty()) throw EmptyInputError("validation: no sample has candidates in the target bank");
    }
    auto score = [&](const RetrieverParams& p) {
        return config.validator ? config.validator(p) : validate(p, validation_labels);
    };

    TrainState state;
    state.merged = RetrieverParams::identity(banks.target.dim());
    for (std::size_t iter = 1; iter <= config.iterations; ++iter) {
        auto specialize = [&](std::size_t b) {
            RelevanceConfig rc = config.relevance;
            rc.seed = derive_seed(config.seed, iter, stream_keys[b]);
            try {
                return train_relevance_on(labels[b], state.merged, rc).params;
            } catch (const Error& e) {
                throw Error("iteration " + std::to_string(iter) + ", bank \"" + members[b]->language + "\": " + e.what());
            }
        };
        std::vector<RetrieverParams> phi(members.size());
        if (config.parallel_banks && members.size() > 1) {
            std::vector<std::future<RetrieverParams>> jobs;
            for (std::size_t b = 0; b < members.size(); ++b) jobs.push_back(std::async(std::launch::async, specialize, b));
            for (std::size_t b = 0; b < members.size(); ++b) phi[b] = jobs[b].get();
        } else {
            for (std::size_t b = 0; b < members.size(); ++b) phi[b] = specialize(b);
        }
        state.merged = merge_params(phi);
        const double alpha = score(state.merged);
        state.target_trace.push_back(score(phi.front()));
        state.trace.push_back(alpha);
        state.checkpoint_checksums.push_back(hex64(fnv1a64(encode_checkpoint(state.merged))));
        if (iter == 1 || alpha > state.best_score) {
            state.best = state.merged;
            state.best_score = alpha;
            state.best_iteration = iter;
        }
        state.specialized = std::move(phi);
        state.iteration = iter;
    }
    return state;
}

}  // namespace exsel
