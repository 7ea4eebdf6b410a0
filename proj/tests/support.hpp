#pragma once

#include "exsel/exsel.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace support {

using exsel::Matrix;
using exsel::RowMatrix;
using exsel::Vector;

inline Vector random_vector(exsel::Rng& rng, Eigen::Index d) {
    Vector v(d);
    for (auto& x : v) x = rng.normal();
    return v;
}

inline RowMatrix random_rows(exsel::Rng& rng, Eigen::Index n, Eigen::Index d) {
    RowMatrix m(n, d);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < d; ++j) m(i, j) = rng.normal();
    return m;
}

/// Identity plus a small random perturbation.
inline exsel::RetrieverParams random_params(exsel::Rng& rng, Eigen::Index d, double scale = 0.3) {
    exsel::RetrieverParams p = exsel::RetrieverParams::identity(d);
    for (Eigen::Index i = 0; i < d; ++i)
        for (Eigen::Index j = 0; j < d; ++j) p.projection(i, j) += scale * rng.normal();
    return p;
}

/// Random PSD matrix B Bᵀ with B of size n x rank.
inline Matrix random_psd(exsel::Rng& rng, Eigen::Index n, Eigen::Index rank) {
    Matrix b(n, rank);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < rank; ++j) b(i, j) = rng.normal();
    return b * b.transpose();
}

/// Central finite-difference gradient of f at W.
inline Matrix numeric_gradient(const std::function<double(const Matrix&)>& f, const Matrix& W, double h = 1e-5) {
    Matrix g(W.rows(), W.cols());
    for (Eigen::Index i = 0; i < W.rows(); ++i) {
        for (Eigen::Index j = 0; j < W.cols(); ++j) {
            Matrix plus = W;
            Matrix minus = W;
            plus(i, j) += h;
            minus(i, j) -= h;
            g(i, j) = (f(plus) - f(minus)) / (2.0 * h);
        }
    }
    return g;
}

/// max |a - b| / max(1, max |b|): relative to the gradient's scale, so
/// entries that are numerically zero do not blow up the ratio.
inline double relative_error(const Matrix& analytic, const Matrix& numeric) {
    const double scale = std::max(1e-8, numeric.cwiseAbs().maxCoeff());
    return (analytic - numeric).cwiseAbs().maxCoeff() / scale;
}

inline exsel::Example make_example(std::string id, std::string input, std::string output, std::string lang = "xx") {
    return exsel::Example{std::move(id), std::move(input), std::move(output), std::move(lang)};
}

/// Bank of `n` examples with random embeddings and texts drawn from a
/// small vocabulary.
inline exsel::ExampleBank random_bank(exsel::Rng& rng, std::size_t n, Eigen::Index d, const std::string& lang = "xx",
                                      std::size_t vocab = 12) {
    exsel::ExampleBank bank;
    bank.language = lang;
    for (std::size_t i = 0; i < n; ++i) {
        std::string in, out;
        const std::size_t len = 3 + rng.index(5);
        for (std::size_t t = 0; t < len; ++t) in += (t ? " w" : "w") + std::to_string(rng.index(vocab));
        for (std::size_t t = 0; t < 3; ++t) out += (t ? " o" : "o") + std::to_string(rng.index(vocab));
        bank.examples.push_back(make_example(lang + "-" + std::to_string(i), in, out, lang));
    }
    bank.base_embeddings = random_rows(rng, static_cast<Eigen::Index>(n), d);
    return bank;
}

/// Determinant by cofactor expansion along the first row.
inline double det_cofactor(const Matrix& m) {
    const auto n = m.rows();
    if (n == 0) return 1.0;
    if (n == 1) return m(0, 0);
    double det = 0.0;
    for (Eigen::Index c = 0; c < n; ++c) {
        Matrix minor(n - 1, n - 1);
        for (Eigen::Index r = 1; r < n; ++r)
            for (Eigen::Index k = 0, at = 0; k < n; ++k)
                if (k != c) minor(r - 1, at++) = m(r, k);
        det += (c % 2 == 0 ? 1.0 : -1.0) * m(0, c) * det_cofactor(minor);
    }
    return det;
}

inline Matrix principal(const Matrix& Z, const std::vector<std::size_t>& s) {
    Matrix out(static_cast<Eigen::Index>(s.size()), static_cast<Eigen::Index>(s.size()));
    for (std::size_t a = 0; a < s.size(); ++a)
        for (std::size_t b = 0; b < s.size(); ++b)
            out(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) =
                Z(static_cast<Eigen::Index>(s[a]), static_cast<Eigen::Index>(s[b]));
    return out;
}

/// Greedy MAP that recomputes the full log-det of every candidate set.
inline exsel::GreedyMapResult naive_greedy(const exsel::DppKernel& k, std::size_t K) {
    exsel::GreedyMapResult out;
    double current = 0.0;
    for (std::size_t step = 0; step < K; ++step) {
        std::size_t best = k.size();
        double best_val = exsel::kNegInf;
        for (std::size_t i = 0; i < k.size(); ++i) {
            if (std::find(out.selected.begin(), out.selected.end(), i) != out.selected.end()) continue;
            auto trial = out.selected;
            trial.push_back(i);
            const double v = exsel::log_det_cholesky(principal(k.Z, trial));
            if (v == exsel::kNegInf) continue;
            if (best == k.size() || v > best_val) {
                best = i;
                best_val = v;
            }
        }
        if (best == k.size()) break;
        out.selected.push_back(best);
        out.gains.push_back(best_val - current);
        current = best_val;
    }
    return out;
}

/// Largest log det over all K-subsets.
inline double exhaustive_map(const exsel::DppKernel& k, std::size_t K) {
    double best = exsel::kNegInf;
    std::vector<std::size_t> s;
    std::function<void(std::size_t)> rec = [&](std::size_t from) {
        if (s.size() == K) {
            best = std::max(best, exsel::log_det_cholesky(principal(k.Z, s)));
            return;
        }
        for (std::size_t i = from; i < k.size(); ++i) {
            s.push_back(i);
            rec(i + 1);
            s.pop_back();
        }
    };
    rec(0);
    return best;
}

/// Kernel over n random unit rows and a random unit query.
inline exsel::DppKernel random_kernel(exsel::Rng& rng, Eigen::Index n, Eigen::Index d, double tradeoff = 1.0) {
    RowMatrix rows = random_rows(rng, n, d);
    for (Eigen::Index i = 0; i < n; ++i) rows.row(i).normalize();
    return exsel::kernel_from_embeddings(rows, random_vector(rng, d).normalized(), tradeoff);
}

/// Kernel wrapper around an arbitrary PSD matrix.
inline exsel::DppKernel psd_kernel(const Matrix& Z) {
    exsel::DppKernel k;
    k.Z = Z;
    return k;
}

/// Random DPP training instance with a random positive and distinct negatives.
inline exsel::DppItem random_dpp_item(exsel::Rng& rng, Eigen::Index d, std::size_t n, std::size_t K,
                                      std::size_t negatives) {
    exsel::DppItem item;
    item.query = random_vector(rng, d);
    item.pool = random_rows(rng, static_cast<Eigen::Index>(n), d);
    item.subsets.positive = rng.sample_without_replacement(n, K);
    for (std::size_t s = 0; s < negatives; ++s) item.subsets.negatives.push_back(rng.sample_without_replacement(n, K));
    return item;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("exsel-test-" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline void write_text(const std::filesystem::path& p, const std::string& text) { exsel::detail::write_file(p.string(), text); }

}  // namespace support
