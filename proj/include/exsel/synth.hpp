#pragma once

#include "exsel/common.hpp"
#include "exsel/corpus.hpp"
#include "exsel/error.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace exsel::synth {

/// Synthetic multilingual benchmark.
///
/// Each language g has a centroid mu_g on the unit sphere and belongs to a
/// task family f with a rank-r task subspace P_f. An example draws an input
/// latent u = shift * mu_g + t + n, where t lies in P_f with norm `signal`
/// and n lies in its complement with norm `noise`; its output latent is
/// v = output_scale * P_f u. The query-side embedding is u and the bank-side
/// embedding is u + v, so the oracle scorer weighs the task subspace more
/// than the input side shows, and a retriever has to learn that weighting.
/// Related languages share the target's family and sit close to its
/// centroid; unrelated languages get their own family and a distant
/// centroid. Texts are bags of quantized latent features, so BM25 sees the
/// same structure lexically.
struct Config {
    std::size_t dim = 16;
    std::size_t related = 1;       // candidate languages in the target's family
    std::size_t unrelated = 4;     // candidate languages in other families
    std::size_t target_size = 64;
    std::size_t validation_size = 5000;
    std::size_t aux_size = 512;
    double related_cosine = 0.9;   // centroid cosine of related languages to the target
    double unrelated_cosine = 0.1; // centroid cosine of unrelated languages to the target
    double shift = 0.3;
    double signal = 1.0;           // norm of the task-subspace part of each input latent
    double noise = 2.0;            // norm of the nuisance part of each input latent
    double output_scale = 6.0;     // output latent = output_scale * projection onto the task subspace
    std::size_t task_rank = 4;
    std::uint64_t seed = 7;
};

struct Language {
    std::string tag;
    std::size_t family = 0;
    bool related = false;
    Vector centroid;
};

struct Benchmark {
    Config config;
    std::vector<Language> languages;  // [0] is the target
    ExampleBank target;
    ExampleBank validation;
    std::vector<ExampleBank> candidates;  // related first, then unrelated
    std::vector<Matrix> task_bases;       // per family, orthonormal columns

    Matrix output_map(std::size_t family) const {
        const Matrix& q = task_bases.at(family);
        return config.output_scale * q * q.transpose();
    }

    std::vector<std::string> related_tags() const {
        std::vector<std::string> out;
        for (std::size_t i = 1; i < languages.size(); ++i)
            if (languages[i].related) out.push_back(languages[i].tag);
        return out;
    }
};

namespace detail {

inline Vector random_unit(Rng& rng, std::size_t dim) {
    Vector v(static_cast<Eigen::Index>(dim));
    for (auto& x : v) x = rng.normal();
    return v.normalized();
}

/// Unit vector with cosine `c` to `anchor`.
inline Vector at_cosine(Rng& rng, const Vector& anchor, double c) {
    Vector r = random_unit(rng, static_cast<std::size_t>(anchor.size()));
    r -= anchor * anchor.dot(r);
    r.normalize();
    return c * anchor + std::sqrt(std::max(0.0, 1.0 - c * c)) * r;
}

inline std::string feature_text(const Vector& v, char prefix) {
    std::string out;
    for (Eigen::Index j = 0; j < v.size(); ++j) {
        const int reps = static_cast<int>(std::lround(std::abs(v[j]) * 6.0));
        for (int r = 0; r < reps; ++r) {
            if (!out.empty()) out += ' ';
            out += prefix;
            out += std::to_string(j);
            out += v[j] >= 0 ? 'p' : 'n';
        }
    }
    return out;
}

inline std::string fmt_key(std::size_t k) {
    std::string s = std::to_string(k);
    return std::string(s.size() < 4 ? 4 - s.size() : 0, '0') + s;
}

}  // namespace detail

inline ExampleBank make_bank(const Language& lang, const Matrix& task_basis, std::size_t count, const Config& cfg,
                             std::uint64_t stream, const std::string& id_prefix) {
    ExampleBank bank;
    bank.language = lang.tag;
    const auto d = static_cast<Eigen::Index>(cfg.dim);
    bank.base_embeddings.resize(static_cast<Eigen::Index>(count), d);
    RowMatrix query(static_cast<Eigen::Index>(count), d);
    const Matrix proj = task_basis * task_basis.transpose();
    const Matrix rest = Matrix::Identity(d, d) - proj;
    Rng rng(stream);
    for (std::size_t k = 0; k < count; ++k) {
        Vector z(d);
        for (auto& x : z) x = rng.normal();
        Vector t = proj * z;
        Vector n = rest * z;
        if (t.norm() > 0.0) t *= cfg.signal / t.norm();
        if (n.norm() > 0.0) n *= cfg.noise / n.norm();
        const Vector u = cfg.shift * lang.centroid + t + n;
        const Vector v = cfg.output_scale * (proj * u);
        Example ex;
        ex.id = id_prefix + "-" + detail::fmt_key(k);
        ex.language = lang.tag;
        ex.input_text = lang.tag + " k" + detail::fmt_key(k) + " " + detail::feature_text(u, 'x');
        ex.output_text = "f" + std::to_string(lang.family) + " " + detail::feature_text(v, 'y');
        bank.examples.push_back(std::move(ex));
        bank.base_embeddings.row(static_cast<Eigen::Index>(k)) = (u + v).transpose();
        query.row(static_cast<Eigen::Index>(k)) = u.transpose();
    }
    bank.query_embeddings = std::move(query);
    return bank;
}

inline Benchmark generate(const Config& cfg) {
    if (cfg.dim < 2) throw ParameterError("synth: dim must be at least 2");
    if (cfg.related + cfg.unrelated == 0) throw ParameterError("synth: need at least one candidate language");
    if (cfg.task_rank == 0) throw ParameterError("synth: task_rank must be positive");
    if (cfg.target_size < 2 || cfg.validation_size < 1 || cfg.aux_size < 2) throw ParameterError("synth: bank sizes too small");
    Benchmark b;
    b.config = cfg;
    Rng rng(splitmix64(cfg.seed));
    const std::size_t families = 1 + cfg.unrelated;
    const auto d = static_cast<Eigen::Index>(cfg.dim);
    const auto rank = static_cast<Eigen::Index>(std::min(cfg.task_rank, cfg.dim - 1));
    for (std::size_t f = 0; f < families; ++f) {
        Matrix g(d, d);
        for (Eigen::Index r = 0; r < d; ++r)
            for (Eigen::Index c = 0; c < d; ++c) g(r, c) = rng.normal();
        const Matrix q = Eigen::HouseholderQR<Matrix>(g).householderQ();
        b.task_bases.push_back(q.leftCols(rank));
    }
    Language target{"syn0", 0, true, detail::random_unit(rng, cfg.dim)};
    b.languages.push_back(target);
    for (std::size_t i = 0; i < cfg.related; ++i) {
        b.languages.push_back({"syn" + std::to_string(b.languages.size()), 0, true,
                               detail::at_cosine(rng, target.centroid, cfg.related_cosine)});
    }
    for (std::size_t i = 0; i < cfg.unrelated; ++i) {
        b.languages.push_back({"syn" + std::to_string(b.languages.size()), 1 + i, false,
                               detail::at_cosine(rng, target.centroid, cfg.unrelated_cosine)});
    }
    const std::uint64_t base = splitmix64(cfg.seed ^ 0x5eed);
    b.target = make_bank(target, b.task_bases[0], cfg.target_size, cfg, derive_seed(base, 0, 0), target.tag);
    b.validation = make_bank(target, b.task_bases[0], cfg.validation_size, cfg, derive_seed(base, 0, 1), target.tag + "v");
    for (std::size_t i = 1; i < b.languages.size(); ++i) {
        const auto& lang = b.languages[i];
        b.candidates.push_back(make_bank(lang, b.task_bases[lang.family], cfg.aux_size, cfg, derive_seed(base, i, 0), lang.tag));
    }
    return b;
}

inline nlohmann::json config_json(const Config& c) {
    return {{"dim", c.dim},
            {"related", c.related},
            {"unrelated", c.unrelated},
            {"target_size", c.target_size},
            {"validation_size", c.validation_size},
            {"aux_size", c.aux_size},
            {"related_cosine", c.related_cosine},
            {"unrelated_cosine", c.unrelated_cosine},
            {"shift", c.shift},
            {"signal", c.signal},
            {"noise", c.noise},
            {"output_scale", c.output_scale},
            {"task_rank", c.task_rank},
            {"seed", c.seed}};
}

inline void write_bank_files(const std::string& dir, const std::string& stem, const ExampleBank& bank) {
    const std::filesystem::path base(dir);
    write_examples((base / (stem + ".jsonl")).string(), bank.examples);
    write_embeddings((base / (stem + ".emb")).string(), bank.base_embeddings);
    if (bank.query_embeddings) write_embeddings((base / (stem + ".qemb")).string(), *bank.query_embeddings);
}

/// Writes every bank plus `synth_manifest.json`, which records the
/// generator config and the ground-truth related languages.
inline nlohmann::json write_benchmark(const Benchmark& b, const std::string& dir) {
    std::filesystem::create_directories(dir);
    const std::string& target = b.languages.front().tag;
    write_bank_files(dir, target, b.target);
    write_bank_files(dir, target + ".val", b.validation);
    nlohmann::json langs = nlohmann::json::array();
    for (std::size_t i = 0; i < b.candidates.size(); ++i) {
        const auto& lang = b.languages[i + 1];
        write_bank_files(dir, lang.tag, b.candidates[i]);
        langs.push_back({{"tag", lang.tag}, {"family", lang.family}, {"related", lang.related}});
    }
    nlohmann::json m = {{"generator", config_json(b.config)},
                        {"target", target},
                        {"candidates", langs},
                        {"related", b.related_tags()}};
    std::ofstream out(std::filesystem::path(dir) / "synth_manifest.json", std::ios::binary);
    out << m.dump(2) << '\n';
    if (!out) throw DataError("cannot write synth manifest in " + dir);
    return m;
}

// ---------------------------------------------------------------------------

struct ClusterConfig {
    std::size_t dim = 16;
    std::vector<double> cosines{0.9, 0.5, 0.1, -0.2, 0.05};  // centroid cosine of each candidate to the target
    std::size_t bank_size = 64;
    double noise = 1.0;  // norm scale of the per-example isotropic noise
    std::uint64_t seed = 5;
};

struct ClusterBenchmark {
    ExampleBank target;
    std::vector<ExampleBank> candidates;  // in `cosines` order
    std::string related;                  // tag of the candidate with the largest cosine
};

/// Target plus candidate banks whose centroids sit at fixed cosines to the
/// target centroid; each example is its centroid plus isotropic noise.
inline ClusterBenchmark generate_clusters(const ClusterConfig& cfg) {
    if (cfg.dim < 2 || cfg.cosines.empty() || cfg.bank_size == 0) throw ParameterError("synth: bad cluster config");
    Rng rng(splitmix64(cfg.seed ^ 0xc1u));
    const Vector anchor = detail::random_unit(rng, cfg.dim);
    auto make = [&](const std::string& tag, const Vector& centroid) {
        ExampleBank bank;
        bank.language = tag;
        bank.base_embeddings.resize(static_cast<Eigen::Index>(cfg.bank_size), static_cast<Eigen::Index>(cfg.dim));
        for (std::size_t i = 0; i < cfg.bank_size; ++i) {
            Vector e = centroid;
            for (auto& x : e) x += cfg.noise * rng.normal() / std::sqrt(static_cast<double>(cfg.dim));
            bank.base_embeddings.row(static_cast<Eigen::Index>(i)) = e.transpose();
            bank.examples.push_back({tag + "-" + detail::fmt_key(i), detail::feature_text(e, 'f'), tag, tag});
        }
        return bank;
    };
    ClusterBenchmark out;
    out.target = make("cl0", anchor);
    std::size_t best = 0;
    for (std::size_t i = 0; i < cfg.cosines.size(); ++i) {
        out.candidates.push_back(make("cl" + std::to_string(i + 1), detail::at_cosine(rng, anchor, cfg.cosines[i])));
        if (cfg.cosines[i] > cfg.cosines[best]) best = i;
    }
    out.related = out.candidates[best].language;
    return out;
}

// ---------------------------------------------------------------------------

struct DuplicateConfig {
    std::size_t dim = 16;
    std::size_t clusters = 4;
    std::size_t per_cluster = 8;
    double spread = 0.0;     // per-copy noise around the cluster center; 0 gives exact duplicates
    std::size_t queries = 100;
    std::uint64_t seed = 11;
};

struct DuplicateBenchmark {
    ExampleBank bank;                  // bank-side embeddings only
    std::vector<std::size_t> cluster;  // cluster id of each bank row
    RowMatrix queries;                 // query-side embeddings
};

/// Bank made of tight (or exact) duplicate clusters around mutually
/// near-orthogonal centers; queries are random mixtures of the centers.
inline DuplicateBenchmark generate_duplicates(const DuplicateConfig& cfg) {
    if (cfg.clusters == 0 || cfg.per_cluster == 0 || cfg.dim < cfg.clusters) {
        throw ParameterError("synth: duplicate benchmark needs dim >= clusters > 0");
    }
    Rng rng(splitmix64(cfg.seed));
    const auto d = static_cast<Eigen::Index>(cfg.dim);
    Matrix g(d, d);
    for (Eigen::Index r = 0; r < d; ++r)
        for (Eigen::Index c = 0; c < d; ++c) g(r, c) = rng.normal();
    const Matrix basis = Eigen::HouseholderQR<Matrix>(g).householderQ();
    DuplicateBenchmark out;
    out.bank.language = "dup";
    const std::size_t n = cfg.clusters * cfg.per_cluster;
    out.bank.base_embeddings.resize(static_cast<Eigen::Index>(n), d);
    for (std::size_t c = 0; c < cfg.clusters; ++c) {
        const Vector center = basis.col(static_cast<Eigen::Index>(c));
        for (std::size_t k = 0; k < cfg.per_cluster; ++k) {
            Vector e = center;
            if (cfg.spread > 0.0)
                for (auto& x : e) x += cfg.spread * rng.normal() / std::sqrt(static_cast<double>(cfg.dim));
            const std::size_t row = c * cfg.per_cluster + k;
            out.bank.base_embeddings.row(static_cast<Eigen::Index>(row)) = e.transpose();
            out.cluster.push_back(c);
            Example ex;
            ex.id = "dup-" + detail::fmt_key(row);
            ex.language = "dup";
            ex.input_text = "c" + std::to_string(c) + " item " + std::to_string(k);
            ex.output_text = "cluster " + std::to_string(c);
            out.bank.examples.push_back(std::move(ex));
        }
    }
    out.queries.resize(static_cast<Eigen::Index>(cfg.queries), d);
    for (std::size_t q = 0; q < cfg.queries; ++q) {
        Vector mix = Vector::Zero(d);
        for (std::size_t c = 0; c < cfg.clusters; ++c) mix += (0.5 + rng.uniform()) * basis.col(static_cast<Eigen::Index>(c));
        for (auto& x : mix) x += 0.3 * rng.normal() / std::sqrt(static_cast<double>(cfg.dim));
        out.queries.row(static_cast<Eigen::Index>(q)) = mix.transpose();
    }
    return out;
}

}  // namespace exsel::synth
