#pragma once

#include "exsel/altmin.hpp"
#include "exsel/common.hpp"
#include "exsel/corpus.hpp"
#include "exsel/dpp.hpp"
#include "exsel/error.hpp"
#include "exsel/metrics.hpp"
#include "exsel/prompt.hpp"
#include "exsel/remote_scorer.hpp"
#include "exsel/retriever.hpp"
#include "exsel/scorer.hpp"

#include <nlohmann/json.hpp>

#include <cstdlib>
#include <filesystem>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace exsel {

/// Everything a run needs. Bank files live in `data_dir` (relative to the
/// config file when read from one) as `<tag>.jsonl` + `<tag>.emb`, plus
/// optional `<tag>.qemb` query-side embeddings; the validation split of the
/// target is `<tag>.val.*`.
struct RunConfig {
    std::string data_dir = ".";
    std::string target;
    std::vector<std::string> aux;  // candidate auxiliary languages
    double delta = 95.0;
    std::size_t iterations = 10;
    std::size_t epochs = 120;
    std::size_t dpp_epochs = 10;
    std::size_t batch = 64;
    double lr = 1e-4;
    std::size_t candidates = 50;  // F
    std::size_t k = 16;
    std::size_t subsets = 8;
    double tradeoff = 1.0;
    std::size_t dpp_pool = 100;
    std::uint64_t seed = 0;
    std::string mode = "full";  // full | relevance-only | dpp-only
    std::string endpoint;       // empty selects the offline oracle scorer
    double bm25_k1 = 1.2;
    double bm25_b = 0.75;
    bool candidates_by_embedding = false;
    bool validate_with_generation = false;
    std::string task = "translation";
    std::string templates;  // optional JSON file overriding the built-in templates
    std::size_t max_in_flight = 4;

    void validate() const {
        auto positive = [](std::size_t v, const char* field) {
            if (v == 0) throw ParameterError(std::string("config field \"") + field + "\" must be positive");
        };
        if (target.empty()) throw ParameterError("config field \"target\" is required");
        if (!(delta >= 0.0 && delta <= 100.0)) throw ParameterError("config field \"delta\" must lie in [0, 100]");
        positive(iterations, "iterations");
        positive(epochs, "epochs");
        positive(dpp_epochs, "dpp_epochs");
        positive(batch, "batch");
        positive(candidates, "candidates");
        positive(k, "k");
        positive(dpp_pool, "dpp_pool");
        positive(max_in_flight, "max_in_flight");
        if (subsets < 2) throw ParameterError("config field \"subsets\" must be at least 2");
        if (!(lr > 0.0)) throw ParameterError("config field \"lr\" must be positive");
        if (!(tradeoff > 0.0)) throw ParameterError("config field \"tradeoff\" must be positive");
        if (!(bm25_k1 >= 0.0)) throw ParameterError("config field \"bm25_k1\" must be non-negative");
        if (!(bm25_b >= 0.0 && bm25_b <= 1.0)) throw ParameterError("config field \"bm25_b\" must lie in [0, 1]");
        if (mode != "full" && mode != "relevance-only" && mode != "dpp-only") {
            throw ParameterError("config field \"mode\" must be full, relevance-only or dpp-only (got \"" + mode + "\")");
        }
        for (const auto& a : aux)
            if (a == target) throw ParameterError("config field \"aux\" lists the target language \"" + a + "\"");
    }

    RelevanceConfig relevance() const {
        RelevanceConfig rc;
        rc.batch_size = batch;
        rc.epochs = epochs;
        rc.adam.learning_rate = lr;
        rc.candidates = candidates;
        rc.bm25 = {bm25_k1, bm25_b};
        rc.candidates_by_embedding = candidates_by_embedding;
        rc.max_in_flight = max_in_flight;
        rc.seed = seed;
        return rc;
    }

    DppConfig dpp() const {
        DppConfig dc;
        dc.epochs = dpp_epochs;
        dc.batch_size = batch;
        dc.adam.learning_rate = lr;
        dc.k = k;
        dc.subsets = subsets;
        dc.tradeoff = tradeoff;
        dc.pool_size = dpp_pool;
        dc.seed = seed;
        return dc;
    }
};

inline void to_json(nlohmann::json& j, const RunConfig& c) {
    j = nlohmann::json{{"data_dir", c.data_dir},
                       {"target", c.target},
                       {"aux", c.aux},
                       {"delta", c.delta},
                       {"iterations", c.iterations},
                       {"epochs", c.epochs},
                       {"dpp_epochs", c.dpp_epochs},
                       {"batch", c.batch},
                       {"lr", c.lr},
                       {"candidates", c.candidates},
                       {"k", c.k},
                       {"subsets", c.subsets},
                       {"tradeoff", c.tradeoff},
                       {"dpp_pool", c.dpp_pool},
                       {"seed", c.seed},
                       {"mode", c.mode},
                       {"endpoint", c.endpoint},
                       {"bm25_k1", c.bm25_k1},
                       {"bm25_b", c.bm25_b},
                       {"candidates_by_embedding", c.candidates_by_embedding},
                       {"validate_with_generation", c.validate_with_generation},
                       {"task", c.task},
                       {"templates", c.templates},
                       {"max_in_flight", c.max_in_flight}};
}

namespace detail {

template <typename T>
void read_field(const nlohmann::json& j, const char* key, T& out) {
    auto it = j.find(key);
    if (it == j.end()) return;
    try {
        out = it->get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ParameterError(std::string("config field \"") + key + "\" has the wrong type");
    }
}

}  // namespace detail

/// Reads a flat JSON config. Unknown fields are rejected by name; missing
/// fields keep their defaults.
inline RunConfig config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ParameterError("config must be a JSON object");
    static const std::set<std::string> known{
        "data_dir", "target",  "aux",      "delta",   "iterations", "epochs",   "dpp_epochs",
        "batch",    "lr",      "candidates", "k",     "subsets",    "tradeoff", "dpp_pool",
        "seed",     "mode",    "endpoint", "bm25_k1", "bm25_b",     "candidates_by_embedding",
        "validate_with_generation", "task", "templates", "max_in_flight"};
    for (const auto& [key, value] : j.items()) {
        if (!known.contains(key)) throw ParameterError("unknown config field \"" + key + "\"");
    }
    RunConfig c;
    detail::read_field(j, "data_dir", c.data_dir);
    detail::read_field(j, "target", c.target);
    detail::read_field(j, "aux", c.aux);
    detail::read_field(j, "delta", c.delta);
    detail::read_field(j, "iterations", c.iterations);
    detail::read_field(j, "epochs", c.epochs);
    detail::read_field(j, "dpp_epochs", c.dpp_epochs);
    detail::read_field(j, "batch", c.batch);
    detail::read_field(j, "lr", c.lr);
    detail::read_field(j, "candidates", c.candidates);
    detail::read_field(j, "k", c.k);
    detail::read_field(j, "subsets", c.subsets);
    detail::read_field(j, "tradeoff", c.tradeoff);
    detail::read_field(j, "dpp_pool", c.dpp_pool);
    detail::read_field(j, "seed", c.seed);
    detail::read_field(j, "mode", c.mode);
    detail::read_field(j, "endpoint", c.endpoint);
    detail::read_field(j, "bm25_k1", c.bm25_k1);
    detail::read_field(j, "bm25_b", c.bm25_b);
    detail::read_field(j, "candidates_by_embedding", c.candidates_by_embedding);
    detail::read_field(j, "validate_with_generation", c.validate_with_generation);
    detail::read_field(j, "task", c.task);
    detail::read_field(j, "templates", c.templates);
    detail::read_field(j, "max_in_flight", c.max_in_flight);
    return c;
}

inline RunConfig read_config(const std::string& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(detail::read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError("config " + path + ": " + e.what());
    }
    RunConfig c = config_from_json(j);
    // relative data directories are taken from the config file's location
    const std::filesystem::path dir(c.data_dir);
    if (dir.is_relative()) c.data_dir = (std::filesystem::path(path).parent_path() / dir).lexically_normal().string();
    return c;
}

/// FNV-1a of the canonical (key-sorted, compact) JSON form.
inline std::string config_hash(const RunConfig& c) { return hex64(fnv1a64(nlohmann::json(c).dump())); }

inline std::string checkpoint_checksum(const RetrieverParams& p) { return hex64(fnv1a64(encode_checkpoint(p))); }

// ---------------------------------------------------------------------------

inline std::string bank_path(const std::string& dir, const std::string& stem, const char* ext) {
    return (std::filesystem::path(dir) / (stem + ext)).string();
}

/// Loads `<stem>.jsonl` with its embeddings; `language` is checked against
/// every record.
inline ExampleBank load_bank(const std::string& dir, const std::string& stem, const std::string& language) {
    ExampleBank bank = ingest_bank(bank_path(dir, stem, ".jsonl"), language);
    bank = attach_embeddings(std::move(bank), bank_path(dir, stem, ".emb"));
    const std::string q = bank_path(dir, stem, ".qemb");
    if (std::filesystem::exists(q)) bank = attach_query_embeddings(std::move(bank), read_embeddings(q));
    return bank;
}

struct Datasets {
    ExampleBank target;
    ExampleBank validation;
    std::vector<ExampleBank> candidates;  // in config order
};

inline Datasets load_datasets(const RunConfig& c) {
    Datasets d;
    d.target = load_bank(c.data_dir, c.target, c.target);
    d.validation = load_bank(c.data_dir, c.target + ".val", c.target);
    for (const auto& tag : c.aux) {
        d.candidates.push_back(load_bank(c.data_dir, tag, tag));
        if (d.candidates.back().dim() != d.target.dim()) throw ShapeError("bank \"" + tag + "\" has a different embedding dimension");
    }
    if (d.validation.dim() != d.target.dim()) throw ShapeError("validation embeddings have a different dimension");
    return d;
}

/// Oracle scorer over every loaded bank, or the HTTP scorer when an
/// endpoint is configured (token from SCORER_TOKEN).
inline std::unique_ptr<Scorer> make_scorer(const RunConfig& c, const Datasets& d) {
    if (!c.endpoint.empty()) {
        RemoteScorerConfig rc;
        rc.endpoint = c.endpoint;
        if (const char* t = std::getenv("SCORER_TOKEN")) rc.token = t;
        return std::make_unique<RemoteScorer>(rc);
    }
    auto oracle = std::make_unique<OracleScorer>();
    oracle->add_bank(d.target);
    oracle->add_bank(d.validation);
    for (const auto& b : d.candidates) oracle->add_bank(b);
    return oracle;
}

inline PromptTemplate template_for(const RunConfig& c) {
    const auto templates = c.templates.empty() ? builtin_templates() : load_templates(c.templates);
    auto it = templates.find(c.task);
    if (it == templates.end()) throw ParameterError("no prompt template for task \"" + c.task + "\"");
    return it->second;
}

/// QA tasks are scored with Token-F1, generation tasks with chrF1.
inline bool task_uses_token_f1(const std::string& task) { return task.find("qa") != std::string::npos; }

/// Downstream validation: retrieve K demonstrations from `pool` for each
/// validation sample, generate, and average the task metric.
inline double generation_score(const RetrieverParams& params, const ExampleBank& validation, const ExampleBank& pool,
                               const Scorer& scorer, const PromptTemplate& tmpl, std::size_t K, double tradeoff,
                               bool token_level) {
    if (validation.empty()) throw EmptyInputError("generation validation: validation bank is empty");
    const std::size_t k = std::min(K, pool.size());
    double total = 0.0;
    for (std::size_t i = 0; i < validation.size(); ++i) {
        const RetrievalResult r = retrieve(params, pool, validation.query_row(i), k, tradeoff);
        std::vector<Example> demos;
        for (auto idx : r.selected) demos.push_back(pool.examples[idx]);
        const std::string prompt = render(tmpl, demos, validation.examples[i], nullptr);
        const std::string hyp = scorer.generate(prompt);
        total += token_level ? token_f1(hyp, validation.examples[i].output_text)
                             : chrf1(hyp, validation.examples[i].output_text);
    }
    return total / static_cast<double>(validation.size());
}

// ---------------------------------------------------------------------------

struct TrainOutcome {
    std::optional<AuxSelection> selection;
    std::optional<TrainState> altmin;
    std::optional<DppTrainResult> dpp;
    RetrieverParams final_params;  // rho-bar
    nlohmann::json manifest;
};

inline std::vector<std::string> selected_languages(const RunConfig& c, const Datasets& d,
                                                   std::optional<AuxSelection>* selection = nullptr) {
    if (d.candidates.empty()) return {};
    AuxSelection sel = select_auxiliary(d.target, d.candidates, c.delta);
    auto langs = sel.selected;
    if (selection) *selection = std::move(sel);
    return langs;
}

/// Target bank followed by the selected auxiliaries (the retrieval pool and
/// the diversity-training set).
inline ExampleBank retrieval_pool(const Datasets& d, const std::vector<std::string>& selected) {
    std::vector<const ExampleBank*> parts{&d.target};
    for (const auto& b : d.candidates)
        if (std::find(selected.begin(), selected.end(), b.language) != selected.end()) parts.push_back(&b);
    if (parts.size() == 1) return d.target;
    return merge_banks(parts);
}

inline nlohmann::json selection_json(const AuxSelection& s) {
    return {{"similarities", s.similarities}, {"threshold", s.threshold}, {"selected", s.selected}};
}

/// Auxiliary selection, then (by mode) alternating minimization and/or
/// diversity fine-tuning. The manifest holds no timestamps, so identical
/// inputs give identical manifests.
inline TrainOutcome run_pipeline(const RunConfig& c, const Datasets& d, const Scorer& scorer) {
    c.validate();
    TrainOutcome out;
    const auto selected = selected_languages(c, d, &out.selection);
    std::vector<ExampleBank> aux;
    for (const auto& b : d.candidates)
        if (std::find(selected.begin(), selected.end(), b.language) != selected.end()) aux.push_back(b);

    nlohmann::json m;
    m["config"] = c;
    m["config_hash"] = config_hash(c);
    m["seed"] = c.seed;
    m["mode"] = c.mode;
    m["aux_selection"] = out.selection ? selection_json(*out.selection) : nlohmann::json(nullptr);

    RetrieverParams start = RetrieverParams::identity(d.target.dim());
    if (c.mode != "dpp-only") {
        AltMinConfig ac;
        ac.relevance = c.relevance();
        ac.iterations = c.iterations;
        ac.seed = c.seed;
        if (c.validate_with_generation) {
            const PromptTemplate tmpl = template_for(c);
            ac.validator = [&, tmpl](const RetrieverParams& p) {
                return generation_score(p, d.validation, d.target, scorer, tmpl, c.k, c.tradeoff,
                                        task_uses_token_f1(c.task));
            };
        }
        BankCollection banks{d.target, d.validation, aux};
        out.altmin = run_alternating_minimization(banks, scorer, ac);
        start = out.altmin->best;
        m["validation_metric"] = c.validate_with_generation ? (task_uses_token_f1(c.task) ? "token_f1" : "chrf1") : "mrr";
        m["trace"] = out.altmin->trace;
        m["target_trace"] = out.altmin->target_trace;
        m["best_iteration"] = out.altmin->best_iteration;
        m["best_score"] = out.altmin->best_score;
        m["checkpoints"]["merged"] = out.altmin->checkpoint_checksums;
        m["checkpoints"]["best"] = checkpoint_checksum(out.altmin->best);
    }
    if (c.mode != "relevance-only") {
        const ExampleBank pool = retrieval_pool(d, selected);
        DppConfig dc = c.dpp();
        dc.seed = derive_seed(c.seed, 0, bank_fingerprint(pool));
        out.dpp = train_dpp(start, pool, dc);
        out.final_params = out.dpp->params;
        m["dpp_loss_trace"] = out.dpp->loss_trace;
        m["dpp_flagged"] = out.dpp->flagged;
    } else {
        out.final_params = start;
    }
    m["checkpoints"]["final"] = checkpoint_checksum(out.final_params);
    out.manifest = std::move(m);
    return out;
}

}  // namespace exsel
