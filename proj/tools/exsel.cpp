// Command-line front end: ingest, select-aux, train, retrieve, eval, synth.

#include "exsel/exsel.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Exit codes.
constexpr int kUsage = 2;
constexpr int kFailure = 1;

void write_json(const std::string& path, const json& j) {
    if (path.empty() || path == "-") {
        std::cout << j.dump(2) << '\n';
        return;
    }
    std::ofstream out(path, std::ios::binary);
    out << j.dump(2) << '\n';
    if (!out) throw exsel::DataError("cannot write " + path);
}

/// Run-config options shared by the pipeline subcommands. Flags override
/// fields of the --config file; only flags actually given are applied.
struct ConfigOptions {
    std::string path;
    exsel::RunConfig flags;
    std::vector<std::pair<CLI::Option*, std::function<void(exsel::RunConfig&, const exsel::RunConfig&)>>> bound;

    template <typename T>
    void bind(CLI::App* app, const std::string& name, T exsel::RunConfig::*field, const std::string& help) {
        CLI::Option* opt = app->add_option(name, flags.*field, help);
        bound.emplace_back(opt, [field](exsel::RunConfig& dst, const exsel::RunConfig& src) { dst.*field = src.*field; });
    }

    void bind_flag(CLI::App* app, const std::string& name, bool exsel::RunConfig::*field, const std::string& help) {
        CLI::Option* opt = app->add_flag(name, flags.*field, help);
        bound.emplace_back(opt, [field](exsel::RunConfig& dst, const exsel::RunConfig& src) { dst.*field = src.*field; });
    }

    void attach(CLI::App* app) {
        app->add_option("--config", path, "Run config (flat JSON)");
        bind(app, "--data-dir", &exsel::RunConfig::data_dir, "Directory holding <tag>.jsonl/.emb files");
        bind(app, "--target", &exsel::RunConfig::target, "Target language tag");
        bind(app, "--aux", &exsel::RunConfig::aux, "Candidate auxiliary language tags");
        bind(app, "--delta", &exsel::RunConfig::delta, "Auxiliary similarity percentile");
        bind(app, "--iterations", &exsel::RunConfig::iterations, "Outer alternating-minimization iterations");
        bind(app, "--epochs", &exsel::RunConfig::epochs, "Relevance epochs per iteration");
        bind(app, "--dpp-epochs", &exsel::RunConfig::dpp_epochs, "Diversity fine-tuning epochs");
        bind(app, "--batch", &exsel::RunConfig::batch, "Minibatch size");
        bind(app, "--lr", &exsel::RunConfig::lr, "Adam learning rate");
        bind(app, "--candidates", &exsel::RunConfig::candidates, "Mined candidates per sample (F)");
        bind(app, "--k", &exsel::RunConfig::k, "In-context examples per prompt (K)");
        bind(app, "--subsets", &exsel::RunConfig::subsets, "Subsets per sample in the diversity loss");
        bind(app, "--tradeoff", &exsel::RunConfig::tradeoff, "Relevance/diversity trade-off lambda");
        bind(app, "--dpp-pool", &exsel::RunConfig::dpp_pool, "Candidate pool per diversity training sample");
        bind(app, "--seed", &exsel::RunConfig::seed, "Random seed");
        bind(app, "--mode", &exsel::RunConfig::mode, "full | relevance-only | dpp-only");
        bind(app, "--endpoint", &exsel::RunConfig::endpoint, "Scorer service URL (token from SCORER_TOKEN)");
        bind(app, "--bm25-k1", &exsel::RunConfig::bm25_k1, "BM25 k1");
        bind(app, "--bm25-b", &exsel::RunConfig::bm25_b, "BM25 b");
        bind_flag(app, "--candidates-by-embedding", &exsel::RunConfig::candidates_by_embedding,
                  "Mine candidates by base-embedding cosine instead of BM25");
        bind_flag(app, "--validate-with-generation", &exsel::RunConfig::validate_with_generation,
                  "Validate by generation and task metric instead of MRR");
        bind(app, "--task", &exsel::RunConfig::task, "Prompt template / metric task");
        bind(app, "--templates", &exsel::RunConfig::templates, "Prompt template overrides (JSON)");
        bind(app, "--max-in-flight", &exsel::RunConfig::max_in_flight, "Concurrent scorer requests");
    }

    exsel::RunConfig resolve() const {
        exsel::RunConfig c = path.empty() ? exsel::RunConfig{} : exsel::read_config(path);
        for (const auto& [opt, apply] : bound)
            if (opt->count() > 0) apply(c, flags);
        c.validate();
        return c;
    }
};

json ingest(const std::string& input, const std::string& language, const std::string& emb, const std::string& qemb) {
    exsel::ExampleBank bank = exsel::ingest_bank(input, language);
    if (!emb.empty()) bank = exsel::attach_embeddings(std::move(bank), emb);
    if (!qemb.empty()) bank = exsel::attach_query_embeddings(std::move(bank), exsel::read_embeddings(qemb));
    json j = {{"language", bank.language},
              {"examples", bank.size()},
              {"has_embeddings", bank.has_embeddings()},
              {"has_query_embeddings", bank.query_embeddings.has_value()}};
    if (bank.has_embeddings()) {
        j["dim"] = bank.dim();
        j["fingerprint"] = exsel::hex64(exsel::bank_fingerprint(bank));
    }
    return j;
}

json select_aux(const exsel::RunConfig& c) {
    const exsel::Datasets d = exsel::load_datasets(c);
    if (d.candidates.empty()) throw exsel::ParameterError("config field \"aux\" lists no candidate languages");
    json j = exsel::selection_json(exsel::select_auxiliary(d.target, d.candidates, c.delta));
    j["delta"] = c.delta;
    j["config_hash"] = exsel::config_hash(c);
    j["seed"] = c.seed;
    return j;
}

void train(const exsel::RunConfig& c, const std::string& out_dir) {
    const exsel::Datasets d = exsel::load_datasets(c);
    const auto scorer = exsel::make_scorer(c, d);
    const exsel::TrainOutcome r = exsel::run_pipeline(c, d, *scorer);
    fs::create_directories(out_dir);
    exsel::write_checkpoint((fs::path(out_dir) / "retriever.rtv").string(), r.final_params);
    write_json((fs::path(out_dir) / "manifest.json").string(), r.manifest);
}

std::string default_query_embeddings(const std::string& queries) {
    fs::path p(queries);
    for (const char* ext : {".qemb", ".emb"}) {
        fs::path candidate = p;
        candidate.replace_extension(ext);
        if (fs::exists(candidate)) return candidate.string();
    }
    throw exsel::ParameterError("no query embeddings next to " + queries + "; pass --query-embeddings");
}

void retrieve(const exsel::RunConfig& c, const std::string& checkpoint, const std::string& queries_path,
              std::string qemb_path, const std::string& output, bool top_k_only, bool with_prompt) {
    const exsel::Datasets d = exsel::load_datasets(c);
    const auto selected = exsel::selected_languages(c, d);
    const exsel::ExampleBank pool = exsel::retrieval_pool(d, selected);
    const exsel::RetrieverParams params = exsel::read_checkpoint(checkpoint);
    if (params.dim() != pool.dim()) throw exsel::ShapeError("checkpoint dimension differs from the bank embeddings");
    const auto queries = exsel::read_examples(queries_path, false);
    if (qemb_path.empty()) qemb_path = default_query_embeddings(queries_path);
    const exsel::RowMatrix qemb = exsel::read_embeddings(qemb_path);
    exsel::check_embedding_rows(qemb, queries.size());
    const std::size_t K = std::min(c.k, pool.size());
    std::optional<exsel::PromptTemplate> tmpl;
    if (with_prompt) tmpl = exsel::template_for(c);

    std::ofstream file;
    if (!output.empty() && output != "-") {
        file.open(output, std::ios::binary);
        if (!file) throw exsel::DataError("cannot write " + output);
    }
    std::ostream& out = file.is_open() ? static_cast<std::ostream&>(file) : std::cout;
    for (std::size_t i = 0; i < queries.size(); ++i) {
        const exsel::Vector q = qemb.row(static_cast<Eigen::Index>(i)).transpose();
        const exsel::RetrievalResult r = top_k_only ? exsel::retrieve_top_k(params, pool, q, K, c.tradeoff)
                                                    : exsel::retrieve(params, pool, q, K, c.tradeoff);
        json ids = json::array();
        std::vector<exsel::Example> demos;
        for (auto idx : r.selected) {
            ids.push_back(pool.examples[idx].id);
            demos.push_back(pool.examples[idx]);
        }
        json line = {{"query_id", queries[i].id}, {"selected", ids}, {"log_det", r.log_det}, {"similarities", r.similarities}};
        if (tmpl) line["prompt"] = exsel::render(*tmpl, demos, queries[i]);
        out << line.dump() << '\n';
    }
    if (file.is_open()) {
        write_json(output + ".manifest.json", {{"config_hash", exsel::config_hash(c)},
                                               {"seed", c.seed},
                                               {"checkpoint", exsel::checkpoint_checksum(params)},
                                               {"queries", queries.size()},
                                               {"pool", pool.size()},
                                               {"aux_selected", selected}});
    }
}

json eval(const std::string& predictions, const std::string& task) {
    std::ifstream in(predictions);
    if (!in) throw exsel::ParseError("cannot open " + predictions);
    std::vector<exsel::EvalRecord> records;
    std::string text;
    std::size_t line = 0;
    while (std::getline(in, text)) {
        ++line;
        if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
        json obj;
        try {
            obj = json::parse(text);
        } catch (const json::parse_error& e) {
            throw exsel::ParseError(predictions + " line " + std::to_string(line) + ": " + e.what());
        }
        for (const char* key : {"query_id", "hypothesis", "reference"}) {
            if (!obj.contains(key) || !obj[key].is_string()) {
                throw exsel::ParseError(predictions + " line " + std::to_string(line) + ": missing string field \"" + key + "\"");
            }
        }
        records.push_back(exsel::score_record(obj["query_id"], obj["hypothesis"], obj["reference"]));
    }
    const exsel::EvalSummary s = exsel::evaluate_run(records, task);
    return {{"task", s.task}, {"count", s.count}, {"chrf1", s.chrf1}, {"token_f1", s.token_f1}};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"In-context example selection for low-resource languages"};
    app.require_subcommand(1);

    std::string in_path, in_lang, in_emb, in_qemb, in_out;
    auto* cmd_ingest = app.add_subcommand("ingest", "Validate a bank file and its embeddings");
    cmd_ingest->add_option("--input", in_path, "Bank JSONL")->required();
    cmd_ingest->add_option("--language", in_lang, "Expected language tag")->required();
    cmd_ingest->add_option("--embeddings", in_emb, "Base embeddings (EMB1)");
    cmd_ingest->add_option("--query-embeddings", in_qemb, "Query-side embeddings (EMB1)");
    cmd_ingest->add_option("--output", in_out, "Report path (default stdout)");

    ConfigOptions sel_cfg;
    std::string sel_out;
    auto* cmd_select = app.add_subcommand("select-aux", "Choose auxiliary banks by embedding-centroid similarity");
    sel_cfg.attach(cmd_select);
    cmd_select->add_option("--output", sel_out, "Report path (default stdout)");

    ConfigOptions train_cfg;
    std::string train_out;
    auto* cmd_train = app.add_subcommand("train", "Train the retriever; writes retriever.rtv and manifest.json");
    train_cfg.attach(cmd_train);
    cmd_train->add_option("--out-dir", train_out, "Output directory")->required();

    ConfigOptions ret_cfg;
    std::string ret_ckpt, ret_queries, ret_qemb, ret_out;
    bool ret_top_k = false, ret_prompt = false;
    auto* cmd_retrieve = app.add_subcommand("retrieve", "Select K demonstrations per query");
    ret_cfg.attach(cmd_retrieve);
    cmd_retrieve->add_option("--checkpoint", ret_ckpt, "Retriever checkpoint (RTV1)")->required();
    cmd_retrieve->add_option("--queries", ret_queries, "Query JSONL")->required();
    cmd_retrieve->add_option("--query-embeddings", ret_qemb, "Query embeddings (default <queries>.qemb or .emb)");
    cmd_retrieve->add_option("--output", ret_out, "Output JSONL (default stdout)");
    cmd_retrieve->add_flag("--top-k-only", ret_top_k, "Relevance-only top-K instead of greedy MAP");
    cmd_retrieve->add_flag("--render", ret_prompt, "Include the rendered prompt");

    std::string ev_pred, ev_task = "translation", ev_out;
    auto* cmd_eval = app.add_subcommand("eval", "Score predictions with chrF1 and Token-F1");
    cmd_eval->add_option("--predictions", ev_pred, "Predictions JSONL {query_id, hypothesis, reference}")->required();
    cmd_eval->add_option("--task", ev_task, "Task name recorded in the summary");
    cmd_eval->add_option("--output", ev_out, "Summary path (default stdout)");

    exsel::synth::Config sc;
    std::string syn_out;
    auto* cmd_synth = app.add_subcommand("synth", "Write a synthetic multilingual benchmark");
    cmd_synth->add_option("--out-dir", syn_out, "Output directory")->required();
    cmd_synth->add_option("--seed", sc.seed, "Generator seed");
    cmd_synth->add_option("--dim", sc.dim, "Embedding dimension");
    cmd_synth->add_option("--related", sc.related, "Related candidate languages");
    cmd_synth->add_option("--unrelated", sc.unrelated, "Unrelated candidate languages");
    cmd_synth->add_option("--target-size", sc.target_size, "Target bank size");
    cmd_synth->add_option("--validation-size", sc.validation_size, "Validation split size");
    cmd_synth->add_option("--aux-size", sc.aux_size, "Auxiliary bank size");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*cmd_ingest) {
            write_json(in_out, ingest(in_path, in_lang, in_emb, in_qemb));
        } else if (*cmd_select) {
            write_json(sel_out, select_aux(sel_cfg.resolve()));
        } else if (*cmd_train) {
            train(train_cfg.resolve(), train_out);
        } else if (*cmd_retrieve) {
            retrieve(ret_cfg.resolve(), ret_ckpt, ret_queries, ret_qemb, ret_out, ret_top_k, ret_prompt);
        } else if (*cmd_eval) {
            write_json(ev_out, eval(ev_pred, ev_task));
        } else if (*cmd_synth) {
            const auto bench = exsel::synth::generate(sc);
            const json m = exsel::synth::write_benchmark(bench, syn_out);
            // desk-scale budget for the synthetic benchmark
            exsel::RunConfig rc;
            rc.data_dir = ".";
            rc.target = m["target"];
            for (const auto& l : m["candidates"]) rc.aux.push_back(l["tag"]);
            rc.epochs = 10;
            rc.dpp_epochs = 2;
            rc.candidates = 10;
            rc.k = 4;
            rc.seed = sc.seed;
            write_json((fs::path(syn_out) / "run_config.json").string(), json(rc));
        }
    } catch (const exsel::ParameterError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return kUsage;
    } catch (const exsel::ParseError& e) {
        std::cerr << "input error: " << e.what() << '\n';
        return kUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kFailure;
    }
    return 0;
}
