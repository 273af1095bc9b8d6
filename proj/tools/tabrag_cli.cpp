// tabrag: command-line front for the table-retrieval pipeline.
// Subcommands cover the full artifact lifecycle: synth -> ingest -> train ->
// index -> retrieve/rerank/answer -> build-sets -> eval -> bench -> serve.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include <CLI11.hpp>

#include "tabrag/remote.hpp"
#include "tabrag/service.hpp"
#include "tabrag/synth.hpp"
#include "tabrag/tabrag.hpp"

namespace fs = std::filesystem;
using namespace tabrag;

namespace {

struct CommonArgs {
    std::string corpus_path;
    std::string params_path;
    std::string index_path;
    std::string rules_path;
    std::string scorer = "planted";
    std::string gen = "echo";
    std::string scorer_endpoint;
    std::string gen_endpoint;
    double epsilon = 0.0;
    std::uint64_t seed = 42;
    std::size_t n_retrieve = 50;
    std::size_t n_rerank = 10;
    std::size_t k_keep = 1;
    std::string k_grid = "1,10,20,30,40,50,100,150,200";
    double scorer_flops = 0.0;
    double gen_flops = 0.0;
    int timeout_ms = 5000;
    int retries = 2;
};

void add_artifact_options(CLI::App* cmd, CommonArgs& args, bool needs_params_index) {
    cmd->add_option("--corpus", args.corpus_path, "corpus file (line-delimited records)")
        ->envname("TABRAG_CORPUS")
        ->required();
    auto* p = cmd->add_option("--params", args.params_path, "encoder checkpoint")
                  ->envname("TABRAG_PARAMS");
    auto* x = cmd->add_option("--index", args.index_path, "vector index file")
                  ->envname("TABRAG_INDEX");
    if (needs_params_index) {
        p->required();
        x->required();
    }
    cmd->add_option("--rules", args.rules_path, "filter rule file (JSON)")
        ->envname("TABRAG_RULES");
    cmd->add_option("--seed", args.seed, "master seed")->envname("TABRAG_SEED");
}

void add_pipeline_options(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--n-retrieve", args.n_retrieve, "retrieval candidate count")
        ->envname("TABRAG_N_RETRIEVE");
    cmd->add_option("--n-rerank", args.n_rerank, "candidates passed to the reranker")
        ->envname("TABRAG_N_RERANK");
    cmd->add_option("--k-keep", args.k_keep, "contexts kept for generation")
        ->envname("TABRAG_K_KEEP");
    cmd->add_option("--scorer", args.scorer, "reranker backend: planted|proxy|remote")
        ->envname("TABRAG_SCORER")
        ->check(CLI::IsMember({"planted", "proxy", "remote"}));
    cmd->add_option("--gen", args.gen, "generation backend: echo|remote")
        ->envname("TABRAG_GEN")
        ->check(CLI::IsMember({"echo", "remote"}));
    cmd->add_option("--epsilon", args.epsilon, "planted scorer noise in [0,1]");
    cmd->add_option("--scorer-endpoint", args.scorer_endpoint, "remote scorer base URL");
    cmd->add_option("--gen-endpoint", args.gen_endpoint, "remote generator base URL");
    cmd->add_option("--scorer-flops", args.scorer_flops, "declared FLOPs per scorer pass");
    cmd->add_option("--gen-flops", args.gen_flops, "declared FLOPs per generation pass");
    cmd->add_option("--timeout-ms", args.timeout_ms, "remote request timeout");
    cmd->add_option("--retries", args.retries, "remote request retries");
}

// Depth values the user left at their defaults follow the explicitly set
// ones, so "retrieve --n-retrieve 3" works; explicit contradictions still
// fail PipelineOptions validation.
void reconcile_depths(CLI::App* cmd, CommonArgs& args) {
    if (cmd->count("--n-rerank") == 0) args.n_rerank = std::min(args.n_rerank, args.n_retrieve);
    if (cmd->count("--k-keep") == 0) args.k_keep = std::min(args.k_keep, args.n_rerank);
}

FilterRuleSet load_rules(const CommonArgs& args) {
    if (args.rules_path.empty()) return FilterRuleSet::default_rules();
    return FilterRuleSet::load(args.rules_path);
}

std::vector<std::size_t> parse_k_grid(const std::string& text) {
    std::vector<std::size_t> grid;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) grid.push_back(std::stoull(item));
    }
    if (grid.empty()) throw CLI::ValidationError("--k-grid", "grid is empty");
    return grid;
}

std::uint64_t file_hash(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    Fnv1aStream sum;
    char buf[1 << 16];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0)
        sum.update(buf, static_cast<std::size_t>(in.gcount()));
    return sum.value();
}

std::unique_ptr<Pipeline> make_pipeline(const CommonArgs& args) {
    Corpus corpus = load_corpus(args.corpus_path);
    EncoderParams params = load_encoder_params(args.params_path);
    VectorIndex index = VectorIndex::load(args.index_path);
    if (auto warn = index.version_warning(params)) std::cerr << "warning: " << *warn << "\n";

    PipelineOptions opts{args.n_retrieve, args.n_rerank, args.k_keep};
    auto pipeline = std::make_unique<Pipeline>(std::move(corpus), std::move(params),
                                               std::move(index), load_rules(args), opts);

    if (args.scorer == "planted") {
        pipeline->use_planted_scorer(args.epsilon, args.seed);
    } else if (args.scorer == "proxy") {
        pipeline->use_proxy_scorer();
    } else {
        if (args.scorer_endpoint.empty())
            throw CLI::ValidationError("--scorer-endpoint", "required for --scorer remote");
        RemoteConfig cfg;
        cfg.endpoint = args.scorer_endpoint;
        cfg.timeout_ms = args.timeout_ms;
        cfg.retries = args.retries;
        pipeline->set_scorer(std::make_shared<RemoteScorer>(cfg, pipeline->corpus(),
                                                            pipeline->templates()));
    }
    if (args.gen == "echo") {
        pipeline->use_echo_generator();
    } else {
        if (args.gen_endpoint.empty())
            throw CLI::ValidationError("--gen-endpoint", "required for --gen remote");
        RemoteConfig cfg;
        cfg.endpoint = args.gen_endpoint;
        cfg.timeout_ms = args.timeout_ms;
        cfg.retries = args.retries;
        pipeline->set_generator(std::make_shared<RemoteGenerationBackend>(cfg));
    }
    if (args.scorer_flops > 0.0) pipeline->set_scorer_flops({args.scorer_flops, 1});
    if (args.gen_flops > 0.0) pipeline->set_generator_flops({args.gen_flops, 1});
    return pipeline;
}

std::vector<QuerySample> select_batch(const Corpus& corpus, const std::string& split) {
    std::vector<QuerySample> out;
    for (const auto& s : corpus.samples)
        if ((split == "train" && s.split == Split::Train) ||
            (split == "test" && s.split == Split::Test) || split == "all")
            out.push_back(s);
    if (out.empty()) throw std::runtime_error("no samples in split \"" + split + "\"");
    return out;
}

// Echo the effective option values (flags > env > config > defaults).
void echo_config(const CLI::App& cmd) {
    std::cerr << "# effective configuration for \"" << cmd.get_name() << "\"\n";
    for (const auto* opt : cmd.get_options()) {
        if (opt->get_name().rfind("--", 0) != 0) continue;
        const auto& results = opt->results();
        std::string value;
        if (!results.empty()) {
            for (const auto& r : results) value += (value.empty() ? "" : ",") + r;
        } else {
            value = opt->get_default_str();
            if (value.empty()) value = "(unset)";
        }
        std::cerr << "#   " << opt->get_name() << " = " << value << "\n";
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"tabrag: retrieve-rerank-generate engine over table collections"};
    app.require_subcommand(1);
    app.set_config("--config")->envname("TABRAG_CONFIG");

    // ----- synth ------------------------------------------------------------
    auto* synth = app.add_subcommand("synth", "generate a planted synthetic corpus");
    std::string synth_out;
    std::size_t synth_docs = 500, synth_tokens = 12;
    double synth_keep = 0.6;
    std::uint64_t synth_seed = 1;
    synth->add_option("--out", synth_out)->required();
    synth->add_option("--docs", synth_docs);
    synth->add_option("--tokens", synth_tokens);
    synth->add_option("--keep-prob", synth_keep);
    synth->add_option("--seed", synth_seed)->envname("TABRAG_SEED");

    // ----- ingest -----------------------------------------------------------
    auto* ingest = app.add_subcommand("ingest",
                                      "load, filter, prune and partition a corpus");
    CommonArgs ingest_args;
    std::string ingest_out;
    std::string ingest_partitions = "0.2,0.5,0.3";
    ingest->add_option("--corpus", ingest_args.corpus_path)->envname("TABRAG_CORPUS")->required();
    ingest->add_option("--rules", ingest_args.rules_path, "filter rule file (JSON)")
        ->envname("TABRAG_RULES");
    ingest->add_option("--seed", ingest_args.seed)->envname("TABRAG_SEED");
    ingest->add_option("--out", ingest_out, "normalized corpus output")->required();
    ingest->add_option("--partitions", ingest_partitions,
                       "training partition fractions (comma separated)");

    // ----- train ------------------------------------------------------------
    auto* train = app.add_subcommand("train", "train the bi-encoder retriever");
    CommonArgs train_args;
    TrainConfig train_cfg;
    std::string train_variant = "symmetric_infonce";
    std::string loss_curve_out;
    train->add_option("--corpus", train_args.corpus_path)->envname("TABRAG_CORPUS")->required();
    train->add_option("--params-out", train_args.params_path, "checkpoint output")->required();
    train->add_option("--seed", train_args.seed)->envname("TABRAG_SEED");
    train->add_option("--epochs", train_cfg.epochs);
    train->add_option("--batch-size", train_cfg.batch_size);
    train->add_option("--lr", train_cfg.learning_rate);
    train->add_option("--warmup", train_cfg.warmup_steps);
    train->add_option("--tau", train_cfg.temperature);
    train->add_option("--d", train_cfg.d, "embedding dimension");
    train->add_option("--d-f", train_cfg.d_f, "feature dimension");
    train->add_option("--variant", train_variant)
        ->check(CLI::IsMember({"symmetric_infonce", "literal_paper"}));
    train->add_option("--loss-curve", loss_curve_out, "loss curve output (step, loss)");

    // ----- index ------------------------------------------------------------
    auto* index_cmd = app.add_subcommand("index", "embed all tables and build the index");
    CommonArgs index_args;
    std::string index_backend = "exact";
    std::size_t index_lists = 0, index_probes = 0;
    index_cmd->add_option("--corpus", index_args.corpus_path)->envname("TABRAG_CORPUS")->required();
    index_cmd->add_option("--params", index_args.params_path)->envname("TABRAG_PARAMS")->required();
    index_cmd->add_option("--index-out", index_args.index_path, "index output")->required();
    index_cmd->add_option("--seed", index_args.seed)->envname("TABRAG_SEED");
    index_cmd->add_option("--backend", index_backend)
        ->check(CLI::IsMember({"exact", "partitioned"}));
    index_cmd->add_option("--num-lists", index_lists, "partitioned: number of cells");
    index_cmd->add_option("--probes", index_probes, "partitioned: cells probed per query");

    // ----- retrieve ---------------------------------------------------------
    auto* retrieve = app.add_subcommand("retrieve", "query the index");
    CommonArgs retrieve_args;
    std::string retrieve_query, retrieve_sample, retrieve_split, retrieve_run_out;
    add_artifact_options(retrieve, retrieve_args, true);
    add_pipeline_options(retrieve, retrieve_args);
    retrieve->add_option("--query", retrieve_query, "free text query");
    retrieve->add_option("--sample-id", retrieve_sample, "query by corpus sample id");
    retrieve->add_option("--batch-split", retrieve_split, "run every sample of a split")
        ->check(CLI::IsMember({"train", "test", "all"}));
    retrieve->add_option("--run-out", retrieve_run_out, "ranking-run output file");

    // ----- rerank -----------------------------------------------------------
    auto* rerank_cmd = app.add_subcommand("rerank", "retrieve then rerank");
    CommonArgs rerank_args;
    std::string rerank_query, rerank_sample, rerank_split, rerank_run_out;
    add_artifact_options(rerank_cmd, rerank_args, true);
    add_pipeline_options(rerank_cmd, rerank_args);
    rerank_cmd->add_option("--query", rerank_query);
    rerank_cmd->add_option("--sample-id", rerank_sample);
    rerank_cmd->add_option("--batch-split", rerank_split)
        ->check(CLI::IsMember({"train", "test", "all"}));
    rerank_cmd->add_option("--run-out", rerank_run_out);

    // ----- answer -----------------------------------------------------------
    auto* answer = app.add_subcommand("answer", "full retrieve-rerank-generate pipeline");
    CommonArgs answer_args;
    std::string answer_query, answer_sample, answer_split, trace_out;
    bool answer_ledger = false;
    add_artifact_options(answer, answer_args, true);
    add_pipeline_options(answer, answer_args);
    answer->add_option("--query", answer_query);
    answer->add_option("--sample-id", answer_sample);
    answer->add_option("--batch-split", answer_split)
        ->check(CLI::IsMember({"train", "test", "all"}));
    answer->add_option("--trace-out", trace_out, "trace output (one JSON object per line)");
    answer->add_flag("--ledger", answer_ledger, "print the per-stage cost ledger");

    // ----- build-sets -------------------------------------------------------
    auto* build_sets = app.add_subcommand("build-sets",
                                          "construct the reranker training sets");
    CommonArgs bs_args;
    std::string bs_run, bs_out;
    std::size_t bs_negatives = 20, bs_pool = 50, bs_rqa_width = 2, bs_rar_width = 2;
    build_sets->add_option("--corpus", bs_args.corpus_path)
        ->envname("TABRAG_CORPUS")
        ->required();
    build_sets->add_option("--seed", bs_args.seed)->envname("TABRAG_SEED");
    build_sets->add_option("--run", bs_run, "retrieval run file")->required();
    build_sets->add_option("--out", bs_out, "training-set output")->required();
    build_sets->add_option("--negatives", bs_negatives);
    build_sets->add_option("--pool", bs_pool);
    build_sets->add_option("--rqa-width", bs_rqa_width);
    build_sets->add_option("--rar-width", bs_rar_width);

    // ----- eval -------------------------------------------------------------
    auto* eval_cmd = app.add_subcommand("eval", "compute ranking and generation metrics");
    std::vector<std::string> eval_runs;
    std::string eval_gen_records, eval_curves_out, eval_report_out;
    std::string eval_k_grid = "1,10,20,30,40,50,100,150,200";
    eval_cmd->add_option("--run", eval_runs, "ranking run file (repeatable)");
    eval_cmd->add_option("--gen-records", eval_gen_records,
                         "generation eval records (sample_id, prediction, reference, task_tag)");
    eval_cmd->add_option("--k-grid", eval_k_grid)->envname("TABRAG_K_GRID");
    eval_cmd->add_option("--curves-out", eval_curves_out);
    eval_cmd->add_option("--report-out", eval_report_out);

    // ----- bench ------------------------------------------------------------
    auto* bench = app.add_subcommand("bench", "run a batch and report the cost ledger");
    CommonArgs bench_args;
    std::string bench_split = "test";
    std::size_t bench_limit = 50;
    add_artifact_options(bench, bench_args, true);
    add_pipeline_options(bench, bench_args);
    bench->add_option("--batch-split", bench_split)
        ->check(CLI::IsMember({"train", "test", "all"}));
    bench->add_option("--limit", bench_limit, "max queries to run");
    std::string bench_ledger_out;
    bench->add_option("--ledger-out", bench_ledger_out,
                      "write per-stage records as line-delimited objects");

    // ----- serve ------------------------------------------------------------
    auto* serve = app.add_subcommand("serve", "HTTP service over the pipeline");
    CommonArgs serve_args;
    int serve_port = 8780;
    std::string serve_host = "127.0.0.1";
    add_artifact_options(serve, serve_args, true);
    add_pipeline_options(serve, serve_args);
    serve->add_option("--port", serve_port)->envname("TABRAG_PORT");
    serve->add_option("--host", serve_host);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*synth) {
            echo_config(*synth);
            Corpus corpus = synth::make_planted_corpus(
                {synth_docs, synth_tokens, synth_keep, synth_seed});
            auto manifest = save_corpus(corpus, synth_out);
            std::cout << manifest.to_json().dump(2) << "\n";
        } else if (*ingest) {
            echo_config(*ingest);
            Corpus corpus = load_corpus(ingest_args.corpus_path);
            FilterRuleSet rules = load_rules(ingest_args);

            // filter train and test separately (no-leakage guard)
            std::vector<QuerySample> train_in, test_in;
            for (const auto& s : corpus.samples)
                (s.split == Split::Train ? train_in : test_in).push_back(s);
            auto f_train = filter_generic_queries(train_in, rules);
            auto f_test = filter_generic_queries(test_in, rules);

            std::size_t pruned_empty = 0;
            auto prune_all = [&](std::vector<QuerySample>& samples) {
                std::vector<QuerySample> kept;
                for (auto& s : samples) {
                    try {
                        s.pruned_query = prune_query(s.raw_query, rules);
                        kept.push_back(s);
                    } catch (const std::exception&) {
                        ++pruned_empty;  // over-broad pattern emptied the query
                    }
                }
                return kept;
            };
            auto train_kept = prune_all(f_train.kept);
            auto test_kept = prune_all(f_test.kept);

            std::vector<double> fractions;
            {
                std::stringstream ss(ingest_partitions);
                std::string item;
                while (std::getline(ss, item, ','))
                    if (!item.empty()) fractions.push_back(std::stod(item));
            }
            auto parts = split_partition(train_kept, fractions, ingest_args.seed);
            std::vector<std::size_t> part_sizes;
            Corpus normalized;
            normalized.tables = corpus.tables;
            for (std::size_t p = 0; p < parts.size(); ++p) {
                part_sizes.push_back(parts[p].size());
                for (auto& s : parts[p]) {
                    s.partition = static_cast<int>(p);
                    normalized.samples.push_back(std::move(s));
                }
            }
            for (auto& s : test_kept) normalized.samples.push_back(std::move(s));

            auto manifest = save_corpus(normalized, ingest_out, part_sizes);
            const std::size_t removed = f_train.removed.size() + f_test.removed.size();
            std::cout << "kept " << normalized.samples.size() << " samples, removed " << removed
                      << " generic, dropped " << pruned_empty << " emptied by pruning\n";
            std::cout << manifest.to_json().dump(2) << "\n";
        } else if (*train) {
            echo_config(*train);
            Corpus corpus = load_corpus(train_args.corpus_path);
            train_cfg.seed = train_args.seed;
            train_cfg.loss_variant = loss_variant_from_string(train_variant);

            std::vector<std::pair<QuerySample, TableRecord>> pairs;
            for (const auto& s : corpus.samples) {
                if (s.split != Split::Train) continue;
                pairs.emplace_back(s, *corpus.find_table(s.table_id));
            }
            auto result = train_retriever(train_cfg, pairs);
            save_encoder_params(result.params, train_args.params_path);
            if (!loss_curve_out.empty()) save_loss_curve(result.loss_curve, loss_curve_out);
            std::cout << "trained on " << pairs.size() << " pairs, " << result.loss_curve.size()
                      << " steps";
            if (!result.loss_curve.empty())
                std::cout << ", first loss " << result.loss_curve.front() << ", last loss "
                          << result.loss_curve.back();
            std::cout << "\nwrote " << train_args.params_path << " (version "
                      << result.params.version << ")\n";
        } else if (*index_cmd) {
            echo_config(*index_cmd);
            Corpus corpus = load_corpus(index_args.corpus_path);
            EncoderParams params = load_encoder_params(index_args.params_path);

            std::vector<std::pair<std::string, EmbeddingVector>> embeddings;
            for (const auto& t : corpus.tables) {
                if (!t.surrogate_text)
                    throw std::runtime_error("table \"" + t.table_id +
                                             "\" has no surrogate_text to embed");
                embeddings.emplace_back(
                    t.table_id, encode_doc(params, featurize(*t.surrogate_text, params.d_f)));
            }
            IndexMetadata meta;
            meta.encoder_version = params.version;
            meta.corpus_hash = file_hash(index_args.corpus_path);
            IndexBackend backend = ExactBackend{};
            if (index_backend == "partitioned")
                backend = PartitionedBackend{index_lists, index_probes, index_args.seed};
            auto index = VectorIndex::build(embeddings, backend, meta);
            index.save(index_args.index_path);
            std::cout << "indexed " << index.size() << " tables (dim " << index.dim() << ", "
                      << (index.partitioned() ? "partitioned" : "exact") << ") -> "
                      << index_args.index_path << "\n";
        } else if (*retrieve) {
            echo_config(*retrieve);
            reconcile_depths(retrieve, retrieve_args);
            auto pipeline = make_pipeline(retrieve_args);
            if (!retrieve_split.empty()) {
                auto samples = select_batch(pipeline->corpus(), retrieve_split);
                auto run = pipeline->run_retrieval(samples, retrieve_args.n_retrieve);
                if (retrieve_run_out.empty())
                    throw CLI::ValidationError("--run-out", "required with --batch-split");
                save_run(run, retrieve_run_out);
                std::cout << "wrote " << run.entries.size() << " entries to "
                          << retrieve_run_out << "\n";
            } else {
                std::string text = retrieve_query;
                if (!retrieve_sample.empty()) {
                    const QuerySample* s = pipeline->corpus().find_sample(retrieve_sample);
                    if (!s) throw std::runtime_error("unknown sample_id " + retrieve_sample);
                    text = s->pruned_query;
                }
                if (text.empty())
                    throw CLI::ValidationError("--query",
                                               "need --query, --sample-id or --batch-split");
                for (const auto& r : pipeline->retrieve(text, retrieve_args.n_retrieve))
                    std::cout << r.rank << "\t" << r.table_id << "\t" << r.score << "\n";
            }
        } else if (*rerank_cmd) {
            echo_config(*rerank_cmd);
            reconcile_depths(rerank_cmd, rerank_args);
            auto pipeline = make_pipeline(rerank_args);
            if (!rerank_split.empty()) {
                auto samples = select_batch(pipeline->corpus(), rerank_split);
                auto run = pipeline->run_rerank(samples);
                if (rerank_run_out.empty())
                    throw CLI::ValidationError("--run-out", "required with --batch-split");
                save_run(run, rerank_run_out);
                std::cout << "wrote " << run.entries.size() << " entries to " << rerank_run_out
                          << "\n";
            } else {
                QuerySample q;
                if (!rerank_sample.empty()) {
                    const QuerySample* s = pipeline->corpus().find_sample(rerank_sample);
                    if (!s) throw std::runtime_error("unknown sample_id " + rerank_sample);
                    q = *s;
                } else if (!rerank_query.empty()) {
                    q.sample_id = "adhoc";
                    q.raw_query = q.pruned_query = rerank_query;
                } else {
                    throw CLI::ValidationError("--query",
                                               "need --query, --sample-id or --batch-split");
                }
                auto retrieved = pipeline->retrieve(q.pruned_query, rerank_args.n_retrieve);
                const std::size_t n = std::min<std::size_t>(rerank_args.n_rerank,
                                                            retrieved.size());
                std::vector<SearchResult> pool(retrieved.begin(), retrieved.begin() + n);
                for (const auto& c : rerank(pipeline->scorer(), q, pool, pool.size()))
                    std::cout << c.table_id << "\t" << c.prob_true << "\n";
            }
        } else if (*answer) {
            echo_config(*answer);
            reconcile_depths(answer, answer_args);
            auto pipeline = make_pipeline(answer_args);
            std::vector<QuerySample> batch;
            if (!answer_split.empty()) {
                batch = select_batch(pipeline->corpus(), answer_split);
            } else if (!answer_sample.empty()) {
                const QuerySample* s = pipeline->corpus().find_sample(answer_sample);
                if (!s) throw std::runtime_error("unknown sample_id " + answer_sample);
                batch = {*s};
            } else if (!answer_query.empty()) {
                QuerySample q;
                q.sample_id = "adhoc";
                q.raw_query = q.pruned_query = answer_query;
                batch = {q};
            } else {
                throw CLI::ValidationError("--query",
                                           "need --query, --sample-id or --batch-split");
            }

            std::ofstream traces;
            if (!trace_out.empty()) {
                traces.open(trace_out);
                if (!traces) throw std::runtime_error("cannot write " + trace_out);
            }
            for (const auto& s : batch) {
                auto outcome = pipeline->answer_sample(s);
                if (traces.is_open()) traces << outcome.trace.to_json().dump() << "\n";
                if (batch.size() == 1) {
                    std::cout << "answer: " << serialize_answer(outcome.answer.parsed) << "\n";
                    if (answer_ledger)
                        std::cout << render_ledger(pipeline->ledger_records(outcome.trace));
                }
            }
            if (batch.size() > 1)
                std::cout << "answered " << batch.size() << " queries"
                          << (trace_out.empty() ? "" : ", traces in " + trace_out) << "\n";
        } else if (*build_sets) {
            echo_config(*build_sets);
            Corpus corpus = load_corpus(bs_args.corpus_path);
            RankingRun run = load_run(bs_run);

            // partition 0 -> RQA, 1 -> context ranking, 2 -> RAR; samples
            // without a recorded partition are split 20/50/30 on the fly.
            std::vector<QuerySample> parts[3];
            std::vector<QuerySample> unassigned;
            std::unordered_map<std::string, const RunEntry*> covered;
            for (const auto& e : run.entries) covered[e.sample_id] = &e;
            for (const auto& s : corpus.samples) {
                if (s.split != Split::Train || !covered.count(s.sample_id)) continue;
                if (s.partition >= 0 && s.partition < 3)
                    parts[s.partition].push_back(s);
                else
                    unassigned.push_back(s);
            }
            if (!unassigned.empty()) {
                auto split = split_partition(unassigned, {0.2, 0.5, 0.3}, bs_args.seed);
                for (int p = 0; p < 3; ++p)
                    parts[p].insert(parts[p].end(), split[p].begin(), split[p].end());
            }

            std::vector<RerankTrainingRecord> records;
            auto rqa = build_rqa_set(parts[0], run, bs_rqa_width, bs_args.seed);
            auto cr = build_context_ranking_set(parts[1], run, bs_negatives, bs_pool,
                                                bs_args.seed);
            auto rar = build_rar_set(parts[2], run, bs_rar_width, bs_args.seed);
            for (auto& r : rqa.records) records.push_back(std::move(r));
            for (auto& r : cr.records) records.push_back(std::move(r));
            for (auto& r : rar.records) records.push_back(std::move(r));
            for (const auto& w : cr.warnings) std::cerr << "warning: " << w << "\n";

            auto manifest = export_training_sets(records, bs_out);
            std::cout << manifest.dump(2) << "\n";
        } else if (*eval_cmd) {
            echo_config(*eval_cmd);
            auto grid = parse_k_grid(eval_k_grid);
            std::vector<MetricCurve> curves;
            ordered_json report;
            for (const auto& path : eval_runs) {
                RankingRun run = load_run(path);
                auto rc = metric_curves(run, grid);
                curves.insert(curves.end(), rc.begin(), rc.end());
                ordered_json stage;
                stage["stage"] = run.stage_tag;
                stage["queries"] = run.entries.size();
                stage["mrr@" + std::to_string(grid.front())] = mrr_at_k(run, grid.front());
                stage["recall@" + std::to_string(grid.back())] = recall_at_k(run, grid.back());
                report["runs"].push_back(stage);
            }
            if (!eval_gen_records.empty()) {
                std::ifstream in(eval_gen_records);
                if (!in) throw std::runtime_error("cannot read " + eval_gen_records);
                std::vector<GenEvalRecord> acc_records;
                double bleu_sum = 0.0;
                std::size_t bleu_n = 0;
                std::string line;
                while (std::getline(in, line)) {
                    if (line.empty()) continue;
                    auto j = json::parse(line);
                    GenEvalRecord r;
                    r.sample_id = j.value("sample_id", "");
                    r.prediction = j.at("prediction").get<std::string>();
                    r.reference = j.at("reference").get<std::string>();
                    r.task_tag = j.value("task_tag", "QA");
                    if (r.task_tag == "text_generation") {
                        bleu_sum += bleu(r.prediction, {r.reference});
                        ++bleu_n;
                    } else {
                        acc_records.push_back(std::move(r));
                    }
                }
                if (!acc_records.empty())
                    report["accuracy"] = exact_match_accuracy(acc_records);
                if (bleu_n > 0) report["bleu"] = bleu_sum / static_cast<double>(bleu_n);
            }
            if (!eval_curves_out.empty()) {
                std::ofstream out(eval_curves_out);
                write_curves(curves, out);
            } else {
                write_curves(curves, std::cout);
            }
            if (!eval_report_out.empty()) {
                std::ofstream out(eval_report_out);
                out << report.dump(2) << "\n";
            }
            std::cout << report.dump(2) << "\n";
        } else if (*bench) {
            echo_config(*bench);
            reconcile_depths(bench, bench_args);
            auto pipeline = make_pipeline(bench_args);
            auto samples = select_batch(pipeline->corpus(), bench_split);
            if (samples.size() > bench_limit) samples.resize(bench_limit);

            std::vector<StageRecord> all_records;
            const auto t0 = std::chrono::steady_clock::now();
            for (const auto& s : samples) {
                auto outcome = pipeline->answer_sample(s);
                auto records = pipeline->ledger_records(outcome.trace);
                all_records.insert(all_records.end(), records.begin(), records.end());
            }
            const double wall =
                std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                    .count();
            std::cout << render_ledger(all_records);
            std::cout << "batch: " << samples.size() << " queries in " << wall << " ms ("
                      << wall / static_cast<double>(samples.size()) << " ms/query)\n";
            if (auto mem = peak_memory_gb())
                std::cout << "peak memory: " << *mem << " GB\n";
            if (!bench_ledger_out.empty()) {
                std::ofstream out(bench_ledger_out);
                write_ledger_records(all_records, out);
            }
        } else if (*serve) {
            echo_config(*serve);
            reconcile_depths(serve, serve_args);
            auto pipeline = make_pipeline(serve_args);
            Service service(*pipeline);
            httplib::Server server;
            service.attach(server);
            if (!server.bind_to_port(serve_host, serve_port))
                throw std::runtime_error("cannot bind " + serve_host + ":" +
                                         std::to_string(serve_port) + " (port busy?)");
            std::cout << "listening on http://" << serve_host << ":" << serve_port
                      << " (index: " << pipeline->index().size() << " tables, params version "
                      << pipeline->params().version << ")\n";
            server.listen_after_bind();
        }
    } catch (const CLI::Error& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
