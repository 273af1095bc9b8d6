#pragma once

#include <chrono>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tabrag/common.hpp"
#include "tabrag/corpus.hpp"
#include "tabrag/cost.hpp"
#include "tabrag/embed.hpp"
#include "tabrag/eval.hpp"
#include "tabrag/generate.hpp"
#include "tabrag/index.hpp"
#include "tabrag/rerank.hpp"

namespace tabrag {

// ---------------------------------------------------------------------------
// End-to-end prune -> encode -> search -> rerank -> generate orchestration.
// ---------------------------------------------------------------------------

struct PipelineOptions {
    std::size_t n_retrieve = 50;
    std::size_t n_rerank = 10;
    std::size_t k_keep = 1;

    void validate() const {
        if (k_keep < 1 || k_keep > n_rerank || n_rerank > n_retrieve)
            throw std::invalid_argument(
                "pipeline options must satisfy 1 <= k_keep <= n_rerank <= n_retrieve (got " +
                std::to_string(k_keep) + ", " + std::to_string(n_rerank) + ", " +
                std::to_string(n_retrieve) + ")");
    }
};

struct StageTraceItem {
    std::string table_id;
    double score = 0.0;
};

struct StageTrace {
    Stage stage = Stage::Retrieval;
    std::string component;
    double start_ms = 0.0;
    double end_ms = 0.0;
    std::vector<StageTraceItem> items;
    std::string text;  // generation output, when applicable
};

struct PipelineTrace {
    std::string sample_id;
    std::string query;
    std::string pruned_query;
    std::vector<StageTrace> stages;
    Answer answer;

    /// Stable serialization; wall-clock durations appear only under the
    /// "latency_ms" key so they can be stripped for comparisons.
    ordered_json to_json() const {
        ordered_json j;
        j["sample_id"] = sample_id;
        j["query"] = query;
        j["pruned_query"] = pruned_query;
        j["stages"] = ordered_json::array();
        for (const auto& s : stages) {
            ordered_json sj;
            sj["stage"] = to_string(s.stage);
            sj["component"] = s.component;
            sj["latency_ms"] = s.end_ms - s.start_ms;
            if (!s.items.empty()) {
                sj["items"] = ordered_json::array();
                for (const auto& item : s.items) {
                    ordered_json ij;
                    ij["table_id"] = item.table_id;
                    ij["score"] = item.score;
                    sj["items"].push_back(std::move(ij));
                }
            }
            if (!s.text.empty()) sj["text"] = s.text;
            j["stages"].push_back(std::move(sj));
        }
        ordered_json aj;
        aj["raw"] = answer.raw;
        aj["parsed"] = answer.parsed;
        aj["status"] =
            answer.parse_status == ParseStatus::Structured ? "structured" : "fallback_raw";
        j["answer"] = std::move(aj);
        return j;
    }
};

/// Owns the immutable snapshot (corpus, encoder parameters, index, rules) and
/// the configured backends. Pipelines for distinct queries may run
/// concurrently as long as the backends are stateless per call, which the
/// built-in ones are. Not movable: backends may hold references into it.
class Pipeline {
public:
    Pipeline(Corpus corpus, EncoderParams params, VectorIndex index, FilterRuleSet rules,
             PipelineOptions opts)
        : corpus_(std::move(corpus)),
          params_(std::move(params)),
          index_(std::move(index)),
          rules_(std::move(rules)),
          opts_(opts) {
        opts_.validate();
        corpus_.rebuild_lookup();
    }

    Pipeline(const Pipeline&) = delete;
    Pipeline& operator=(const Pipeline&) = delete;

    const Corpus& corpus() const { return corpus_; }
    const EncoderParams& params() const { return params_; }
    const VectorIndex& index() const { return index_; }
    const FilterRuleSet& rules() const { return rules_; }
    const PipelineOptions& options() const { return opts_; }
    const PromptTemplates& templates() const { return templates_; }

    void set_scorer(std::shared_ptr<ScorerBackend> scorer) { scorer_ = std::move(scorer); }
    void set_generator(std::shared_ptr<GenerationBackend> gen) { generator_ = std::move(gen); }
    void set_scorer_flops(FlopsModel m) { scorer_flops_ = m; }
    void set_generator_flops(FlopsModel m) { generator_flops_ = m; }

    void use_planted_scorer(double epsilon, std::uint64_t seed) {
        scorer_ = std::make_shared<PlantedScorer>(PlantedScorer::from_corpus(corpus_, epsilon, seed));
    }
    void use_proxy_scorer(double scale = 10.0, double offset = 0.0) {
        scorer_ = std::make_shared<EmbeddingProxyScorer>(corpus_, params_, scale, offset);
    }
    void use_echo_generator() {
        generator_ = std::make_shared<EchoGenerationBackend>(
            EchoGenerationBackend::from_corpus(corpus_));
    }

    ScorerBackend& scorer() const {
        if (!scorer_) throw std::runtime_error("pipeline: no scorer backend configured");
        return *scorer_;
    }
    GenerationBackend& generator() const {
        if (!generator_) throw std::runtime_error("pipeline: no generation backend configured");
        return *generator_;
    }

    EmbeddingVector encode_query_text(const std::string& text) const {
        return encode_query(params_, featurize(text, params_.d_f));
    }

    std::vector<SearchResult> retrieve(const std::string& query_text, std::size_t n) const {
        return index_.search(encode_query_text(query_text), n);
    }

    struct Outcome {
        Answer answer;
        PipelineTrace trace;
    };

    /// Full pipeline for a corpus sample. Every stage failure is rethrown
    /// with the stage name attached.
    Outcome answer_sample(const QuerySample& sample) const {
        PipelineTrace trace;
        trace.sample_id = sample.sample_id;
        trace.query = sample.raw_query;

        const auto t0 = std::chrono::steady_clock::now();
        auto now_ms = [&] {
            return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                             t0)
                .count();
        };

        QuerySample q = sample;
        run_stage("prune", [&] {
            q.pruned_query = prune_query(q.raw_query.empty() ? q.pruned_query : q.raw_query,
                                         rules_);
        });
        trace.pruned_query = q.pruned_query;

        StageTrace encode_stage{Stage::Retrieval, "query encoding", now_ms(), 0.0, {}, ""};
        EmbeddingVector q_emb;
        run_stage("encode", [&] { q_emb = encode_query_text(q.pruned_query); });
        encode_stage.end_ms = now_ms();
        trace.stages.push_back(encode_stage);

        StageTrace search_stage{Stage::Retrieval, "index search", now_ms(), 0.0, {}, ""};
        std::vector<SearchResult> retrieved;
        run_stage("retrieve", [&] { retrieved = index_.search(q_emb, opts_.n_retrieve); });
        if (retrieved.empty())
            throw std::runtime_error("stage retrieve: no candidates retrieved (empty index?)");
        search_stage.end_ms = now_ms();
        for (const auto& r : retrieved) search_stage.items.push_back({r.table_id, r.score});
        trace.stages.push_back(search_stage);

        const std::size_t n_rerank = std::min(opts_.n_rerank, retrieved.size());
        std::vector<SearchResult> pool(retrieved.begin(), retrieved.begin() + n_rerank);
        const std::size_t k = std::min(opts_.k_keep, pool.size());

        // All n_rerank candidates are scored; the trace records the full
        // reranked ordering and generation takes the top-k prefix.
        StageTrace rerank_stage{Stage::Reranking,
                                "scoring (top-" + std::to_string(n_rerank) + ")", now_ms(), 0.0,
                                {}, ""};
        std::vector<CandidateScore> reranked;
        run_stage("rerank", [&] { reranked = rerank(scorer(), q, pool, pool.size()); });
        rerank_stage.end_ms = now_ms();
        for (const auto& c : reranked) rerank_stage.items.push_back({c.table_id, c.prob_true});
        trace.stages.push_back(rerank_stage);

        std::vector<std::string> context_ids;
        for (std::size_t i = 0; i < k; ++i) context_ids.push_back(reranked[i].table_id);

        StageTrace gen_stage{Stage::Generation,
                             "generation (top-" + std::to_string(k) + " table" +
                                 (k == 1 ? "" : "s") + ")",
                             now_ms(), 0.0, {}, ""};
        GenerationResult gen_result;
        AssembledPrompt prompt;
        run_stage("generate", [&] {
            prompt = assemble_prompt(templates_, PromptKind::RetrievalAugmentedQa, q,
                                     context_ids, corpus_);
            gen_result = generator().generate(prompt);
        });
        gen_stage.end_ms = now_ms();
        for (const auto& id : context_ids) gen_stage.items.push_back({id, 0.0});
        gen_stage.text = gen_result.text;
        trace.stages.push_back(gen_stage);

        Outcome outcome;
        outcome.answer = parse_answer(gen_result.text, prompt.answer_schema);
        trace.answer = outcome.answer;
        outcome.trace = std::move(trace);
        return outcome;
    }

    /// Ad-hoc text query (no ground-truth sample behind it).
    Outcome answer_text(const std::string& query_text) const {
        QuerySample q;
        q.sample_id = "adhoc";
        q.raw_query = query_text;
        q.pruned_query = query_text;
        return answer_sample(q);
    }

    /// Retrieval candidates for every sample, as a ranking run.
    RankingRun run_retrieval(const std::vector<QuerySample>& samples, std::size_t n) const {
        RankingRun run;
        run.stage_tag = "retrieval";
        for (const auto& s : samples) {
            RunEntry e;
            e.sample_id = s.sample_id;
            e.ground_truth = s.table_id;
            const std::string& text = s.pruned_query.empty() ? s.raw_query : s.pruned_query;
            for (const auto& r : index_.search(encode_query_text(text), n))
                e.candidates.push_back(r.table_id);
            run.entries.push_back(std::move(e));
        }
        return run;
    }

    /// Retrieve top n_retrieve, rerank the top n_rerank, and report the full
    /// reranked ordering per sample.
    RankingRun run_rerank(const std::vector<QuerySample>& samples) const {
        RankingRun run;
        run.stage_tag = "rerank";
        for (const auto& s : samples) {
            const std::string& text = s.pruned_query.empty() ? s.raw_query : s.pruned_query;
            auto retrieved = index_.search(encode_query_text(text), opts_.n_retrieve);
            const std::size_t n = std::min(opts_.n_rerank, retrieved.size());
            std::vector<SearchResult> pool(retrieved.begin(), retrieved.begin() + n);
            RunEntry e;
            e.sample_id = s.sample_id;
            e.ground_truth = s.table_id;
            for (const auto& c : rerank(scorer(), s, pool, pool.size()))
                e.candidates.push_back(c.table_id);
            run.entries.push_back(std::move(e));
        }
        return run;
    }

    /// Cost-ledger records for one trace. Encoder FLOPs use the
    /// 2 * parameter-count * passes estimate; reranker/generator FLOPs come
    /// from the configured per-pass constants.
    std::vector<StageRecord> ledger_records(const PipelineTrace& trace) const {
        std::vector<StageRecord> records;
        for (const auto& s : trace.stages) {
            StageTiming t{s.component, s.stage, s.start_ms, s.end_ms};
            std::optional<double> flops;
            if (s.stage == Stage::Retrieval && s.component == "query encoding")
                flops = affine_encoder_flops(params_.d, params_.d_f, 1);
            else if (s.stage == Stage::Reranking && scorer_flops_.per_pass_flops > 0.0)
                flops = estimate_flops({scorer_flops_.per_pass_flops, s.items.size()});
            else if (s.stage == Stage::Generation && generator_flops_.per_pass_flops > 0.0)
                flops = estimate_flops({generator_flops_.per_pass_flops, 1});
            records.push_back(record_stage(t, std::nullopt, flops));
        }
        return records;
    }

private:
    template <typename F>
    static void run_stage(const char* name, F&& f) {
        try {
            f();
        } catch (const std::exception& e) {
            throw std::runtime_error("stage " + std::string(name) + ": " + e.what());
        }
    }

    Corpus corpus_;
    EncoderParams params_;
    VectorIndex index_;
    FilterRuleSet rules_;
    PipelineOptions opts_;
    PromptTemplates templates_;
    std::shared_ptr<ScorerBackend> scorer_;
    std::shared_ptr<GenerationBackend> generator_;
    FlopsModel scorer_flops_{};
    FlopsModel generator_flops_{};
};

}  // namespace tabrag
