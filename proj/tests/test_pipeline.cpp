#include <catch2/catch_amalgamated.hpp>

#include <regex>

#include "tabrag/pipeline.hpp"
#include "testlib/synth.hpp"

using namespace tabrag;

namespace {

struct Fixture {
    std::unique_ptr<Pipeline> pipeline;
    Corpus corpus;  // kept for reference assertions

    explicit Fixture(PipelineOptions opts, std::size_t n_docs = 120,
                     double epsilon = 0.0) {
        corpus = testsynth::make_planted_corpus({.n_docs = n_docs, .seed = 404});
        auto params = init_encoder_params(24, 256, 11);
        std::vector<std::pair<std::string, EmbeddingVector>> embeddings;
        for (const auto& t : corpus.tables)
            embeddings.emplace_back(t.table_id,
                                    encode_doc(params, featurize(*t.surrogate_text, params.d_f)));
        IndexMetadata meta;
        meta.encoder_version = params.version;
        auto index = VectorIndex::build(embeddings, ExactBackend{}, meta);
        pipeline = std::make_unique<Pipeline>(corpus, params, std::move(index),
                                              FilterRuleSet::default_rules(), opts);
        pipeline->use_planted_scorer(epsilon, 7);
        pipeline->use_echo_generator();
    }
};

std::string strip_latency(const std::string& json_text) {
    static const std::regex re("\"latency_ms\":[-+0-9.eE]+");
    return std::regex_replace(json_text, re, "\"latency_ms\":0");
}

}  // namespace

TEST_CASE("end-to-end exact match equals retrieval recall at the rerank depth",
          "[pipeline][slow]") {
    Fixture fx({.n_retrieve = 10, .n_rerank = 10, .k_keep = 1});
    const auto& corpus = fx.pipeline->corpus();

    std::vector<GenEvalRecord> gen_records;
    for (const auto& s : corpus.samples) {
        auto outcome = fx.pipeline->answer_sample(s);
        GenEvalRecord r;
        r.sample_id = s.sample_id;
        r.prediction = outcome.answer.parsed.empty() ? "" : outcome.answer.parsed[0];
        r.reference = s.answer;
        gen_records.push_back(std::move(r));
    }

    auto run = fx.pipeline->run_retrieval(corpus.samples, 10);
    REQUIRE(exact_match_accuracy(gen_records) ==
            Catch::Approx(recall_at_k(run, 10)).epsilon(1e-12));
}

TEST_CASE("trace candidate sets are nested across stages", "[pipeline]") {
    Fixture fx({.n_retrieve = 20, .n_rerank = 5, .k_keep = 2}, 60);
    for (std::size_t i = 0; i < 10; ++i) {
        auto outcome = fx.pipeline->answer_sample(fx.pipeline->corpus().samples[i]);
        const auto& stages = outcome.trace.stages;
        REQUIRE(stages.size() == 4);

        auto ids_of = [](const StageTrace& s) {
            std::set<std::string> ids;
            for (const auto& item : s.items) ids.insert(item.table_id);
            return ids;
        };
        auto retrieval = ids_of(stages[1]);
        auto reranked = ids_of(stages[2]);
        auto generation = ids_of(stages[3]);
        REQUIRE(retrieval.size() == 20);
        REQUIRE(reranked.size() == 5);   // all scored candidates
        REQUIRE(generation.size() == 2); // k_keep survivors
        for (const auto& id : reranked) REQUIRE(retrieval.count(id) == 1);
        for (const auto& id : generation) REQUIRE(reranked.count(id) == 1);
    }
}

TEST_CASE("pipeline runs are deterministic up to latency fields", "[pipeline]") {
    Fixture fx({.n_retrieve = 15, .n_rerank = 10, .k_keep = 1}, 80, 0.3);
    const auto& s = fx.pipeline->corpus().samples[5];
    auto a = fx.pipeline->answer_sample(s).trace.to_json().dump();
    auto b = fx.pipeline->answer_sample(s).trace.to_json().dump();
    REQUIRE(strip_latency(a) == strip_latency(b));
    REQUIRE_THAT(a, Catch::Matchers::ContainsSubstring("latency_ms"));
}

TEST_CASE("degenerate 1/1/1 config reduces to retrieve-top-1 plus generate", "[pipeline]") {
    Fixture fx({.n_retrieve = 1, .n_rerank = 1, .k_keep = 1}, 40);
    const auto& s = fx.pipeline->corpus().samples[3];
    auto outcome = fx.pipeline->answer_sample(s);
    auto top1 = fx.pipeline->retrieve(s.pruned_query, 1);
    REQUIRE(outcome.trace.stages[3].items.size() == 1);
    REQUIRE(outcome.trace.stages[3].items[0].table_id == top1[0].table_id);
}

TEST_CASE("stage failures carry the stage name", "[pipeline]") {
    Fixture fx({.n_retrieve = 5, .n_rerank = 5, .k_keep = 1}, 30);
    QuerySample s;
    s.sample_id = "bad";
    s.raw_query = "Show your answer in the JSON format";
    REQUIRE_THROWS_WITH(fx.pipeline->answer_sample(s),
                        Catch::Matchers::ContainsSubstring("stage prune"));

    QuerySample unknown = fx.pipeline->corpus().samples[0];
    unknown.sample_id = "not-in-ground-truth-map";
    REQUIRE_THROWS_WITH(fx.pipeline->answer_sample(unknown),
                        Catch::Matchers::ContainsSubstring("stage rerank"));
}

TEST_CASE("invalid pipeline options are rejected", "[pipeline]") {
    PipelineOptions bad{.n_retrieve = 5, .n_rerank = 10, .k_keep = 1};
    REQUIRE_THROWS_AS(bad.validate(), std::invalid_argument);
    PipelineOptions zero{.n_retrieve = 5, .n_rerank = 5, .k_keep = 0};
    REQUIRE_THROWS_AS(zero.validate(), std::invalid_argument);
}

TEST_CASE("ledger records derive from the trace with configured flops", "[pipeline]") {
    Fixture fx({.n_retrieve = 10, .n_rerank = 10, .k_keep = 1}, 40);
    fx.pipeline->set_scorer_flops({4.3e12, 1});
    fx.pipeline->set_generator_flops({8.6e12, 1});

    auto outcome = fx.pipeline->answer_sample(fx.pipeline->corpus().samples[0]);
    auto records = fx.pipeline->ledger_records(outcome.trace);
    REQUIRE(records.size() == 4);

    const auto& params = fx.pipeline->params();
    REQUIRE(records[0].flops ==
            2.0 * static_cast<double>(params.d * params.d_f + params.d));
    // ten candidates scored -> ten passes billed
    REQUIRE(records[2].flops == 4.3e13);
    REQUIRE(records[3].flops == 8.6e12);

    Ledger ledger = build_ledger(records);
    REQUIRE(ledger.total_latency_ms >= 0.0);
    REQUIRE(ledger.stages.size() == 3);
}
