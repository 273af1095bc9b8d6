#include <catch2/catch_amalgamated.hpp>

#include <atomic>
#include <thread>

#include "tabrag/pipeline.hpp"
#include "tabrag/remote.hpp"
#include "tabrag/service.hpp"
#include "testlib/synth.hpp"

using namespace tabrag;

namespace {

struct ServiceFixture {
    std::unique_ptr<Pipeline> pipeline;
    httplib::Server server;
    std::thread thread;
    int port = 0;

    ServiceFixture() {
        Corpus corpus = testsynth::make_planted_corpus({.n_docs = 50, .seed = 2025});
        auto params = init_encoder_params(16, 128, 3);
        std::vector<std::pair<std::string, EmbeddingVector>> embeddings;
        for (const auto& t : corpus.tables)
            embeddings.emplace_back(t.table_id,
                                    encode_doc(params, featurize(*t.surrogate_text, params.d_f)));
        IndexMetadata meta;
        meta.encoder_version = params.version;
        pipeline = std::make_unique<Pipeline>(std::move(corpus), params,
                                              VectorIndex::build(embeddings, ExactBackend{}, meta),
                                              FilterRuleSet::default_rules(),
                                              PipelineOptions{.n_retrieve = 10, .n_rerank = 5,
                                                              .k_keep = 1});
        pipeline->use_planted_scorer(0.0, 5);
        pipeline->use_echo_generator();
    }

    void start(const Service& svc) {
        svc.attach(server);
        port = server.bind_to_any_port("127.0.0.1");
        REQUIRE(port > 0);
        thread = std::thread([this] { server.listen_after_bind(); });
        server.wait_until_ready();
    }

    ~ServiceFixture() {
        server.stop();
        if (thread.joinable()) thread.join();
    }
};

}  // namespace

TEST_CASE("service health and retrieve endpoints", "[service]") {
    ServiceFixture fx;
    Service svc(*fx.pipeline);
    fx.start(svc);

    httplib::Client cli("127.0.0.1", fx.port);

    auto health = cli.Get("/health");
    REQUIRE(health);
    REQUIRE(health->status == 200);
    auto hj = json::parse(health->body);
    REQUIRE(hj["status"] == "ok");
    REQUIRE(hj["index_size"] == 50);
    REQUIRE(hj["params_version"] == 1);

    const std::string query = fx.pipeline->corpus().samples[7].pruned_query;
    json body;
    body["query"] = query;
    body["n"] = 5;
    auto res = cli.Post("/retrieve", body.dump(), "application/json");
    REQUIRE(res);
    REQUIRE(res->status == 200);
    auto rj = json::parse(res->body);
    auto direct = fx.pipeline->retrieve(query, 5);
    REQUIRE(rj["results"].size() == direct.size());
    for (std::size_t i = 0; i < direct.size(); ++i) {
        REQUIRE(rj["results"][i]["table_id"] == direct[i].table_id);
        REQUIRE(rj["results"][i]["rank"] == i + 1);
    }
}

TEST_CASE("service rejects unknown fields with a 400 naming them", "[service]") {
    ServiceFixture fx;
    Service svc(*fx.pipeline);
    fx.start(svc);
    httplib::Client cli("127.0.0.1", fx.port);

    json body;
    body["query"] = "anything";
    body["bogus_field"] = 1;
    for (const std::string path : {"/retrieve", "/rerank", "/answer"}) {
        auto res = cli.Post(path, body.dump(), "application/json");
        REQUIRE(res);
        REQUIRE(res->status == 400);
        REQUIRE_THAT(res->body, Catch::Matchers::ContainsSubstring("bogus_field"));
    }

    auto res = cli.Post("/answer", "not json", "text/plain");
    REQUIRE(res->status == 400);

    auto missing = cli.Post("/answer", json::object().dump(), "application/json");
    REQUIRE(missing->status == 400);
    REQUIRE_THAT(missing->body, Catch::Matchers::ContainsSubstring("sample_id"));
}

TEST_CASE("service answer equals the in-process pipeline", "[service]") {
    ServiceFixture fx;
    Service svc(*fx.pipeline);
    fx.start(svc);
    httplib::Client cli("127.0.0.1", fx.port);

    const auto& sample = fx.pipeline->corpus().samples[3];
    json body;
    body["sample_id"] = sample.sample_id;
    auto res = cli.Post("/answer", body.dump(), "application/json");
    REQUIRE(res);
    REQUIRE(res->status == 200);
    auto j = json::parse(res->body);

    auto direct = fx.pipeline->answer_sample(sample);
    REQUIRE(j["answer"]["parsed"] == json(direct.answer.parsed));
    REQUIRE(j["trace"]["stages"].size() == 4);

    json unknown;
    unknown["sample_id"] = "nope";
    auto bad = cli.Post("/answer", unknown.dump(), "application/json");
    REQUIRE(bad->status == 400);
    REQUIRE_THAT(bad->body, Catch::Matchers::ContainsSubstring("nope"));
}

TEST_CASE("concurrent retrieval equals sequential execution", "[service][slow]") {
    ServiceFixture fx;
    Service svc(*fx.pipeline);
    fx.start(svc);

    const std::string query = fx.pipeline->corpus().samples[0].pruned_query;
    json body;
    body["query"] = query;
    body["n"] = 10;
    const std::string payload = body.dump();

    httplib::Client warm("127.0.0.1", fx.port);
    auto expected = warm.Post("/retrieve", payload, "application/json");
    REQUIRE(expected);
    const std::string expected_body = expected->body;

    std::atomic<int> failures{0};
    std::vector<std::thread> threads;
    for (int i = 0; i < 50; ++i) {
        threads.emplace_back([&] {
            httplib::Client cli("127.0.0.1", fx.port);
            auto res = cli.Post("/retrieve", payload, "application/json");
            if (!res || res->status != 200 || res->body != expected_body) failures++;
        });
    }
    for (auto& t : threads) t.join();
    REQUIRE(failures == 0);
}

TEST_CASE("remote scorer speaks the /score contract", "[service]") {
    // Mock model server implementing the scoring side of the wire contract.
    httplib::Server mock;
    json last_request;
    mock.Post("/score", [&](const httplib::Request& req, httplib::Response& res) {
        last_request = json::parse(req.body);
        json out;
        out["scores"] = json::array();
        for (const auto& c : last_request["candidates"]) {
            const std::string id = c["table_id"];
            json s;
            s["table_id"] = id;
            // deterministic mock: last digit of the id scaled into [0, 1]
            s["prob_true"] = (id.back() - '0') / 10.0;
            out["scores"].push_back(std::move(s));
        }
        res.set_content(out.dump(), "application/json");
    });
    const int port = mock.bind_to_any_port("127.0.0.1");
    std::thread th([&] { mock.listen_after_bind(); });
    mock.wait_until_ready();

    Corpus corpus = testsynth::make_planted_corpus({.n_docs = 10, .seed = 8});
    PromptTemplates templates;
    RemoteConfig cfg;
    cfg.endpoint = "http://127.0.0.1:" + std::to_string(port);
    RemoteScorer scorer(cfg, corpus, templates);

    QuerySample q = corpus.samples[0];
    std::vector<SearchResult> candidates = {{"t3", 0.9, 1}, {"t7", 0.8, 2}, {"t1", 0.7, 3}};
    auto probs = scorer.score(q, candidates);
    REQUIRE(probs == std::vector<double>{0.3, 0.7, 0.1});

    REQUIRE(last_request["query_text"] == q.pruned_query);
    REQUIRE_THAT(last_request["prompt"].get<std::string>(),
                 Catch::Matchers::ContainsSubstring("access whether the passage is relevant"));
    REQUIRE(last_request["candidates"][0].contains("surrogate_text"));

    auto out = rerank(scorer, q, candidates, 3);
    REQUIRE(out[0].table_id == "t7");
    REQUIRE(out[0].backend_tag == "remote");

    mock.stop();
    th.join();
}

TEST_CASE("remote scorer reports candidates the backend skipped", "[service]") {
    httplib::Server mock;
    mock.Post("/score", [&](const httplib::Request& req, httplib::Response& res) {
        auto body = json::parse(req.body);
        json out;
        out["scores"] = json::array();
        json s;
        s["table_id"] = body["candidates"][0]["table_id"];
        s["prob_true"] = 0.5;
        out["scores"].push_back(std::move(s));  // drops every other candidate
        res.set_content(out.dump(), "application/json");
    });
    const int port = mock.bind_to_any_port("127.0.0.1");
    std::thread th([&] { mock.listen_after_bind(); });
    mock.wait_until_ready();

    Corpus corpus = testsynth::make_planted_corpus({.n_docs = 5, .seed = 9});
    PromptTemplates templates;
    RemoteConfig cfg;
    cfg.endpoint = "http://127.0.0.1:" + std::to_string(port);
    cfg.retries = 0;
    RemoteScorer scorer(cfg, corpus, templates);
    std::vector<SearchResult> candidates = {{"t0", 0.9, 1}, {"t1", 0.8, 2}};
    REQUIRE_THROWS_WITH(scorer.score(corpus.samples[0], candidates),
                        Catch::Matchers::ContainsSubstring("t1"));

    mock.stop();
    th.join();
}

TEST_CASE("remote generation speaks the /generate contract", "[service]") {
    httplib::Server mock;
    mock.Post("/generate", [&](const httplib::Request& req, httplib::Response& res) {
        auto body = json::parse(req.body);
        REQUIRE(body["answer_schema"] == "phrase_sentence");
        REQUIRE(body["max_output_tokens"] == 256);
        std::size_t images = 0;
        for (const auto& seg : body["prompt_segments"])
            if (seg["type"] == "image") ++images;
        json out;
        out["text"] = "{\"answer\": [\"" + std::to_string(images) + " images\"]}";
        res.set_content(out.dump(), "application/json");
    });
    const int port = mock.bind_to_any_port("127.0.0.1");
    std::thread th([&] { mock.listen_after_bind(); });
    mock.wait_until_ready();

    Corpus corpus = testsynth::make_planted_corpus({.n_docs = 4, .seed = 10});
    PromptTemplates templates;
    auto prompt = assemble_prompt(templates, PromptKind::RetrievalAugmentedQa,
                                  corpus.samples[0], {"t0", "t2"}, corpus);
    RemoteConfig cfg;
    cfg.endpoint = "http://127.0.0.1:" + std::to_string(port);
    RemoteGenerationBackend backend(cfg);
    auto result = backend.generate(prompt);
    auto parsed = parse_answer(result.text, AnswerSchema::PhraseSentence);
    REQUIRE(parsed.parsed == std::vector<std::string>{"2 images"});

    mock.stop();
    th.join();

    RemoteConfig dead;
    dead.endpoint = "http://127.0.0.1:1";  // nothing listens there
    dead.retries = 1;
    dead.timeout_ms = 200;
    RemoteGenerationBackend unreachable(dead);
    REQUIRE_THROWS_WITH(unreachable.generate(prompt),
                        Catch::Matchers::ContainsSubstring("attempts"));
}
