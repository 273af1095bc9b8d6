#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <sstream>

#include "tabrag/eval.hpp"
#include "testlib/synth.hpp"

using namespace tabrag;

namespace {

RankingRun three_query_run() {
    // ranks of the ground truth: 1, 2, absent
    RankingRun run;
    run.stage_tag = "retrieval";
    run.entries.push_back({"q1", {"g1", "x", "y"}, "g1"});
    run.entries.push_back({"q2", {"x", "g2", "y"}, "g2"});
    run.entries.push_back({"q3", {"x", "y", "z"}, "g3"});
    return run;
}

RankingRun random_run(std::size_t n_queries, std::size_t list_len, std::uint64_t seed) {
    Rng rng(seed);
    RankingRun run;
    run.stage_tag = "retrieval";
    for (std::size_t i = 0; i < n_queries; ++i) {
        RunEntry e;
        e.sample_id = "q" + std::to_string(i);
        e.ground_truth = "g" + std::to_string(i);
        // ground truth present at a random rank ~70% of the time
        const bool present = rng.next_unit() < 0.7;
        const std::size_t gt_pos = static_cast<std::size_t>(rng.below(list_len));
        for (std::size_t r = 0; r < list_len; ++r) {
            if (present && r == gt_pos)
                e.candidates.push_back(e.ground_truth);
            else
                e.candidates.push_back("d" + std::to_string(i) + "_" + std::to_string(r));
        }
        run.entries.push_back(std::move(e));
    }
    return run;
}

}  // namespace

TEST_CASE("mrr golden cases", "[eval]") {
    RankingRun single;
    single.stage_tag = "retrieval";
    single.entries.push_back({"q", {"a", "b", "g", "c"}, "g"});  // rank 3
    REQUIRE(mrr_at_k(single, 10) == Catch::Approx(1.0 / 3.0).epsilon(1e-12));
    REQUIRE(mrr_at_k(single, 1) == 0.0);

    REQUIRE(mrr_at_k(three_query_run(), 5) == Catch::Approx(0.5).epsilon(1e-12));

    RankingRun empty;
    REQUIRE_THROWS_AS(mrr_at_k(empty, 5), std::invalid_argument);
}

TEST_CASE("recall golden cases", "[eval]") {
    auto run = three_query_run();
    REQUIRE(recall_at_k(run, 2) == Catch::Approx(2.0 / 3.0).epsilon(1e-12));
    REQUIRE(recall_at_k(run, 1) == Catch::Approx(1.0 / 3.0).epsilon(1e-12));

    RankingRun all_found;
    all_found.entries.push_back({"a", {"g"}, "g"});
    all_found.entries.push_back({"b", {"x", "g"}, "g"});
    REQUIRE(recall_at_k(all_found, 99) == 1.0);
}

TEST_CASE("recall matches a per-query membership oracle on random runs", "[eval]") {
    auto run = random_run(200, 20, 314);
    for (std::size_t k : {1u, 3u, 7u, 20u}) {
        std::size_t oracle_hits = 0;
        for (const auto& e : run.entries) {
            for (std::size_t i = 0; i < std::min<std::size_t>(k, e.candidates.size()); ++i)
                if (e.candidates[i] == e.ground_truth) {
                    ++oracle_hits;
                    break;
                }
        }
        REQUIRE(recall_at_k(run, k) ==
                Catch::Approx(static_cast<double>(oracle_hits) / 200.0).epsilon(1e-12));
    }
}

TEST_CASE("mrr is bounded by recall at every k", "[eval]") {
    for (std::uint64_t seed : {1, 2, 3}) {
        auto run = random_run(100, 15, seed);
        for (std::size_t k = 1; k <= 15; ++k) {
            const double m = mrr_at_k(run, k), r = recall_at_k(run, k);
            REQUIRE(m >= 0.0);
            REQUIRE(m <= r + 1e-12);
            REQUIRE(r <= 1.0);
        }
    }
}

TEST_CASE("metric curves are nondecreasing and cover the grid", "[eval]") {
    auto run = random_run(150, 60, 2718);
    auto curves = metric_curves(run, default_k_grid());
    REQUIRE(curves.size() == 2);
    for (const auto& c : curves) {
        REQUIRE(c.points.size() == default_k_grid().size());
        for (std::size_t i = 1; i < c.points.size(); ++i) {
            REQUIRE(c.points[i].first > c.points[i - 1].first);
            REQUIRE(c.points[i].second >= c.points[i - 1].second - 1e-12);
        }
    }

    RankingRun perfect;
    perfect.stage_tag = "rerank";
    for (int i = 0; i < 5; ++i)
        perfect.entries.push_back({"q" + std::to_string(i), {"g" + std::to_string(i), "x"},
                                   "g" + std::to_string(i)});
    for (const auto& c : metric_curves(perfect, {1, 2, 3}))
        for (const auto& [k, v] : c.points) REQUIRE(v == 1.0);

    REQUIRE_THROWS_AS(metric_curves(run, {}), std::invalid_argument);
    REQUIRE_THROWS_AS(metric_curves(run, {10, 10}), std::invalid_argument);

    std::ostringstream os;
    write_curves(curves, os);
    REQUIRE_THAT(os.str(), Catch::Matchers::ContainsSubstring("mrr retrieval 1 "));
    REQUIRE_THAT(os.str(), Catch::Matchers::ContainsSubstring("recall retrieval 200 "));
}

TEST_CASE("exact match accuracy normalizes case and whitespace", "[eval]") {
    REQUIRE(exact_match("Paris", "paris"));
    REQUIRE(exact_match("  Paris   France ", "paris france"));
    REQUIRE_FALSE(exact_match("Paris, France", "Paris"));

    std::vector<GenEvalRecord> records(100);
    for (std::size_t i = 0; i < records.size(); ++i) {
        records[i].prediction = i < 50 ? "Right" : "Wrong";
        records[i].reference = "right";
    }
    REQUIRE(exact_match_accuracy(records) == Catch::Approx(0.5));
    REQUIRE_THROWS_AS(exact_match_accuracy({}), std::invalid_argument);
}

TEST_CASE("bleu golden cases", "[eval]") {
    REQUIRE(bleu("the cat sat on the mat", {"the cat sat on the mat"}) ==
            Catch::Approx(1.0).epsilon(1e-12));
    REQUIRE(bleu("alpha beta gamma delta", {"one two three four"}) == 0.0);

    // Hand-worked clipping case: prediction "the the the the" vs reference
    // "the cat". p1 = 1/4 clipped; smoothed p2 = 1/4, p3 = 1/3, p4 = 1/2;
    // brevity penalty 1. Oracle value frozen as (1/96)^(1/4).
    const double expected = std::pow(1.0 / 96.0, 0.25);
    REQUIRE(expected == Catch::Approx(0.3194715521231362).epsilon(1e-12));
    REQUIRE(bleu("the the the the", {"the cat"}) == Catch::Approx(expected).margin(1e-9));

    REQUIRE_THROWS_AS(bleu("", {"ref"}), std::invalid_argument);
}

TEST_CASE("bleu is reference-order symmetric and double-space invariant", "[eval]") {
    const std::string pred = "the quick brown fox jumps";
    const std::vector<std::string> refs = {"the quick red fox jumps", "a quick brown fox leaps"};
    std::vector<std::string> reversed(refs.rbegin(), refs.rend());
    REQUIRE(bleu(pred, refs) == Catch::Approx(bleu(pred, reversed)).epsilon(1e-12));
    REQUIRE(bleu("the quick  brown   fox jumps", refs) ==
            Catch::Approx(bleu(pred, refs)).epsilon(1e-12));

    // brevity penalty kicks in for short predictions
    REQUIRE(bleu("the cat", {"the cat sat on the mat"}) <
            bleu("the cat sat on the mat", {"the cat sat on the mat"}));
}

TEST_CASE("run files round-trip", "[eval]") {
    auto run = random_run(25, 8, 55);
    auto path = std::filesystem::temp_directory_path() / "tabrag_run_test.jsonl";
    save_run(run, path);
    auto loaded = load_run(path);
    REQUIRE(loaded.stage_tag == run.stage_tag);
    REQUIRE(loaded.entries.size() == run.entries.size());
    for (std::size_t i = 0; i < run.entries.size(); ++i) {
        REQUIRE(loaded.entries[i].sample_id == run.entries[i].sample_id);
        REQUIRE(loaded.entries[i].candidates == run.entries[i].candidates);
    }
}
