#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "tabrag/cost.hpp"

using namespace tabrag;

namespace {

// The published-cost shaped ledger used by several checks: retrieval is
// query encoding (22 ms) plus index search (35 ms), reranking is ten scorer
// passes at 81 ms / 4.3e12 FLOPs each, generation is one 520 ms pass.
std::vector<StageRecord> reference_records() {
    return {
        {Stage::Retrieval, "Query encoding (GTE-large)", 22.0, 1.7, 0.056e12},
        {Stage::Retrieval, "Vector search (15k tables)", 35.0, 1.8, std::nullopt},
        {Stage::Reranking, "MLLM scoring (top-10)", 810.0, 7.8,
         estimate_flops({4.3e12, 10})},
        {Stage::Generation, "MLLM generation (top-1 table)", 520.0, 7.8, 8.6e12},
    };
}

}  // namespace

TEST_CASE("record_stage measures the interval and rejects inverted ones", "[cost]") {
    StageTiming t{"index search", Stage::Retrieval, 100.0, 157.0};
    auto r = record_stage(t);
    REQUIRE(r.latency_ms == 57.0);
    REQUIRE(r.component == "index search");

    StageTiming bad{"x", Stage::Retrieval, 10.0, 5.0};
    REQUIRE_THROWS_AS(record_stage(bad), std::invalid_argument);
}

TEST_CASE("estimate_flops golden values", "[cost]") {
    REQUIRE(estimate_flops({4.3e12, 10}) == 4.3e13);
    REQUIRE(estimate_flops({4.3e12, 0}) == 0.0);
    REQUIRE(estimate_flops({8.6e12, 1}) == 8.6e12);
    REQUIRE_THROWS_AS(estimate_flops({-1.0, 1}), std::invalid_argument);
}

TEST_CASE("ledger reproduces the reference stage arithmetic exactly", "[cost]") {
    auto records = reference_records();
    Ledger ledger = build_ledger(records);
    REQUIRE(ledger.stages.size() == 3);
    REQUIRE(ledger.stages[0].latency_ms == 57.0);
    REQUIRE(ledger.stages[1].latency_ms == 810.0);
    REQUIRE(ledger.stages[1].flops == 4.3e13);
    REQUIRE(ledger.stages[2].latency_ms == 520.0);
    REQUIRE(ledger.total_latency_ms == 1387.0);
    REQUIRE(ledger.peak_memory_gb == 7.8);

    // independent oracle: plain sum over the raw records
    double oracle = 0.0;
    for (const auto& r : records) oracle += r.latency_ms;
    REQUIRE(ledger.total_latency_ms == oracle);

    const std::string text = render_ledger(records);
    REQUIRE_THAT(text, Catch::Matchers::ContainsSubstring("Subtotal"));
    REQUIRE_THAT(text, Catch::Matchers::ContainsSubstring("57"));
    REQUIRE_THAT(text, Catch::Matchers::ContainsSubstring("1387"));
    REQUIRE_THAT(text, Catch::Matchers::ContainsSubstring("43T"));
}

TEST_CASE("single-record ledger equals the record", "[cost]") {
    std::vector<StageRecord> one = {{Stage::Generation, "gen", 12.5, std::nullopt, std::nullopt}};
    Ledger ledger = build_ledger(one);
    REQUIRE(ledger.stages.size() == 1);
    REQUIRE(ledger.stages[0].latency_ms == 12.5);
    REQUIRE(ledger.total_latency_ms == 12.5);
    REQUIRE_FALSE(ledger.peak_memory_gb.has_value());
    REQUIRE_THROWS_AS(build_ledger({}), std::invalid_argument);
}

TEST_CASE("reranking flops scale linearly in the candidate count", "[cost]") {
    const FlopsModel per_pass{4.3e12, 1};
    auto at_k = [&](std::size_t k) {
        std::vector<StageRecord> records = {
            {Stage::Reranking, "scoring", 10.0, std::nullopt,
             estimate_flops({per_pass.per_pass_flops, k})}};
        return build_ledger(records).total_flops;
    };
    REQUIRE(at_k(10) / at_k(1) == 10.0);
}

TEST_CASE("ledger records serialize as line-delimited objects", "[cost]") {
    std::ostringstream os;
    write_ledger_records(reference_records(), os);
    std::istringstream is(os.str());
    std::string line;
    std::size_t lines = 0;
    while (std::getline(is, line)) {
        auto j = nlohmann::json::parse(line);
        REQUIRE(j.contains("stage"));
        REQUIRE(j.contains("latency_ms"));
        ++lines;
    }
    REQUIRE(lines == 4);
}

TEST_CASE("peak memory readout is present on this platform", "[cost]") {
    auto gb = peak_memory_gb();
    REQUIRE(gb.has_value());
    REQUIRE(*gb > 0.0);
    REQUIRE(*gb < 1024.0);
}
