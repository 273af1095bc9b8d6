#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <set>

#include "tabrag/corpus.hpp"
#include "testlib/synth.hpp"

using namespace tabrag;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
    auto dir = fs::temp_directory_path() / "tabrag_corpus_tests";
    fs::create_directories(dir);
    return dir / name;
}

void write_lines(const fs::path& p, const std::vector<std::string>& lines) {
    std::ofstream out(p);
    for (const auto& l : lines) out << l << "\n";
}

}  // namespace

TEST_CASE("load_corpus accepts a small well-formed file", "[corpus]") {
    auto path = temp_file("small.jsonl");
    write_lines(path, {
        R"({"kind":"table","table_id":"t1","source_dataset":"WTQ","surrogate_text":"year winner"})",
        R"({"kind":"table","table_id":"t2","source_dataset":"HiTab","image_ref":"img/t2.png"})",
        R"({"kind":"sample","sample_id":"s1","raw_query":"Who won in 1998?","table_id":"t1","answer":"France","task_tag":"QA","split":"train"})",
        R"({"kind":"sample","sample_id":"s2","raw_query":"Was it close?","table_id":"t1","answer":"True","task_tag":"fact_verification","split":"test"})",
        R"({"kind":"sample","sample_id":"s3","raw_query":"Describe the match","table_id":"t2","answer":"A final.","task_tag":"text_generation","split":"train"})",
    });
    Corpus c = load_corpus(path);
    REQUIRE(c.tables.size() == 2);
    REQUIRE(c.samples.size() == 3);
    REQUIRE(c.find_table("t2") != nullptr);
    REQUIRE(c.find_table("t2")->image_ref.value() == "img/t2.png");
    REQUIRE(c.samples[0].pruned_query == c.samples[0].raw_query);
}

TEST_CASE("load_corpus rejects dangling table references by name", "[corpus]") {
    auto path = temp_file("dangling.jsonl");
    write_lines(path, {
        R"({"kind":"table","table_id":"t1","surrogate_text":"a b"})",
        R"({"kind":"sample","sample_id":"s1","raw_query":"q","table_id":"t9","answer":"x"})",
    });
    REQUIRE_THROWS_WITH(load_corpus(path), Catch::Matchers::ContainsSubstring("t9"));
}

TEST_CASE("load_corpus reports malformed lines with their line number", "[corpus]") {
    auto path = temp_file("malformed.jsonl");
    write_lines(path, {
        R"({"kind":"table","table_id":"t1","surrogate_text":"a"})",
        R"(this is not json)",
    });
    REQUIRE_THROWS_WITH(load_corpus(path), Catch::Matchers::ContainsSubstring(":2:"));
}

TEST_CASE("load_corpus rejects duplicates and empty-content tables", "[corpus]") {
    auto dup = temp_file("dup.jsonl");
    write_lines(dup, {
        R"({"kind":"table","table_id":"t1","surrogate_text":"a"})",
        R"({"kind":"table","table_id":"t1","surrogate_text":"b"})",
    });
    REQUIRE_THROWS_WITH(load_corpus(dup), Catch::Matchers::ContainsSubstring("duplicate table_id"));

    auto bare = temp_file("bare.jsonl");
    write_lines(bare, {R"({"kind":"table","table_id":"t1"})"});
    REQUIRE_THROWS_WITH(load_corpus(bare),
                        Catch::Matchers::ContainsSubstring("surrogate_text"));

    REQUIRE_THROWS_WITH(load_corpus(temp_file("does_not_exist.jsonl")),
                        Catch::Matchers::ContainsSubstring("not found"));
}

TEST_CASE("save_corpus round-trips and produces a stable manifest hash", "[corpus]") {
    Corpus c = testsynth::make_planted_corpus({.n_docs = 20, .seed = 7});
    auto path = temp_file("roundtrip.jsonl");
    CorpusManifest m1 = save_corpus(c, path);
    Corpus loaded = load_corpus(path);
    REQUIRE(loaded.tables.size() == c.tables.size());
    REQUIRE(loaded.samples.size() == c.samples.size());
    REQUIRE(loaded.samples[3].raw_query == c.samples[3].raw_query);

    CorpusManifest m2 = save_corpus(c, path);
    REQUIRE(m1.content_hash == m2.content_hash);
    REQUIRE(m1.tables == 20);
    REQUIRE(m1.samples == 20);
    REQUIRE(m1.train_samples + m1.test_samples == 20);
}

TEST_CASE("filter removes the generic query families and keeps the rest", "[corpus]") {
    auto rules = FilterRuleSet::default_rules();
    std::vector<QuerySample> samples(5);
    samples[0].raw_query = "Count the number of rows in the table";
    samples[1].raw_query =
        "Generate a descriptive sentence about the highlighted cells in the provided table";
    samples[2].raw_query = "Which team won the 1998 final?";
    samples[3].raw_query = "count the number of columns shown here";
    samples[4].raw_query = "Describe the final score";
    for (std::size_t i = 0; i < samples.size(); ++i)
        samples[i].sample_id = "s" + std::to_string(i);

    auto out = filter_generic_queries(samples, rules);
    std::set<std::string> removed;
    for (const auto& s : out.removed) removed.insert(s.sample_id);
    REQUIRE(removed == std::set<std::string>{"s0", "s1", "s3"});
    REQUIRE(out.kept.size() + out.removed.size() == samples.size());
    // order preserved within each list
    REQUIRE(out.kept[0].sample_id == "s2");
    REQUIRE(out.kept[1].sample_id == "s4");
}

TEST_CASE("filtering is idempotent", "[corpus]") {
    auto rules = FilterRuleSet::default_rules();
    Rng rng(99);
    std::vector<QuerySample> samples;
    for (int i = 0; i < 200; ++i) {
        QuerySample s;
        s.sample_id = "s" + std::to_string(i);
        s.raw_query = testsynth::random_token(rng) + " " + testsynth::random_token(rng);
        if (i % 7 == 0) s.raw_query = "Count the number of rows in " + s.raw_query;
        samples.push_back(std::move(s));
    }
    auto once = filter_generic_queries(samples, rules);
    auto twice = filter_generic_queries(once.kept, rules);
    REQUIRE(twice.removed.empty());
    REQUIRE(twice.kept.size() == once.kept.size());
}

TEST_CASE("filtering per split never moves samples across splits", "[corpus]") {
    auto rules = FilterRuleSet::default_rules();
    Corpus c = testsynth::make_planted_corpus({.n_docs = 60, .seed = 3});
    std::vector<QuerySample> train, test;
    for (const auto& s : c.samples) (s.split == Split::Train ? train : test).push_back(s);
    auto f_train = filter_generic_queries(train, rules);
    auto f_test = filter_generic_queries(test, rules);
    for (const auto& s : f_train.kept) REQUIRE(s.split == Split::Train);
    for (const auto& s : f_test.kept) REQUIRE(s.split == Split::Test);
}

TEST_CASE("prune_query strips answer-format suffixes", "[corpus]") {
    auto rules = FilterRuleSet::default_rules();
    REQUIRE(prune_query("Who scored most? Show your answer in the JSON format "
                        "{answer: [a list of answer strings]}",
                        rules) == "Who scored most?");
    REQUIRE(prune_query("Who scored most?", rules) == "Who scored most?");
    REQUIRE_THROWS_WITH(prune_query("Show your answer in the JSON format", rules),
                        Catch::Matchers::ContainsSubstring("emptied"));
    REQUIRE_THROWS_AS(prune_query("", rules), std::invalid_argument);
}

TEST_CASE("pruning is idempotent even for overlapping rules", "[corpus]") {
    auto rules = FilterRuleSet::default_rules();
    Rng rng(5);
    for (int i = 0; i < 100; ++i) {
        std::string q = testsynth::random_token(rng) + " " + testsynth::random_token(rng) +
                        "? Show your answer in the JSON format {answer: [a list of answer "
                        "strings]}";
        std::string once = prune_query(q, rules);
        REQUIRE(prune_query(once, rules) == once);
    }
    // A rule whose deletion can create a fresh match still reaches a fixpoint.
    FilterRuleSet tricky({}, {"ab"});
    std::string once = prune_query("aabb keep", tricky);
    REQUIRE(once == prune_query(once, tricky));
    REQUIRE(once == "keep");
}

TEST_CASE("bad patterns fail at rule construction", "[corpus]") {
    REQUIRE_THROWS_WITH(FilterRuleSet({"(unclosed"}, {}),
                        Catch::Matchers::ContainsSubstring("does not compile"));
}

TEST_CASE("split_partition rounds targets and is deterministic", "[corpus]") {
    std::vector<QuerySample> ten(10);
    for (int i = 0; i < 10; ++i) ten[i].sample_id = "s" + std::to_string(i);

    auto parts = split_partition(ten, {0.2, 0.5, 0.3}, 7);
    REQUIRE(parts.size() == 3);
    REQUIRE(parts[0].size() == 2);
    REQUIRE(parts[1].size() == 5);
    REQUIRE(parts[2].size() == 3);

    // disjoint and exhaustive
    std::set<std::string> seen;
    for (const auto& p : parts)
        for (const auto& s : p) REQUIRE(seen.insert(s.sample_id).second);
    REQUIRE(seen.size() == 10);

    auto parts2 = split_partition(ten, {0.2, 0.5, 0.3}, 7);
    for (std::size_t p = 0; p < 3; ++p) {
        REQUIRE(parts2[p].size() == parts[p].size());
        for (std::size_t i = 0; i < parts[p].size(); ++i)
            REQUIRE(parts2[p][i].sample_id == parts[p][i].sample_id);
    }

    REQUIRE_THROWS_AS(split_partition({ten[0], ten[1]}, {0.2, 0.5, 0.3}, 1),
                      std::invalid_argument);
    REQUIRE_THROWS_AS(split_partition(ten, {0.5, 0.4}, 1), std::invalid_argument);
}

TEST_CASE("split_partition at corpus scale matches the stated rounding rule", "[corpus]") {
    // 88,161 samples at (0.2, 0.5, 0.3): llround targets are 17632.2 -> 17632,
    // 44080.5 -> 44081, 26448.3 -> 26448, which already sum to 88,161.
    std::vector<QuerySample> samples(88161);
    for (std::size_t i = 0; i < samples.size(); ++i)
        samples[i].sample_id = std::to_string(i);
    auto parts = split_partition(samples, {0.2, 0.5, 0.3}, 11);
    REQUIRE(parts[0].size() == 17632);
    REQUIRE(parts[1].size() == 44081);
    REQUIRE(parts[2].size() == 26448);
}
