#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "tabrag/common.hpp"

namespace tabrag {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

/// A table document in the datastore. surrogate_text is the textual content
/// of the table used by the built-in featurizer; image_ref is an opaque
/// path/URI forwarded untouched to remote backends. At least one of the two
/// must be present.
struct TableRecord {
    std::string table_id;
    std::string source_dataset;
    std::optional<std::string> surrogate_text;
    std::optional<std::string> image_ref;
    std::map<std::string, std::string> metadata;
};

enum class TaskTag { QA, FactVerification, TextGeneration };
enum class Split { Train, Test };

inline std::string to_string(TaskTag t) {
    switch (t) {
        case TaskTag::QA: return "QA";
        case TaskTag::FactVerification: return "fact_verification";
        case TaskTag::TextGeneration: return "text_generation";
    }
    return "QA";
}
inline TaskTag task_tag_from_string(const std::string& s) {
    if (s == "QA") return TaskTag::QA;
    if (s == "fact_verification") return TaskTag::FactVerification;
    if (s == "text_generation") return TaskTag::TextGeneration;
    throw std::invalid_argument("unknown task_tag: " + s);
}
inline std::string to_string(Split s) { return s == Split::Train ? "train" : "test"; }
inline Split split_from_string(const std::string& s) {
    if (s == "train") return Split::Train;
    if (s == "test") return Split::Test;
    throw std::invalid_argument("unknown split: " + s);
}

/// A labeled query. pruned_query holds the query after instruction-suffix
/// pruning; before pruning it equals raw_query.
struct QuerySample {
    std::string sample_id;
    std::string raw_query;
    std::string pruned_query;
    std::string table_id;
    std::string answer;
    TaskTag task_tag = TaskTag::QA;
    Split split = Split::Train;
    int partition = -1;  // 0-based dataset partition index, -1 if unassigned
};

/// Ordered regex rules. removal_patterns drop whole samples whose raw query
/// matches; prune_patterns have their matches deleted from the query text.
class FilterRuleSet {
public:
    FilterRuleSet(std::vector<std::string> removal_patterns,
                  std::vector<std::string> prune_patterns)
        : removal_src_(std::move(removal_patterns)), prune_src_(std::move(prune_patterns)) {
        for (const auto& p : removal_src_) removal_.emplace_back(compile(p));
        for (const auto& p : prune_src_) prune_.emplace_back(compile(p));
    }

    const std::vector<std::string>& removal_patterns() const { return removal_src_; }
    const std::vector<std::string>& prune_patterns() const { return prune_src_; }
    const std::vector<std::regex>& removal_regexes() const { return removal_; }
    const std::vector<std::regex>& prune_regexes() const { return prune_; }

    bool empty() const { return removal_.empty() && prune_.empty(); }

    /// Patterns for the generic-query families targeted by the dataset
    /// cleanup (row/column counting, cell-description prompts) plus the
    /// answer-format instruction suffixes stripped before embedding.
    static FilterRuleSet default_rules() {
        return FilterRuleSet(
            {
                R"(count the number of (rows|columns))",
                R"(descri(be|ptive sentence about)\b[^.?]*\bcells?\b)",
            },
            {
                R"(\s*(show|output) (your|the)( final)? answer in the json format\s*(\{[^{}]*\})?\s*\.?)",
                R"(\s*answer in the json format\s*\{[^{}]*\}\s*\.?)",
            });
    }

    static FilterRuleSet load(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("rules file not found: " + path.string());
        json j = json::parse(in);
        return FilterRuleSet(j.value("removal_patterns", std::vector<std::string>{}),
                             j.value("prune_patterns", std::vector<std::string>{}));
    }

private:
    static std::regex compile(const std::string& pattern) {
        try {
            return std::regex(pattern, std::regex::ECMAScript | std::regex::icase);
        } catch (const std::regex_error& e) {
            throw std::invalid_argument("pattern does not compile: \"" + pattern +
                                        "\": " + e.what());
        }
    }

    std::vector<std::string> removal_src_, prune_src_;
    std::vector<std::regex> removal_, prune_;
};

struct Corpus {
    std::vector<TableRecord> tables;
    std::vector<QuerySample> samples;

    const TableRecord* find_table(const std::string& id) const {
        auto it = by_id_.find(id);
        return it == by_id_.end() ? nullptr : &tables[it->second];
    }
    const QuerySample* find_sample(const std::string& id) const {
        auto it = sample_by_id_.find(id);
        return it == sample_by_id_.end() ? nullptr : &samples[it->second];
    }
    void rebuild_lookup() {
        by_id_.clear();
        sample_by_id_.clear();
        for (std::size_t i = 0; i < tables.size(); ++i) by_id_[tables[i].table_id] = i;
        for (std::size_t i = 0; i < samples.size(); ++i) sample_by_id_[samples[i].sample_id] = i;
    }

private:
    std::unordered_map<std::string, std::size_t> by_id_;
    std::unordered_map<std::string, std::size_t> sample_by_id_;
};

struct CorpusManifest {
    std::size_t tables = 0;
    std::size_t samples = 0;
    std::size_t train_samples = 0;
    std::size_t test_samples = 0;
    std::string content_hash;  // FNV-1a of the corpus file bytes, hex
    std::vector<std::size_t> partition_sizes;

    ordered_json to_json() const {
        ordered_json j;
        j["tables"] = tables;
        j["samples"] = samples;
        j["train_samples"] = train_samples;
        j["test_samples"] = test_samples;
        j["content_hash"] = content_hash;
        if (!partition_sizes.empty()) j["partition_sizes"] = partition_sizes;
        return j;
    }
};

// ---------------------------------------------------------------------------
// Wire format (line-delimited records with a top-level "kind" field)
// ---------------------------------------------------------------------------

namespace detail {

inline TableRecord table_from_json(const json& j) {
    TableRecord t;
    t.table_id = j.at("table_id").get<std::string>();
    t.source_dataset = j.value("source_dataset", "");
    if (j.contains("surrogate_text")) t.surrogate_text = j["surrogate_text"].get<std::string>();
    if (j.contains("image_ref")) t.image_ref = j["image_ref"].get<std::string>();
    if (j.contains("metadata"))
        t.metadata = j["metadata"].get<std::map<std::string, std::string>>();
    if (t.table_id.empty()) throw std::invalid_argument("table_id must be non-empty");
    if (!t.surrogate_text && !t.image_ref)
        throw std::invalid_argument("table \"" + t.table_id +
                                    "\" has neither surrogate_text nor image_ref");
    return t;
}

inline QuerySample sample_from_json(const json& j) {
    QuerySample s;
    s.sample_id = j.at("sample_id").get<std::string>();
    s.raw_query = j.at("raw_query").get<std::string>();
    s.pruned_query = j.value("pruned_query", s.raw_query);
    s.table_id = j.at("table_id").get<std::string>();
    s.answer = j.at("answer").get<std::string>();
    s.task_tag = task_tag_from_string(j.value("task_tag", "QA"));
    s.split = split_from_string(j.value("split", "train"));
    s.partition = j.value("partition", -1);
    if (s.sample_id.empty()) throw std::invalid_argument("sample_id must be non-empty");
    return s;
}

inline ordered_json table_to_json(const TableRecord& t) {
    ordered_json j;
    j["kind"] = "table";
    j["table_id"] = t.table_id;
    j["source_dataset"] = t.source_dataset;
    if (t.surrogate_text) j["surrogate_text"] = *t.surrogate_text;
    if (t.image_ref) j["image_ref"] = *t.image_ref;
    if (!t.metadata.empty()) j["metadata"] = t.metadata;
    return j;
}

inline ordered_json sample_to_json(const QuerySample& s) {
    ordered_json j;
    j["kind"] = "sample";
    j["sample_id"] = s.sample_id;
    j["raw_query"] = s.raw_query;
    j["pruned_query"] = s.pruned_query;
    j["table_id"] = s.table_id;
    j["answer"] = s.answer;
    j["task_tag"] = to_string(s.task_tag);
    j["split"] = to_string(s.split);
    if (s.partition >= 0) j["partition"] = s.partition;
    return j;
}

}  // namespace detail

/// Load a line-delimited corpus file. Rejects duplicate ids and samples that
/// reference tables absent from the same file.
inline Corpus load_corpus(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("corpus file not found: " + path.string());

    Corpus corpus;
    std::unordered_set<std::string> table_ids, sample_ids;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
            const std::string kind = j.at("kind").get<std::string>();
            if (kind == "table") {
                TableRecord t = detail::table_from_json(j);
                if (!table_ids.insert(t.table_id).second)
                    throw std::invalid_argument("duplicate table_id \"" + t.table_id + "\"");
                corpus.tables.push_back(std::move(t));
            } else if (kind == "sample") {
                QuerySample s = detail::sample_from_json(j);
                if (!sample_ids.insert(s.sample_id).second)
                    throw std::invalid_argument("duplicate sample_id \"" + s.sample_id + "\"");
                corpus.samples.push_back(std::move(s));
            } else {
                throw std::invalid_argument("unknown kind \"" + kind + "\"");
            }
        } catch (const std::exception& e) {
            throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                                     ": malformed record: " + e.what());
        }
    }

    for (const auto& s : corpus.samples) {
        if (!table_ids.count(s.table_id))
            throw std::runtime_error("sample \"" + s.sample_id +
                                     "\" references absent table \"" + s.table_id + "\"");
    }
    corpus.rebuild_lookup();
    return corpus;
}

/// Write the corpus in the wire format and a sidecar manifest
/// (<path>.manifest.json). Returns the manifest.
inline CorpusManifest save_corpus(const Corpus& corpus, const std::filesystem::path& path,
                                  std::vector<std::size_t> partition_sizes = {}) {
    {
        std::ofstream out(path);
        if (!out) throw std::runtime_error("cannot write corpus file: " + path.string());
        for (const auto& t : corpus.tables) out << detail::table_to_json(t).dump() << "\n";
        for (const auto& s : corpus.samples) out << detail::sample_to_json(s).dump() << "\n";
    }

    CorpusManifest m;
    m.tables = corpus.tables.size();
    m.samples = corpus.samples.size();
    for (const auto& s : corpus.samples)
        (s.split == Split::Train ? m.train_samples : m.test_samples)++;
    m.partition_sizes = std::move(partition_sizes);

    std::ifstream in(path, std::ios::binary);
    Fnv1aStream sum;
    char buf[1 << 16];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0)
        sum.update(buf, static_cast<std::size_t>(in.gcount()));
    std::ostringstream hex;
    hex << std::hex << sum.value();
    m.content_hash = hex.str();

    std::ofstream mout(path.string() + ".manifest.json");
    mout << m.to_json().dump(2) << "\n";
    return m;
}

// ---------------------------------------------------------------------------
// Filtering and pruning
// ---------------------------------------------------------------------------

struct FilterOutcome {
    std::vector<QuerySample> kept;
    std::vector<QuerySample> removed;
};

/// A sample is removed iff any removal pattern matches its raw query.
/// Order is preserved within both lists.
inline FilterOutcome filter_generic_queries(const std::vector<QuerySample>& samples,
                                            const FilterRuleSet& rules) {
    if (rules.empty()) throw std::invalid_argument("filter: rule set is empty");
    FilterOutcome out;
    for (const auto& s : samples) {
        bool matched = false;
        for (const auto& re : rules.removal_regexes()) {
            if (std::regex_search(s.raw_query, re)) {
                matched = true;
                break;
            }
        }
        (matched ? out.removed : out.kept).push_back(s);
    }
    return out;
}

/// Delete all prune-pattern matches and collapse whitespace, iterating to a
/// fixpoint so the operation is idempotent for any rule set. Raises if the
/// query becomes empty (over-broad pattern).
inline std::string prune_query(const std::string& raw_query, const FilterRuleSet& rules) {
    if (raw_query.empty()) throw std::invalid_argument("prune_query: query is empty");
    std::string cur = raw_query;
    for (std::size_t round = 0; round <= raw_query.size() + 1; ++round) {
        std::string next = cur;
        for (const auto& re : rules.prune_regexes()) next = std::regex_replace(next, re, "");
        next = collapse_whitespace(next);
        if (next == cur) break;
        cur = std::move(next);
    }
    cur = collapse_whitespace(cur);
    if (cur.empty())
        throw std::runtime_error("prune_query: pruning emptied the query \"" + raw_query +
                                 "\" (over-broad prune pattern)");
    return cur;
}

// ---------------------------------------------------------------------------
// Partitioning
// ---------------------------------------------------------------------------

/// Deterministic seeded partition. Sizes are llround(n * fraction) with the
/// remainder credited to the largest fraction (first of them on ties).
inline std::vector<std::vector<QuerySample>> split_partition(
    const std::vector<QuerySample>& samples, const std::vector<double>& fractions,
    std::uint64_t seed) {
    if (fractions.empty()) throw std::invalid_argument("split_partition: no fractions");
    double sum = 0.0;
    for (double f : fractions) {
        if (f <= 0.0) throw std::invalid_argument("split_partition: fractions must be positive");
        sum += f;
    }
    if (std::abs(sum - 1.0) > 1e-9)
        throw std::invalid_argument("split_partition: fractions must sum to 1");
    if (samples.size() < fractions.size())
        throw std::invalid_argument("split_partition: fewer samples than partitions");

    const std::size_t n = samples.size();
    std::vector<long long> sizes(fractions.size());
    long long assigned = 0;
    for (std::size_t i = 0; i < fractions.size(); ++i) {
        sizes[i] = std::llround(static_cast<double>(n) * fractions[i]);
        assigned += sizes[i];
    }
    std::size_t largest =
        static_cast<std::size_t>(std::max_element(fractions.begin(), fractions.end()) -
                                 fractions.begin());
    sizes[largest] += static_cast<long long>(n) - assigned;
    if (sizes[largest] < 0)
        throw std::runtime_error("split_partition: degenerate rounding");

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(seed);
    rng.shuffle(order);

    std::vector<std::vector<QuerySample>> parts(fractions.size());
    std::size_t pos = 0;
    for (std::size_t p = 0; p < fractions.size(); ++p) {
        parts[p].reserve(static_cast<std::size_t>(sizes[p]));
        for (long long i = 0; i < sizes[p]; ++i) parts[p].push_back(samples[order[pos++]]);
    }
    return parts;
}

}  // namespace tabrag
