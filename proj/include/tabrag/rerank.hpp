#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "tabrag/common.hpp"
#include "tabrag/corpus.hpp"
#include "tabrag/embed.hpp"
#include "tabrag/eval.hpp"
#include "tabrag/generate.hpp"
#include "tabrag/index.hpp"

namespace tabrag {

// ---------------------------------------------------------------------------
// Relevance scoring
// ---------------------------------------------------------------------------

struct CandidateScore {
    std::string table_id;
    double prob_true = 0.0;  // probability mass on the affirmative token
    std::string backend_tag;
};

/// Scores retrieval candidates for one query. Implementations must be
/// deterministic for a fixed configuration and must return one probability
/// in [0, 1] per candidate, aligned with the input order.
class ScorerBackend {
public:
    virtual ~ScorerBackend() = default;
    virtual std::vector<double> score(const QuerySample& query,
                                      const std::vector<SearchResult>& candidates) = 0;
    virtual std::string tag() const = 0;
};

/// Re-order candidates by prob_true descending, ties broken by original
/// retrieval rank then table_id; keeps exactly k.
inline std::vector<CandidateScore> rerank(ScorerBackend& scorer, const QuerySample& query,
                                          const std::vector<SearchResult>& candidates,
                                          std::size_t k) {
    if (candidates.empty()) throw std::invalid_argument("rerank: no candidates");
    if (k == 0 || k > candidates.size())
        throw std::invalid_argument("rerank: k=" + std::to_string(k) +
                                    " out of range for " + std::to_string(candidates.size()) +
                                    " candidates");

    const std::vector<double> probs = scorer.score(query, candidates);
    if (probs.size() != candidates.size())
        throw std::runtime_error("rerank: backend \"" + scorer.tag() + "\" returned " +
                                 std::to_string(probs.size()) + " scores for " +
                                 std::to_string(candidates.size()) + " candidates");
    for (std::size_t i = 0; i < probs.size(); ++i) {
        if (!std::isfinite(probs[i]) || probs[i] < 0.0 || probs[i] > 1.0)
            throw std::runtime_error("rerank: backend \"" + scorer.tag() +
                                     "\" returned out-of-range prob_true for candidate \"" +
                                     candidates[i].table_id + "\"");
    }

    std::vector<std::size_t> order(candidates.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (probs[a] != probs[b]) return probs[a] > probs[b];
        if (a != b) return a < b;  // original retrieval order
        return candidates[a].table_id < candidates[b].table_id;
    });

    std::vector<CandidateScore> out;
    out.reserve(k);
    for (std::size_t i = 0; i < k; ++i)
        out.push_back({candidates[order[i]].table_id, probs[order[i]], scorer.tag()});
    return out;
}

// ---------------------------------------------------------------------------
// Planted scorer: a test oracle that knows the ground truth and scores it
// high with controllable noise.
// ---------------------------------------------------------------------------

struct PlantedScorerConfig {
    double noise_epsilon = 0.0;  // in [0, 1]
    std::uint64_t seed = 1;
    std::map<std::string, std::string> ground_truth_map;  // sample_id -> table_id

    void validate() const {
        if (noise_epsilon < 0.0 || noise_epsilon > 1.0)
            throw std::invalid_argument("planted scorer: epsilon must lie in [0, 1]");
    }
};

/// High score from [1-epsilon, 1] for the ground-truth table, low score from
/// [0, epsilon] otherwise; seeded per (sample_id, table_id).
inline double planted_score(const PlantedScorerConfig& config, const std::string& sample_id,
                            const std::string& table_id) {
    config.validate();
    auto it = config.ground_truth_map.find(sample_id);
    if (it == config.ground_truth_map.end())
        throw std::invalid_argument("planted scorer: unknown sample_id \"" + sample_id + "\"");
    Rng rng(derive_seed(config.seed, sample_id, table_id));
    const double u = rng.next_unit();
    if (it->second == table_id) return 1.0 - config.noise_epsilon * u;
    return config.noise_epsilon * u;
}

class PlantedScorer : public ScorerBackend {
public:
    explicit PlantedScorer(PlantedScorerConfig config) : config_(std::move(config)) {
        config_.validate();
    }

    static PlantedScorer from_corpus(const Corpus& corpus, double epsilon, std::uint64_t seed) {
        PlantedScorerConfig cfg;
        cfg.noise_epsilon = epsilon;
        cfg.seed = seed;
        for (const auto& s : corpus.samples) cfg.ground_truth_map[s.sample_id] = s.table_id;
        return PlantedScorer(std::move(cfg));
    }

    std::vector<double> score(const QuerySample& query,
                              const std::vector<SearchResult>& candidates) override {
        std::vector<double> out;
        out.reserve(candidates.size());
        for (const auto& c : candidates)
            out.push_back(planted_score(config_, query.sample_id, c.table_id));
        return out;
    }

    std::string tag() const override { return "planted"; }

private:
    PlantedScorerConfig config_;
};

// ---------------------------------------------------------------------------
// Embedding-proxy scorer: logistic transform of the bi-encoder cosine.
// Dependency-free non-oracle reranker for demos.
// ---------------------------------------------------------------------------

class EmbeddingProxyScorer : public ScorerBackend {
public:
    EmbeddingProxyScorer(const Corpus& corpus, const EncoderParams& params, double scale = 10.0,
                         double offset = 0.0)
        : corpus_(corpus), params_(params), scale_(scale), offset_(offset) {}

    std::vector<double> score(const QuerySample& query,
                              const std::vector<SearchResult>& candidates) override {
        const std::string& text =
            query.pruned_query.empty() ? query.raw_query : query.pruned_query;
        const EmbeddingVector q = encode_query(params_, featurize(text, params_.d_f));
        std::vector<double> out;
        out.reserve(candidates.size());
        for (const auto& c : candidates) {
            const TableRecord* table = corpus_.find_table(c.table_id);
            if (!table || !table->surrogate_text)
                throw std::runtime_error("proxy scorer: no surrogate text for candidate \"" +
                                         c.table_id + "\"");
            const EmbeddingVector d =
                encode_doc(params_, featurize(*table->surrogate_text, params_.d_f));
            out.push_back(1.0 / (1.0 + std::exp(-(scale_ * cosine(q, d) + offset_))));
        }
        return out;
    }

    std::string tag() const override { return "embedding_proxy"; }

private:
    const Corpus& corpus_;
    const EncoderParams& params_;
    double scale_, offset_;
};

// ---------------------------------------------------------------------------
// Reranker training sets
// ---------------------------------------------------------------------------

enum class RecordKind { Rqa, ContextRanking, Rar };

inline std::string to_string(RecordKind k) {
    switch (k) {
        case RecordKind::Rqa: return "RQA";
        case RecordKind::ContextRanking: return "context_ranking";
        case RecordKind::Rar: return "RAR";
    }
    return "RQA";
}
inline RecordKind record_kind_from_string(const std::string& s) {
    if (s == "RQA") return RecordKind::Rqa;
    if (s == "context_ranking") return RecordKind::ContextRanking;
    if (s == "RAR") return RecordKind::Rar;
    throw std::invalid_argument("unknown record kind: " + s);
}

struct RerankTrainingRecord {
    RecordKind kind = RecordKind::Rqa;
    std::string sample_id;
    std::string query;
    std::vector<std::string> context_ids;
    std::string label;                      // RQA answer text, or "True"/"False"
    std::vector<std::size_t> label_indexes; // RAR: 1-based positions of relevant contexts
    Split split = Split::Train;
    std::string ground_truth;               // carried for validation
};

inline void validate_record(const RerankTrainingRecord& r) {
    switch (r.kind) {
        case RecordKind::ContextRanking:
            if (r.context_ids.size() != 1)
                throw std::invalid_argument("context_ranking record must have exactly one context");
            if (r.label != "True" && r.label != "False")
                throw std::invalid_argument("context_ranking label must be True or False");
            break;
        case RecordKind::Rqa:
        case RecordKind::Rar: {
            bool has_gt = false;
            for (const auto& id : r.context_ids) has_gt |= (id == r.ground_truth);
            if (!has_gt)
                throw std::invalid_argument(to_string(r.kind) +
                                            " record is missing its ground-truth context");
            for (std::size_t pos : r.label_indexes)
                if (pos == 0 || pos > r.context_ids.size())
                    throw std::invalid_argument("RAR label index out of range");
            break;
        }
    }
}

struct BuildResult {
    std::vector<RerankTrainingRecord> records;
    std::vector<std::string> warnings;
};

namespace detail {

inline std::unordered_map<std::string, const RunEntry*> run_lookup(const RankingRun& run) {
    std::unordered_map<std::string, const RunEntry*> map;
    for (const auto& e : run.entries) map[e.sample_id] = &e;
    return map;
}

inline const RunEntry& entry_for(const std::unordered_map<std::string, const RunEntry*>& map,
                                 const QuerySample& s) {
    auto it = map.find(s.sample_id);
    if (it == map.end())
        throw std::invalid_argument("no retrieval run entry for sample \"" + s.sample_id + "\"");
    return *it->second;
}

// Top retrieved candidates that are not the ground truth, capped at limit.
inline std::vector<std::string> non_gt_pool(const RunEntry& entry, std::size_t limit) {
    std::vector<std::string> pool;
    for (const auto& id : entry.candidates) {
        if (pool.size() >= limit) break;
        if (id == entry.ground_truth) continue;
        pool.push_back(id);
    }
    return pool;
}

}  // namespace detail

/// One positive record per query plus up to negatives_per_query negatives
/// sampled without replacement from the top pool_size retrieved
/// non-ground-truth candidates. Deterministic per seed.
inline BuildResult build_context_ranking_set(const std::vector<QuerySample>& samples,
                                             const RankingRun& retrieval_run,
                                             std::size_t negatives_per_query = 20,
                                             std::size_t pool_size = 50,
                                             std::uint64_t seed = 1) {
    BuildResult out;
    const auto lookup = detail::run_lookup(retrieval_run);
    for (const auto& s : samples) {
        const RunEntry& entry = detail::entry_for(lookup, s);
        std::vector<std::string> pool = detail::non_gt_pool(entry, pool_size);
        if (pool.empty())
            throw std::runtime_error("context_ranking: no non-ground-truth candidates for "
                                     "sample \"" + s.sample_id + "\"");

        RerankTrainingRecord positive;
        positive.kind = RecordKind::ContextRanking;
        positive.sample_id = s.sample_id;
        positive.query = s.pruned_query.empty() ? s.raw_query : s.pruned_query;
        positive.context_ids = {s.table_id};
        positive.label = "True";
        positive.split = s.split;
        positive.ground_truth = s.table_id;
        out.records.push_back(std::move(positive));

        if (pool.size() < negatives_per_query)
            out.warnings.push_back("sample \"" + s.sample_id + "\": only " +
                                   std::to_string(pool.size()) + " negatives available (wanted " +
                                   std::to_string(negatives_per_query) + ")");

        Rng rng(derive_seed(seed, s.sample_id));
        const std::size_t take = std::min(negatives_per_query, pool.size());
        // partial Fisher-Yates: the first `take` entries are a uniform sample
        for (std::size_t i = 0; i < take; ++i) {
            const std::size_t j = i + static_cast<std::size_t>(rng.below(pool.size() - i));
            std::swap(pool[i], pool[j]);
            RerankTrainingRecord neg;
            neg.kind = RecordKind::ContextRanking;
            neg.sample_id = s.sample_id;
            neg.query = s.pruned_query.empty() ? s.raw_query : s.pruned_query;
            neg.context_ids = {pool[i]};
            neg.label = "False";
            neg.split = s.split;
            neg.ground_truth = s.table_id;
            out.records.push_back(std::move(neg));
        }
    }
    for (const auto& r : out.records) validate_record(r);
    return out;
}

namespace detail {

inline RerankTrainingRecord make_context_record(const QuerySample& s, const RunEntry& entry,
                                                std::size_t context_width, std::uint64_t seed,
                                                RecordKind kind) {
    if (context_width == 0) throw std::invalid_argument("context_width must be >= 1");
    std::vector<std::string> distractors = non_gt_pool(entry, context_width - 1);
    if (distractors.size() + 1 < context_width)
        throw std::runtime_error(to_string(kind) + ": insufficient retrieved candidates for "
                                 "sample \"" + s.sample_id + "\" (need " +
                                 std::to_string(context_width - 1) + " distractors, have " +
                                 std::to_string(distractors.size()) + ")");

    RerankTrainingRecord rec;
    rec.kind = kind;
    rec.sample_id = s.sample_id;
    rec.query = s.pruned_query.empty() ? s.raw_query : s.pruned_query;
    rec.context_ids.push_back(s.table_id);
    rec.context_ids.insert(rec.context_ids.end(), distractors.begin(), distractors.end());
    Rng rng(derive_seed(seed, s.sample_id));
    rng.shuffle(rec.context_ids);
    rec.split = s.split;
    rec.ground_truth = s.table_id;

    if (kind == RecordKind::Rqa) {
        rec.label = s.answer;
    } else {
        for (std::size_t i = 0; i < rec.context_ids.size(); ++i)
            if (rec.context_ids[i] == s.table_id) rec.label_indexes.push_back(i + 1);
    }
    return rec;
}

}  // namespace detail

/// One record per query: the ground-truth table plus (context_width - 1)
/// top-retrieved distractors in seeded shuffle order; label is the answer.
inline BuildResult build_rqa_set(const std::vector<QuerySample>& samples,
                                 const RankingRun& retrieval_run, std::size_t context_width,
                                 std::uint64_t seed) {
    BuildResult out;
    const auto lookup = detail::run_lookup(retrieval_run);
    for (const auto& s : samples)
        out.records.push_back(detail::make_context_record(s, detail::entry_for(lookup, s),
                                                          context_width, seed, RecordKind::Rqa));
    for (const auto& r : out.records) validate_record(r);
    return out;
}

/// Like build_rqa_set but the label lists the 1-based post-shuffle positions
/// of the contexts holding the ground truth.
inline BuildResult build_rar_set(const std::vector<QuerySample>& samples,
                                 const RankingRun& retrieval_run, std::size_t context_width,
                                 std::uint64_t seed) {
    BuildResult out;
    const auto lookup = detail::run_lookup(retrieval_run);
    for (const auto& s : samples)
        out.records.push_back(detail::make_context_record(s, detail::entry_for(lookup, s),
                                                          context_width, seed, RecordKind::Rar));
    for (const auto& r : out.records) validate_record(r);
    return out;
}

// ---------------------------------------------------------------------------
// Export
// ---------------------------------------------------------------------------

/// Write line-delimited training records plus a sidecar manifest with
/// per-kind counts split into train/val.
inline ordered_json export_training_sets(const std::vector<RerankTrainingRecord>& records,
                                         const std::filesystem::path& path) {
    if (records.empty()) throw std::invalid_argument("export_training_sets: no records");
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write training set: " + path.string());

    std::map<std::string, std::size_t> counts;
    std::map<std::string, std::map<std::string, std::size_t>> split_counts;
    for (const auto& r : records) {
        validate_record(r);
        ordered_json j;
        j["kind"] = to_string(r.kind);
        j["sample_id"] = r.sample_id;
        j["query"] = r.query;
        j["context_ids"] = r.context_ids;
        if (r.kind == RecordKind::Rar)
            j["label"] = r.label_indexes;
        else
            j["label"] = r.label;
        out << j.dump() << "\n";
        counts[to_string(r.kind)]++;
        split_counts[to_string(r.kind)][r.split == Split::Train ? "train" : "val"]++;
    }

    ordered_json manifest;
    for (const auto& kind : {RecordKind::Rqa, RecordKind::ContextRanking, RecordKind::Rar}) {
        const std::string key = to_string(kind);
        if (counts.count(key)) manifest[key] = counts[key];
    }
    ordered_json by_split;
    for (const auto& [kind, per_split] : split_counts) by_split[kind] = per_split;
    manifest["by_split"] = by_split;

    std::ofstream mout(path.string() + ".manifest.json");
    mout << manifest.dump(2) << "\n";
    return manifest;
}

}  // namespace tabrag
