#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "tabrag/common.hpp"

namespace tabrag {

// ---------------------------------------------------------------------------
// Ranking metrics
// ---------------------------------------------------------------------------

struct RunEntry {
    std::string sample_id;
    std::vector<std::string> candidates;  // ordered, best first, duplicate-free
    std::string ground_truth;
};

struct RankingRun {
    std::string stage_tag;  // "retrieval" or "rerank"
    std::vector<RunEntry> entries;

    void validate() const {
        for (const auto& e : entries) {
            std::unordered_set<std::string> seen;
            for (const auto& c : e.candidates)
                if (!seen.insert(c).second)
                    throw std::invalid_argument("ranking run: duplicate candidate \"" + c +
                                                "\" for sample \"" + e.sample_id + "\"");
        }
    }
};

inline const std::vector<std::size_t>& default_k_grid() {
    static const std::vector<std::size_t> grid = {1, 10, 20, 30, 40, 50, 100, 150, 200};
    return grid;
}

/// Mean over queries of 1/rank(ground truth), zero when it falls outside the
/// top k. Truncated MRR: MRR@infinity is the untruncated value.
inline double mrr_at_k(const RankingRun& run, std::size_t k) {
    if (run.entries.empty()) throw std::invalid_argument("mrr_at_k: empty run");
    if (k == 0) throw std::invalid_argument("mrr_at_k: k must be >= 1");
    double sum = 0.0;
    for (const auto& e : run.entries) {
        const std::size_t limit = std::min(k, e.candidates.size());
        for (std::size_t i = 0; i < limit; ++i) {
            if (e.candidates[i] == e.ground_truth) {
                sum += 1.0 / static_cast<double>(i + 1);
                break;
            }
        }
    }
    return sum / static_cast<double>(run.entries.size());
}

/// Fraction of queries whose ground truth appears within the top k.
inline double recall_at_k(const RankingRun& run, std::size_t k) {
    if (run.entries.empty()) throw std::invalid_argument("recall_at_k: empty run");
    if (k == 0) throw std::invalid_argument("recall_at_k: k must be >= 1");
    std::size_t hits = 0;
    for (const auto& e : run.entries) {
        const std::size_t limit = std::min(k, e.candidates.size());
        for (std::size_t i = 0; i < limit; ++i) {
            if (e.candidates[i] == e.ground_truth) {
                ++hits;
                break;
            }
        }
    }
    return static_cast<double>(hits) / static_cast<double>(run.entries.size());
}

struct MetricCurve {
    std::string metric;     // "mrr" or "recall"
    std::string stage_tag;  // copied from the run
    std::vector<std::pair<std::size_t, double>> points;
};

inline std::vector<MetricCurve> metric_curves(const RankingRun& run,
                                              const std::vector<std::size_t>& k_grid) {
    if (k_grid.empty()) throw std::invalid_argument("metric_curves: empty k grid");
    for (std::size_t i = 1; i < k_grid.size(); ++i)
        if (k_grid[i] <= k_grid[i - 1])
            throw std::invalid_argument("metric_curves: k grid must be strictly increasing");
    MetricCurve mrr{"mrr", run.stage_tag, {}};
    MetricCurve recall{"recall", run.stage_tag, {}};
    for (std::size_t k : k_grid) {
        mrr.points.emplace_back(k, mrr_at_k(run, k));
        recall.points.emplace_back(k, recall_at_k(run, k));
    }
    return {mrr, recall};
}

/// Plain-text columns: metric, stage_tag, k, value.
inline void write_curves(const std::vector<MetricCurve>& curves, std::ostream& out) {
    for (const auto& c : curves)
        for (const auto& [k, v] : c.points)
            out << c.metric << " " << c.stage_tag << " " << k << " " << v << "\n";
}

// ---------------------------------------------------------------------------
// Generation metrics
// ---------------------------------------------------------------------------

struct GenEvalRecord {
    std::string sample_id;
    std::string prediction;  // first parsed answer
    std::string reference;
    std::string task_tag;
    double metric_value = 0.0;
};

/// Case-folded, whitespace-normalized string equality.
inline bool exact_match(const std::string& prediction, const std::string& reference) {
    return collapse_whitespace(to_lower_ascii(prediction)) ==
           collapse_whitespace(to_lower_ascii(reference));
}

inline double exact_match_accuracy(const std::vector<GenEvalRecord>& records) {
    if (records.empty()) throw std::invalid_argument("exact_match_accuracy: empty input");
    std::size_t hits = 0;
    for (const auto& r : records)
        if (exact_match(r.prediction, r.reference)) ++hits;
    return static_cast<double>(hits) / static_cast<double>(records.size());
}

/// Whitespace tokenizer, optionally splitting punctuation into separate
/// tokens (the default).
inline std::vector<std::string> tokenize(const std::string& text, bool split_punct = true) {
    std::vector<std::string> tokens;
    std::string cur;
    auto flush = [&] {
        if (!cur.empty()) {
            tokens.push_back(cur);
            cur.clear();
        }
    };
    for (unsigned char c : text) {
        if (std::isspace(c)) {
            flush();
        } else if (split_punct && std::ispunct(c)) {
            flush();
            tokens.push_back(std::string(1, static_cast<char>(c)));
        } else {
            cur.push_back(static_cast<char>(c));
        }
    }
    flush();
    return tokens;
}

namespace detail {

inline std::map<std::vector<std::string>, std::size_t> ngram_counts(
    const std::vector<std::string>& tokens, std::size_t n) {
    std::map<std::vector<std::string>, std::size_t> counts;
    if (tokens.size() < n) return counts;
    for (std::size_t i = 0; i + n <= tokens.size(); ++i)
        counts[{tokens.begin() + i, tokens.begin() + i + n}]++;
    return counts;
}

}  // namespace detail

/// Sentence BLEU-4: geometric mean of clipped n-gram precisions with brevity
/// penalty. Smoothing adds one to numerator and denominator for n >= 2; a
/// zero unigram precision yields zero. Reference length for the brevity
/// penalty is the closest to the prediction length (shorter on ties).
inline double bleu(const std::string& prediction, const std::vector<std::string>& references,
                   std::size_t max_n = 4, bool split_punct = true) {
    const auto pred = tokenize(prediction, split_punct);
    if (pred.empty()) throw std::invalid_argument("bleu: empty prediction");
    if (references.empty()) throw std::invalid_argument("bleu: no references");

    std::vector<std::vector<std::string>> refs;
    refs.reserve(references.size());
    for (const auto& r : references) refs.push_back(tokenize(r, split_punct));

    double log_sum = 0.0;
    for (std::size_t n = 1; n <= max_n; ++n) {
        const auto pred_counts = detail::ngram_counts(pred, n);
        std::vector<std::map<std::vector<std::string>, std::size_t>> ref_counts;
        ref_counts.reserve(refs.size());
        for (const auto& ref : refs) ref_counts.push_back(detail::ngram_counts(ref, n));
        std::size_t total = 0, clipped = 0;
        for (const auto& [gram, count] : pred_counts) total += count;
        for (const auto& [gram, count] : pred_counts) {
            std::size_t max_ref = 0;
            for (const auto& rc : ref_counts) {
                auto it = rc.find(gram);
                if (it != rc.end()) max_ref = std::max(max_ref, it->second);
            }
            clipped += std::min(count, max_ref);
        }
        double p;
        if (n == 1) {
            if (clipped == 0) return 0.0;
            p = static_cast<double>(clipped) / static_cast<double>(total);
        } else {
            p = static_cast<double>(clipped + 1) / static_cast<double>(total + 1);
        }
        log_sum += std::log(p) / static_cast<double>(max_n);
    }

    const std::size_t c = pred.size();
    std::size_t r = refs[0].size();
    for (const auto& ref : refs) {
        const auto diff = [&](std::size_t len) {
            return len > c ? len - c : c - len;
        };
        if (diff(ref.size()) < diff(r) || (diff(ref.size()) == diff(r) && ref.size() < r))
            r = ref.size();
    }
    const double bp = c >= r ? 1.0
                             : std::exp(1.0 - static_cast<double>(r) / static_cast<double>(c));
    return bp * std::exp(log_sum);
}

// ---------------------------------------------------------------------------
// Run files and reports
// ---------------------------------------------------------------------------

inline void save_run(const RankingRun& run, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write run file: " + path.string());
    for (const auto& e : run.entries) {
        nlohmann::ordered_json j;
        j["sample_id"] = e.sample_id;
        j["stage"] = run.stage_tag;
        j["ground_truth"] = e.ground_truth;
        j["candidates"] = e.candidates;
        out << j.dump() << "\n";
    }
}

inline RankingRun load_run(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("run file not found: " + path.string());
    RankingRun run;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            auto j = nlohmann::json::parse(line);
            RunEntry e;
            e.sample_id = j.at("sample_id").get<std::string>();
            e.ground_truth = j.at("ground_truth").get<std::string>();
            e.candidates = j.at("candidates").get<std::vector<std::string>>();
            if (run.entries.empty()) run.stage_tag = j.value("stage", "retrieval");
            run.entries.push_back(std::move(e));
        } catch (const std::exception& ex) {
            throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                                     ": malformed run record: " + ex.what());
        }
    }
    run.validate();
    return run;
}

}  // namespace tabrag
