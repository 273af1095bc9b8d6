#pragma once

// Planted synthetic corpora: tables with random-token surrogates and one
// query per table formed by token dropout. Used for offline demos and for
// exercising the full pipeline without any external data or model server.

#include <string>
#include <vector>

#include "tabrag/common.hpp"
#include "tabrag/corpus.hpp"
#include "tabrag/embed.hpp"

namespace tabrag::synth {

inline std::string random_token(Rng& rng) {
    const std::size_t len = 4 + static_cast<std::size_t>(rng.below(5));
    std::string t;
    for (std::size_t i = 0; i < len; ++i)
        t.push_back(static_cast<char>('a' + rng.below(26)));
    return t;
}

struct SynthOptions {
    std::size_t n_docs = 500;
    std::size_t tokens_per_doc = 12;
    double keep_prob = 0.6;  // query token dropout
    std::uint64_t seed = 20240601;
};

/// Every sample's answer is unique, so echo-backend exact match is
/// unambiguous; every tenth sample lands in the test split.
inline Corpus make_planted_corpus(const SynthOptions& opt = {}) {
    Corpus corpus;
    Rng rng(opt.seed);
    for (std::size_t i = 0; i < opt.n_docs; ++i) {
        std::vector<std::string> tokens;
        for (std::size_t t = 0; t < opt.tokens_per_doc; ++t) tokens.push_back(random_token(rng));

        TableRecord table;
        table.table_id = "t" + std::to_string(i);
        table.source_dataset = "synthetic";
        std::string surrogate;
        for (const auto& t : tokens) {
            if (!surrogate.empty()) surrogate += " ";
            surrogate += t;
        }
        table.surrogate_text = surrogate;
        corpus.tables.push_back(std::move(table));

        std::string query;
        std::size_t kept = 0;
        for (const auto& t : tokens) {
            if (rng.next_unit() < opt.keep_prob) {
                if (!query.empty()) query += " ";
                query += t;
                ++kept;
            }
        }
        if (kept < 2) query = tokens[0] + " " + tokens[1];

        QuerySample s;
        s.sample_id = "q" + std::to_string(i);
        s.raw_query = query;
        s.pruned_query = query;
        s.table_id = "t" + std::to_string(i);
        s.answer = "answer-" + std::to_string(i);
        s.task_tag = TaskTag::QA;
        s.split = i % 10 == 0 ? Split::Test : Split::Train;
        corpus.samples.push_back(std::move(s));
    }
    corpus.rebuild_lookup();
    return corpus;
}

inline EmbeddingVector random_unit_embedding(Rng& rng, std::size_t d) {
    EmbeddingVector e;
    e.values.resize(d);
    double sq = 0.0;
    for (auto& v : e.values) {
        v = rng.gaussian();
        sq += v * v;
    }
    const double n = std::sqrt(sq);
    for (auto& v : e.values) v /= n;
    return e;
}

}  // namespace tabrag::synth
