#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <unordered_set>
#include <variant>
#include <vector>

#include "tabrag/common.hpp"
#include "tabrag/embed.hpp"

namespace tabrag {

// ---------------------------------------------------------------------------
// Similarity index over pre-computed document embeddings. Exact backend does
// a full scan; partitioned backend assigns vectors to seeded k-means cells
// and probes only the cells nearest the query. Scores are float32 values
// accumulated in 64-bit sums, so results reproduce across runs.
// ---------------------------------------------------------------------------

struct ExactBackend {};

struct PartitionedBackend {
    std::size_t num_lists = 0;  // 0: ceil(sqrt(n_docs)) at build time
    std::size_t probes = 0;     // 0: ceil(num_lists / 4)
    std::uint64_t seed = 1;
    std::size_t kmeans_iters = 20;
};

using IndexBackend = std::variant<ExactBackend, PartitionedBackend>;

struct SearchResult {
    std::string table_id;
    double score = 0.0;
    std::size_t rank = 0;  // 1-based
};

struct IndexMetadata {
    std::uint32_t encoder_version = 0;
    std::uint64_t corpus_hash = 0;
};

class VectorIndex {
public:
    std::size_t size() const { return ids_.size(); }
    std::size_t dim() const { return d_; }
    const std::vector<std::string>& ids() const { return ids_; }
    const IndexMetadata& metadata() const { return meta_; }
    bool partitioned() const { return num_lists_ > 0; }
    std::size_t num_lists() const { return num_lists_; }
    std::size_t probes() const { return probes_; }

    static VectorIndex build(const std::vector<std::pair<std::string, EmbeddingVector>>& docs,
                             const IndexBackend& backend = ExactBackend{},
                             IndexMetadata meta = {}) {
        if (docs.empty()) throw std::invalid_argument("index build: no embeddings");
        VectorIndex ix;
        ix.meta_ = meta;
        ix.d_ = docs[0].second.dim();
        ix.ids_.reserve(docs.size());
        ix.matrix_.reserve(docs.size() * ix.d_);
        std::unordered_set<std::string> seen;
        for (const auto& [id, emb] : docs) {
            if (id.empty()) throw std::invalid_argument("index build: empty table_id");
            if (!seen.insert(id).second)
                throw std::invalid_argument("index build: duplicate table_id \"" + id + "\"");
            if (emb.dim() != ix.d_)
                throw std::invalid_argument("index build: dimension mismatch for \"" + id + "\"");
            double sq = 0.0;
            for (double v : emb.values) {
                if (!std::isfinite(v))
                    throw std::invalid_argument("index build: non-finite entry in \"" + id + "\"");
                sq += v * v;
            }
            if (std::abs(std::sqrt(sq) - 1.0) > 1e-6)
                throw std::invalid_argument("index build: vector for \"" + id +
                                            "\" is not unit-norm");
            ix.ids_.push_back(id);
            for (double v : emb.values) ix.matrix_.push_back(static_cast<float>(v));
        }

        if (const auto* part = std::get_if<PartitionedBackend>(&backend)) {
            std::size_t lists = part->num_lists;
            if (lists == 0)
                lists = static_cast<std::size_t>(
                    std::ceil(std::sqrt(static_cast<double>(ix.size()))));
            lists = std::min(lists, ix.size());
            std::size_t probes = part->probes;
            if (probes == 0)
                probes = static_cast<std::size_t>(
                    std::ceil(static_cast<double>(lists) / 4.0));
            ix.num_lists_ = lists;
            ix.probes_ = std::min(probes, lists);
            ix.run_kmeans(part->seed, part->kmeans_iters);
        }
        return ix;
    }

    /// True top-n for the exact backend; top-n among probed cells for the
    /// partitioned one. Ties break by ascending table_id; ranks are 1-based
    /// and contiguous.
    std::vector<SearchResult> search(const EmbeddingVector& query, std::size_t n) const {
        if (size() == 0) throw std::invalid_argument("search: empty index");
        if (n == 0) throw std::invalid_argument("search: n must be >= 1");
        if (query.dim() != d_) throw std::invalid_argument("search: dimension mismatch");

        std::vector<float> q(d_);
        for (std::size_t i = 0; i < d_; ++i) q[i] = static_cast<float>(query.values[i]);

        std::vector<std::size_t> candidates;
        if (partitioned()) {
            candidates = probe_candidates(q);
        } else {
            candidates.resize(size());
            for (std::size_t i = 0; i < size(); ++i) candidates[i] = i;
        }

        std::vector<SearchResult> scored;
        scored.reserve(candidates.size());
        for (std::size_t row : candidates)
            scored.push_back({ids_[row], score_row(q, row), 0});

        const std::size_t keep = std::min(n, scored.size());
        std::partial_sort(scored.begin(), scored.begin() + keep, scored.end(),
                          [](const SearchResult& a, const SearchResult& b) {
                              if (a.score != b.score) return a.score > b.score;
                              return a.table_id < b.table_id;
                          });
        scored.resize(keep);
        for (std::size_t i = 0; i < scored.size(); ++i) scored[i].rank = i + 1;
        return scored;
    }

    void save(const std::filesystem::path& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write index: " + path.string());
        BinaryWriter w(out);
        w.magic(kMagic);
        w.u32(kFormatVersion);
        w.u8(partitioned() ? 1 : 0);
        w.u32(meta_.encoder_version);
        w.u64(meta_.corpus_hash);
        w.u32(static_cast<std::uint32_t>(size()));
        w.u32(static_cast<std::uint32_t>(d_));
        for (const auto& id : ids_) w.str(id);
        for (float v : matrix_) w.f32(v);
        if (partitioned()) {
            w.u32(static_cast<std::uint32_t>(num_lists_));
            w.u32(static_cast<std::uint32_t>(probes_));
            for (float v : centroids_) w.f32(v);
            for (const auto& list : lists_) {
                w.u32(static_cast<std::uint32_t>(list.size()));
                for (std::size_t idx : list) w.u32(static_cast<std::uint32_t>(idx));
            }
        }
        w.finish_with_checksum();
    }

    static VectorIndex load(const std::filesystem::path& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw std::runtime_error("index not found: " + path.string());
        BinaryReader r(in, path.string());
        r.expect_magic(kMagic);
        if (r.u32() != kFormatVersion) r.corrupt("unsupported index format version");
        const bool part = r.u8() != 0;
        VectorIndex ix;
        ix.meta_.encoder_version = r.u32();
        ix.meta_.corpus_hash = r.u64();
        const std::size_t n = r.u32();
        ix.d_ = r.u32();
        ix.ids_.reserve(n);
        for (std::size_t i = 0; i < n; ++i) ix.ids_.push_back(r.str());
        ix.matrix_.resize(n * ix.d_);
        for (auto& v : ix.matrix_) v = r.f32();
        if (part) {
            ix.num_lists_ = r.u32();
            ix.probes_ = r.u32();
            ix.centroids_.resize(ix.num_lists_ * ix.d_);
            for (auto& v : ix.centroids_) v = r.f32();
            ix.lists_.resize(ix.num_lists_);
            for (auto& list : ix.lists_) {
                const std::size_t cnt = r.u32();
                list.resize(cnt);
                for (auto& idx : list) {
                    idx = r.u32();
                    if (idx >= n) r.corrupt("list entry out of range");
                }
            }
        }
        r.verify_checksum();
        return ix;
    }

    /// Non-empty when the index was built against a different encoder
    /// version than the supplied parameters.
    std::optional<std::string> version_warning(const EncoderParams& params) const {
        if (meta_.encoder_version == params.version) return std::nullopt;
        return "index was built with encoder version " + std::to_string(meta_.encoder_version) +
               " but parameters have version " + std::to_string(params.version);
    }

private:
    inline static constexpr char kMagic[4] = {'T', 'B', 'R', 'X'};
    inline static constexpr std::uint32_t kFormatVersion = 1;

    double score_row(const std::vector<float>& q, std::size_t row) const {
        const float* m = matrix_.data() + row * d_;
        double s = 0.0;
        for (std::size_t i = 0; i < d_; ++i)
            s += static_cast<double>(q[i]) * static_cast<double>(m[i]);
        return s;
    }

    double score_centroid(const std::vector<float>& q, std::size_t c) const {
        const float* m = centroids_.data() + c * d_;
        double s = 0.0;
        for (std::size_t i = 0; i < d_; ++i)
            s += static_cast<double>(q[i]) * static_cast<double>(m[i]);
        return s;
    }

    std::vector<std::size_t> probe_candidates(const std::vector<float>& q) const {
        std::vector<std::pair<double, std::size_t>> ranked(num_lists_);
        for (std::size_t c = 0; c < num_lists_; ++c) ranked[c] = {score_centroid(q, c), c};
        std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });
        std::vector<std::size_t> out;
        for (std::size_t p = 0; p < probes_ && p < ranked.size(); ++p) {
            const auto& list = lists_[ranked[p].second];
            out.insert(out.end(), list.begin(), list.end());
        }
        return out;
    }

    // Spherical k-means: assign by max dot, recompute centroids as
    // normalized means. Empty cells keep their previous centroid.
    void run_kmeans(std::uint64_t seed, std::size_t iters) {
        const std::size_t n = size(), k = num_lists_;
        Rng rng(seed);

        std::vector<std::size_t> perm(n);
        for (std::size_t i = 0; i < n; ++i) perm[i] = i;
        rng.shuffle(perm);
        centroids_.assign(k * d_, 0.0f);
        for (std::size_t c = 0; c < k; ++c)
            for (std::size_t j = 0; j < d_; ++j)
                centroids_[c * d_ + j] = matrix_[perm[c] * d_ + j];

        std::vector<std::size_t> assign(n, 0);
        for (std::size_t it = 0; it < iters; ++it) {
            bool changed = false;
            for (std::size_t i = 0; i < n; ++i) {
                double best = -1e300;
                std::size_t best_c = 0;
                for (std::size_t c = 0; c < k; ++c) {
                    double s = 0.0;
                    const float* mv = matrix_.data() + i * d_;
                    const float* cv = centroids_.data() + c * d_;
                    for (std::size_t j = 0; j < d_; ++j)
                        s += static_cast<double>(mv[j]) * static_cast<double>(cv[j]);
                    if (s > best) {
                        best = s;
                        best_c = c;
                    }
                }
                if (assign[i] != best_c) {
                    assign[i] = best_c;
                    changed = true;
                }
            }
            if (!changed && it > 0) break;

            std::vector<double> sums(k * d_, 0.0);
            std::vector<std::size_t> counts(k, 0);
            for (std::size_t i = 0; i < n; ++i) {
                counts[assign[i]]++;
                for (std::size_t j = 0; j < d_; ++j)
                    sums[assign[i] * d_ + j] += static_cast<double>(matrix_[i * d_ + j]);
            }
            for (std::size_t c = 0; c < k; ++c) {
                if (counts[c] == 0) continue;  // keep previous centroid
                double sq = 0.0;
                for (std::size_t j = 0; j < d_; ++j) sq += sums[c * d_ + j] * sums[c * d_ + j];
                const double nn = std::sqrt(sq);
                if (nn == 0.0) continue;
                for (std::size_t j = 0; j < d_; ++j)
                    centroids_[c * d_ + j] = static_cast<float>(sums[c * d_ + j] / nn);
            }
        }

        lists_.assign(k, {});
        for (std::size_t i = 0; i < n; ++i) lists_[assign[i]].push_back(i);
    }

    std::vector<std::string> ids_;
    std::vector<float> matrix_;  // n x d row-major
    std::size_t d_ = 0;
    IndexMetadata meta_;

    // partitioned backend state; num_lists_ == 0 means exact
    std::size_t num_lists_ = 0;
    std::size_t probes_ = 0;
    std::vector<float> centroids_;
    std::vector<std::vector<std::size_t>> lists_;
};

}  // namespace tabrag
