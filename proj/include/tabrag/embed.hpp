#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "tabrag/common.hpp"
#include "tabrag/corpus.hpp"

namespace tabrag {

// ---------------------------------------------------------------------------
// Vectors
// ---------------------------------------------------------------------------

/// Hashed character-n-gram counts, L2-normalized. Stands in for raw
/// pixels/tokens at desk scale.
struct FeatureVector {
    std::vector<double> values;
    std::size_t dim() const { return values.size(); }
};

/// Point in the shared query/document embedding space. Unit L2 norm after
/// encoding, so cosine similarity reduces to a dot product.
struct EmbeddingVector {
    std::vector<double> values;
    std::size_t dim() const { return values.size(); }
};

/// Deterministic featurizer: case-folded, whitespace-collapsed text hashed as
/// whole tokens plus boundary-padded character 3-grams.
inline FeatureVector featurize(const std::string& text, std::size_t d_f) {
    if (text.empty()) throw std::invalid_argument("featurize: text is empty");
    if (d_f == 0) throw std::invalid_argument("featurize: d_f must be positive");
    const std::string norm_text = collapse_whitespace(to_lower_ascii(text));

    FeatureVector f;
    f.values.assign(d_f, 0.0);
    bool any = false;
    std::size_t start = 0;
    while (start < norm_text.size()) {
        std::size_t end = norm_text.find(' ', start);
        if (end == std::string::npos) end = norm_text.size();
        if (end > start) {
            const std::string token = norm_text.substr(start, end - start);
            f.values[fnv1a64(token) % d_f] += 1.0;
            const std::string padded = "#" + token + "#";
            for (std::size_t i = 0; i + 3 <= padded.size(); ++i)
                f.values[fnv1a64(std::string_view(padded).substr(i, 3)) % d_f] += 1.0;
            any = true;
        }
        start = end + 1;
    }
    if (!any) throw std::invalid_argument("featurize: no extractable n-grams in \"" + text + "\"");

    const double n = norm(f.values);
    for (double& v : f.values) v /= n;
    return f;
}

// ---------------------------------------------------------------------------
// Encoders: two affine maps into a shared space, L2-normalized outputs.
// ---------------------------------------------------------------------------

struct EncoderParams {
    std::size_t d = 0;    // embedding dimension
    std::size_t d_f = 0;  // feature dimension
    std::uint32_t version = 1;
    // Row-major d x d_f matrices plus biases.
    std::vector<double> w_text, b_text;
    std::vector<double> w_doc, b_doc;
};

/// Entries uniform in [-1/sqrt(d_f), 1/sqrt(d_f)], zero bias, seeded.
inline EncoderParams init_encoder_params(std::size_t d, std::size_t d_f, std::uint64_t seed) {
    if (d == 0 || d_f == 0) throw std::invalid_argument("encoder dims must be positive");
    EncoderParams p;
    p.d = d;
    p.d_f = d_f;
    p.version = 1;
    const double scale = 1.0 / std::sqrt(static_cast<double>(d_f));
    Rng rng(seed);
    auto fill = [&](std::vector<double>& w) {
        w.resize(d * d_f);
        for (double& x : w) x = rng.uniform(-scale, scale);
    };
    fill(p.w_text);
    fill(p.w_doc);
    p.b_text.assign(d, 0.0);
    p.b_doc.assign(d, 0.0);
    return p;
}

namespace detail {

inline EmbeddingVector encode_affine(const std::vector<double>& w, const std::vector<double>& b,
                                     std::size_t d, std::size_t d_f, const FeatureVector& f) {
    if (f.dim() != d_f)
        throw std::invalid_argument("encode: feature dimension " + std::to_string(f.dim()) +
                                    " does not match d_f " + std::to_string(d_f));
    EmbeddingVector e;
    e.values.assign(d, 0.0);
    for (std::size_t r = 0; r < d; ++r) {
        double s = b[r];
        const double* row = w.data() + r * d_f;
        for (std::size_t c = 0; c < d_f; ++c) s += row[c] * f.values[c];
        e.values[r] = s;
    }
    const double n = norm(e.values);
    if (!std::isfinite(n) || n == 0.0)
        throw std::runtime_error("encode: output is not normalizable (norm=" +
                                 std::to_string(n) + ")");
    for (double& v : e.values) v /= n;
    return e;
}

}  // namespace detail

inline EmbeddingVector encode_query(const EncoderParams& p, const FeatureVector& f) {
    return detail::encode_affine(p.w_text, p.b_text, p.d, p.d_f, f);
}
inline EmbeddingVector encode_doc(const EncoderParams& p, const FeatureVector& f) {
    return detail::encode_affine(p.w_doc, p.b_doc, p.d, p.d_f, f);
}

inline double cosine(const EmbeddingVector& a, const EmbeddingVector& b) {
    if (a.dim() != b.dim()) throw std::invalid_argument("cosine: dimension mismatch");
    const double na = norm(a.values), nb = norm(b.values);
    if (na == 0.0 || nb == 0.0) throw std::invalid_argument("cosine: zero vector");
    return std::clamp(dot(a.values, b.values) / (na * nb), -1.0, 1.0);
}

// ---------------------------------------------------------------------------
// Contrastive objective
// ---------------------------------------------------------------------------

enum class LossVariant {
    // In-batch negatives, softmax over all documents for each query and over
    // all queries for each document, averaged over both directions.
    SymmetricInfoNce,
    // Denominator sums only the matched-pair similarities exp<q_j, d_j> over
    // the batch; no cross-pair terms. Kept selectable for fidelity.
    LiteralMatchedPairs,
};

inline std::string to_string(LossVariant v) {
    return v == LossVariant::SymmetricInfoNce ? "symmetric_infonce" : "literal_paper";
}
inline LossVariant loss_variant_from_string(const std::string& s) {
    if (s == "symmetric_infonce") return LossVariant::SymmetricInfoNce;
    if (s == "literal_paper") return LossVariant::LiteralMatchedPairs;
    throw std::invalid_argument("unknown loss variant: " + s);
}

struct ContrastiveResult {
    double loss = 0.0;
    std::vector<std::vector<double>> grad_q;  // dL/d(q_i), per raw input entry
    std::vector<std::vector<double>> grad_d;  // dL/d(d_j)
};

namespace detail {

// Row softmax of m/tau; rows of length n stored flat.
inline std::vector<double> softmax_rows(const std::vector<double>& m, std::size_t rows,
                                        std::size_t cols, double tau) {
    std::vector<double> p(m.size());
    for (std::size_t i = 0; i < rows; ++i) {
        double mx = -1e300;
        for (std::size_t j = 0; j < cols; ++j) mx = std::max(mx, m[i * cols + j] / tau);
        double z = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            p[i * cols + j] = std::exp(m[i * cols + j] / tau - mx);
            z += p[i * cols + j];
        }
        for (std::size_t j = 0; j < cols; ++j) p[i * cols + j] /= z;
    }
    return p;
}

}  // namespace detail

/// Loss and analytic gradients with respect to the raw embedding entries.
/// Pair i of the two batches is the positive; similarities are true cosines,
/// so the gradient includes the normalization terms and the loss is exact for
/// non-unit inputs too.
inline ContrastiveResult contrastive_loss(const std::vector<EmbeddingVector>& q_emb,
                                          const std::vector<EmbeddingVector>& d_emb,
                                          double tau, LossVariant variant) {
    const std::size_t B = q_emb.size();
    if (B == 0) throw std::invalid_argument("contrastive_loss: empty batch");
    if (d_emb.size() != B)
        throw std::invalid_argument("contrastive_loss: batch sizes differ");
    if (tau <= 0.0) throw std::invalid_argument("contrastive_loss: tau must be positive");
    const std::size_t dim = q_emb[0].dim();
    for (const auto& v : q_emb)
        if (v.dim() != dim) throw std::invalid_argument("contrastive_loss: ragged batch");
    for (const auto& v : d_emb)
        if (v.dim() != dim) throw std::invalid_argument("contrastive_loss: ragged batch");

    std::vector<double> qn(B), dn(B);
    for (std::size_t i = 0; i < B; ++i) {
        qn[i] = norm(q_emb[i].values);
        dn[i] = norm(d_emb[i].values);
        if (qn[i] == 0.0 || dn[i] == 0.0)
            throw std::invalid_argument("contrastive_loss: zero vector in batch");
    }

    // c[i*B+j] = cos(q_i, d_j)
    std::vector<double> c(B * B);
    for (std::size_t i = 0; i < B; ++i)
        for (std::size_t j = 0; j < B; ++j)
            c[i * B + j] = dot(q_emb[i].values, d_emb[j].values) / (qn[i] * dn[j]);

    ContrastiveResult out;
    std::vector<double> w(B * B, 0.0);  // dL/dc

    if (variant == LossVariant::SymmetricInfoNce) {
        auto p_row = detail::softmax_rows(c, B, B, tau);
        std::vector<double> ct(B * B);
        for (std::size_t i = 0; i < B; ++i)
            for (std::size_t j = 0; j < B; ++j) ct[j * B + i] = c[i * B + j];
        auto p_col_t = detail::softmax_rows(ct, B, B, tau);  // p_col_t[j*B+i] over i

        double loss = 0.0;
        for (std::size_t i = 0; i < B; ++i) {
            loss += -std::log(p_row[i * B + i]) - std::log(p_col_t[i * B + i]);
        }
        out.loss = loss / (2.0 * static_cast<double>(B));
        const double scale = 1.0 / (2.0 * static_cast<double>(B) * tau);
        for (std::size_t i = 0; i < B; ++i)
            for (std::size_t j = 0; j < B; ++j) {
                const double delta = (i == j) ? 1.0 : 0.0;
                w[i * B + j] =
                    scale * ((p_row[i * B + j] - delta) + (p_col_t[j * B + i] - delta));
            }
    } else {
        // Mean over i of -log( exp(c_ii/tau) / sum_j exp(c_jj/tau) ).
        std::vector<double> diag(B);
        for (std::size_t i = 0; i < B; ++i) diag[i] = c[i * B + i];
        auto p_diag = detail::softmax_rows(diag, 1, B, tau);
        double mx = -1e300;
        for (double v : diag) mx = std::max(mx, v / tau);
        double z = 0.0;
        for (double v : diag) z += std::exp(v / tau - mx);
        double loss = 0.0;
        for (std::size_t i = 0; i < B; ++i) loss += -(diag[i] / tau - mx) + std::log(z);
        out.loss = loss / static_cast<double>(B);
        for (std::size_t i = 0; i < B; ++i)
            w[i * B + i] = (p_diag[i] - 1.0 / static_cast<double>(B)) / tau;
    }

    // Chain through the cosine: dc_ij/dq_i = d_j/(|q_i||d_j|) - c_ij q_i/|q_i|^2.
    out.grad_q.assign(B, std::vector<double>(dim, 0.0));
    out.grad_d.assign(B, std::vector<double>(dim, 0.0));
    for (std::size_t i = 0; i < B; ++i) {
        for (std::size_t j = 0; j < B; ++j) {
            const double wij = w[i * B + j];
            if (wij == 0.0) continue;
            const double inv = 1.0 / (qn[i] * dn[j]);
            const double cij = c[i * B + j];
            for (std::size_t k = 0; k < dim; ++k) {
                out.grad_q[i][k] +=
                    wij * (d_emb[j].values[k] * inv - cij * q_emb[i].values[k] / (qn[i] * qn[i]));
                out.grad_d[j][k] +=
                    wij * (q_emb[i].values[k] * inv - cij * d_emb[j].values[k] / (dn[j] * dn[j]));
            }
        }
    }

    if (!std::isfinite(out.loss))
        throw std::runtime_error("contrastive_loss: non-finite loss");
    return out;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainConfig {
    double learning_rate = 1e-3;  // production-scale runs log 2e-5
    std::size_t warmup_steps = 100;
    std::size_t batch_size = 32;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.98;
    double temperature = 0.05;
    std::size_t epochs = 5;
    std::uint64_t seed = 42;
    LossVariant loss_variant = LossVariant::SymmetricInfoNce;
    std::size_t d = 128;
    std::size_t d_f = 512;

    void validate() const {
        if (learning_rate < 0.0) throw std::invalid_argument("learning_rate must be >= 0");
        if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
        if (batch_size < 2 && loss_variant == LossVariant::SymmetricInfoNce)
            throw std::invalid_argument("batch_size must be >= 2 for symmetric_infonce");
        if (temperature <= 0.0) throw std::invalid_argument("temperature must be positive");
        if (adam_beta1 <= 0.0 || adam_beta1 >= 1.0 || adam_beta2 <= 0.0 || adam_beta2 >= 1.0)
            throw std::invalid_argument("adam betas must lie in (0, 1)");
        if (d == 0 || d_f == 0) throw std::invalid_argument("dimensions must be positive");
    }
};

/// Linear warmup then cosine decay to zero. step is 1-based.
inline double lr_at_step(const TrainConfig& cfg, std::size_t step, std::size_t total_steps) {
    if (step <= cfg.warmup_steps && cfg.warmup_steps > 0)
        return cfg.learning_rate * static_cast<double>(step) /
               static_cast<double>(cfg.warmup_steps);
    if (total_steps <= cfg.warmup_steps) return cfg.learning_rate;
    const double progress = static_cast<double>(step - cfg.warmup_steps) /
                            static_cast<double>(total_steps - cfg.warmup_steps);
    return cfg.learning_rate * 0.5 * (1.0 + std::cos(M_PI * std::min(progress, 1.0)));
}

struct TrainResult {
    EncoderParams params;
    std::vector<double> loss_curve;  // one entry per optimizer step
};

namespace detail {

struct AdamState {
    std::vector<double> m, v;
    explicit AdamState(std::size_t n) : m(n, 0.0), v(n, 0.0) {}
};

inline void adam_update(std::vector<double>& p, AdamState& st, const std::vector<double>& g,
                        double lr, double b1, double b2, std::size_t t) {
    const double eps = 1e-8;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(t));
    for (std::size_t i = 0; i < p.size(); ++i) {
        st.m[i] = b1 * st.m[i] + (1.0 - b1) * g[i];
        st.v[i] = b2 * st.v[i] + (1.0 - b2) * g[i] * g[i];
        p[i] -= lr * (st.m[i] / bc1) / (std::sqrt(st.v[i] / bc2) + eps);
    }
}

// Backprop through e = normalize(W f + b); g_e is dL/de.
inline void accumulate_affine_grads(const EncoderParams& p, bool text_side,
                                    const FeatureVector& f, const EmbeddingVector& e,
                                    double pre_norm, const std::vector<double>& g_e,
                                    std::vector<double>& g_w, std::vector<double>& g_b) {
    const std::size_t d = p.d, d_f = p.d_f;
    (void)text_side;
    const double e_dot_g = dot(e.values, g_e);
    for (std::size_t r = 0; r < d; ++r) {
        const double g_raw = (g_e[r] - e_dot_g * e.values[r]) / pre_norm;
        g_b[r] += g_raw;
        double* row = g_w.data() + r * d_f;
        for (std::size_t c = 0; c < d_f; ++c) row[c] += g_raw * f.values[c];
    }
}

// Like encode_affine but also reports the pre-normalization norm.
inline EmbeddingVector encode_affine_with_norm(const std::vector<double>& w,
                                               const std::vector<double>& b, std::size_t d,
                                               std::size_t d_f, const FeatureVector& f,
                                               double& pre_norm) {
    EmbeddingVector e;
    e.values.assign(d, 0.0);
    for (std::size_t r = 0; r < d; ++r) {
        double s = b[r];
        const double* row = w.data() + r * d_f;
        for (std::size_t c = 0; c < d_f; ++c) s += row[c] * f.values[c];
        e.values[r] = s;
    }
    pre_norm = norm(e.values);
    if (!std::isfinite(pre_norm) || pre_norm == 0.0)
        throw std::runtime_error("train: encoder output not normalizable");
    for (double& v : e.values) v /= pre_norm;
    return e;
}

}  // namespace detail

/// Train the two encoders on (query, table) pairs with Adam and a
/// warmup+cosine schedule. Deterministic for a fixed seed. Partial trailing
/// batches are dropped, so steps per epoch = floor(n / batch_size).
inline TrainResult train_retriever(const TrainConfig& cfg,
                                   const std::vector<std::pair<QuerySample, TableRecord>>& pairs) {
    cfg.validate();
    if (pairs.size() < cfg.batch_size)
        throw std::invalid_argument("train_retriever: need at least batch_size pairs");

    // Featurize once up front; featurize is pure.
    std::vector<FeatureVector> f_q, f_d;
    f_q.reserve(pairs.size());
    f_d.reserve(pairs.size());
    for (const auto& [sample, table] : pairs) {
        f_q.push_back(featurize(sample.pruned_query.empty() ? sample.raw_query
                                                            : sample.pruned_query,
                                cfg.d_f));
        if (!table.surrogate_text)
            throw std::invalid_argument("train_retriever: table \"" + table.table_id +
                                        "\" has no surrogate_text to featurize");
        f_d.push_back(featurize(*table.surrogate_text, cfg.d_f));
    }

    TrainResult result;
    result.params = init_encoder_params(cfg.d, cfg.d_f, cfg.seed);
    EncoderParams& p = result.params;

    const std::size_t steps_per_epoch = pairs.size() / cfg.batch_size;
    const std::size_t total_steps = steps_per_epoch * cfg.epochs;
    if (total_steps == 0) return result;

    detail::AdamState st_wt(p.w_text.size()), st_bt(p.b_text.size());
    detail::AdamState st_wd(p.w_doc.size()), st_bd(p.b_doc.size());
    std::vector<double> g_wt(p.w_text.size()), g_bt(p.b_text.size());
    std::vector<double> g_wd(p.w_doc.size()), g_bd(p.b_doc.size());

    Rng shuffle_rng(derive_seed(cfg.seed, "epoch-shuffle"));
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<std::size_t> order(pairs.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        shuffle_rng.shuffle(order);

        for (std::size_t b = 0; b < steps_per_epoch; ++b) {
            ++step;
            const std::size_t base = b * cfg.batch_size;

            std::vector<EmbeddingVector> q_batch(cfg.batch_size), d_batch(cfg.batch_size);
            std::vector<double> q_prenorm(cfg.batch_size), d_prenorm(cfg.batch_size);
            for (std::size_t i = 0; i < cfg.batch_size; ++i) {
                const std::size_t idx = order[base + i];
                q_batch[i] = detail::encode_affine_with_norm(p.w_text, p.b_text, p.d, p.d_f,
                                                             f_q[idx], q_prenorm[i]);
                d_batch[i] = detail::encode_affine_with_norm(p.w_doc, p.b_doc, p.d, p.d_f,
                                                             f_d[idx], d_prenorm[i]);
            }

            ContrastiveResult cr =
                contrastive_loss(q_batch, d_batch, cfg.temperature, cfg.loss_variant);
            if (!std::isfinite(cr.loss))
                throw std::runtime_error("train_retriever: diverged (non-finite loss) at step " +
                                         std::to_string(step));
            result.loss_curve.push_back(cr.loss);

            std::fill(g_wt.begin(), g_wt.end(), 0.0);
            std::fill(g_bt.begin(), g_bt.end(), 0.0);
            std::fill(g_wd.begin(), g_wd.end(), 0.0);
            std::fill(g_bd.begin(), g_bd.end(), 0.0);
            for (std::size_t i = 0; i < cfg.batch_size; ++i) {
                const std::size_t idx = order[base + i];
                detail::accumulate_affine_grads(p, true, f_q[idx], q_batch[i], q_prenorm[i],
                                                cr.grad_q[i], g_wt, g_bt);
                detail::accumulate_affine_grads(p, false, f_d[idx], d_batch[i], d_prenorm[i],
                                                cr.grad_d[i], g_wd, g_bd);
            }

            const double lr = lr_at_step(cfg, step, total_steps);
            detail::adam_update(p.w_text, st_wt, g_wt, lr, cfg.adam_beta1, cfg.adam_beta2, step);
            detail::adam_update(p.b_text, st_bt, g_bt, lr, cfg.adam_beta1, cfg.adam_beta2, step);
            detail::adam_update(p.w_doc, st_wd, g_wd, lr, cfg.adam_beta1, cfg.adam_beta2, step);
            detail::adam_update(p.b_doc, st_bd, g_bd, lr, cfg.adam_beta1, cfg.adam_beta2, step);
        }
    }

    p.version += 1;
    return result;
}

// ---------------------------------------------------------------------------
// Checkpoint format: magic, format version, params version, d, d_f,
// row-major little-endian float32 matrices, trailing checksum.
// ---------------------------------------------------------------------------

inline constexpr char kParamsMagic[4] = {'T', 'B', 'R', 'P'};
inline constexpr std::uint32_t kParamsFormatVersion = 1;

inline void save_encoder_params(const EncoderParams& p, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path.string());
    BinaryWriter w(out);
    w.magic(kParamsMagic);
    w.u32(kParamsFormatVersion);
    w.u32(p.version);
    w.u32(static_cast<std::uint32_t>(p.d));
    w.u32(static_cast<std::uint32_t>(p.d_f));
    auto dump = [&](const std::vector<double>& v) {
        for (double x : v) w.f32(static_cast<float>(x));
    };
    dump(p.w_text);
    dump(p.b_text);
    dump(p.w_doc);
    dump(p.b_doc);
    w.finish_with_checksum();
}

inline EncoderParams load_encoder_params(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint not found: " + path.string());
    BinaryReader r(in, path.string());
    r.expect_magic(kParamsMagic);
    if (r.u32() != kParamsFormatVersion) r.corrupt("unsupported checkpoint format version");
    EncoderParams p;
    p.version = r.u32();
    p.d = r.u32();
    p.d_f = r.u32();
    auto slurp = [&](std::vector<double>& v, std::size_t n) {
        v.resize(n);
        for (std::size_t i = 0; i < n; ++i) v[i] = static_cast<double>(r.f32());
    };
    slurp(p.w_text, p.d * p.d_f);
    slurp(p.b_text, p.d);
    slurp(p.w_doc, p.d * p.d_f);
    slurp(p.b_doc, p.d);
    r.verify_checksum();
    return p;
}

/// Plain-text two-column (step, loss) file.
inline void save_loss_curve(const std::vector<double>& curve, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write loss curve: " + path.string());
    for (std::size_t i = 0; i < curve.size(); ++i) out << i + 1 << " " << curve[i] << "\n";
}

}  // namespace tabrag
