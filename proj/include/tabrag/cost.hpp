#pragma once

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#if defined(__unix__) || defined(__APPLE__)
#include <sys/resource.h>
#endif

namespace tabrag {

// ---------------------------------------------------------------------------
// Per-stage cost accounting: measured wall time plus declarative
// memory/FLOPs estimates from backend configuration, rendered as a ledger
// with stage subtotals and a grand total.
// ---------------------------------------------------------------------------

enum class Stage { Retrieval, Reranking, Generation };

inline std::string to_string(Stage s) {
    switch (s) {
        case Stage::Retrieval: return "Retrieval";
        case Stage::Reranking: return "Reranking";
        case Stage::Generation: return "Generation";
    }
    return "Retrieval";
}

struct StageRecord {
    Stage stage = Stage::Retrieval;
    std::string component;
    double latency_ms = 0.0;
    std::optional<double> memory_gb;
    std::optional<double> flops;
};

/// FLOPs as a declarative estimate: constant cost per forward pass times the
/// number of passes the stage makes per query.
struct FlopsModel {
    double per_pass_flops = 0.0;
    std::size_t passes_per_query = 0;
};

inline double estimate_flops(const FlopsModel& model) {
    if (model.per_pass_flops < 0.0)
        throw std::invalid_argument("estimate_flops: per_pass_flops must be non-negative");
    return model.per_pass_flops * static_cast<double>(model.passes_per_query);
}

/// 2 * parameter-count * passes; the estimate used for the local encoders.
inline double affine_encoder_flops(std::size_t d, std::size_t d_f, std::size_t passes = 1) {
    return 2.0 * static_cast<double>(d * d_f + d) * static_cast<double>(passes);
}

/// Interval measured on a monotone clock, in milliseconds.
struct StageTiming {
    std::string component;
    Stage stage = Stage::Retrieval;
    double start_ms = 0.0;
    double end_ms = 0.0;
};

inline StageRecord record_stage(const StageTiming& timing,
                                std::optional<double> memory_gb = std::nullopt,
                                std::optional<double> flops = std::nullopt) {
    if (timing.end_ms < timing.start_ms)
        throw std::invalid_argument("record_stage: stage \"" + timing.component +
                                    "\" ends before it starts");
    StageRecord r;
    r.stage = timing.stage;
    r.component = timing.component;
    r.latency_ms = timing.end_ms - timing.start_ms;
    r.memory_gb = memory_gb;
    r.flops = flops;
    return r;
}

/// Best-effort process peak RSS in GB, where the platform exposes it.
inline std::optional<double> peak_memory_gb() {
#if defined(__unix__) || defined(__APPLE__)
    struct rusage ru{};
    if (getrusage(RUSAGE_SELF, &ru) == 0) {
#if defined(__APPLE__)
        return static_cast<double>(ru.ru_maxrss) / (1024.0 * 1024.0 * 1024.0);
#else
        return static_cast<double>(ru.ru_maxrss) / (1024.0 * 1024.0);  // kilobytes
#endif
    }
#endif
    return std::nullopt;
}

struct LedgerStage {
    Stage stage = Stage::Retrieval;
    std::vector<StageRecord> records;
    double latency_ms = 0.0;
    std::optional<double> memory_gb;  // max over components
    double flops = 0.0;
    bool has_flops = false;
};

struct Ledger {
    std::vector<LedgerStage> stages;
    double total_latency_ms = 0.0;
    std::optional<double> peak_memory_gb;
    double total_flops = 0.0;
};

/// Group records by stage (pipeline order), computing subtotals and the
/// grand total. Total latency is the sum of the stage subtotals.
inline Ledger build_ledger(const std::vector<StageRecord>& records) {
    if (records.empty()) throw std::invalid_argument("build_ledger: no records");
    Ledger ledger;
    for (Stage s : {Stage::Retrieval, Stage::Reranking, Stage::Generation}) {
        LedgerStage ls;
        ls.stage = s;
        for (const auto& r : records) {
            if (r.stage != s) continue;
            ls.records.push_back(r);
            ls.latency_ms += r.latency_ms;
            if (r.memory_gb)
                ls.memory_gb = ls.memory_gb ? std::max(*ls.memory_gb, *r.memory_gb)
                                            : *r.memory_gb;
            if (r.flops) {
                ls.flops += *r.flops;
                ls.has_flops = true;
            }
        }
        if (ls.records.empty()) continue;
        ledger.total_latency_ms += ls.latency_ms;
        ledger.total_flops += ls.flops;
        if (ls.memory_gb)
            ledger.peak_memory_gb = ledger.peak_memory_gb
                                        ? std::max(*ledger.peak_memory_gb, *ls.memory_gb)
                                        : *ls.memory_gb;
        ledger.stages.push_back(std::move(ls));
    }
    return ledger;
}

namespace detail {

inline std::string format_ms(double ms) {
    std::ostringstream os;
    if (std::abs(ms - std::round(ms)) < 1e-9)
        os << static_cast<long long>(std::llround(ms));
    else
        os << std::fixed << std::setprecision(2) << ms;
    return os.str();
}

inline std::string format_flops(double flops) {
    std::ostringstream os;
    if (flops >= 1e12) {
        const double t = flops / 1e12;
        if (std::abs(t - std::round(t)) < 1e-9)
            os << static_cast<long long>(std::llround(t)) << "T";
        else
            os << std::setprecision(4) << t << "T";
    } else {
        os << std::setprecision(4) << flops / 1e12 << "T";
    }
    return os.str();
}

inline std::string format_gb(const std::optional<double>& gb) {
    if (!gb) return "--";
    std::ostringstream os;
    os << std::fixed << std::setprecision(1) << *gb;
    return os.str();
}

}  // namespace detail

/// Aligned plain-text rendering, columns Stage/Component/Latency/Memory/FLOPs.
inline std::string render_ledger(const std::vector<StageRecord>& records) {
    const Ledger ledger = build_ledger(records);

    std::vector<std::vector<std::string>> rows;
    rows.push_back({"Stage", "Component", "Latency (ms)", "Memory (GB)", "FLOPs"});
    for (const auto& ls : ledger.stages) {
        bool first = true;
        for (const auto& r : ls.records) {
            rows.push_back({first ? to_string(ls.stage) : "", r.component,
                            detail::format_ms(r.latency_ms), detail::format_gb(r.memory_gb),
                            r.flops ? detail::format_flops(*r.flops) : "--"});
            first = false;
        }
        rows.push_back({"", "Subtotal", detail::format_ms(ls.latency_ms),
                        detail::format_gb(ls.memory_gb),
                        ls.has_flops ? detail::format_flops(ls.flops) : "--"});
    }
    rows.push_back({"Total", "", detail::format_ms(ledger.total_latency_ms),
                    detail::format_gb(ledger.peak_memory_gb),
                    ledger.total_flops > 0.0 ? detail::format_flops(ledger.total_flops) : "--"});

    std::vector<std::size_t> widths(5, 0);
    for (const auto& row : rows)
        for (std::size_t c = 0; c < 5; ++c) widths[c] = std::max(widths[c], row[c].size());

    std::ostringstream os;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t c = 0; c < 5; ++c)
            os << std::left << std::setw(static_cast<int>(widths[c]) + 2) << rows[i][c];
        os << "\n";
        if (i == 0) os << std::string(std::accumulate(widths.begin(), widths.end(),
                                                      std::size_t{8}),
                                      '-')
                       << "\n";
    }
    return os.str();
}

/// Line-delimited record emission for downstream tooling.
inline void write_ledger_records(const std::vector<StageRecord>& records, std::ostream& out) {
    for (const auto& r : records) {
        nlohmann::ordered_json j;
        j["stage"] = to_string(r.stage);
        j["component"] = r.component;
        j["latency_ms"] = r.latency_ms;
        j["memory_gb"] = r.memory_gb ? nlohmann::json(*r.memory_gb) : nlohmann::json(nullptr);
        j["flops"] = r.flops ? nlohmann::json(*r.flops) : nlohmann::json(nullptr);
        out << j.dump() << "\n";
    }
}

}  // namespace tabrag
