#pragma once

#include <chrono>
#include <map>
#include <string>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "tabrag/corpus.hpp"
#include "tabrag/generate.hpp"
#include "tabrag/rerank.hpp"

namespace tabrag {

// ---------------------------------------------------------------------------
// Remote model-server clients. The engine is the client side of these two
// contracts; any server that speaks them can drive scoring and generation.
//
//   POST /score    {query_text, prompt, candidates:[{table_id,
//                   image_ref | surrogate_text}]}
//               -> {scores:[{table_id, prob_true}]}
//   POST /generate {prompt_segments:[{type, text | table_id, payload}],
//                   answer_schema, max_output_tokens}
//               -> {text}
//
// prob_true must already be normalized into [0, 1]; the serving side
// documents whether it normalizes over the True/False pair or the full
// vocabulary.
// ---------------------------------------------------------------------------

struct RemoteConfig {
    std::string endpoint;  // e.g. "http://127.0.0.1:8811"
    int timeout_ms = 5000;
    int retries = 2;
    std::size_t max_output_tokens = 256;
    double temperature = 0.0;
};

namespace detail {

inline json post_json(const RemoteConfig& cfg, const std::string& path, const json& body) {
    std::string last_error;
    for (int attempt = 0; attempt <= cfg.retries; ++attempt) {
        httplib::Client client(cfg.endpoint);
        client.set_connection_timeout(std::chrono::milliseconds(cfg.timeout_ms));
        client.set_read_timeout(std::chrono::milliseconds(cfg.timeout_ms));
        auto res = client.Post(path, body.dump(), "application/json");
        if (!res) {
            last_error = "connection to " + cfg.endpoint + path + " failed";
            continue;
        }
        if (res->status != 200) {
            last_error = cfg.endpoint + path + " returned status " +
                         std::to_string(res->status) + ": " + res->body;
            continue;
        }
        json parsed = json::parse(res->body, nullptr, /*allow_exceptions=*/false);
        if (parsed.is_discarded())
            throw std::runtime_error(cfg.endpoint + path + " returned invalid JSON");
        return parsed;
    }
    throw std::runtime_error(last_error + " (after " + std::to_string(cfg.retries + 1) +
                             " attempts)");
}

}  // namespace detail

/// Scores candidates with a remote model server. Each candidate is an
/// independent (query, table) pair judgment; transport is batched.
class RemoteScorer : public ScorerBackend {
public:
    RemoteScorer(RemoteConfig config, const Corpus& corpus, const PromptTemplates& templates)
        : config_(std::move(config)), corpus_(corpus), templates_(templates) {}

    std::vector<double> score(const QuerySample& query,
                              const std::vector<SearchResult>& candidates) override {
        const std::string& text =
            query.pruned_query.empty() ? query.raw_query : query.pruned_query;
        json body;
        body["query_text"] = text;
        body["prompt"] = render_instruction(templates_.get(PromptKind::ContextRanking), text);
        body["candidates"] = json::array();
        for (const auto& c : candidates) {
            const TableRecord* table = corpus_.find_table(c.table_id);
            if (!table)
                throw std::runtime_error("remote scorer: unknown candidate table \"" +
                                         c.table_id + "\"");
            json jc;
            jc["table_id"] = c.table_id;
            if (table->image_ref)
                jc["image_ref"] = *table->image_ref;
            else
                jc["surrogate_text"] = table->surrogate_text.value_or("");
            body["candidates"].push_back(std::move(jc));
        }

        const json reply = detail::post_json(config_, "/score", body);
        std::map<std::string, double> by_id;
        for (const auto& s : reply.at("scores")) {
            by_id[s.at("table_id").get<std::string>()] = s.at("prob_true").get<double>();
        }
        std::vector<double> out;
        out.reserve(candidates.size());
        for (const auto& c : candidates) {
            auto it = by_id.find(c.table_id);
            if (it == by_id.end())
                throw std::runtime_error("remote scorer: no score returned for candidate \"" +
                                         c.table_id + "\"");
            out.push_back(it->second);
        }
        return out;
    }

    std::string tag() const override { return "remote"; }

private:
    RemoteConfig config_;
    const Corpus& corpus_;
    const PromptTemplates& templates_;
};

/// Stateless request/response generation against a remote model server.
class RemoteGenerationBackend : public GenerationBackend {
public:
    explicit RemoteGenerationBackend(RemoteConfig config) : config_(std::move(config)) {}

    GenerationResult generate(const AssembledPrompt& prompt) override {
        json body;
        body["prompt_segments"] = json::array();
        for (const auto& seg : prompt.segments) {
            json js;
            if (seg.is_image) {
                js["type"] = "image";
                js["table_id"] = seg.table_id;
                js["payload"] = seg.text;
            } else {
                js["type"] = "text";
                js["text"] = seg.text;
            }
            body["prompt_segments"].push_back(std::move(js));
        }
        body["answer_schema"] = to_string(prompt.answer_schema);
        body["max_output_tokens"] = config_.max_output_tokens;
        if (config_.temperature > 0.0) body["temperature"] = config_.temperature;

        const json reply = detail::post_json(config_, "/generate", body);
        return {reply.at("text").get<std::string>()};
    }

    std::string tag() const override { return "remote"; }

private:
    RemoteConfig config_;
};

}  // namespace tabrag
