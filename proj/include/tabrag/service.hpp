#pragma once

#include <set>
#include <string>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "tabrag/pipeline.hpp"

namespace tabrag {

// ---------------------------------------------------------------------------
// HTTP front for the pipeline. The index/params snapshot is loaded before
// the server starts and stays immutable, so concurrent requests are
// lock-free reads. Responses for pure endpoints equal the CLI outputs for
// identical inputs.
// ---------------------------------------------------------------------------

class Service {
public:
    explicit Service(const Pipeline& pipeline) : pipeline_(pipeline) {}

    void attach(httplib::Server& server) const {
        server.Get("/health", [this](const httplib::Request&, httplib::Response& res) {
            ordered_json j;
            j["status"] = "ok";
            j["index_size"] = pipeline_.index().size();
            j["params_version"] = pipeline_.params().version;
            res.set_content(j.dump(), "application/json");
        });

        server.Post("/retrieve", [this](const httplib::Request& req, httplib::Response& res) {
            handle(req, res, {"query", "n"}, [&](const json& body) {
                const std::string query = body.at("query").get<std::string>();
                const std::size_t n =
                    body.value("n", pipeline_.options().n_retrieve);
                ordered_json out;
                out["results"] = ordered_json::array();
                for (const auto& r : pipeline_.retrieve(query, n)) {
                    ordered_json jr;
                    jr["table_id"] = r.table_id;
                    jr["score"] = r.score;
                    jr["rank"] = r.rank;
                    out["results"].push_back(std::move(jr));
                }
                return out;
            });
        });

        server.Post("/rerank", [this](const httplib::Request& req, httplib::Response& res) {
            handle(req, res, {"query", "sample_id", "n_retrieve", "n_rerank"},
                   [&](const json& body) {
                       const QuerySample q = resolve_query(body);
                       const std::size_t n_retrieve =
                           body.value("n_retrieve", pipeline_.options().n_retrieve);
                       const std::size_t n_rerank =
                           std::min<std::size_t>(
                               body.value("n_rerank", pipeline_.options().n_rerank), n_retrieve);
                       const std::string& text =
                           q.pruned_query.empty() ? q.raw_query : q.pruned_query;
                       auto retrieved = pipeline_.retrieve(text, n_retrieve);
                       const std::size_t n = std::min(n_rerank, retrieved.size());
                       std::vector<SearchResult> pool(retrieved.begin(), retrieved.begin() + n);
                       ordered_json out;
                       out["results"] = ordered_json::array();
                       for (const auto& c : rerank(pipeline_.scorer(), q, pool, pool.size())) {
                           ordered_json jc;
                           jc["table_id"] = c.table_id;
                           jc["prob_true"] = c.prob_true;
                           jc["backend"] = c.backend_tag;
                           out["results"].push_back(std::move(jc));
                       }
                       return out;
                   });
        });

        server.Post("/answer", [this](const httplib::Request& req, httplib::Response& res) {
            handle(req, res, {"query", "sample_id"}, [&](const json& body) {
                const QuerySample q = resolve_query(body);
                const auto outcome = pipeline_.answer_sample(q);
                ordered_json out;
                out["answer"] = outcome.trace.to_json()["answer"];
                out["trace"] = outcome.trace.to_json();
                return out;
            });
        });
    }

private:
    // A request must name either a known sample_id or carry free query text.
    QuerySample resolve_query(const json& body) const {
        if (body.contains("sample_id")) {
            const std::string id = body.at("sample_id").get<std::string>();
            const QuerySample* s = pipeline_.corpus().find_sample(id);
            if (!s) throw std::invalid_argument("unknown sample_id \"" + id + "\"");
            return *s;
        }
        if (body.contains("query")) {
            QuerySample q;
            q.sample_id = "adhoc";
            q.raw_query = body.at("query").get<std::string>();
            q.pruned_query = q.raw_query;
            return q;
        }
        throw std::invalid_argument("request needs a \"query\" or \"sample_id\" field");
    }

    template <typename F>
    void handle(const httplib::Request& req, httplib::Response& res,
                const std::set<std::string>& allowed, F&& fn) const {
        json body = json::parse(req.body, nullptr, /*allow_exceptions=*/false);
        if (body.is_discarded() || !body.is_object()) {
            fail(res, 400, "request body is not a JSON object");
            return;
        }
        for (const auto& [key, value] : body.items()) {
            if (!allowed.count(key)) {
                fail(res, 400, "unknown field \"" + key + "\"");
                return;
            }
        }
        try {
            res.set_content(fn(body).dump(), "application/json");
        } catch (const std::invalid_argument& e) {
            fail(res, 400, e.what());
        } catch (const std::exception& e) {
            fail(res, 500, e.what());
        }
    }

    static void fail(httplib::Response& res, int status, const std::string& message) {
        ordered_json j;
        j["error"]["message"] = message;
        res.status = status;
        res.set_content(j.dump(), "application/json");
    }

    const Pipeline& pipeline_;
};

}  // namespace tabrag
