#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tabrag/common.hpp"
#include "tabrag/corpus.hpp"

namespace tabrag {

// ---------------------------------------------------------------------------
// Instruction templates
// ---------------------------------------------------------------------------

enum class PromptKind { RetrievalAugmentedQa, ContextRanking, RetrievalAugmentedRanking };
enum class AnswerSchema { PhraseSentence, TrueFalse, PassageIndexes };

inline std::string to_string(PromptKind k) {
    switch (k) {
        case PromptKind::RetrievalAugmentedQa: return "retrieval_augmented_qa";
        case PromptKind::ContextRanking: return "context_ranking";
        case PromptKind::RetrievalAugmentedRanking: return "retrieval_augmented_ranking";
    }
    return "retrieval_augmented_qa";
}
inline std::string to_string(AnswerSchema s) {
    switch (s) {
        case AnswerSchema::PhraseSentence: return "phrase_sentence";
        case AnswerSchema::TrueFalse: return "true_false";
        case AnswerSchema::PassageIndexes: return "passage_indexes";
    }
    return "phrase_sentence";
}

/// Instruction text with a single {question} placeholder plus the layout of
/// the context passages that follow it.
struct PromptTemplate {
    PromptKind kind = PromptKind::RetrievalAugmentedQa;
    std::string instruction_text;
    AnswerSchema answer_schema = AnswerSchema::PhraseSentence;

    void validate() const {
        const std::string placeholder = "{question}";
        auto first = instruction_text.find(placeholder);
        if (first == std::string::npos)
            throw std::invalid_argument("template is missing the {question} placeholder");
        if (instruction_text.find(placeholder, first + 1) != std::string::npos)
            throw std::invalid_argument("template has more than one {question} placeholder");
    }
};

/// The built-in template set. The context-ranking wording is overridable via
/// PromptTemplates::set.
class PromptTemplates {
public:
    PromptTemplates() {
        set({PromptKind::RetrievalAugmentedQa,
             "Answer the following question from context. {question}",
             AnswerSchema::PhraseSentence});
        set({PromptKind::ContextRanking,
             "For the question {question}, access whether the passage is relevant to the "
             "question.",
             AnswerSchema::TrueFalse});
        set({PromptKind::RetrievalAugmentedRanking,
             "For the question {question}, find all passages from the context that are relevant "
             "to the question.",
             AnswerSchema::PassageIndexes});
    }

    void set(PromptTemplate t) {
        t.validate();
        templates_[t.kind] = std::move(t);
    }
    const PromptTemplate& get(PromptKind kind) const { return templates_.at(kind); }

private:
    std::map<PromptKind, PromptTemplate> templates_;
};

inline std::string render_instruction(const PromptTemplate& t, const std::string& question) {
    std::string out = t.instruction_text;
    const std::string placeholder = "{question}";
    out.replace(out.find(placeholder), placeholder.size(), question);
    return out;
}

// ---------------------------------------------------------------------------
// Assembled prompts
// ---------------------------------------------------------------------------

struct PromptSegment {
    bool is_image = false;
    std::string text;      // instruction/passage text, or the image payload
    std::string table_id;  // set for image slots
};

struct AssembledPrompt {
    std::string sample_id;
    PromptKind kind = PromptKind::RetrievalAugmentedQa;
    AnswerSchema answer_schema = AnswerSchema::PhraseSentence;
    std::vector<PromptSegment> segments;

    /// Flat text rendering; image slots appear as <image:table_id> markers.
    std::string flatten() const {
        std::string out;
        for (const auto& s : segments) {
            if (!out.empty()) out += " ";
            out += s.is_image ? "<image:" + s.table_id + ">" : s.text;
        }
        return out;
    }
};

/// Substitute the question and lay out numbered passages in the given
/// context order. Image slots carry image_ref when present, else
/// surrogate_text, so text-only backends can run the full pipeline.
inline AssembledPrompt assemble_prompt(const PromptTemplates& templates, PromptKind kind,
                                       const QuerySample& query,
                                       const std::vector<std::string>& context_ids,
                                       const Corpus& corpus) {
    if (context_ids.empty()) throw std::invalid_argument("assemble_prompt: no contexts");
    if (kind == PromptKind::ContextRanking && context_ids.size() != 1)
        throw std::invalid_argument("assemble_prompt: context_ranking takes exactly one context, got " +
                                    std::to_string(context_ids.size()));

    const PromptTemplate& tpl = templates.get(kind);
    AssembledPrompt out;
    out.sample_id = query.sample_id;
    out.kind = kind;
    out.answer_schema = tpl.answer_schema;
    const std::string& question =
        query.pruned_query.empty() ? query.raw_query : query.pruned_query;
    out.segments.push_back({false, render_instruction(tpl, question), ""});

    for (std::size_t i = 0; i < context_ids.size(); ++i) {
        const TableRecord* table = corpus.find_table(context_ids[i]);
        if (!table)
            throw std::invalid_argument("assemble_prompt: unresolvable table id \"" +
                                        context_ids[i] + "\"");
        const std::string label = kind == PromptKind::ContextRanking
                                      ? "Passage:"
                                      : "Passage " + std::to_string(i + 1) + ":";
        out.segments.push_back({false, label, ""});
        PromptSegment img;
        img.is_image = true;
        img.table_id = table->table_id;
        img.text = table->image_ref ? *table->image_ref : table->surrogate_text.value_or("");
        out.segments.push_back(std::move(img));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Answer parsing
// ---------------------------------------------------------------------------

enum class ParseStatus { Structured, FallbackRaw };

struct Answer {
    std::string raw;
    std::vector<std::string> parsed;
    ParseStatus parse_status = ParseStatus::FallbackRaw;
};

inline std::string serialize_answer(const std::vector<std::string>& parsed) {
    nlohmann::ordered_json j;
    j["answer"] = parsed;
    return j.dump();
}

namespace detail {

// Finds the first top-level {...} object in raw that parses as JSON and
// carries an "answer" key. String-aware brace matching.
inline std::optional<nlohmann::json> find_answer_object(const std::string& raw) {
    for (std::size_t start = 0; start < raw.size(); ++start) {
        if (raw[start] != '{') continue;
        int depth = 0;
        bool in_string = false;
        for (std::size_t i = start; i < raw.size(); ++i) {
            const char c = raw[i];
            if (in_string) {
                if (c == '\\')
                    ++i;
                else if (c == '"')
                    in_string = false;
                continue;
            }
            if (c == '"') {
                in_string = true;
            } else if (c == '{') {
                ++depth;
            } else if (c == '}') {
                if (--depth == 0) {
                    auto j = nlohmann::json::parse(raw.substr(start, i - start + 1), nullptr,
                                                   /*allow_exceptions=*/false);
                    if (!j.is_discarded() && j.is_object() && j.contains("answer")) return j;
                    break;  // well-formed braces but not an answer object; keep scanning
                }
            }
        }
    }
    return std::nullopt;
}

}  // namespace detail

/// Total function: extracts {"answer": [...]} from anywhere in raw, falling
/// back to the trimmed text. True/False schemas canonicalize the label.
inline Answer parse_answer(const std::string& raw, AnswerSchema schema) {
    Answer out;
    out.raw = raw;

    if (auto obj = detail::find_answer_object(raw)) {
        const auto& val = (*obj)["answer"];
        std::vector<std::string> parsed;
        if (val.is_array()) {
            for (const auto& item : val)
                parsed.push_back(item.is_string() ? item.get<std::string>() : item.dump());
        } else if (val.is_string()) {
            parsed.push_back(val.get<std::string>());
        } else {
            parsed.push_back(val.dump());
        }
        if (!parsed.empty()) {
            out.parsed = std::move(parsed);
            out.parse_status = ParseStatus::Structured;
        }
    }

    if (out.parse_status == ParseStatus::FallbackRaw) {
        out.parsed = {collapse_whitespace(raw)};
    }

    if (schema == AnswerSchema::TrueFalse) {
        for (auto& v : out.parsed) {
            const std::string lower = to_lower_ascii(collapse_whitespace(v));
            if (lower == "true") v = "True";
            else if (lower == "false") v = "False";
        }
        if (out.parse_status == ParseStatus::FallbackRaw) {
            const std::string lower = to_lower_ascii(out.raw);
            if (lower.find("true") != std::string::npos &&
                lower.find("false") == std::string::npos) {
                out.parsed = {"True"};
            } else if (lower.find("false") != std::string::npos &&
                       lower.find("true") == std::string::npos) {
                out.parsed = {"False"};
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Generation backends
// ---------------------------------------------------------------------------

struct GenerationResult {
    std::string text;
};

class GenerationBackend {
public:
    virtual ~GenerationBackend() = default;
    virtual GenerationResult generate(const AssembledPrompt& prompt) = 0;
    virtual std::string tag() const = 0;
};

/// Offline test backend: answers with the sample's reference answer when the
/// ground-truth table is among the prompt's image slots, and a fixed miss
/// marker otherwise.
class EchoGenerationBackend : public GenerationBackend {
public:
    EchoGenerationBackend(std::map<std::string, std::string> ground_truth_by_sample,
                          std::map<std::string, std::string> answer_by_sample)
        : gt_(std::move(ground_truth_by_sample)), answers_(std::move(answer_by_sample)) {}

    static EchoGenerationBackend from_corpus(const Corpus& corpus) {
        std::map<std::string, std::string> gt, ans;
        for (const auto& s : corpus.samples) {
            gt[s.sample_id] = s.table_id;
            ans[s.sample_id] = s.answer;
        }
        return EchoGenerationBackend(std::move(gt), std::move(ans));
    }

    GenerationResult generate(const AssembledPrompt& prompt) override {
        auto git = gt_.find(prompt.sample_id);
        if (git != gt_.end()) {
            for (const auto& seg : prompt.segments) {
                if (seg.is_image && seg.table_id == git->second) {
                    return {serialize_answer({answers_.at(prompt.sample_id)})};
                }
            }
        }
        return {serialize_answer({"unknown"})};
    }

    std::string tag() const override { return "echo"; }

private:
    std::map<std::string, std::string> gt_;
    std::map<std::string, std::string> answers_;
};

}  // namespace tabrag
