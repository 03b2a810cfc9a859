// SPDX-License-Identifier: Apache-2.0
#pragma once

// The chain-of-thought-and-action data model and the strict step wire format.
//
// One step on the wire (model output surface):
//   {"thought": "...", "actions": [{"name": "OCR", "arguments": {"image": "image-0"}}]}
// Stored steps additionally carry "observation" (payload object or null).

#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cota/error.hpp"
#include "cota/json_text.hpp"

namespace cota {

inline constexpr std::string_view kTerminate = "Terminate";

struct ActionCall {
    std::string name;
    Value arguments = Value::object();

    friend bool operator==(const ActionCall& a, const ActionCall& b) {
        return a.name == b.name && same_value(a.arguments, b.arguments);
    }
};

struct Step {
    std::string thought;
    std::vector<ActionCall> actions;
    /// Filled by execution; never present in model output.
    std::optional<Value> observation;

    friend bool operator==(const Step& a, const Step& b) {
        if (a.thought != b.thought || a.actions != b.actions) return false;
        if (a.observation.has_value() != b.observation.has_value()) return false;
        return !a.observation || same_value(*a.observation, *b.observation);
    }
};

struct Chain {
    std::vector<Step> steps;

    friend bool operator==(const Chain&, const Chain&) = default;

    /// Last step holds exactly one action, Terminate, and no earlier action is Terminate.
    bool finalized() const {
        if (steps.empty()) return false;
        const auto& last = steps.back().actions;
        if (last.size() != 1 || last.front().name != kTerminate) return false;
        for (std::size_t i = 0; i + 1 < steps.size(); ++i) {
            for (const auto& a : steps[i].actions) {
                if (a.name == kTerminate) return false;
            }
        }
        return true;
    }

    /// Answer argument of the final Terminate call, if the chain is finalized.
    std::optional<Value> terminate_answer() const {
        if (!finalized()) return std::nullopt;
        const auto& args = steps.back().actions.front().arguments;
        if (!args.is_object() || !args.contains("answer")) return std::nullopt;
        return std::optional<Value>(std::in_place, args.at("answer"));
    }

    bool only_terminate() const {
        for (const auto& s : steps) {
            for (const auto& a : s.actions) {
                if (a.name != kTerminate) return false;
            }
        }
        return true;
    }

    /// Indices of steps calling more than one action.
    std::vector<std::size_t> multi_action_steps() const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < steps.size(); ++i) {
            if (steps[i].actions.size() > 1) out.push_back(i);
        }
        return out;
    }
};

enum class Format { CoTA, CoT, DA };
enum class Polarity { pos, neg };
enum class Generator { model, program };
enum class AnswerKind { multiple_choice, short_answer };

inline std::string to_string(Format f) {
    switch (f) {
    case Format::CoTA: return "CoTA";
    case Format::CoT: return "CoT";
    case Format::DA: return "DA";
    }
    return "";
}
inline std::string to_string(Polarity p) { return p == Polarity::pos ? "pos" : "neg"; }
inline std::string to_string(Generator g) { return g == Generator::model ? "model" : "program"; }
inline std::string to_string(AnswerKind k) {
    return k == AnswerKind::multiple_choice ? "multiple_choice" : "short_answer";
}

inline std::optional<Format> parse_format(std::string_view s) {
    if (s == "CoTA" || s == "cota") return Format::CoTA;
    if (s == "CoT" || s == "cot") return Format::CoT;
    if (s == "DA" || s == "da") return Format::DA;
    return std::nullopt;
}
inline std::optional<Polarity> parse_polarity(std::string_view s) {
    if (s == "pos") return Polarity::pos;
    if (s == "neg") return Polarity::neg;
    return std::nullopt;
}
inline std::optional<Generator> parse_generator(std::string_view s) {
    if (s == "model") return Generator::model;
    if (s == "program") return Generator::program;
    return std::nullopt;
}
inline std::optional<AnswerKind> parse_answer_kind(std::string_view s) {
    if (s == "multiple_choice") return AnswerKind::multiple_choice;
    if (s == "short_answer") return AnswerKind::short_answer;
    return std::nullopt;
}

struct QAExample {
    std::string id;
    /// Image sources in order; the question refers to them as image-0, image-1, ...
    std::vector<std::string> images;
    std::string question;
    std::string groundtruth;
    AnswerKind answer_kind = AnswerKind::short_answer;
    std::string source;

    friend bool operator==(const QAExample&, const QAExample&) = default;
};

inline std::string image_ref(std::size_t index) { return "image-" + std::to_string(index); }

struct TraceRecord {
    QAExample example;
    std::optional<Chain> chain;
    Format format = Format::DA;
    std::optional<Polarity> polarity;
    Generator generator = Generator::model;

    friend bool operator==(const TraceRecord&, const TraceRecord&) = default;
};

// ---------------------------------------------------------------------------
// Step wire format

namespace detail {

/// Parses JSON text, rejecting duplicate object keys at any depth.
inline std::optional<Value> parse_unique_keys(std::string_view raw, std::string& problem) {
    std::vector<std::set<std::string>> open_objects;
    bool duplicate = false;
    auto callback = [&](int, nlohmann::detail::parse_event_t event, Value& parsed) {
        using E = nlohmann::detail::parse_event_t;
        if (event == E::object_start) {
            open_objects.emplace_back();
        } else if (event == E::object_end) {
            if (!open_objects.empty()) open_objects.pop_back();
        } else if (event == E::key && !open_objects.empty()) {
            if (!open_objects.back().insert(parsed.get<std::string>()).second) duplicate = true;
        }
        return true;
    };
    Value v = Value::parse(raw.begin(), raw.end(), callback, false);
    if (v.is_discarded()) {
        problem = "not valid JSON";
        return std::nullopt;
    }
    if (duplicate) {
        problem = "duplicate object key";
        return std::nullopt;
    }
    return v;
}

inline ActionCall action_from_json(const Value& v) {
    if (!v.is_object()) throw MalformedStep("action entry is not an object");
    if (!v.contains("name")) throw MalformedStep("action entry missing \"name\"");
    if (!v.contains("arguments")) throw MalformedStep("action entry missing \"arguments\"");
    for (auto it = v.begin(); it != v.end(); ++it) {
        if (it.key() != "name" && it.key() != "arguments") {
            throw MalformedStep("unknown key in action entry: \"" + it.key() + "\"");
        }
    }
    const auto& name = v.at("name");
    if (!name.is_string() || name.get<std::string>().empty()) {
        throw MalformedStep("action \"name\" must be a non-empty string");
    }
    const auto& args = v.at("arguments");
    if (!args.is_object()) throw MalformedStep("action \"arguments\" must be an object");
    return ActionCall{name.get<std::string>(), args};
}

} // namespace detail

inline Value action_to_json(const ActionCall& call) {
    Value v = Value::object();
    v["name"] = call.name;
    v["arguments"] = call.arguments;
    return v;
}

/// Builds a Step from an already-parsed object. Stored records may carry "observation".
inline Step step_from_json(const Value& v, bool allow_observation) {
    if (!v.is_object()) throw MalformedStep("step is not a JSON object");
    for (auto it = v.begin(); it != v.end(); ++it) {
        const auto& k = it.key();
        if (k == "thought" || k == "actions") continue;
        if (allow_observation && k == "observation") continue;
        throw MalformedStep("unknown top-level key \"" + k + "\"");
    }
    if (!v.contains("thought")) throw MalformedStep("missing \"thought\"");
    if (!v.contains("actions")) throw MalformedStep("missing \"actions\"");
    if (!v.at("thought").is_string()) throw MalformedStep("\"thought\" must be a string");
    if (!v.at("actions").is_array()) throw MalformedStep("\"actions\" must be a list");

    Step step;
    step.thought = v.at("thought").get<std::string>();
    for (const auto& a : v.at("actions")) step.actions.push_back(detail::action_from_json(a));
    if (allow_observation && v.contains("observation") && !v.at("observation").is_null()) {
        step.observation = v.at("observation");
    }
    return step;
}

inline Value step_to_json(const Step& step, bool with_observation) {
    Value v = Value::object();
    v["thought"] = step.thought;
    v["actions"] = Value::array();
    for (const auto& a : step.actions) v["actions"].push_back(action_to_json(a));
    if (with_observation) v["observation"] = step.observation ? *step.observation : Value(nullptr);
    return v;
}

/// Parses one model-emitted step. Throws MalformedStep.
inline Step parse_step(std::string_view raw) {
    std::string problem;
    auto v = detail::parse_unique_keys(raw, problem);
    if (!v) throw MalformedStep("step text is " + problem);
    return step_from_json(*v, false);
}

/// Canonical model-output form: sorted keys, compact, observation omitted.
inline std::string serialize_step(const Step& step) { return canonical_dump(step_to_json(step, false)); }

// ---------------------------------------------------------------------------
// Classification and conversion

/// CoT iff Terminate is the only action used anywhere; polarity follows verification.
inline std::pair<Format, Polarity> classify_format(const Chain& chain, bool verified) {
    if (!chain.finalized()) throw UnfinalizedChain();
    return {chain.only_terminate() ? Format::CoT : Format::CoTA, verified ? Polarity::pos : Polarity::neg};
}

inline TraceRecord make_direct_answer(QAExample example, Generator generator,
                                      std::optional<Polarity> polarity = std::nullopt) {
    TraceRecord r;
    r.example = std::move(example);
    r.format = Format::DA;
    r.polarity = polarity;
    r.generator = generator;
    return r;
}

/// Drops the chain of a rejected record, keeping the groundtruth answer.
inline TraceRecord convert_to_da(const TraceRecord& record) {
    if (record.format == Format::DA) throw AlreadyDirectAnswer();
    if (record.chain && record.polarity != Polarity::neg) {
        throw Error("only rejected (neg) or unparsed records convert to direct answer");
    }
    return make_direct_answer(record.example, record.generator, record.polarity);
}

// ---------------------------------------------------------------------------
// Record schema

struct RecordProblem {
    std::string field;
    std::string reason;
};

/// Storage invariants of a record, or the first one it breaks.
inline std::optional<RecordProblem> check_record(const TraceRecord& r) {
    if (r.example.id.empty()) return RecordProblem{"id", "must be non-empty"};
    if (r.format == Format::DA) {
        if (r.chain) return RecordProblem{"chain", "DA records carry no chain"};
        return std::nullopt;
    }
    if (!r.chain) return RecordProblem{"chain", "CoTA/CoT records need a chain"};
    if (r.polarity == Polarity::neg) return RecordProblem{"polarity", "rejected chains are stored as DA"};
    if (!r.chain->finalized()) return RecordProblem{"chain", "chain is not Terminate-finalized"};
    if (r.format == Format::CoT && !r.chain->only_terminate()) {
        return RecordProblem{"format", "CoT chain uses actions other than Terminate"};
    }
    if (r.format == Format::CoTA && r.chain->only_terminate()) {
        return RecordProblem{"format", "CoTA chain uses no action besides Terminate"};
    }
    return std::nullopt;
}

inline Value record_to_json(const TraceRecord& r) {
    Value v = Value::object();
    v["id"] = r.example.id;
    v["images"] = r.example.images;
    v["question"] = r.example.question;
    v["groundtruth"] = r.example.groundtruth;
    v["answer_kind"] = to_string(r.example.answer_kind);
    v["source"] = r.example.source;
    v["generator"] = to_string(r.generator);
    v["format"] = to_string(r.format);
    v["polarity"] = r.polarity ? Value(to_string(*r.polarity)) : Value(nullptr);
    if (r.chain) {
        Value steps = Value::array();
        for (const auto& s : r.chain->steps) steps.push_back(step_to_json(s, true));
        v["chain"] = std::move(steps);
    } else {
        v["chain"] = nullptr;
    }
    return v;
}

namespace detail {

[[noreturn]] inline void schema_fail(std::size_t line, const std::string& field, const std::string& why) {
    throw SchemaViolation(line, field, why);
}

inline const Value& require(const Value& v, const char* field, std::size_t line) {
    if (!v.contains(field)) schema_fail(line, field, "missing");
    return v.at(field);
}

inline std::string require_string(const Value& v, const char* field, std::size_t line) {
    const auto& f = require(v, field, line);
    if (!f.is_string()) schema_fail(line, field, "must be a string");
    return f.get<std::string>();
}

} // namespace detail

/// Reads and validates one record object; `line` is only used in error reports.
inline QAExample example_from_json(const Value& v, std::size_t line = 0) {
    using namespace detail;
    if (!v.is_object()) schema_fail(line, "<record>", "not a JSON object");
    QAExample ex;
    ex.id = require_string(v, "id", line);
    const auto& images = require(v, "images", line);
    if (!images.is_array()) schema_fail(line, "images", "must be a list");
    for (const auto& i : images) {
        if (!i.is_string()) schema_fail(line, "images", "entries must be strings");
        ex.images.push_back(i.get<std::string>());
    }
    ex.question = require_string(v, "question", line);
    ex.groundtruth = require_string(v, "groundtruth", line);
    auto kind = v.contains("answer_kind") ? require_string(v, "answer_kind", line) : std::string("short_answer");
    auto k = parse_answer_kind(kind);
    if (!k) schema_fail(line, "answer_kind", "unknown answer kind '" + kind + "'");
    ex.answer_kind = *k;
    ex.source = v.contains("source") ? require_string(v, "source", line) : std::string();
    return ex;
}

inline Value example_to_json(const QAExample& ex) {
    Value v = Value::object();
    v["id"] = ex.id;
    v["images"] = ex.images;
    v["question"] = ex.question;
    v["groundtruth"] = ex.groundtruth;
    v["answer_kind"] = to_string(ex.answer_kind);
    v["source"] = ex.source;
    return v;
}

inline TraceRecord record_from_json(const Value& v, std::size_t line = 0) {
    using namespace detail;
    TraceRecord r;
    r.example = example_from_json(v, line);
    if (!v.contains("source")) schema_fail(line, "source", "missing");

    auto gen = parse_generator(require_string(v, "generator", line));
    if (!gen) schema_fail(line, "generator", "must be model or program");
    r.generator = *gen;

    auto fmt = parse_format(require_string(v, "format", line));
    if (!fmt) schema_fail(line, "format", "must be CoTA, CoT or DA");
    r.format = *fmt;

    if (v.contains("polarity") && !v.at("polarity").is_null()) {
        auto p = v.at("polarity").is_string() ? parse_polarity(v.at("polarity").get<std::string>()) : std::nullopt;
        if (!p) schema_fail(line, "polarity", "must be pos, neg or null");
        r.polarity = *p;
    }

    const auto& chain = require(v, "chain", line);
    if (!chain.is_null()) {
        if (!chain.is_array()) schema_fail(line, "chain", "must be a list of steps or null");
        Chain c;
        for (const auto& s : chain) {
            try {
                c.steps.push_back(step_from_json(s, true));
            } catch (const MalformedStep& e) {
                schema_fail(line, "chain", e.what());
            }
        }
        r.chain = std::move(c);
    }

    if (auto problem = check_record(r)) schema_fail(line, problem->field, problem->reason);
    return r;
}

} // namespace cota
