// SPDX-License-Identifier: Apache-2.0
#pragma once

// Execution backends: the annotation oracle and scripted replay. The remote
// wire-protocol client lives in remote.hpp.

#include <deque>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cota/error.hpp"
#include "cota/expression.hpp"
#include "cota/json_text.hpp"
#include "cota/registry.hpp"
#include "cota/scene.hpp"
#include "cota/tools.hpp"
#include "cota/trace.hpp"

namespace cota {

struct Observation {
    /// Keys mirror the tool's rets_spec.
    Value payload = Value::object();
    /// Refs registered in the context by this call, in creation order.
    std::vector<std::string> new_images;
};

class Backend {
public:
    virtual ~Backend() = default;

    /// Runs a validated call. Throws ToolRuntimeError for soft tool failures and
    /// BackendUnavailable when the tools cannot be reached at all.
    virtual Observation execute(const ActionCall& call, ExecutionContext& ctx) = 0;
};

// ---------------------------------------------------------------------------
// Oracle

/// Query-text lookup tables for the tools that would call external services.
struct OracleFixtures {
    std::map<std::string, std::string> language_model;
    std::map<std::string, std::string> knowledge_base;
    std::map<std::string, std::string> math;

    /// {"QueryLanguageModel": {query: answer}, "QueryKnowledgeBase": {...}, "SolveMathEquation": {...}}
    static OracleFixtures from_json(const Value& v) {
        OracleFixtures f;
        auto load = [&](const char* key, std::map<std::string, std::string>& into) {
            if (!v.contains(key)) return;
            for (auto it = v.at(key).begin(); it != v.at(key).end(); ++it) into[it.key()] = value_text(it.value());
        };
        load("QueryLanguageModel", f.language_model);
        load("QueryKnowledgeBase", f.knowledge_base);
        load("SolveMathEquation", f.math);
        return f;
    }
};

struct OracleOptions {
    LocalizeOptions localize;
    OracleFixtures fixtures;
};

/// Answers every tool from scene annotations. Stateless apart from the context it is
/// handed, so one instance serves many concurrent episodes.
class OracleBackend : public Backend {
public:
    explicit OracleBackend(OracleOptions options = {}) : opts_(std::move(options)) {}

    Observation execute(const ActionCall& call, ExecutionContext& ctx) override {
        const Value& a = call.arguments;
        const std::string& n = call.name;
        Observation obs;
        if (n == kTerminate) {
            obs.payload["answer"] = a.at("answer");
        } else if (n == "Calculate") {
            obs.payload["result"] = calculate(a.at("expression").get<std::string>());
        } else if (n == "OCR") {
            obs.payload["text"] = ocr_text(annotation(ctx, a, n));
        } else if (n == "GetObjects") {
            obs.payload["objects"] = object_names(annotation(ctx, a, n));
        } else if (n == "LocalizeObjects") {
            const auto& img = ctx.image(a.at("image").get<std::string>(), n);
            Rng rng = ctx.call_rng();
            auto regions = localize(need(img, n), a.at("objects").get<std::vector<std::string>>(), rng, opts_.localize);
            derive(obs, ctx, img);
            obs.payload["regions"] = regions_to_json(regions);
        } else if (n == "DetectFaces") {
            const auto& img = ctx.image(a.at("image").get<std::string>(), n);
            auto regions = detect_faces(img);
            derive(obs, ctx, img);
            obs.payload["regions"] = regions_to_json(regions);
        } else if (n == "VisualizeRegionsOnImage") {
            derive(obs, ctx, ctx.image(a.at("image").get<std::string>(), n));
        } else if (n == "EstimateRegionDepth") {
            const auto& ann = annotation(ctx, a, n);
            obs.payload["depth"] = region_depth(ann, BBox::from_json(a.at("bbox")), DepthMode::mean);
        } else if (n == "EstimateObjectDepth") {
            const auto& ann = annotation(ctx, a, n);
            Rng rng = ctx.call_rng();
            auto d = object_depth(ann, a.at("object").get<std::string>(), rng, opts_.localize);
            obs.payload["depth"] = d ? Value(*d) : Value(kObjectNotFound);
        } else if (n == "Crop") {
            const auto& img = ctx.image(a.at("image").get<std::string>(), n);
            ImageHandle out = crop_handle(img, crop_box(BBox::from_json(a.at("bbox")), img.width, img.height));
            issue(obs, ctx, std::move(out));
        } else if (n == "ZoomIn") {
            const auto& img = ctx.image(a.at("image").get<std::string>(), n);
            ImageHandle out = zoom(img, BBox::from_json(a.at("bbox")), a.at("zoom_factor").get<double>());
            issue(obs, ctx, std::move(out));
        } else if (n == "GetImageToImagesSimilarity") {
            const auto query = image_tags(annotation(ctx, a, n));
            std::vector<TagSet> cands;
            for (const auto& r : a.at("other_images")) cands.push_back(image_tags(need(ctx.image(r.get<std::string>(), n), n)));
            auto s = oracle_similarity(query, cands, n);
            obs.payload["similarity"] = s.scores;
            obs.payload["best_image_index"] = s.best;
        } else if (n == "GetImageToTextsSimilarity") {
            const auto query = image_tags(annotation(ctx, a, n));
            const auto texts = a.at("texts").get<std::vector<std::string>>();
            std::vector<TagSet> cands;
            for (const auto& t : texts) cands.push_back(text_tags(t));
            auto s = oracle_similarity(query, cands, n);
            obs.payload["similarity"] = s.scores;
            obs.payload["best_text_index"] = s.best;
            obs.payload["best_text"] = texts[s.best];
        } else if (n == "GetTextToImagesSimilarity") {
            const auto query = text_tags(a.at("text").get<std::string>());
            std::vector<TagSet> cands;
            for (const auto& r : a.at("images")) cands.push_back(image_tags(need(ctx.image(r.get<std::string>(), n), n)));
            auto s = oracle_similarity(query, cands, n);
            obs.payload["similarity"] = s.scores;
            obs.payload["best_image_index"] = s.best;
        } else if (n == "QueryLanguageModel") {
            obs.payload["result"] = lookup(opts_.fixtures.language_model, a.at("query").get<std::string>(), n);
        } else if (n == "QueryKnowledgeBase") {
            obs.payload["result"] = lookup(opts_.fixtures.knowledge_base, a.at("query").get<std::string>(), n);
        } else if (n == "SolveMathEquation") {
            obs.payload["result"] = solve(a.at("query").get<std::string>());
        } else {
            throw ToolRuntimeError(n, "The oracle backend does not implement " + n + ".");
        }
        return obs;
    }

    const OracleOptions& options() const { return opts_; }

private:
    static Value calculate(const std::string& expr) {
        try {
            return number_value(eval_expression(expr));
        } catch (const ExpressionSyntaxError& e) {
            throw ToolRuntimeError("Calculate", e.what());
        } catch (const DivisionByZero& e) {
            throw ToolRuntimeError("Calculate", e.what());
        }
    }

    std::string solve(const std::string& query) const {
        if (auto it = opts_.fixtures.math.find(query); it != opts_.fixtures.math.end()) return it->second;
        try {
            return solve_linear(query).text();
        } catch (const UnsupportedEquation& e) {
            throw ToolRuntimeError("SolveMathEquation", e.what());
        } catch (const DivisionByZero& e) {
            throw ToolRuntimeError("SolveMathEquation", e.what());
        }
    }

    static std::string lookup(const std::map<std::string, std::string>& table, const std::string& query,
                              const std::string& tool) {
        auto it = table.find(query);
        if (it == table.end()) throw ToolRuntimeError(tool, "No fixture answer for query: " + query);
        return it->second;
    }

    static const ImageAnnotation& need(const ImageHandle& img, const std::string& tool) {
        if (!img.annotation) throw ToolRuntimeError(tool, "No annotation is available for this image.");
        return *img.annotation;
    }

    static const ImageAnnotation& annotation(const ExecutionContext& ctx, const Value& args, const std::string& tool) {
        return need(ctx.image(args.at("image").get<std::string>(), tool), tool);
    }

    static void issue(Observation& obs, ExecutionContext& ctx, ImageHandle handle) {
        const std::string ref = ctx.issue(std::move(handle));
        obs.payload["image"] = ref;
        obs.new_images.push_back(ref);
    }

    /// A visualized copy: same pixels and annotation, boxes drawn on top.
    static void derive(Observation& obs, ExecutionContext& ctx, const ImageHandle& src) {
        ImageHandle copy = src;
        copy.source = "derived";
        issue(obs, ctx, std::move(copy));
    }

    OracleOptions opts_;
};

// ---------------------------------------------------------------------------
// Replay

/// Canonical call text used to key replay fixtures.
inline std::string call_fingerprint(const ActionCall& call) { return canonical_dump(action_to_json(call)); }

/// Serves recorded observations by call fingerprint. Repeated identical calls consume
/// their recordings in order; the last one repeats once exhausted. A recorded
/// {"error": msg} payload is raised again as ToolRuntimeError so replays stay faithful.
/// Load fixtures before sharing; execute() only reads the table and keeps its
/// cursors in the context.
class ReplayBackend : public Backend {
public:
    struct Entry {
        ActionCall call;
        Value observation;
    };

    ReplayBackend() = default;
    explicit ReplayBackend(const std::vector<Entry>& entries) {
        for (const auto& e : entries) add(e.call, e.observation);
    }

    void add(const ActionCall& call, Value observation) {
        table_[call_fingerprint(call)].push_back(std::move(observation));
    }

    /// Fixture file: [{"call": {"name", "arguments"}, "observation": {...}}, ...]
    static ReplayBackend from_json(const Value& v) {
        if (!v.is_array()) throw Error("replay fixtures must be a list");
        ReplayBackend b;
        for (const auto& e : v) b.add(detail::action_from_json(e.at("call")), e.at("observation"));
        return b;
    }

    static ReplayBackend load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw Error("cannot open replay fixtures " + path);
        std::stringstream ss;
        ss << in.rdbuf();
        return from_json(Value::parse(ss.str()));
    }

    /// Fixtures for every executed step of a chain. Only the last call of a
    /// multi-action step has a stored observation.
    void add_chain(const Chain& chain) {
        for (const auto& s : chain.steps) {
            if (!s.observation || s.actions.empty()) continue;
            add(s.actions.back(), *s.observation);
        }
    }

    Value to_json() const {
        Value out = Value::array();
        for (const auto& [key, list] : table_) {
            for (const auto& obs : list) out.push_back(Value{{"call", Value::parse(key)}, {"observation", obs}});
        }
        return out;
    }

    Observation execute(const ActionCall& call, ExecutionContext& ctx) override {
        const std::string key = call_fingerprint(call);
        auto it = table_.find(key);
        if (it == table_.end()) throw ToolRuntimeError(call.name, "No recorded observation for this call.");
        auto& cursor = ctx.counter("replay:" + key);
        const Value payload = it->second[std::min(cursor, it->second.size() - 1)];
        ++cursor;
        if (payload.is_object() && payload.size() == 1 && payload.contains("error") && payload.at("error").is_string()) {
            throw ToolRuntimeError(call.name, payload.at("error").get<std::string>());
        }
        Observation obs;
        obs.payload = payload;
        if (payload.is_object() && payload.contains("image") && payload.at("image").is_string()) {
            const std::string ref = payload.at("image").get<std::string>();
            if (!ctx.has(ref)) {
                ImageHandle handle;
                if (call.arguments.contains("image") && call.arguments.at("image").is_string() &&
                    ctx.has(call.arguments.at("image").get<std::string>())) {
                    handle = ctx.image(call.arguments.at("image").get<std::string>());
                }
                handle.source = "derived";
                ctx.adopt(ref, std::move(handle));
                obs.new_images.push_back(ref);
            }
        }
        return obs;
    }

private:
    std::map<std::string, std::vector<Value>> table_;
};

} // namespace cota
