// SPDX-License-Identifier: Apache-2.0
#pragma once

// The declared action space: specs for the built-in tools, call validation
// against those specs, and rendering of the trace-generation system prompt.

#include <algorithm>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cota/error.hpp"
#include "cota/json_text.hpp"
#include "cota/trace.hpp"

namespace cota {

/// How an argument value is checked. The tool descriptions are prose, so these are inferred.
enum class ArgKind { text, number, box, image, image_list, text_list, regions, answer };

inline std::string to_string(ArgKind k) {
    switch (k) {
    case ArgKind::text: return "text";
    case ArgKind::number: return "number";
    case ArgKind::box: return "box";
    case ArgKind::image: return "image";
    case ArgKind::image_list: return "image_list";
    case ArgKind::text_list: return "text_list";
    case ArgKind::regions: return "regions";
    case ArgKind::answer: return "answer";
    }
    return "text";
}

inline std::optional<ArgKind> parse_arg_kind(std::string_view s) {
    for (auto k : {ArgKind::text, ArgKind::number, ArgKind::box, ArgKind::image, ArgKind::image_list,
                   ArgKind::text_list, ArgKind::regions, ArgKind::answer}) {
        if (to_string(k) == s) return k;
    }
    return std::nullopt;
}

struct ArgSpec {
    std::string name;
    std::string description;
    ArgKind kind = ArgKind::text;
    bool required = true;
};

struct ActionSpec {
    std::string name;
    std::string description;
    std::vector<ArgSpec> args;
    std::vector<std::pair<std::string, std::string>> rets;
    std::vector<ActionCall> examples;
    /// Helper invoked by other tools; registered but left out of the prompt.
    bool internal = false;

    const ArgSpec* arg(std::string_view n) const {
        for (const auto& a : args) {
            if (a.name == n) return &a;
        }
        return nullptr;
    }

    bool has_ret(std::string_view n) const {
        return std::any_of(rets.begin(), rets.end(), [&](const auto& r) { return r.first == n; });
    }
};

// ---------------------------------------------------------------------------
// Validation

struct ValidationIssue {
    enum class Kind { unknown_action, missing_argument, unknown_argument, invalid_value };
    Kind kind;
    std::string argument;
    std::string reason;

    std::string message() const {
        switch (kind) {
        case Kind::unknown_action: return "Unknown action: " + reason;
        case Kind::missing_argument: return "Missing argument: " + argument;
        case Kind::unknown_argument: return "Unknown argument: " + argument;
        case Kind::invalid_value: return "Invalid value for " + argument + ": " + reason;
        }
        return reason;
    }
};

struct ValidationReport {
    std::vector<ValidationIssue> issues;

    bool ok() const { return issues.empty(); }

    bool has(ValidationIssue::Kind k, std::string_view argument = {}) const {
        return std::any_of(issues.begin(), issues.end(), [&](const auto& i) {
            return i.kind == k && (argument.empty() || i.argument == argument);
        });
    }

    std::string message() const {
        std::string out;
        for (const auto& i : issues) {
            if (!out.empty()) out += "; ";
            out += i.message();
        }
        return out;
    }
};

/// Empty string when `v` is a normalized [left, top, right, bottom] box.
inline std::string box_problem(const Value& v) {
    if (!v.is_array() || v.size() != 4) return "must be a list of 4 numbers";
    for (const auto& x : v) {
        if (!x.is_number()) return "must be a list of 4 numbers";
        const double d = x.get<double>();
        if (!(d >= 0.0 && d <= 1.0)) return "Bounding box coordinates must be between 0 and 1.";
    }
    if (v[0].get<double>() > v[2].get<double>()) return "left must not exceed right";
    if (v[1].get<double>() > v[3].get<double>()) return "top must not exceed bottom";
    return {};
}

namespace detail {

inline std::string value_problem(ArgKind kind, const Value& v) {
    auto all_strings = [](const Value& list) {
        return list.is_array() && std::all_of(list.begin(), list.end(), [](const Value& x) { return x.is_string(); });
    };
    switch (kind) {
    case ArgKind::text:
        return v.is_string() ? "" : "must be text";
    case ArgKind::number:
        return v.is_number() ? "" : "must be a number";
    case ArgKind::box:
        return box_problem(v);
    case ArgKind::image:
        return v.is_string() && !v.get<std::string>().empty() ? "" : "must be an image reference";
    case ArgKind::image_list:
        return all_strings(v) ? "" : "must be a list of image references";
    case ArgKind::text_list:
        return all_strings(v) ? "" : "must be a list of texts";
    case ArgKind::answer:
        return v.is_string() || v.is_number() || v.is_boolean() ? "" : "must be text or a number";
    case ArgKind::regions:
        if (!v.is_array()) return "must be a list of regions";
        for (const auto& r : v) {
            if (!r.is_object() || !r.contains("bbox")) return "each region needs a bbox";
            if (auto p = box_problem(r.at("bbox")); !p.empty()) return p;
            if (r.contains("label") && !r.at("label").is_string()) return "region label must be text";
        }
        return "";
    }
    return "";
}

} // namespace detail

class Registry {
public:
    Registry() = default;

    explicit Registry(std::vector<ActionSpec> specs) {
        for (auto& s : specs) add(std::move(s));
    }

    /// Appends a spec. Throws Error on a duplicate name.
    void add(ActionSpec spec) {
        if (spec.name.empty()) throw Error("action spec needs a name");
        if (find(spec.name)) throw Error("duplicate action spec: " + spec.name);
        specs_.push_back(std::move(spec));
    }

    const ActionSpec* find(std::string_view name) const {
        for (const auto& s : specs_) {
            if (s.name == name) return &s;
        }
        return nullptr;
    }

    const std::vector<ActionSpec>& specs() const { return specs_; }
    std::size_t size() const { return specs_.size(); }
    bool empty() const { return specs_.empty(); }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        for (const auto& s : specs_) out.push_back(s.name);
        return out;
    }

private:
    std::vector<ActionSpec> specs_;
};

/// Checks a call against its spec. Never throws; problems land in the report.
inline ValidationReport validate_call(const Registry& registry, const ActionCall& call) {
    using K = ValidationIssue::Kind;
    ValidationReport report;
    const auto* spec = registry.find(call.name);
    if (!spec) {
        report.issues.push_back({K::unknown_action, "", call.name});
        return report;
    }
    if (!call.arguments.is_object()) {
        report.issues.push_back({K::invalid_value, "arguments", "must be an object"});
        return report;
    }
    for (const auto& a : spec->args) {
        if (!call.arguments.contains(a.name)) {
            if (a.required) report.issues.push_back({K::missing_argument, a.name, ""});
            continue;
        }
        if (auto p = detail::value_problem(a.kind, call.arguments.at(a.name)); !p.empty()) {
            report.issues.push_back({K::invalid_value, a.name, p});
        }
    }
    for (auto it = call.arguments.begin(); it != call.arguments.end(); ++it) {
        if (!spec->arg(it.key())) report.issues.push_back({K::unknown_argument, it.key(), ""});
    }
    return report;
}

// ---------------------------------------------------------------------------
// Built-in action space

namespace detail {

inline ActionCall call(std::string name, Value args) { return ActionCall{std::move(name), std::move(args)}; }

inline const char* const kBoxDescription =
    "It should be a list of [left, top, right, bottom], where each value is a float between 0 and 1 to "
    "represent the percentage of the image width/height and how far it is from the top left corner at [0, 0].";

} // namespace detail

/// The 15 tools plus Terminate and the internal region visualizer, in prompt order.
inline Registry builtin_registry() {
    using detail::call;
    using A = ArgKind;
    std::vector<ActionSpec> s;

    s.push_back({"OCR",
                 "Extract texts from an image or return an empty string if no text is in the image. Note that the "
                 "texts extracted may be incorrect or in the wrong order. It should be used as a reference only.",
                 {{"image", "the image to extract texts from.", A::image}},
                 {{"text", "the texts extracted from the image."}},
                 {call("OCR", {{"image", "image-0"}})}});

    s.push_back({"LocalizeObjects",
                 "Localize one or multiple objects/regions with bounding boxes. This tool may output objects that "
                 "don't exist or miss objects that do. You should use the output only as weak evidence for "
                 "reference. When answering questions about the image, you should double-check the detected "
                 "objects. You should be especially cautious about the total number of regions detected, which can "
                 "be more or less than the actual number.",
                 {{"image", "the image to localize objects/regions in.", A::image},
                  {"objects",
                   "a list of object names to localize. e.g. ['dog', 'cat', 'person']. the model might not be able "
                   "to detect rare objects or objects with complex descriptionriptions.",
                   A::text_list}},
                 {{"image", "the image with objects localized and visualized on it."},
                  {"regions",
                   "the regions of interests localized in the image, where each region is represented by a "
                   "dictionary with the region's label text, bounding box and confidence score. The confidence "
                   "score is between 0 and 1, where 1 means the model is very confident. Note that both the "
                   "bounding boxes and confidence scores can be unreliable and should only be used as reference."}},
                 {call("LocalizeObjects", {{"image", "image-0"}, {"objects", {"dog", "cat"}}})}});

    s.push_back({"GetObjects",
                 "Using this function to get objects in an image.",
                 {{"image", "the image to get objects from.", A::image}},
                 {{"objects", "the objects detected in the image."}},
                 {call("GetObjects", {{"image", "image-0"}})}});

    s.push_back({"EstimateRegionDepth",
                 "Estimate the depth of a region in an image using DepthAnything model. It returns an estimated "
                 "depth value of the region specified by the input bounding box. The smaller the value is, the "
                 "closer the region is to the camera, and the larger the farther. This tool may help you to better "
                 "reason about the spatial relationship, like which object is closer to the camera. ",
                 {{"image", "the image to get the depth from.", A::image},
                  {"bbox", std::string("the bbox of the region to get the depth from. ") + detail::kBoxDescription,
                   A::box}},
                 {{"depth", "the estimated depth of the region."}},
                 {call("EstimateRegionDepth", {{"image", "image-0"}, {"bbox", {0.3, 0.2, 0.5, 0.4}}})}});

    s.push_back({"EstimateObjectDepth",
                 "Estimate the depth of an object in an image using DepthAnything model. It returns an estimated "
                 "depth value of the object specified by the a brief text description. The smaller the value is, "
                 "the closer the object is to the camera, and the larger the farther. This tool may help you to "
                 "better reason about the spatial relationship, like which object is closer to the camera.",
                 {{"image", "the image to get the depth from.", A::image},
                  {"object", "a short description of the object to get the depth from.", A::text}},
                 {{"depth", "the estimated depth of the object."}},
                 {call("EstimateObjectDepth", {{"image", "image-0"}, {"object", "a black cat"}})}});

    s.push_back({"Crop",
                 "Crop an image with the bounding box. It labels the cropped region with a bounding box and crops "
                 "the region with some margins around the bounding box to help with contextual understanding of the "
                 "region.",
                 {{"image", "the image to crop.", A::image},
                  {"bbox", std::string("the bbox to crop. ") + detail::kBoxDescription, A::box}},
                 {{"image", "the cropped image."}},
                 {call("Crop", {{"image", "image-0"}, {"bbox", {0.33, 0.21, 0.58, 0.46}}})}});

    s.push_back({"ZoomIn",
                 "Zoom in on a region of the input image. This tool first crops the specified region from the image "
                 "with the bounding box and then resizes the cropped region to create the zoom effect. It also adds "
                 "some margins around the cropped region to help with contextual understanding of the region.",
                 {{"image", "the image to zoom in on.", A::image},
                  {"bbox", std::string("The bbox should be a list of [left, top, right, bottom], where each value is "
                                       "a float between 0 and 1 to represent the percentage of the image "
                                       "width/height and how far it is from the top left corner at [0, 0]."),
                   A::box},
                  {"zoom_factor", "the factor to zoom in by. It should be greater than 1.", A::number}},
                 {{"image", "the zoomed in image."}},
                 {call("ZoomIn", {{"image", "image-0"}, {"bbox", {0.4, 0.3, 0.5, 0.4}}, {"zoom_factor", 2}})}});

    s.push_back({"QueryLanguageModel",
                 "Using this function to ask a language model a question.",
                 {{"query", "the question to ask the language model.", A::text}},
                 {{"result", "the response from the language model."}},
                 {call("QueryLanguageModel", {{"query", "What is the capital of France?"}})}});

    s.push_back({"GetImageToImagesSimilarity",
                 "Get the similarity between one image and a list of other images. Note that this similarity score "
                 "may not be accurate and should be used as a reference only.",
                 {{"image", "the reference image.", A::image},
                  {"other_images", "the other images to compare to the reference image.", A::image_list}},
                 {{"similarity", "the CLIP similarity scores between the reference image and the other images."},
                  {"best_image_index", "the index of the most similar image."}},
                 {call("GetImageToImagesSimilarity", {{"image", "image-0"}, {"other_images", {"image-1", "image-2"}}})}});

    s.push_back({"GetImageToTextsSimilarity",
                 "Get the similarity between one image and a list of texts. Note that this similarity score may not "
                 "be accurate and should be used as a reference only.",
                 {{"image", "the reference image.", A::image},
                  {"texts", "a list of texts to compare to the reference image.", A::text_list}},
                 {{"similarity", "the CLIP similarity between the image and the texts."},
                  {"best_text_index", "the index of the most similar text."},
                  {"best_text", "the most similar text."}},
                 {call("GetImageToTextsSimilarity", {{"image", "image-0"}, {"texts", {"a cat", "a dog"}}})}});

    s.push_back({"GetTextToImagesSimilarity",
                 "Get the similarity between one text and a list of images. Note that this similarity score may not "
                 "be accurate and should be used as a reference only.",
                 {{"text", "the reference text.", A::text},
                  {"images", "a list of images to compare to the reference text.", A::image_list}},
                 {{"similarity", "the CLIP similarity between the image and the texts."},
                  {"best_image_index", "the index of the most similar image."}},
                 {call("GetTextToImagesSimilarity",
                       {{"text", "a black and white cat"}, {"images", {"image-0", "image-1"}}})}});

    s.push_back({"DetectFaces",
                 "Using this function to detect faces in an image.",
                 {{"image", "the image to detect faces from.", A::image}},
                 {{"image", "the image with objects localized and visualized on it."},
                  {"regions",
                   "the regions of the faces detected, where each regin is represented by a dictionary with the "
                   "region's label text and bounding box."}},
                 {call("DetectFaces", {{"image", "image-0"}})}});

    s.push_back({"QueryKnowledgeBase",
                 "Using this function to query a knowledge base.",
                 {{"query", "the query to search in a knowledge base such as wikipedia.", A::text}},
                 {{"result", "the answer from the knowledge base."}},
                 {call("QueryKnowledgeBase", {{"query", "Paris"}})}});

    s.push_back({"Calculate",
                 "Calculate a math expression.",
                 {{"expression", "the math expression to calculate.", A::text}},
                 {{"result", "the result of the math expression."}},
                 {call("Calculate", {{"expression", "2 + 2"}}), call("Calculate", {{"expression", "4*9*84"}}),
                  call("Calculate", {{"expression", "5-4/2"}})}});

    s.push_back({"SolveMathEquation",
                 "Using this action to solve a math problem with WolframAlpha.",
                 {{"query", "a question that involves a math equation to be solved.", A::text}},
                 {{"result", "the result of the query."}},
                 {call("SolveMathEquation", {{"query", "2 + 2=?"}}),
                  call("SolveMathEquation", {{"query", "x^2 + 2x + 1 = 0, what is x?"}})}});

    s.push_back({"Terminate",
                 "Using this function to finish the task.",
                 {{"answer", "the final answer.", A::answer}},
                 {{"answer", "the final answer."}},
                 {call("Terminate", {{"answer", "yes"}})}});

    ActionSpec visualize{
        "VisualizeRegionsOnImage",
        "Using this function to label regions on an image.",
        {{"image", "the image to label.", A::image},
         {"regions",
          "the regions to label on the image, where each region is represented by a dictionary with the region's "
          "bounding box and label text (can be empty string).",
          A::regions},
         {"color", "an optional argument that specifies the color of the bounding box.", A::text, false}},
        {{"image", "the image with regions labeled."}},
        {call("VisualizeRegionsOnImage",
              {{"image", "image-0"}, {"regions", Value::array({Value{{"label", ""}, {"bbox", {0.3, 0.2, 0.5, 0.4}}}})}}),
         call("VisualizeRegionsOnImage", {{"image", "image-0"},
                                          {"regions", Value::array({Value{{"label", "cat"}, {"bbox", {0.3, 0.2, 0.5, 0.4}}}})},
                                          {"color", "red"}})},
        true};
    s.push_back(std::move(visualize));

    return Registry(std::move(s));
}

// ---------------------------------------------------------------------------
// Registry export/import (the document served as GET /specs)

inline Value registry_to_json(const Registry& registry) {
    Value specs = Value::array();
    for (const auto& s : registry.specs()) {
        Value j = Value::object();
        j["name"] = s.name;
        j["description"] = s.description;
        Value args = Value::object(), types = Value::object(), optional = Value::array();
        for (const auto& a : s.args) {
            args[a.name] = a.description;
            types[a.name] = to_string(a.kind);
            if (!a.required) optional.push_back(a.name);
        }
        j["args_spec"] = std::move(args);
        Value rets = Value::object();
        for (const auto& [k, v] : s.rets) rets[k] = v;
        j["rets_spec"] = std::move(rets);
        j["examples"] = Value::array();
        for (const auto& e : s.examples) j["examples"].push_back(action_to_json(e));
        j["internal"] = s.internal;
        j["arg_types"] = std::move(types);
        j["optional_args"] = std::move(optional);
        specs.push_back(std::move(j));
    }
    return Value{{"specs", std::move(specs)}};
}

inline Registry registry_from_json(const Value& doc) {
    if (!doc.is_object() || !doc.contains("specs") || !doc.at("specs").is_array()) {
        throw Error("registry document needs a \"specs\" list");
    }
    Registry registry;
    for (const auto& j : doc.at("specs")) {
        ActionSpec s;
        s.name = j.at("name").get<std::string>();
        s.description = j.value("description", "");
        const Value types = j.value("arg_types", Value::object());
        const Value optional = j.value("optional_args", Value::array());
        for (auto it = j.at("args_spec").begin(); it != j.at("args_spec").end(); ++it) {
            ArgSpec a{it.key(), it.value().get<std::string>()};
            if (types.contains(it.key())) {
                auto k = parse_arg_kind(types.at(it.key()).get<std::string>());
                if (!k) throw Error("unknown argument type for " + s.name + "." + it.key());
                a.kind = *k;
            }
            a.required = std::find(optional.begin(), optional.end(), Value(it.key())) == optional.end();
            s.args.push_back(std::move(a));
        }
        for (auto it = j.at("rets_spec").begin(); it != j.at("rets_spec").end(); ++it) {
            s.rets.emplace_back(it.key(), it.value().get<std::string>());
        }
        for (const auto& e : j.value("examples", Value::array())) {
            s.examples.push_back(ActionCall{e.at("name").get<std::string>(), e.at("arguments")});
        }
        s.internal = j.value("internal", false);
        registry.add(std::move(s));
    }
    return registry;
}

// ---------------------------------------------------------------------------
// System prompt

struct FewShotTurn {
    /// The step exactly as the model would emit it ({"thought", "actions"} in that order).
    Value response;
    std::optional<Value> observation;
};

struct FewShotExample {
    std::string request;
    std::vector<FewShotTurn> turns;
};

namespace detail {

inline Value fewshot_step(std::string thought, std::vector<ActionCall> calls) {
    Value v = Value::object();
    v["thought"] = std::move(thought);
    v["actions"] = Value::array();
    for (const auto& c : calls) v["actions"].push_back(action_to_json(c));
    return v;
}

inline Value region(const char* label, std::vector<double> box, double score) {
    Value r = Value::object();
    r["label"] = label;
    r["bbox"] = box;
    r["score"] = score;
    return r;
}

} // namespace detail

/// The four worked examples shipped with the generation prompt.
inline std::vector<FewShotExample> default_few_shots() {
    using detail::call;
    using detail::fewshot_step;
    using detail::region;
    std::vector<FewShotExample> out;

    out.push_back(
        {"In image-0, Which of the two objects on the plate is the biggest?\n"
         "A. The pile of scrambled eggs is the biggest.\n"
         "B. The strawberries are the biggest object.\n"
         "Please answer directly with only the letter of the correct option and nothing else.",
         {{fewshot_step("To determine which of the two objects on the plate is larger, I need to analyze the size of "
                        "the scrambled eggs, and the strawberries",
                        {call("LocalizeObjects",
                              {{"image", "image-0"}, {"objects", {"scrambled eggs", "strawberries"}}})}),
           Value{{"image", "image-1"},
                 {"regions", Value::array({region("eggs", {0.5, 0.6, 0.6, 0.8}, 0.85),
                                           region("strawberries", {0.4, 0.5, 0.45, 0.7}, 0.54)})}}},
          {fewshot_step("To calculate the area of a bounding box, we can use the formula: area = (x_max - x_min) * "
                        "(y_max - y_min). We first get the area of the scrambled eggs.",
                        {call("Calculate", {{"expression", "(0.6-0.5) * (0.8-0.6)"}})}),
           Value{{"result", "0.02"}}},
          {fewshot_step("Then, we also calculate the area of the strawberries.",
                        {call("Calculate", {{"expression", "(0.45-0.4) * (0.7-0.5)"}})}),
           Value{{"result", "0.01"}}},
          {fewshot_step("Since 0.02 > 0.01, it is apparent that the eggs cover a larger area within their bounding "
                        "box.",
                        {call("Terminate", {{"answer", "A"}})}),
           std::nullopt}}});

    out.push_back(
        {"Given the input image image-0, How many pedestrians are there in the image? Please answer directly with a "
         "single word or number.",
         {{fewshot_step("To determine the number of pedestrians, I need to first localize them on the image.",
                        {call("LocalizeObjects", {{"image", "image-0"}, {"objects", {"person"}}})}),
           Value{{"image", "image-1"},
                 {"regions", Value::array({region("person", {0.77, 0.47, 0.79, 0.54}, 0.83),
                                           region("person-2", {0.69, 0.49, 0.7, 0.52}, 0.43)})}}},
          {fewshot_step("The LocalizeObjects action returns two regions for \"person\", but one of the regions has a "
                        "lower confidence score. Upon a closer look at the output image image-1, we can see that "
                        "there is actually only one pedestrian in the image.",
                        {call("Terminate", {{"answer", "1"}})}),
           std::nullopt}}});

    out.push_back({"Based on image-0, is the object on top bigger than the object below?\n"
                   "A. The object on the bottom is bigger.\n"
                   "B. The object on top is bigger.\n"
                   "C. Both objects are the same size.\n"
                   "Please answer directly with only the letter of the correct option and nothing else.",
                   {{fewshot_step("By looking at the image, we can see that both objects are game consoles of the "
                                  "same brand and size.",
                                  {call("Terminate", {{"answer", "C"}})}),
                     std::nullopt}}});

    out.push_back(
        {"What is x in the image?",
         {{fewshot_step("To get the result of the equation, I need to first extract the equation from the image.",
                        {call("OCR", {{"image", "image-0"}})}),
           Value{{"text", "x-2^3=0"}}},
          {fewshot_step("The math equation is 'x-2^3=0', and I need to find x. I can solve it with a math-related "
                        "tool.",
                        {call("SolveMathEquation", {{"query", "x-2^3=0, what is x?"}})}),
           Value{{"result", "x = 8"}}},
          {fewshot_step("As suggested in the last observation, the answer is 8.", {call("Terminate", {{"answer", "8"}})}),
           std::nullopt}}});

    return out;
}

inline constexpr std::string_view kGoal =
    "You are a helpful assistant, and your goal is to solve the # USER REQUEST #. You can either rely on your own "
    "capabilities or perform actions with external tools to help you. A list of all available actions are provided "
    "to you in the below.";

inline constexpr std::string_view kTaskInstructions =
    "1. You must only select actions from # ACTIONS #.\n"
    "2. You can only call one action at a time.\n"
    "3. If no action is needed, please make actions an empty list (i.e. ''actions'': []).\n"
    "4. You must always call Terminate with your final answer at the end.";

inline constexpr std::string_view kFormatInstructions =
    "Your output should be in a strict JSON format as follows:\n"
    "{\"thought\": \"the thought process, or an empty string\", \"actions\": [{\"name\": \"action1\", \"arguments\": "
    "{\"argument1\": \"value1\", \"argument2\": \"value2\"}}]}";

inline std::string render_action_block(const ActionSpec& spec) {
    std::vector<std::pair<std::string, std::string>> args;
    for (const auto& a : spec.args) args.emplace_back(a.name, a.description);
    std::string out;
    out += "Name: " + spec.name + "\n";
    out += "Description: " + spec.description + "\n";
    out += "Arguments: " + python_repr(args) + "\n";
    out += "Returns: " + python_repr(spec.rets) + "\n";
    out += "Examples:\n";
    for (const auto& e : spec.examples) out += python_dump(action_to_json(e)) + "\n";
    return out;
}

/// The user-request block as it appears in the prompt and in episode transcripts.
inline std::string render_request(std::string_view request) {
    return "# USER REQUEST #:\n " + std::string(request) + "\n# RESPONSE #:";
}

inline std::string render_system_prompt(const Registry& registry, const std::vector<FewShotExample>& few_shots) {
    std::string out;
    out += "[BEGIN OF GOAL]\n";
    out += kGoal;
    out += "\n[END OF GOAL]\n\n[BEGIN OF ACTIONS]\n";
    bool any = false;
    for (const auto& spec : registry.specs()) {
        if (spec.internal) continue;
        any = true;
        out += render_action_block(spec);
        out += "\n";
    }
    if (!any) throw EmptyRegistry();
    out += "[END OF ACTIONS]\n\n[BEGIN OF TASK INSTRUCTIONS]\n";
    out += kTaskInstructions;
    out += "\n[END OF TASK INSTRUCTIONS]\n\n[BEGIN OF FORMAT INSTRUCTIONS]\n";
    out += kFormatInstructions;
    out += "\n[END OF FORMAT INSTRUCTIONS]\n\n[BEGIN OF EXAMPLES]:\n";
    for (const auto& ex : few_shots) {
        out += render_request(ex.request);
        out += "\n";
        for (const auto& turn : ex.turns) {
            out += python_dump(turn.response) + "\n";
            if (turn.observation) out += "OBSERVATION:\n" + python_dump(*turn.observation) + "\n";
        }
        out += "\n";
    }
    out += "[END OF EXAMPLES]";
    return out;
}

} // namespace cota
