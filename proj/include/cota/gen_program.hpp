// SPDX-License-Identifier: Apache-2.0
#pragma once

// Programmatic QA and chain synthesis from dense scene annotations.

#include <algorithm>
#include <array>
#include <fnmatch.h>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "cota/agent.hpp"
#include "cota/backend.hpp"
#include "cota/parallel.hpp"
#include "cota/scene.hpp"
#include "cota/tools.hpp"
#include "cota/trace.hpp"

namespace cota {

enum class Capability { counting, attribute, spatial2d, spatial3d, multi_image };

inline std::string to_string(Capability c) {
    switch (c) {
    case Capability::counting: return "counting";
    case Capability::attribute: return "attribute";
    case Capability::spatial2d: return "spatial2d";
    case Capability::spatial3d: return "spatial3d";
    case Capability::multi_image: return "multi_image";
    }
    return "";
}

enum class TemplateKind {
    count,
    most_frequent,
    least_frequent,
    attribute_count,
    leftmost,
    rightmost,
    topmost,
    bottommost,
    closer,
    farther,
    which_has,
    multi_count,
    most_in_image,
    least_in_image,
    which_has_attribute,
    multi_attribute_count,
};

struct QATemplate {
    std::string id;
    TemplateKind kind;
    std::vector<Capability> capabilities;
    std::string question;
    /// Human-readable plan, as the template table prints it.
    std::string action_plan;
    bool multi_image = false;

    bool uses_attribute() const {
        return kind == TemplateKind::attribute_count || kind == TemplateKind::which_has_attribute ||
               kind == TemplateKind::multi_attribute_count;
    }
    bool uses_object_list() const {
        switch (kind) {
        case TemplateKind::most_frequent:
        case TemplateKind::least_frequent:
        case TemplateKind::leftmost:
        case TemplateKind::rightmost:
        case TemplateKind::topmost:
        case TemplateKind::bottommost:
        case TemplateKind::closer:
        case TemplateKind::farther: return true;
        default: return false;
        }
    }
    bool depth() const { return kind == TemplateKind::closer || kind == TemplateKind::farther; }
};

inline const std::vector<QATemplate>& qa_templates() {
    using C = Capability;
    using K = TemplateKind;
    static const std::vector<QATemplate> all = {
        {"count", K::count, {C::counting}, "How many {object} are there?", "LocalizeObjects", false},
        {"most_frequent", K::most_frequent, {C::counting}, "Among {objects}, which is the most frequent object?",
         "LocalizeObjects", false},
        {"least_frequent", K::least_frequent, {C::counting}, "Among {objects}, which object appears the least?",
         "LocalizeObjects", false},
        {"attribute_count", K::attribute_count, {C::counting, C::attribute},
         "How many {attribute} {object} are there?", "LocalizeObjects", false},
        {"leftmost", K::leftmost, {C::spatial2d}, "Among {objects}, which is on the most left side?", "LocalizeObjects",
         false},
        {"rightmost", K::rightmost, {C::spatial2d}, "Among {objects}, which is on the most right side?",
         "LocalizeObjects", false},
        {"topmost", K::topmost, {C::spatial2d}, "Among {objects}, which is on the most top side?", "LocalizeObjects",
         false},
        {"bottommost", K::bottommost, {C::spatial2d}, "Among {objects}, which is on the most bottom side?",
         "LocalizeObjects", false},
        {"closer", K::closer, {C::spatial3d}, "Which of {objects} is closer?",
         "LocalizeObjects, EstimateRegionDepth x2 OR, EstimateObjectDepth x2", false},
        {"farther", K::farther, {C::spatial3d}, "Which of {objects} is farther?",
         "LocalizeObjects, EstimateRegionDepth x2 OR, EstimateObjectDepth x2", false},
        {"which_has", K::which_has, {C::multi_image}, "Which image has {object}?", "LocalizeObjects x N", true},
        {"multi_count", K::multi_count, {C::multi_image, C::counting}, "How many {object} are in in these images?",
         "LocalizeObjects x N", true},
        {"most_in_image", K::most_in_image, {C::multi_image, C::counting}, "Which image has most {object}?",
         "LocalizeObjects x N", true},
        {"least_in_image", K::least_in_image, {C::multi_image, C::counting}, "Which image has least {object}?",
         "LocalizeObjects x N", true},
        {"which_has_attribute", K::which_has_attribute, {C::multi_image, C::attribute},
         "Which image has {attribute} {object}?", "LocalizeObjects x N", true},
        {"multi_attribute_count", K::multi_attribute_count, {C::multi_image, C::attribute, C::counting},
         "How many {attribute} {object} in these images?", "LocalizeObjects x N", true},
    };
    return all;
}

inline const QATemplate& find_template(std::string_view id) {
    for (const auto& t : qa_templates()) {
        if (t.id == id) return t;
    }
    throw Error("unknown QA template '" + std::string(id) + "'");
}

// ---------------------------------------------------------------------------
// Thought templates

/// Five patterns per action. The GetObjects list is written with a missing comma in
/// its source, which fuses two entries; they are kept separate here.
inline const std::map<std::string, std::array<std::string, 5>>& thought_templates() {
    static const std::map<std::string, std::array<std::string, 5>> t = {
        {"GetObjects",
         {"I need to check what objects are present in the {image_kw}.",
          "I need to analyze the {image_kw} for context.", "I need to identify the objects in the {image_kw}.",
          "To answer the question, let's first analyze the {image_kw}.",
          "To answer the question, analyzing the objects in the {image_kw} is necessary."}},
        {"LocalizeObjects",
         {"I need to analyze the positions of {objects} in the {image_kw}.",
          "I need to analyze the locations of {objects} in the {image_kw}.",
          "I need to localize the {objects} based on the {image_kw}.",
          "I'll identify the positions of {objects} in the {image_kw}.",
          "I need to determine the positions of {objects} by analyzing the {image_kw}."}},
        {"EstimateObjectDepth",
         {"I should estimate the depth of {object} to determine whether it is closer or farther.",
          "I will estimate the depth of {object}.", "I need to estimate the depth for {object} to make a comparison.",
          "To determine how far {object} is, I need to evaluate the distance to it.",
          "I now need to estimate the depth for {object}."}},
        {"EstimateRegionDepth",
         {"I should estimate the objects' depths to determine which one is closer.",
          "I need to estimate the region's depth in the image.",
          "I need to determine the depths of the detected objects based on their positions.",
          "I need to estimate the depth of the objects to make a comparison.",
          "To determine the relative proximity of the objects in the image, I need to estimate the depth of each "
          "object."}},
        {"Terminate",
         {"Based on the information above, I can conclude that the answer is {answer}",
          "Based on a close analysis of the {image_kw} and additional information above, I believe the answer is "
          "{answer}.",
          "I have analyzed the {image_kw} and the information above, and I believe the answer is {answer}.",
          "The {image_kw} and the information above suggest that the answer is {answer}.",
          "According to the content of the {image_kw} and the observations, I can conclude that the answer is "
          "{answer}."}},
    };
    return t;
}

/// Replaces every {key} in `pattern`; unknown slots are left as written.
inline std::string fill_slots(std::string pattern, const std::map<std::string, std::string>& slots) {
    for (const auto& [k, v] : slots) {
        const std::string key = "{" + k + "}";
        for (std::size_t pos = pattern.find(key); pos != std::string::npos; pos = pattern.find(key, pos + v.size())) {
            pattern.replace(pos, key.size(), v);
        }
    }
    return pattern;
}

// ---------------------------------------------------------------------------
// Groundtruth

struct Slots {
    std::string object;
    std::vector<std::string> objects;
    std::string attribute;
};

struct AnswerOptions {
    /// Break ties by the lexicographically smallest candidate instead of skipping.
    bool permissive_ties = false;
};

namespace detail {

inline bool has_attribute(const AnnotatedObject& o, const std::string& attribute) {
    return std::find(o.attributes.begin(), o.attributes.end(), attribute) != o.attributes.end();
}

inline std::size_t count_matching(const ImageAnnotation& a, const std::string& name, const std::string* attribute) {
    std::size_t n = 0;
    for (const auto& o : a.objects) {
        if (o.name == name && (!attribute || has_attribute(o, *attribute))) ++n;
    }
    return n;
}

/// Candidate with the best score; `better(a, b)` says a beats b. Ties on the best score
/// skip the instance unless permissive, which keeps the smallest label.
template <typename Score, typename Better>
std::string pick_extreme(const std::vector<std::pair<std::string, Score>>& cands, Better better, bool permissive,
                         const std::string& what) {
    if (cands.empty()) throw UnanswerableInstance(what + ": no candidates");
    std::size_t best = 0;
    for (std::size_t i = 1; i < cands.size(); ++i) {
        if (better(cands[i].second, cands[best].second)) best = i;
    }
    std::vector<std::string> tied;
    for (const auto& c : cands) {
        if (!better(c.second, cands[best].second) && !better(cands[best].second, c.second)) tied.push_back(c.first);
    }
    std::sort(tied.begin(), tied.end());
    tied.erase(std::unique(tied.begin(), tied.end()), tied.end());
    if (tied.size() > 1 && !permissive) throw UnanswerableInstance(what + ": tie between " + join(tied, ", "));
    return tied.front();
}

inline std::string count_text(std::size_t n) { return std::to_string(n); }

} // namespace detail

/// Depth of an annotated object in the reported frame (smaller is nearer).
inline double annotated_depth(const ImageAnnotation& a, const AnnotatedObject& o) {
    if (o.depth) return *o.depth;
    return region_depth(a, o.bbox, DepthMode::mean);
}

inline std::string compute_answer(const QATemplate& t, const std::vector<ImageAnnotation>& images, const Slots& s,
                                  const AnswerOptions& opts = {}) {
    using K = TemplateKind;
    const bool strict = !opts.permissive_ties;
    const std::string* attr = t.uses_attribute() ? &s.attribute : nullptr;
    if (images.empty()) throw UnanswerableInstance(t.id + ": no images");
    const ImageAnnotation& a = images.front();

    switch (t.kind) {
    case K::count:
    case K::attribute_count: {
        const std::size_t n = detail::count_matching(a, s.object, attr);
        if (n == 0) throw UnanswerableInstance(t.id + ": no matching objects");
        return detail::count_text(n);
    }
    case K::most_frequent:
    case K::least_frequent: {
        std::vector<std::pair<std::string, std::size_t>> cands;
        for (const auto& name : s.objects) cands.emplace_back(name, detail::count_matching(a, name, nullptr));
        for (const auto& c : cands) {
            if (c.second == 0) throw UnanswerableInstance(t.id + ": '" + c.first + "' is absent");
        }
        if (t.kind == K::most_frequent) {
            return detail::pick_extreme(cands, [](std::size_t x, std::size_t y) { return x > y; }, !strict, t.id);
        }
        return detail::pick_extreme(cands, [](std::size_t x, std::size_t y) { return x < y; }, !strict, t.id);
    }
    case K::leftmost:
    case K::rightmost:
    case K::topmost:
    case K::bottommost: {
        std::vector<std::pair<std::string, double>> cands;
        for (const auto& name : s.objects) {
            bool any = false;
            for (const auto& o : a.objects) {
                if (o.name != name) continue;
                any = true;
                const bool horizontal = t.kind == K::leftmost || t.kind == K::rightmost;
                cands.emplace_back(name, horizontal ? o.bbox.center_x() : o.bbox.center_y());
            }
            if (!any) throw UnanswerableInstance(t.id + ": '" + name + "' is absent");
        }
        if (t.kind == K::leftmost || t.kind == K::topmost) {
            return detail::pick_extreme(cands, [](double x, double y) { return x < y; }, !strict, t.id);
        }
        return detail::pick_extreme(cands, [](double x, double y) { return x > y; }, !strict, t.id);
    }
    case K::closer:
    case K::farther: {
        std::vector<std::pair<std::string, double>> cands;
        for (const auto& name : s.objects) {
            const AnnotatedObject* only = nullptr;
            for (const auto& o : a.objects) {
                if (o.name != name) continue;
                if (only) throw UnanswerableInstance(t.id + ": '" + name + "' is not unique");
                only = &o;
            }
            if (!only) throw UnanswerableInstance(t.id + ": '" + name + "' is absent");
            if (!only->depth && !a.has_depth()) throw UnanswerableInstance(t.id + ": no depth for '" + name + "'");
            try {
                cands.emplace_back(name, annotated_depth(a, *only));
            } catch (const ToolRuntimeError& e) {
                throw UnanswerableInstance(t.id + ": " + e.what());
            }
        }
        if (t.kind == K::closer) {
            return detail::pick_extreme(cands, [](double x, double y) { return x < y; }, !strict, t.id);
        }
        return detail::pick_extreme(cands, [](double x, double y) { return x > y; }, !strict, t.id);
    }
    case K::which_has:
    case K::which_has_attribute: {
        std::vector<std::string> hits;
        for (std::size_t i = 0; i < images.size(); ++i) {
            if (detail::count_matching(images[i], s.object, attr) > 0) hits.push_back(image_ref(i));
        }
        if (hits.empty()) throw UnanswerableInstance(t.id + ": no image has it");
        if (hits.size() > 1 && strict) throw UnanswerableInstance(t.id + ": several images have it");
        return hits.front();
    }
    case K::multi_count:
    case K::multi_attribute_count: {
        std::size_t n = 0;
        for (const auto& img : images) n += detail::count_matching(img, s.object, attr);
        if (n == 0) throw UnanswerableInstance(t.id + ": no matching objects");
        return detail::count_text(n);
    }
    case K::most_in_image:
    case K::least_in_image: {
        std::vector<std::pair<std::string, std::size_t>> cands;
        std::size_t total = 0;
        for (std::size_t i = 0; i < images.size(); ++i) {
            const std::size_t n = detail::count_matching(images[i], s.object, nullptr);
            total += n;
            cands.emplace_back(image_ref(i), n);
        }
        if (total == 0) throw UnanswerableInstance(t.id + ": no matching objects");
        if (t.kind == K::most_in_image) {
            return detail::pick_extreme(cands, [](std::size_t x, std::size_t y) { return x > y; }, !strict, t.id);
        }
        return detail::pick_extreme(cands, [](std::size_t x, std::size_t y) { return x < y; }, !strict, t.id);
    }
    }
    throw UnanswerableInstance(t.id + ": unsupported template");
}

/// The phrase a template localizes: "red apple" for attribute templates, else the object.
inline std::string object_phrase(const QATemplate& t, const Slots& s) {
    return t.uses_attribute() ? s.attribute + " " + s.object : s.object;
}

inline std::string fill_question(const QATemplate& t, const Slots& s) {
    return fill_slots(t.question, {{"object", s.object}, {"objects", join(s.objects, ", ")}, {"attribute", s.attribute}});
}

inline QAExample instantiate_qa(const QATemplate& t, const std::vector<std::string>& image_sources, const Slots& s,
                                std::string groundtruth, std::string id) {
    QAExample ex;
    ex.id = std::move(id);
    ex.images = image_sources;
    ex.question = fill_question(t, s);
    ex.groundtruth = std::move(groundtruth);
    ex.answer_kind = AnswerKind::short_answer;
    ex.source = "program:" + t.id;
    return ex;
}

// ---------------------------------------------------------------------------
// Chain synthesis

enum class DepthRoute { region, object };

namespace detail {

inline std::string pick_thought(const std::string& action, Rng& rng, const std::map<std::string, std::string>& slots) {
    const auto& list = thought_templates().at(action);
    return fill_slots(list[rng.below(list.size())], slots);
}

/// Strips a "-N" repeat suffix from a localize label.
inline std::string label_base(const std::string& label, const std::vector<std::string>& phrases) {
    for (const auto& p : phrases) {
        if (label == p) return p;
        if (label.size() > p.size() + 1 && label.compare(0, p.size(), p) == 0 && label[p.size()] == '-') return p;
    }
    return label;
}

} // namespace detail

/// Builds the chain for an instantiated example by running its action plan through the
/// oracle backend, so observations come from the annotations. Throws UnanswerableInstance
/// when an observation disagrees with the groundtruth.
inline Chain synthesize_chain(const QAExample& example, const QATemplate& t, const Slots& s, ExecutionContext& ctx,
                              Backend& backend, Rng& rng, DepthRoute route = DepthRoute::region,
                              bool permissive_ties = false) {
    using K = TemplateKind;
    Chain chain;
    const std::string image_kw = t.multi_image ? "images" : "image";

    auto run_step = [&](const std::string& thought, ActionCall call) -> const Value& {
        ctx.set_position(chain.steps.size(), 0);
        Observation obs = backend.execute(call, ctx);
        chain.steps.push_back(Step{thought, {std::move(call)}, std::move(obs.payload)});
        return *chain.steps.back().observation;
    };
    auto mismatch = [&](const std::string& why) { throw UnanswerableInstance(t.id + ": observation " + why); };

    if (t.depth()) {
        std::vector<double> depths;
        if (route == DepthRoute::region) {
            const auto& loc = run_step(
                detail::pick_thought("LocalizeObjects", rng, {{"objects", join(s.objects, ", ")}, {"image_kw", image_kw}}),
                ActionCall{"LocalizeObjects", Value{{"image", image_ref(0)}, {"objects", s.objects}}});
            const Value regions = loc.at("regions");
            if (regions.size() != s.objects.size()) mismatch("region count differs");
            for (std::size_t i = 0; i < s.objects.size(); ++i) {
                if (regions[i].at("label") != s.objects[i]) mismatch("labels differ");
            }
            for (std::size_t i = 0; i < s.objects.size(); ++i) {
                const auto& d = run_step(detail::pick_thought("EstimateRegionDepth", rng, {}),
                                         ActionCall{"EstimateRegionDepth",
                                                    Value{{"image", image_ref(0)}, {"bbox", regions[i].at("bbox")}}});
                depths.push_back(d.at("depth").get<double>());
            }
        } else {
            for (const auto& name : s.objects) {
                const auto& d = run_step(detail::pick_thought("EstimateObjectDepth", rng, {{"object", name}}),
                                         ActionCall{"EstimateObjectDepth", Value{{"image", image_ref(0)}, {"object", name}}});
                if (!d.at("depth").is_number()) mismatch("object not found");
                depths.push_back(d.at("depth").get<double>());
            }
        }
        std::size_t pick = 0;
        for (std::size_t i = 1; i < depths.size(); ++i) {
            if (t.kind == K::closer ? depths[i] < depths[pick] : depths[i] > depths[pick]) pick = i;
        }
        std::set<std::string> at_best;
        for (std::size_t i = 0; i < depths.size(); ++i) {
            if (depths[i] == depths[pick]) at_best.insert(s.objects[i]);
        }
        if (!at_best.count(example.groundtruth)) mismatch("depth order disagrees");
        if (at_best.size() > 1 && !permissive_ties) mismatch("depths tie");
    } else if (t.multi_image) {
        const std::string phrase = object_phrase(t, s);
        std::vector<std::size_t> counts;
        for (std::size_t i = 0; i < example.images.size(); ++i) {
            const auto& loc = run_step(
                detail::pick_thought("LocalizeObjects", rng, {{"objects", phrase}, {"image_kw", image_kw}}),
                ActionCall{"LocalizeObjects", Value{{"image", image_ref(i)}, {"objects", Value::array({phrase})}}});
            counts.push_back(loc.at("regions").size());
        }
        std::size_t total = 0;
        for (auto c : counts) total += c;
        switch (t.kind) {
        case K::multi_count:
        case K::multi_attribute_count:
            if (std::to_string(total) != example.groundtruth) mismatch("count disagrees");
            break;
        case K::which_has:
        case K::which_has_attribute: {
            const std::string want = example.groundtruth;
            const std::size_t k = std::stoul(want.substr(want.find('-') + 1));
            if (k >= counts.size() || counts[k] == 0) mismatch("image has none");
            break;
        }
        default: {
            const std::size_t k = std::stoul(example.groundtruth.substr(example.groundtruth.find('-') + 1));
            for (std::size_t i = 0; i < counts.size(); ++i) {
                const bool beaten = t.kind == K::most_in_image ? counts[i] > counts[k] : counts[i] < counts[k];
                if (beaten) mismatch("per-image counts disagree");
            }
            break;
        }
        }
    } else {
        const std::vector<std::string> phrases =
            t.uses_object_list() ? s.objects : std::vector<std::string>{object_phrase(t, s)};
        const auto& loc = run_step(
            detail::pick_thought("LocalizeObjects", rng, {{"objects", join(phrases, ", ")}, {"image_kw", image_kw}}),
            ActionCall{"LocalizeObjects", Value{{"image", image_ref(0)}, {"objects", phrases}}});
        const Value& regions = loc.at("regions");
        if (t.kind == K::count || t.kind == K::attribute_count) {
            if (std::to_string(regions.size()) != example.groundtruth) mismatch("count disagrees");
        } else if (t.kind == K::most_frequent || t.kind == K::least_frequent) {
            std::map<std::string, std::size_t> counts;
            for (const auto& r : regions) ++counts[detail::label_base(r.at("label"), phrases)];
            for (const auto& p : phrases) {
                const bool beaten = t.kind == K::most_frequent ? counts[p] > counts[example.groundtruth]
                                                               : counts[p] < counts[example.groundtruth];
                if (p != example.groundtruth && beaten) mismatch("frequencies disagree");
            }
        } else {
            const bool horizontal = t.kind == K::leftmost || t.kind == K::rightmost;
            const bool smaller = t.kind == K::leftmost || t.kind == K::topmost;
            std::optional<double> best;
            std::set<std::string> at_best;
            for (const auto& r : regions) {
                const BBox b = BBox::from_json(r.at("bbox"));
                const double c = horizontal ? b.center_x() : b.center_y();
                const std::string name = detail::label_base(r.at("label"), phrases);
                if (!best || (smaller ? c < *best : c > *best)) {
                    best = c;
                    at_best = {name};
                } else if (c == *best) {
                    at_best.insert(name);
                }
            }
            if (!at_best.count(example.groundtruth)) mismatch("extreme disagrees");
            if (at_best.size() > 1 && !permissive_ties) mismatch("extremes tie");
        }
    }

    const std::string answer = example.groundtruth;
    run_step(detail::pick_thought(std::string(kTerminate), rng, {{"answer", answer}, {"image_kw", image_kw}}),
             ActionCall{std::string(kTerminate), Value{{"answer", answer}}});
    return chain;
}

// ---------------------------------------------------------------------------
// Generation driver

struct GenSpec {
    std::uint64_t seed = 0;
    /// Records wanted per template id, emitted in qa_templates() order.
    std::map<std::string, std::size_t> counts;
    /// Glob patterns over store keys ("set/ref"); empty means every image.
    std::vector<std::string> single_pool;
    std::vector<std::string> multi_pool;
    bool permissive_ties = false;
    /// Attempts allowed per wanted record before giving up.
    std::size_t attempts_per_record = 50;
    std::size_t workers = 4;

    static GenSpec from_json(const Value& v) {
        GenSpec g;
        g.seed = v.value("seed", std::uint64_t{0});
        if (v.contains("counts")) {
            for (auto it = v.at("counts").begin(); it != v.at("counts").end(); ++it) {
                find_template(it.key());
                g.counts[it.key()] = it.value().get<std::size_t>();
            }
        }
        g.single_pool = v.value("single_pool", std::vector<std::string>{});
        g.multi_pool = v.value("multi_pool", std::vector<std::string>{});
        g.permissive_ties = v.value("permissive_ties", false);
        g.attempts_per_record = v.value("attempts_per_record", std::size_t{50});
        g.workers = v.value("workers", std::size_t{4});
        return g;
    }
};

struct ProgramCandidate {
    TraceRecord record;
    /// Dedup key: template, images and question.
    std::string key;
};

namespace detail {

inline std::vector<std::string> pool_keys(const AnnotationStore& store, const std::vector<std::string>& globs) {
    std::vector<std::string> out;
    for (const auto& k : store.keys()) {
        const ImageHandle* h = store.find(k);
        if (!h || !h->annotation) continue;
        if (globs.empty()) {
            out.push_back(k);
            continue;
        }
        for (const auto& g : globs) {
            if (fnmatch(g.c_str(), k.c_str(), 0) == 0) {
                out.push_back(k);
                break;
            }
        }
    }
    return out;
}

template <typename T>
const T& pick(const std::vector<T>& items, Rng& rng) {
    return items[rng.below(items.size())];
}

inline std::vector<std::string> distinct_names(const ImageAnnotation& a) {
    std::vector<std::string> out;
    std::set<std::string> seen;
    for (const auto& o : a.objects) {
        if (seen.insert(o.name).second) out.push_back(o.name);
    }
    return out;
}

} // namespace detail

/// One attempt at a record: sample images and slots, compute the answer, build the
/// chain. nullopt when the sample is unanswerable.
inline std::optional<ProgramCandidate> program_attempt(const QATemplate& t, const AnnotationStore& store,
                                                       const std::vector<std::string>& single_pool,
                                                       const std::vector<std::string>& multi_pool, const GenSpec& spec,
                                                       std::size_t attempt) {
    Rng rng = derive_rng(spec.seed, "program:" + t.id, attempt);
    std::vector<std::string> keys;
    if (t.multi_image) {
        if (multi_pool.size() < 2) return std::nullopt;
        const std::size_t n = std::min<std::size_t>(multi_pool.size(), 2 + rng.below(2));
        std::vector<std::string> shuffled = multi_pool;
        rng.shuffle(shuffled);
        keys.assign(shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(n));
    } else {
        if (single_pool.empty()) return std::nullopt;
        keys.push_back(detail::pick(single_pool, rng));
    }
    std::vector<ImageAnnotation> anns;
    for (const auto& k : keys) anns.push_back(*store.find(k)->annotation);

    Slots s;
    if (t.uses_attribute()) {
        std::vector<std::pair<std::string, std::string>> pairs;
        std::set<std::pair<std::string, std::string>> seen;
        for (const auto& a : anns) {
            for (const auto& o : a.objects) {
                for (const auto& at : o.attributes) {
                    if (seen.emplace(at, o.name).second) pairs.emplace_back(at, o.name);
                }
            }
        }
        if (pairs.empty()) return std::nullopt;
        const auto& p = detail::pick(pairs, rng);
        s.attribute = p.first;
        s.object = p.second;
    } else if (t.uses_object_list()) {
        auto names = detail::distinct_names(anns.front());
        if (names.size() < 2) return std::nullopt;
        rng.shuffle(names);
        const std::size_t cap = t.depth() ? 2 : std::min<std::size_t>(names.size(), 4);
        const std::size_t k = 2 + rng.below(cap - 1);
        s.objects.assign(names.begin(), names.begin() + static_cast<std::ptrdiff_t>(k));
    } else {
        std::vector<std::string> names;
        std::set<std::string> seen;
        for (const auto& a : anns) {
            for (const auto& n : detail::distinct_names(a)) {
                if (seen.insert(n).second) names.push_back(n);
            }
        }
        if (names.empty()) return std::nullopt;
        s.object = detail::pick(names, rng);
    }

    const DepthRoute route = rng.below(2) == 0 ? DepthRoute::region : DepthRoute::object;
    const std::string id = "program-" + t.id + "-" + std::to_string(attempt);
    try {
        std::string answer = compute_answer(t, anns, s, AnswerOptions{spec.permissive_ties});
        QAExample ex = instantiate_qa(t, keys, s, std::move(answer), id);
        ExecutionContext ctx = make_context(ex, &store, spec.seed);
        OracleBackend oracle;
        Chain chain = synthesize_chain(ex, t, s, ctx, oracle, rng, route, spec.permissive_ties);
        ProgramCandidate c;
        c.key = t.id + "\n" + join(keys, "\n") + "\n" + ex.question;
        c.record.example = std::move(ex);
        c.record.chain = std::move(chain);
        c.record.format = Format::CoTA;
        c.record.polarity = Polarity::pos;
        c.record.generator = Generator::program;
        return c;
    } catch (const ToolRuntimeError&) {
        return std::nullopt;
    } catch (const UnanswerableInstance&) {
        return std::nullopt;
    }
}

/// Records per the spec, grouped by template in qa_templates() order. Attempts run in
/// parallel chunks and are accepted in attempt order, so output does not depend on the
/// number of workers.
inline std::vector<TraceRecord> run_program_gen(const GenSpec& spec, const AnnotationStore& store) {
    if (store.empty()) throw InsufficientAnnotations("annotation store is empty");
    const auto single = detail::pool_keys(store, spec.single_pool);
    const auto multi = detail::pool_keys(store, spec.multi_pool);
    std::vector<TraceRecord> out;

    for (const auto& t : qa_templates()) {
        auto want_it = spec.counts.find(t.id);
        if (want_it == spec.counts.end() || want_it->second == 0) continue;
        const std::size_t want = want_it->second;
        const std::size_t cap = std::max<std::size_t>(100, spec.attempts_per_record * want);
        const std::size_t chunk = std::max<std::size_t>(16, spec.workers * 8);
        std::set<std::string> seen;
        std::size_t got = 0;

        for (std::size_t base = 0; got < want && base < cap; base += chunk) {
            const std::size_t n = std::min(chunk, cap - base);
            std::vector<std::optional<ProgramCandidate>> batch(n);
            parallel_for(n, spec.workers, [&](std::size_t i) {
                batch[i] = program_attempt(t, store, single, multi, spec, base + i);
            });
            for (auto& c : batch) {
                if (got == want) break;
                if (!c || !seen.insert(c->key).second) continue;
                out.push_back(std::move(c->record));
                ++got;
            }
        }
        if (got < want) {
            throw InsufficientAnnotations("template '" + t.id + "': produced " + std::to_string(got) + " of " +
                                          std::to_string(want) + " distinct records");
        }
    }
    return out;
}

/// Re-runs a stored chain through the agent loop against the oracle backend. The
/// context is rebuilt the way generation built it, so observations must match.
inline EpisodeResult replay_with_oracle(const TraceRecord& record, const AnnotationStore& store, std::uint64_t seed,
                                        const Registry& registry) {
    if (!record.chain) throw Error("record '" + record.example.id + "' has no chain to replay");
    OracleBackend oracle;
    RuntimeOptions ro;
    ro.seed = seed;
    ro.store = &store;
    auto policy = ScriptedPolicy::from_chain(*record.chain);
    return Runtime(registry, oracle, ro).run(policy, record.example);
}

} // namespace cota
