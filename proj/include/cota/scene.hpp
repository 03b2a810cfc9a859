// SPDX-License-Identifier: Apache-2.0
#pragma once

// Scene-graph annotations, image handles, and the per-episode execution context.
//
// Annotation files hold one image set each:
//   {"images": {"image-0": {"width", "height", "objects": [{"name", "attributes", "bbox", "depth"}],
//                            "texts", "faces", "tags", "depth_grid", "embedding_tags"}}}
//
// depth_grid follows the raw depth-model convention: larger values are nearer
// the camera. Tools report `max - value`, so their outputs grow with distance.
// Per-object "depth" is already in that reported frame (smaller = nearer).

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "cota/error.hpp"
#include "cota/json_text.hpp"
#include "cota/trace.hpp"

namespace cota {

struct BBox {
    double left = 0.0;
    double top = 0.0;
    double right = 0.0;
    double bottom = 0.0;

    friend bool operator==(const BBox&, const BBox&) = default;

    double width() const { return right - left; }
    double height() const { return bottom - top; }
    double center_x() const { return (left + right) / 2.0; }
    double center_y() const { return (top + bottom) / 2.0; }

    bool valid() const {
        auto in01 = [](double v) { return v >= 0.0 && v <= 1.0; };
        return in01(left) && in01(top) && in01(right) && in01(bottom) && left <= right && top <= bottom;
    }

    BBox rounded() const { return {round2(left), round2(top), round2(right), round2(bottom)}; }

    Value to_json() const { return Value::array({left, top, right, bottom}); }

    static BBox from_json(const Value& v) {
        if (!v.is_array() || v.size() != 4) throw Error("bbox must be a list of 4 numbers");
        for (const auto& x : v) {
            if (!x.is_number()) throw Error("bbox must be a list of 4 numbers");
        }
        return {v[0].get<double>(), v[1].get<double>(), v[2].get<double>(), v[3].get<double>()};
    }
};

struct AnnotatedObject {
    std::string name;
    std::vector<std::string> attributes;
    BBox bbox;
    std::optional<double> depth;
};

struct ImageAnnotation {
    std::vector<AnnotatedObject> objects;
    std::vector<std::string> texts;
    std::vector<BBox> faces;
    std::vector<std::string> tags;
    /// Rows of equal length; empty when the image has no depth map.
    std::vector<std::vector<double>> depth_grid;
    std::vector<std::string> embedding_tags;

    bool has_depth() const { return !depth_grid.empty() && !depth_grid.front().empty(); }
};

/// Assumed pixel size when an annotation omits width/height.
inline constexpr int kDefaultImageSide = 1000;

struct ImageHandle {
    int width = kDefaultImageSide;
    int height = kDefaultImageSide;
    std::optional<ImageAnnotation> annotation;
    /// Where the image came from: a path, a store key, or "derived".
    std::string source;
};

// ---------------------------------------------------------------------------
// Deterministic randomness

/// splitmix64: small, portable, and identical on every platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). n must be positive.
    std::uint64_t below(std::uint64_t n) {
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = next();
        } while (x >= limit);
        return x % n;
    }

    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            std::swap(items[i - 1], items[below(i)]);
        }
    }

private:
    std::uint64_t state_;
};

inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Independent stream for (seed, key, index); parallel workers derive identical streams.
inline Rng derive_rng(std::uint64_t seed, std::string_view key, std::uint64_t index) {
    Rng mix(seed ^ fnv1a(key));
    mix.next();
    return Rng(mix.next() ^ (index * 0x9e3779b97f4a7c15ULL + 0x632be59bd9b4e019ULL));
}

// ---------------------------------------------------------------------------
// Annotation parsing

namespace detail {

inline std::vector<std::string> string_list(const Value& v, const char* what) {
    std::vector<std::string> out;
    if (v.is_null()) return out;
    if (v.is_string()) {
        out.push_back(v.get<std::string>());
        return out;
    }
    if (!v.is_array()) throw Error(std::string(what) + " must be a list of strings");
    for (const auto& x : v) {
        if (!x.is_string()) throw Error(std::string(what) + " must be a list of strings");
        out.push_back(x.get<std::string>());
    }
    return out;
}

inline BBox checked_box(const Value& v, const std::string& where) {
    BBox b = BBox::from_json(v);
    if (!b.valid()) throw Error(where + ": bbox must be normalized with left<=right and top<=bottom");
    return b;
}

} // namespace detail

inline ImageAnnotation annotation_from_json(const Value& v) {
    ImageAnnotation a;
    for (const auto& o : v.value("objects", Value::array())) {
        AnnotatedObject obj;
        obj.name = o.at("name").get<std::string>();
        obj.attributes = detail::string_list(o.value("attributes", Value::array()), "attributes");
        obj.bbox = detail::checked_box(o.at("bbox"), "object '" + obj.name + "'");
        if (o.contains("depth") && !o.at("depth").is_null()) obj.depth = o.at("depth").get<double>();
        a.objects.push_back(std::move(obj));
    }
    a.texts = detail::string_list(v.value("texts", Value::array()), "texts");
    for (const auto& f : v.value("faces", Value::array())) a.faces.push_back(detail::checked_box(f, "face"));
    a.tags = detail::string_list(v.value("tags", Value::array()), "tags");
    a.embedding_tags = detail::string_list(v.value("embedding_tags", Value::array()), "embedding_tags");
    if (v.contains("depth_grid") && !v.at("depth_grid").is_null()) {
        std::size_t width = 0;
        for (const auto& row : v.at("depth_grid")) {
            std::vector<double> r;
            for (const auto& x : row) {
                const double d = x.get<double>();
                if (d < 0.0) throw Error("depth_grid values must be non-negative");
                r.push_back(d);
            }
            if (a.depth_grid.empty()) width = r.size();
            if (r.size() != width || width == 0) throw Error("depth_grid rows must have equal, non-zero length");
            a.depth_grid.push_back(std::move(r));
        }
    }
    return a;
}

inline Value annotation_to_json(const ImageAnnotation& a) {
    Value v = Value::object();
    v["objects"] = Value::array();
    for (const auto& o : a.objects) {
        Value j{{"name", o.name}, {"attributes", o.attributes}, {"bbox", o.bbox.to_json()}};
        if (o.depth) j["depth"] = *o.depth;
        v["objects"].push_back(std::move(j));
    }
    v["texts"] = a.texts;
    v["faces"] = Value::array();
    for (const auto& f : a.faces) v["faces"].push_back(f.to_json());
    v["tags"] = a.tags;
    if (a.has_depth()) v["depth_grid"] = a.depth_grid;
    if (!a.embedding_tags.empty()) v["embedding_tags"] = a.embedding_tags;
    return v;
}

// ---------------------------------------------------------------------------
// Annotation store

/// Annotated images keyed "<set>/<image-ref>", e.g. "vg_2345/image-0".
class AnnotationStore {
public:
    /// Adds one image-set document under `set_id`.
    void add_set(const std::string& set_id, const Value& doc) {
        if (!doc.is_object() || !doc.contains("images") || !doc.at("images").is_object()) {
            throw Error("annotation set '" + set_id + "' needs an \"images\" object");
        }
        auto& refs = sets_[set_id];
        for (auto it = doc.at("images").begin(); it != doc.at("images").end(); ++it) {
            ImageHandle h;
            h.width = it.value().value("width", kDefaultImageSide);
            h.height = it.value().value("height", kDefaultImageSide);
            if (h.width <= 0 || h.height <= 0) throw Error(set_id + "/" + it.key() + ": width and height must be positive");
            h.annotation = annotation_from_json(it.value());
            h.source = set_id + "/" + it.key();
            images_[h.source] = h;
            refs.push_back(it.key());
        }
    }

    void add_image(const std::string& key, ImageHandle handle) {
        const auto slash = key.rfind('/');
        const std::string set = slash == std::string::npos ? key : key.substr(0, slash);
        handle.source = key;
        images_[key] = std::move(handle);
        sets_[set].push_back(slash == std::string::npos ? key : key.substr(slash + 1));
    }

    /// Loads every *.json file in `dir`; the file stem is the set id.
    static AnnotationStore load_dir(const std::filesystem::path& dir) {
        AnnotationStore store;
        std::vector<std::filesystem::path> files;
        for (const auto& e : std::filesystem::directory_iterator(dir)) {
            if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
        }
        std::sort(files.begin(), files.end());
        for (const auto& f : files) store.add_set(f.stem().string(), read_json_file(f));
        return store;
    }

    static Value read_json_file(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw Error("cannot open " + path.string());
        std::stringstream ss;
        ss << in.rdbuf();
        try {
            return Value::parse(ss.str());
        } catch (const nlohmann::json::exception& e) {
            throw Error(path.string() + ": " + e.what());
        }
    }

    const ImageHandle* find(const std::string& key) const {
        auto it = images_.find(key);
        return it == images_.end() ? nullptr : &it->second;
    }

    /// All image keys in sorted order.
    std::vector<std::string> keys() const {
        std::vector<std::string> out;
        for (const auto& [k, _] : images_) out.push_back(k);
        return out;
    }

    const std::map<std::string, std::vector<std::string>>& sets() const { return sets_; }
    bool empty() const { return images_.empty(); }
    std::size_t size() const { return images_.size(); }

private:
    std::map<std::string, ImageHandle> images_;
    std::map<std::string, std::vector<std::string>> sets_;
};

// ---------------------------------------------------------------------------
// Execution context

/// Per-episode image table. Confined to one worker at a time.
class ExecutionContext {
public:
    ExecutionContext() = default;
    ExecutionContext(std::uint64_t seed, std::string example_id) : seed_(seed), example_id_(std::move(example_id)) {}

    /// Registers an input image under the next sequential ref.
    std::string add_input(ImageHandle handle) { return issue(std::move(handle)); }

    /// Registers a tool-created image: "image-<n>" continuing after the inputs.
    std::string issue(ImageHandle handle) {
        std::string ref = image_ref(next_index_++);
        images_[ref] = std::move(handle);
        return ref;
    }

    /// Registers `handle` under a ref chosen elsewhere (replayed or remote output);
    /// later issued refs continue after it.
    void adopt(const std::string& ref, ImageHandle handle) {
        if (ref.rfind("image-", 0) == 0) {
            try {
                next_index_ = std::max(next_index_, std::stoul(ref.substr(6)) + 1);
            } catch (const std::exception&) {
            }
        }
        images_[ref] = std::move(handle);
    }

    bool has(const std::string& ref) const { return images_.count(ref) != 0; }

    const ImageHandle& image(const std::string& ref, const std::string& tool = "") const {
        auto it = images_.find(ref);
        if (it == images_.end()) throw ToolRuntimeError(tool, "Image not found: " + ref);
        return it->second;
    }

    const std::map<std::string, ImageHandle>& images() const { return images_; }
    std::size_t next_index() const { return next_index_; }

    std::uint64_t seed() const { return seed_; }
    const std::string& example_id() const { return example_id_; }

    /// Position of the call being executed; keys the per-call random stream.
    void set_position(std::size_t step, std::size_t action) {
        step_index_ = step;
        action_index_ = action;
    }
    std::size_t step_index() const { return step_index_; }

    /// Per-episode counter owned by a backend (e.g. replay cursors).
    std::size_t& counter(const std::string& key) { return counters_[key]; }

    Rng call_rng() const { return derive_rng(seed_, example_id_, step_index_ * 64 + action_index_); }

private:
    std::map<std::string, ImageHandle> images_;
    std::size_t next_index_ = 0;
    std::uint64_t seed_ = 0;
    std::string example_id_;
    std::size_t step_index_ = 0;
    std::size_t action_index_ = 0;
    std::map<std::string, std::size_t> counters_;
};

/// Fresh context for an example: input k resolves its source in the store, falling back
/// to "<example id>/image-k", then to an unannotated placeholder.
inline ExecutionContext make_context(const QAExample& example, const AnnotationStore* store, std::uint64_t seed) {
    ExecutionContext ctx(seed, example.id);
    for (std::size_t k = 0; k < example.images.size(); ++k) {
        const ImageHandle* found = nullptr;
        if (store) {
            found = store->find(example.images[k]);
            if (!found) found = store->find(example.id + "/" + image_ref(k));
        }
        if (found) {
            ctx.add_input(*found);
        } else {
            ImageHandle placeholder;
            placeholder.source = example.images[k];
            ctx.add_input(std::move(placeholder));
        }
    }
    return ctx;
}

} // namespace cota
