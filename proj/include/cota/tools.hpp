// SPDX-License-Identifier: Apache-2.0
#pragma once

// Annotation-backed tool semantics. Each function answers from scene ground
// truth instead of model inference; the oracle backend wires them to calls.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "cota/error.hpp"
#include "cota/json_text.hpp"
#include "cota/scene.hpp"

namespace cota {

// ---------------------------------------------------------------------------
// Text helpers

inline std::string lowercase(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

/// Lowercased alphanumeric words.
inline std::vector<std::string> words(std::string_view s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (std::isalnum(static_cast<unsigned char>(c)) || c == '\'') {
            cur += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        } else if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

inline std::string join(const std::vector<std::string>& parts, std::string_view sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i) out += sep;
        out += parts[i];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Depth

enum class DepthMode { mean, center, mode };

inline DepthMode parse_depth_mode(std::string_view s) {
    if (s == "mean" || s == "average") return DepthMode::mean;
    if (s == "center") return DepthMode::center;
    if (s == "mode") return DepthMode::mode;
    throw Error("Depth mode " + std::string(s) + " is not supported.");
}

/// Depth of a region in the reported frame (max - raw), rounded to 2 decimals.
/// Cells span [int(left*W'), int(right*W')) x [int(top*H'), int(bottom*H')).
inline double region_depth(const ImageAnnotation& ann, const BBox& box, DepthMode mode = DepthMode::mean) {
    if (!ann.has_depth()) throw MissingDepth();
    if (box.left > 1.0 || box.top > 1.0 || box.right > 1.0 || box.bottom > 1.0) {
        throw InvalidValue("EstimateRegionDepth", "bbox", "Bounding box coordinates must be between 0 and 1.");
    }
    const auto& g = ann.depth_grid;
    const std::size_t H = g.size();
    const std::size_t W = g.front().size();
    double peak = 0.0;
    for (const auto& row : g) peak = std::max(peak, *std::max_element(row.begin(), row.end()));
    auto cell = [&](std::size_t y, std::size_t x) { return peak - g[y][x]; };

    if (mode == DepthMode::center) {
        auto x = static_cast<std::size_t>(box.center_x() * static_cast<double>(W));
        auto y = static_cast<std::size_t>(box.center_y() * static_cast<double>(H));
        return round2(cell(std::min(y, H - 1), std::min(x, W - 1)));
    }

    const auto x1 = static_cast<std::size_t>(box.left * static_cast<double>(W));
    const auto y1 = static_cast<std::size_t>(box.top * static_cast<double>(H));
    const auto x2 = std::min(W, static_cast<std::size_t>(box.right * static_cast<double>(W)));
    const auto y2 = std::min(H, static_cast<std::size_t>(box.bottom * static_cast<double>(H)));
    if (x2 <= x1 || y2 <= y1) throw EmptyRegion();

    if (mode == DepthMode::mean) {
        double sum = 0.0;
        for (std::size_t y = y1; y < y2; ++y) {
            for (std::size_t x = x1; x < x2; ++x) sum += cell(y, x);
        }
        return round2(sum / static_cast<double>((x2 - x1) * (y2 - y1)));
    }

    std::map<double, std::size_t> freq; // ordered, so ties resolve to the smallest value
    for (std::size_t y = y1; y < y2; ++y) {
        for (std::size_t x = x1; x < x2; ++x) ++freq[cell(y, x)];
    }
    auto best = freq.begin();
    for (auto it = freq.begin(); it != freq.end(); ++it) {
        if (it->second > best->second) best = it;
    }
    return round2(best->first);
}

// ---------------------------------------------------------------------------
// Localization

struct Region {
    std::string label;
    BBox bbox;
    std::optional<double> score;

    Value to_json() const {
        Value v{{"label", label}, {"bbox", bbox.to_json()}};
        if (score) v["score"] = *score;
        return v;
    }

    static Region from_json(const Value& v) {
        Region r;
        r.label = v.at("label").get<std::string>();
        r.bbox = BBox::from_json(v.at("bbox"));
        if (v.contains("score") && v.at("score").is_number()) r.score = v.at("score").get<double>();
        return r;
    }
};

inline Value regions_to_json(const std::vector<Region>& regions) {
    Value out = Value::array();
    for (const auto& r : regions) out.push_back(r.to_json());
    return out;
}

/// Does `phrase` ("cat", "a black cat", "red apple") describe `obj`? The trailing words must
/// equal the object name; any leading words, articles aside, must be attributes of it.
inline bool phrase_matches(std::string_view phrase, const AnnotatedObject& obj) {
    static const std::set<std::string> articles{"a", "an", "the"};
    auto p = words(phrase);
    const auto name = words(obj.name);
    if (name.empty() || p.size() < name.size()) return false;
    if (!std::equal(name.begin(), name.end(), p.end() - static_cast<std::ptrdiff_t>(name.size()))) return false;
    std::set<std::string> attrs;
    for (const auto& a : obj.attributes) {
        for (auto& w : words(a)) attrs.insert(std::move(w));
    }
    for (auto it = p.begin(); it != p.end() - static_cast<std::ptrdiff_t>(name.size()); ++it) {
        if (articles.count(*it) == 0 && attrs.count(*it) == 0) return false;
    }
    return true;
}

struct LocalizeOptions {
    /// Half-width of uniform per-coordinate box noise; 0 returns ground-truth boxes.
    double box_noise = 0.0;
    double score_low = 0.40;
    double score_high = 0.95;
};

/// Regions for each phrase in order. Repeated phrases are labeled "phrase", "phrase-2", ...
inline std::vector<Region> localize(const ImageAnnotation& ann, const std::vector<std::string>& phrases, Rng& rng,
                                    const LocalizeOptions& opts = {}) {
    std::vector<Region> out;
    std::map<std::string, int> seen;
    for (const auto& phrase : phrases) {
        for (const auto& obj : ann.objects) {
            if (!phrase_matches(phrase, obj)) continue;
            const int n = ++seen[phrase];
            Region r;
            r.label = n > 1 ? phrase + "-" + std::to_string(n) : phrase;
            BBox b = obj.bbox;
            if (opts.box_noise > 0.0) {
                auto jitter = [&](double v) { return std::clamp(v + rng.uniform(-opts.box_noise, opts.box_noise), 0.0, 1.0); };
                BBox j{jitter(b.left), jitter(b.top), jitter(b.right), jitter(b.bottom)};
                b = {std::min(j.left, j.right), std::min(j.top, j.bottom), std::max(j.left, j.right),
                     std::max(j.top, j.bottom)};
            }
            r.bbox = b.rounded();
            r.score = round2(rng.uniform(opts.score_low, opts.score_high));
            out.push_back(std::move(r));
        }
    }
    return out;
}

/// Index of the highest-score region; first wins on ties.
inline std::size_t best_region(const std::vector<Region>& regions) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < regions.size(); ++i) {
        if (regions[i].score.value_or(0.0) > regions[best].score.value_or(0.0)) best = i;
    }
    return best;
}

/// Mean depth under the best-scoring match for `object`; nullopt when nothing matches.
inline std::optional<double> object_depth(const ImageAnnotation& ann, const std::string& object, Rng& rng,
                                          const LocalizeOptions& opts = {}) {
    auto regions = localize(ann, {object}, rng, opts);
    if (regions.empty()) return std::nullopt;
    return region_depth(ann, regions[best_region(regions)].bbox, DepthMode::mean);
}

inline constexpr const char* kObjectNotFound = "Object not found.";

// ---------------------------------------------------------------------------
// Crop and zoom

struct PixelRect {
    int left = 0;
    int top = 0;
    int right = 0;
    int bottom = 0;

    friend bool operator==(const PixelRect&, const PixelRect&) = default;
    int width() const { return right - left; }
    int height() const { return bottom - top; }
};

inline constexpr double kCropMargin = 0.10;

/// Pixel rectangle for `box` grown by 10% of its own size per side, clamped to the image.
inline PixelRect crop_box(const BBox& box, int width, int height, const std::string& tool = "Crop") {
    if (box.left > 1.0 || box.top > 1.0 || box.right > 1.0 || box.bottom > 1.0) {
        throw InvalidValue(tool, "bbox", "Bounding box coordinates must be between 0 and 1.");
    }
    const double W = width;
    const double H = height;
    const double mx = kCropMargin * box.width() * W;
    const double my = kCropMargin * box.height() * H;
    PixelRect r;
    r.left = std::clamp(static_cast<int>(std::floor(box.left * W - mx)), 0, width);
    r.top = std::clamp(static_cast<int>(std::floor(box.top * H - my)), 0, height);
    r.right = std::clamp(static_cast<int>(std::ceil(box.right * W + mx)), 0, width);
    r.bottom = std::clamp(static_cast<int>(std::ceil(box.bottom * H + my)), 0, height);
    if (r.width() <= 0 || r.height() <= 0) throw InvalidValue(tool, "bbox", "The crop region is empty.");
    return r;
}

namespace detail {

/// `b` clipped to the normalized window and re-expressed in its frame; nullopt if disjoint.
inline std::optional<BBox> reframe(const BBox& b, const BBox& win) {
    const double l = std::max(b.left, win.left);
    const double t = std::max(b.top, win.top);
    const double r = std::min(b.right, win.right);
    const double bt = std::min(b.bottom, win.bottom);
    if (r <= l || bt <= t) return std::nullopt;
    auto nx = [&](double x) { return std::clamp((x - win.left) / win.width(), 0.0, 1.0); };
    auto ny = [&](double y) { return std::clamp((y - win.top) / win.height(), 0.0, 1.0); };
    return BBox{nx(l), ny(t), nx(r), ny(bt)};
}

} // namespace detail

/// The handle for the cropped pixels, annotations re-normalized into the crop frame.
inline ImageHandle crop_handle(const ImageHandle& src, const PixelRect& rect) {
    ImageHandle out;
    out.width = rect.width();
    out.height = rect.height();
    out.source = "derived";
    if (!src.annotation) return out;
    const BBox win{static_cast<double>(rect.left) / src.width, static_cast<double>(rect.top) / src.height,
                   static_cast<double>(rect.right) / src.width, static_cast<double>(rect.bottom) / src.height};
    const ImageAnnotation& a = *src.annotation;
    ImageAnnotation c;
    for (const auto& o : a.objects) {
        if (auto b = detail::reframe(o.bbox, win)) {
            AnnotatedObject moved = o;
            moved.bbox = *b;
            c.objects.push_back(std::move(moved));
        }
    }
    for (const auto& f : a.faces) {
        if (auto b = detail::reframe(f, win)) c.faces.push_back(*b);
    }
    c.texts = a.texts;
    c.tags = a.tags;
    c.embedding_tags = a.embedding_tags;
    if (a.has_depth()) {
        const double GH = static_cast<double>(a.depth_grid.size());
        const double GW = static_cast<double>(a.depth_grid.front().size());
        auto gy1 = static_cast<std::size_t>(std::floor(win.top * GH));
        auto gx1 = static_cast<std::size_t>(std::floor(win.left * GW));
        auto gy2 = std::max(gy1 + 1, static_cast<std::size_t>(std::ceil(win.bottom * GH)));
        auto gx2 = std::max(gx1 + 1, static_cast<std::size_t>(std::ceil(win.right * GW)));
        gy2 = std::min(gy2, a.depth_grid.size());
        gx2 = std::min(gx2, a.depth_grid.front().size());
        gy1 = std::min(gy1, gy2 - 1);
        gx1 = std::min(gx1, gx2 - 1);
        for (std::size_t y = gy1; y < gy2; ++y) {
            c.depth_grid.emplace_back(a.depth_grid[y].begin() + static_cast<std::ptrdiff_t>(gx1),
                                      a.depth_grid[y].begin() + static_cast<std::ptrdiff_t>(gx2));
        }
    }
    out.annotation = std::move(c);
    return out;
}

/// Crop with margins, then scale both dimensions by `factor` (truncating, as PIL sizes are ints).
inline ImageHandle zoom(const ImageHandle& src, const BBox& box, double factor) {
    if (!(factor > 1.0)) throw InvalidValue("ZoomIn", "zoom_factor", "Zoom factor must be greater than 1 to zoom in");
    ImageHandle cropped = crop_handle(src, crop_box(box, src.width, src.height, "ZoomIn"));
    cropped.width = static_cast<int>(cropped.width * factor);
    cropped.height = static_cast<int>(cropped.height * factor);
    return cropped;
}

// ---------------------------------------------------------------------------
// Similarity

using TagSet = std::set<std::string>;

inline double jaccard(const TagSet& a, const TagSet& b) {
    if (a.empty() && b.empty()) return 0.0;
    std::size_t inter = 0;
    for (const auto& t : a) inter += b.count(t);
    return static_cast<double>(inter) / static_cast<double>(a.size() + b.size() - inter);
}

struct SimilarityResult {
    std::vector<double> scores;
    std::size_t best = 0;
};

/// Rounded Jaccard scores against each candidate; ties resolve to the lowest index.
inline SimilarityResult oracle_similarity(const TagSet& query, const std::vector<TagSet>& candidates,
                                          const std::string& tool = "GetImageToTextsSimilarity") {
    if (candidates.empty()) throw EmptyCandidates(tool);
    SimilarityResult r;
    for (const auto& c : candidates) r.scores.push_back(round2(jaccard(query, c)));
    for (std::size_t i = 1; i < r.scores.size(); ++i) {
        if (r.scores[i] > r.scores[r.best]) r.best = i;
    }
    return r;
}

/// embedding_tags when given, else scene tags plus object names; all lowercased.
inline TagSet image_tags(const ImageAnnotation& a) {
    TagSet out;
    if (!a.embedding_tags.empty()) {
        for (const auto& t : a.embedding_tags) out.insert(lowercase(t));
        return out;
    }
    for (const auto& t : a.tags) out.insert(lowercase(t));
    for (const auto& o : a.objects) out.insert(lowercase(o.name));
    return out;
}

/// Content words of a text, lowercased.
inline TagSet text_tags(std::string_view text) {
    static const std::set<std::string> stop{"a",  "an", "the", "and", "or",    "of",    "with",    "in",
                                            "on", "at", "to",  "is",  "are",   "this",  "that",    "it",
                                            "its", "image", "photo", "picture", "showing", "there"};
    TagSet out;
    for (auto& w : words(text)) {
        if (stop.count(w) == 0) out.insert(std::move(w));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Faces

/// Pixel-space enlargement by `f` around the box (integer half-growth), clamped.
inline std::vector<int> enlarge_face(const std::vector<int>& box, int W, int H, double f = 1.5) {
    const int w = static_cast<int>((f - 1.0) * (box[2] - box[0]) / 2.0);
    const int h = static_cast<int>((f - 1.0) * (box[3] - box[1]) / 2.0);
    return {std::max(0, box[0] - w), std::max(0, box[1] - h), std::min(W, box[2] + w), std::min(H, box[3] + h)};
}

/// Face regions labeled "face", "face 2", ...
inline std::vector<Region> detect_faces(const ImageHandle& img) {
    std::vector<Region> out;
    if (!img.annotation) return out;
    const int W = img.width;
    const int H = img.height;
    const auto& faces = img.annotation->faces;
    for (std::size_t i = 0; i < faces.size(); ++i) {
        const auto& f = faces[i];
        std::vector<int> px{static_cast<int>(f.left * W), static_cast<int>(f.top * H), static_cast<int>(f.right * W),
                            static_cast<int>(f.bottom * H)};
        px = enlarge_face(px, W, H);
        Region r;
        r.label = i > 0 ? "face " + std::to_string(i + 1) : "face";
        r.bbox = BBox{static_cast<double>(px[0]) / W, static_cast<double>(px[1]) / H, static_cast<double>(px[2]) / W,
                      static_cast<double>(px[3]) / H}
                     .rounded();
        out.push_back(std::move(r));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Scene listings

/// Distinct object names in first-appearance order.
inline std::vector<std::string> object_names(const ImageAnnotation& a) {
    std::vector<std::string> out;
    std::set<std::string> seen;
    for (const auto& o : a.objects) {
        if (seen.insert(o.name).second) out.push_back(o.name);
    }
    return out;
}

inline std::string ocr_text(const ImageAnnotation& a) { return join(a.texts, "\n"); }

} // namespace cota
