// SPDX-License-Identifier: Apache-2.0
#include <catch_amalgamated.hpp>

#include <random>

#include "cota/backend.hpp"

using namespace cota;

namespace {

ImageAnnotation grid_annotation(std::vector<std::vector<double>> grid) {
    ImageAnnotation a;
    a.depth_grid = std::move(grid);
    return a;
}

AnnotatedObject object(std::string name, BBox box, std::vector<std::string> attrs = {}) {
    AnnotatedObject o;
    o.name = std::move(name);
    o.bbox = box;
    o.attributes = std::move(attrs);
    return o;
}

ImageHandle handle(int w, int h, ImageAnnotation a) {
    ImageHandle img;
    img.width = w;
    img.height = h;
    img.annotation = std::move(a);
    return img;
}

/// Brute force: visit every cell, keep those whose index range falls in the box.
double naive_mean_depth(const std::vector<std::vector<double>>& g, const BBox& b) {
    double peak = 0.0;
    for (const auto& row : g) {
        for (double v : row) peak = std::max(peak, v);
    }
    const double H = static_cast<double>(g.size());
    const double W = static_cast<double>(g[0].size());
    double sum = 0.0;
    int n = 0;
    for (std::size_t y = 0; y < g.size(); ++y) {
        for (std::size_t x = 0; x < g[y].size(); ++x) {
            if (static_cast<double>(x) >= std::floor(b.left * W) && static_cast<double>(x) < std::floor(b.right * W) &&
                static_cast<double>(y) >= std::floor(b.top * H) && static_cast<double>(y) < std::floor(b.bottom * H)) {
                sum += peak - g[y][x];
                ++n;
            }
        }
    }
    return std::round(sum / n * 100.0) / 100.0;
}

} // namespace

TEST_CASE("region_depth reverses and aggregates") {
    auto uniform = grid_annotation(std::vector<std::vector<double>>(4, std::vector<double>(4, 5.0)));
    CHECK(region_depth(uniform, {0.1, 0.1, 0.9, 0.9}) == 0.0);

    // Left half raw 2, right half raw 8; reversed: left 6, right 0.
    auto halves = grid_annotation({{2, 2, 8, 8}, {2, 2, 8, 8}});
    CHECK(region_depth(halves, {0.5, 0.0, 1.0, 1.0}) == 0.0);
    CHECK(region_depth(halves, {0.0, 0.0, 0.5, 1.0}) == 6.0);
    CHECK(region_depth(halves, {0.0, 0.0, 1.0, 1.0}) == 3.0);

    auto nine = grid_annotation({{1, 2, 3}, {4, 5, 6}, {7, 8, 9}});
    CHECK(region_depth(nine, {0, 0, 1, 1}, DepthMode::center) == 4.0);
    CHECK(region_depth(nine, {0, 0, 1, 1}, DepthMode::mean) == 4.0);
    CHECK(region_depth(nine, {1, 1, 1, 1}, DepthMode::center) == 0.0);

    auto modal = grid_annotation({{9, 1, 1}, {9, 4, 4}, {4, 9, 0}});
    CHECK(region_depth(modal, {0, 0, 1, 1}, DepthMode::mode) == 0.0); // raw 9 appears 3 times
    auto tie = grid_annotation({{9, 5}, {5, 9}});
    CHECK(region_depth(tie, {0, 0, 1, 1}, DepthMode::mode) == 0.0); // tie between 0 and 4 picks 0

    CHECK_THROWS_AS(region_depth(ImageAnnotation{}, {0, 0, 1, 1}), MissingDepth);
    CHECK_THROWS_AS(region_depth(nine, {0.1, 0.1, 0.2, 0.2}), EmptyRegion);
    CHECK(parse_depth_mode("center") == DepthMode::center);
    CHECK_THROWS_AS(parse_depth_mode("median"), Error);
}

TEST_CASE("region_depth mean matches a cell-by-cell scan") {
    std::mt19937_64 gen(5);
    std::uniform_real_distribution<double> val(0.0, 20.0);
    std::uniform_real_distribution<double> coord(0.0, 1.0);
    int checked = 0;
    for (int i = 0; i < 300; ++i) {
        const std::size_t H = 3 + gen() % 20;
        const std::size_t W = 3 + gen() % 20;
        std::vector<std::vector<double>> g(H, std::vector<double>(W));
        for (auto& row : g) {
            for (auto& v : row) v = std::round(val(gen) * 4.0) / 4.0;
        }
        double l = coord(gen), r = coord(gen), t = coord(gen), b = coord(gen);
        BBox box{std::min(l, r), std::min(t, b), std::max(l, r), std::max(t, b)};
        auto ann = grid_annotation(g);
        if (std::floor(box.right * W) <= std::floor(box.left * W) || std::floor(box.bottom * H) <= std::floor(box.top * H)) {
            CHECK_THROWS_AS(region_depth(ann, box), EmptyRegion);
            continue;
        }
        CHECK(region_depth(ann, box) == Catch::Approx(naive_mean_depth(g, box)).margin(1e-9));
        ++checked;
    }
    CHECK(checked > 100);
}

TEST_CASE("localize labels repeated phrases") {
    ImageAnnotation a;
    a.objects = {object("person", {0.77, 0.47, 0.79, 0.54}), object("car", {0.1, 0.1, 0.3, 0.3}, {"red"}),
                 object("person", {0.69, 0.49, 0.7, 0.52})};
    Rng rng(1);
    auto regions = localize(a, {"person"}, rng);
    REQUIRE(regions.size() == 2);
    CHECK(regions[0].label == "person");
    CHECK(regions[1].label == "person-2");
    CHECK(regions[0].bbox == BBox{0.77, 0.47, 0.79, 0.54});
    for (const auto& r : regions) {
        CHECK(*r.score >= 0.40);
        CHECK(*r.score <= 0.95);
        CHECK(*r.score == round2(*r.score));
    }

    Rng rng2(1);
    CHECK(localize(a, {"red car"}, rng2).size() == 1);
    CHECK(localize(a, {"a red car"}, rng2).size() == 1);
    CHECK(localize(a, {"blue car"}, rng2).empty());
    CHECK(localize(a, {"Car"}, rng2).size() == 1);
    CHECK(localize(a, {"dog"}, rng2).empty());

    Rng noisy(3);
    LocalizeOptions opts;
    opts.box_noise = 0.02;
    auto jittered = localize(a, {"car"}, noisy, opts);
    REQUIRE(jittered.size() == 1);
    CHECK(std::fabs(jittered[0].bbox.left - 0.1) <= 0.025);
    CHECK(jittered[0].bbox.valid());
}

TEST_CASE("object_depth equals region_depth on the best match") {
    ImageAnnotation a;
    a.depth_grid.assign(10, std::vector<double>(10));
    for (std::size_t y = 0; y < 10; ++y) {
        for (std::size_t x = 0; x < 10; ++x) a.depth_grid[y][x] = static_cast<double>(y * 10 + x);
    }
    a.objects = {object("cat", {0.0, 0.0, 0.3, 0.3}), object("cat", {0.6, 0.6, 1.0, 1.0}), object("dog", {0.4, 0.4, 0.6, 0.6})};

    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Rng r1(seed);
        auto regions = localize(a, {"cat"}, r1);
        const auto best = best_region(regions);
        for (std::size_t i = 0; i < regions.size(); ++i) CHECK(*regions[i].score <= *regions[best].score);
        Rng r2(seed);
        CHECK(object_depth(a, "cat", r2) == region_depth(a, regions[best].bbox));
    }
    Rng r3(0);
    CHECK_FALSE(object_depth(a, "horse", r3).has_value());
}

TEST_CASE("crop_box grows by the margin and clamps") {
    auto r = crop_box({0.33, 0.21, 0.58, 0.46}, 100, 100);
    CHECK(r.left <= 33);
    CHECK(r.top <= 21);
    CHECK(r.right >= 58);
    CHECK(r.bottom >= 46);
    CHECK(r == PixelRect{30, 18, 61, 49});
    CHECK(crop_box({0, 0, 1, 1}, 640, 480) == PixelRect{0, 0, 640, 480});
    CHECK_THROWS_AS(crop_box({0.2, 0.3, 1.4, 0.9}, 100, 100), InvalidValue);
    try {
        crop_box({0.2, 0.3, 1.4, 0.9}, 100, 100);
    } catch (const InvalidValue& e) {
        CHECK(std::string(e.what()) == "Bounding box coordinates must be between 0 and 1.");
        CHECK(e.argument() == "bbox");
    }
    CHECK_THROWS_AS(crop_box({0.5, 0.5, 0.5, 0.5}, 100, 100), InvalidValue);
}

TEST_CASE("crop_handle re-normalizes annotations") {
    ImageAnnotation a;
    a.objects = {object("cat", {0.0, 0.0, 0.5, 0.5}), object("dog", {0.8, 0.8, 0.9, 0.9})};
    a.depth_grid.assign(4, std::vector<double>{1, 2, 3, 4});
    auto src = handle(100, 100, a);
    auto out = crop_handle(src, PixelRect{0, 0, 50, 50});
    CHECK(out.width == 50);
    CHECK(out.height == 50);
    REQUIRE(out.annotation->objects.size() == 1);
    CHECK(out.annotation->objects[0].bbox == BBox{0, 0, 1, 1});
    CHECK(out.annotation->depth_grid == std::vector<std::vector<double>>{{1, 2}, {1, 2}});
}

TEST_CASE("zoom scales the cropped handle") {
    ImageHandle img;
    img.width = 50;
    img.height = 40;
    // Full-frame crop keeps 50x40, then doubles.
    auto z = zoom(img, {0, 0, 1, 1}, 2.0);
    CHECK(z.width == 100);
    CHECK(z.height == 80);
    CHECK_THROWS_AS(zoom(img, {0, 0, 1, 1}, 1.0), InvalidValue);
    try {
        zoom(img, {0, 0, 1, 1}, 0.5);
    } catch (const InvalidValue& e) {
        CHECK(std::string(e.what()) == "Zoom factor must be greater than 1 to zoom in");
    }
}

TEST_CASE("oracle_similarity is rounded Jaccard with first-wins ties") {
    auto same = oracle_similarity({"a", "b"}, {{"a", "b"}});
    CHECK(same.scores == std::vector<double>{1.0});
    CHECK(same.best == 0);
    CHECK(oracle_similarity({"a"}, {{"z"}}).scores == std::vector<double>{0.0});
    auto r = oracle_similarity({"a", "b"}, {{"a"}, {"a", "b", "c"}});
    CHECK(r.scores == std::vector<double>{0.5, 0.67});
    CHECK(r.best == 1);
    CHECK(oracle_similarity({"a"}, {{"a", "b"}, {"a", "c"}}).best == 0);
    CHECK_THROWS_AS(oracle_similarity({"a"}, {}), EmptyCandidates);
    CHECK(text_tags("A black and white cat") == TagSet{"black", "white", "cat"});
}

TEST_CASE("detect_faces enlarges boxes by 1.5") {
    ImageAnnotation a;
    a.faces = {BBox{0.4, 0.4, 0.6, 0.6}, BBox{0.0, 0.0, 0.1, 0.1}};
    auto faces = detect_faces(handle(100, 100, a));
    REQUIRE(faces.size() == 2);
    CHECK(faces[0].label == "face");
    CHECK(faces[1].label == "face 2");
    CHECK(faces[0].bbox == BBox{0.35, 0.35, 0.65, 0.65});
    CHECK(faces[1].bbox == BBox{0.0, 0.0, 0.12, 0.12});
    CHECK_FALSE(faces[0].score.has_value());
    CHECK(enlarge_face({10, 10, 20, 20}, 100, 100) == std::vector<int>{8, 8, 22, 22});
}

namespace {

ExecutionContext scene_context() {
    ImageAnnotation a;
    a.objects = {object("person", {0.77, 0.47, 0.79, 0.54}), object("person", {0.69, 0.49, 0.7, 0.52}),
                 object("cat", {0.1, 0.1, 0.4, 0.5}, {"black"})};
    a.texts = {"x-2^3=0"};
    a.faces = {BBox{0.4, 0.4, 0.6, 0.6}};
    a.tags = {"street"};
    a.depth_grid.assign(5, std::vector<double>{5, 4, 3, 2, 1});
    ImageAnnotation b;
    b.objects = {object("cat", {0.2, 0.2, 0.3, 0.3})};
    b.tags = {"indoor"};
    ExecutionContext ctx(42, "ex-1");
    ctx.add_input(handle(200, 100, a));
    ctx.add_input(handle(100, 100, b));
    ctx.add_input(handle(100, 100, ImageAnnotation{}));
    return ctx;
}

} // namespace

TEST_CASE("oracle backend answers every builtin example within its rets_spec") {
    auto reg = builtin_registry();
    OracleOptions opts;
    opts.fixtures.language_model["What is the capital of France?"] = "Paris";
    opts.fixtures.knowledge_base["Paris"] = "Paris is the capital of France.";
    opts.fixtures.math["2 + 2=?"] = "4";
    OracleBackend oracle(opts);
    for (const auto& spec : reg.specs()) {
        for (const auto& ex : spec.examples) {
            INFO(spec.name);
            auto ctx = scene_context();
            if (ex.name == "SolveMathEquation" && ex.arguments.at("query") != "2 + 2=?") {
                CHECK_THROWS_AS(oracle.execute(ex, ctx), ToolRuntimeError);
                continue;
            }
            auto obs = oracle.execute(ex, ctx);
            for (auto it = obs.payload.begin(); it != obs.payload.end(); ++it) CHECK(spec.has_ret(it.key()));
            for (const auto& ref : obs.new_images) CHECK(ctx.has(ref));
        }
    }
}

TEST_CASE("oracle backend observations") {
    OracleBackend oracle;
    auto ctx = scene_context();
    CHECK(oracle.execute({"Terminate", Value{{"answer", "8"}}}, ctx).payload == Value{{"answer", "8"}});
    CHECK(oracle.execute({"OCR", Value{{"image", "image-0"}}}, ctx).payload == Value{{"text", "x-2^3=0"}});
    CHECK(oracle.execute({"Calculate", Value{{"expression", "2 + 2"}}}, ctx).payload.at("result") == 4);
    CHECK(oracle.execute({"SolveMathEquation", Value{{"query", "x-2^3=0, what is x?"}}}, ctx).payload.at("result") ==
          "x = 8");
    CHECK_THROWS_AS(oracle.execute({"Calculate", Value{{"expression", "1/0"}}}, ctx), ToolRuntimeError);
    CHECK_THROWS_AS(oracle.execute({"QueryKnowledgeBase", Value{{"query", "?"}}}, ctx), ToolRuntimeError);

    auto loc = oracle.execute({"LocalizeObjects", Value{{"image", "image-0"}, {"objects", {"person"}}}}, ctx);
    CHECK(loc.payload.at("image") == "image-3");
    CHECK(loc.new_images == std::vector<std::string>{"image-3"});
    CHECK(loc.payload.at("regions").size() == 2);
    CHECK(loc.payload.at("regions")[1].at("label") == "person-2");

    auto depth = oracle.execute({"EstimateObjectDepth", Value{{"image", "image-0"}, {"object", "a black cat"}}}, ctx);
    CHECK(depth.payload.at("depth").is_number());
    auto missing = oracle.execute({"EstimateObjectDepth", Value{{"image", "image-0"}, {"object", "horse"}}}, ctx);
    CHECK(missing.payload.at("depth") == "Object not found.");

    auto sim = oracle.execute({"GetImageToTextsSimilarity", Value{{"image", "image-1"}, {"texts", {"a dog", "a cat indoor"}}}}, ctx);
    CHECK(sim.payload.at("best_text_index") == 1);
    CHECK(sim.payload.at("best_text") == "a cat indoor");
    auto t2i = oracle.execute({"GetTextToImagesSimilarity", Value{{"text", "street person"}, {"images", {"image-0", "image-1"}}}}, ctx);
    CHECK(t2i.payload.at("best_image_index") == 0);

    CHECK_THROWS_AS(oracle.execute({"OCR", Value{{"image", "image-9"}}}, ctx), ToolRuntimeError);
}

TEST_CASE("ZoomIn on a fresh context issues the next ref") {
    OracleBackend oracle;
    ExecutionContext ctx(0, "z");
    ImageHandle img;
    ctx.add_input(img);
    auto obs = oracle.execute({"ZoomIn", Value{{"image", "image-0"}, {"bbox", {0.4, 0.3, 0.5, 0.4}}, {"zoom_factor", 1.5}}}, ctx);
    CHECK(obs.payload == Value{{"image", "image-1"}});
    const auto& z = ctx.image("image-1");
    CHECK(z.width == static_cast<int>(crop_box({0.4, 0.3, 0.5, 0.4}, 1000, 1000).width() * 1.5));
}

TEST_CASE("oracle backend is deterministic per seed and position") {
    OracleBackend oracle;
    ActionCall call{"LocalizeObjects", Value{{"image", "image-0"}, {"objects", {"person", "cat"}}}};
    auto c1 = scene_context();
    auto c2 = scene_context();
    c1.set_position(2, 0);
    c2.set_position(2, 0);
    CHECK(canonical_dump(oracle.execute(call, c1).payload) == canonical_dump(oracle.execute(call, c2).payload));

    std::set<std::string> variants;
    for (std::size_t step = 0; step < 10; ++step) {
        auto c = scene_context();
        c.set_position(step, 0);
        variants.insert(canonical_dump(oracle.execute(call, c).payload.at("regions")));
    }
    CHECK(variants.size() > 1);
}

TEST_CASE("replay backend serves recordings in order") {
    ReplayBackend replay;
    ActionCall calc{"Calculate", Value{{"expression", "1+1"}}};
    replay.add(calc, Value{{"result", 2}});
    replay.add(calc, Value{{"result", 3}});
    ActionCall loc{"LocalizeObjects", Value{{"image", "image-0"}, {"objects", {"cat"}}}};
    replay.add(loc, Value{{"image", "image-1"}, {"regions", Value::array()}});
    ActionCall broken{"OCR", Value{{"image", "image-0"}}};
    replay.add(broken, Value{{"error", "boom"}});

    ExecutionContext ctx(0, "r");
    ctx.add_input(ImageHandle{});
    CHECK(replay.execute(calc, ctx).payload.at("result") == 2);
    CHECK(replay.execute(calc, ctx).payload.at("result") == 3);
    CHECK(replay.execute(calc, ctx).payload.at("result") == 3);

    auto obs = replay.execute(loc, ctx);
    CHECK(obs.new_images == std::vector<std::string>{"image-1"});
    CHECK(ctx.has("image-1"));
    CHECK(ctx.next_index() == 2);

    CHECK_THROWS_AS(replay.execute(broken, ctx), ToolRuntimeError);
    CHECK_THROWS_AS(replay.execute({"Calculate", Value{{"expression", "9"}}}, ctx), ToolRuntimeError);

    ExecutionContext fresh(0, "r");
    CHECK(replay.execute(calc, fresh).payload.at("result") == 2);

    auto back = ReplayBackend::from_json(Value::parse(replay.to_json().dump()));
    ExecutionContext again(0, "r");
    CHECK(back.execute(calc, again).payload.at("result") == 2);
}
