// SPDX-License-Identifier: Apache-2.0
#include <catch_amalgamated.hpp>

#include <algorithm>
#include <fstream>
#include <sstream>

#include "cota/registry.hpp"

using namespace cota;
using Kind = ValidationIssue::Kind;

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::size_t count_of(const std::string& hay, const std::string& needle) {
    std::size_t n = 0;
    for (auto pos = hay.find(needle); pos != std::string::npos; pos = hay.find(needle, pos + needle.size())) ++n;
    return n;
}

} // namespace

TEST_CASE("builtin registry holds the 17 actions") {
    auto reg = builtin_registry();
    REQUIRE(reg.size() == 17);
    auto names = reg.names();
    std::sort(names.begin(), names.end());
    std::vector<std::string> expected{"Calculate",
                                      "Crop",
                                      "DetectFaces",
                                      "EstimateObjectDepth",
                                      "EstimateRegionDepth",
                                      "GetImageToImagesSimilarity",
                                      "GetImageToTextsSimilarity",
                                      "GetObjects",
                                      "GetTextToImagesSimilarity",
                                      "LocalizeObjects",
                                      "OCR",
                                      "QueryKnowledgeBase",
                                      "QueryLanguageModel",
                                      "SolveMathEquation",
                                      "Terminate",
                                      "VisualizeRegionsOnImage",
                                      "ZoomIn"};
    CHECK(names == expected);

    REQUIRE(reg.find("Calculate"));
    CHECK(reg.find("Calculate")->description == "Calculate a math expression.");
    REQUIRE(reg.find("ZoomIn")->arg("zoom_factor"));
    CHECK(reg.find("ZoomIn")->arg("zoom_factor")->description.find("greater than 1") != std::string::npos);
    CHECK(reg.find("VisualizeRegionsOnImage")->internal);
    CHECK_FALSE(reg.find("VisualizeRegionsOnImage")->arg("color")->required);
}

TEST_CASE("every builtin example validates") {
    auto reg = builtin_registry();
    for (const auto& spec : reg.specs()) {
        CHECK_FALSE(spec.examples.empty());
        for (const auto& ex : spec.examples) {
            INFO(spec.name);
            CHECK(validate_call(reg, ex).ok());
        }
    }
}

TEST_CASE("validate_call reports problems without throwing") {
    auto reg = builtin_registry();
    CHECK(validate_call(reg, {"Terminate", Value{{"answer", "yes"}}}).ok());
    CHECK(validate_call(reg, {"Terminate", Value{{"answer", 8}}}).ok());

    auto crop = validate_call(reg, {"Crop", Value{{"image", "image-0"}, {"bbox", {0.2, 0.3, 1.4, 0.9}}}});
    CHECK(crop.has(Kind::invalid_value, "bbox"));
    CHECK(crop.message().find("between 0 and 1") != std::string::npos);

    CHECK(validate_call(reg, {"FlyToMoon", Value::object()}).has(Kind::unknown_action));
    CHECK(validate_call(reg, {"OCR", Value::object()}).has(Kind::missing_argument, "image"));
    CHECK(validate_call(reg, {"OCR", Value{{"image", "image-0"}, {"lang", "en"}}}).has(Kind::unknown_argument, "lang"));
    CHECK(validate_call(reg, {"OCR", Value{{"image", 3}}}).has(Kind::invalid_value, "image"));
    CHECK(validate_call(reg, {"ZoomIn", Value{{"image", "image-0"}, {"bbox", {0.1, 0.1, 0.2, 0.2}}, {"zoom_factor", "2"}}})
              .has(Kind::invalid_value, "zoom_factor"));
    CHECK(validate_call(reg, {"Crop", Value{{"image", "image-0"}, {"bbox", {0.5, 0.1, 0.2, 0.2}}}})
              .has(Kind::invalid_value, "bbox"));
    CHECK(validate_call(reg, {"Crop", Value{{"image", "image-0"}, {"bbox", {0.5, 0.1, 0.7}}}}).has(Kind::invalid_value));
    CHECK(validate_call(reg, {"LocalizeObjects", Value{{"image", "image-0"}, {"objects", {"cat", 3}}}})
              .has(Kind::invalid_value, "objects"));
    CHECK(validate_call(reg, {"OCR", Value::array()}).has(Kind::invalid_value, "arguments"));
}

TEST_CASE("validate_call leaves the call untouched") {
    auto reg = builtin_registry();
    ActionCall call{"Crop", Value{{"image", "image-0"}, {"bbox", {0.2, 0.3, 1.4, 0.9}}, {"zz", 1}}};
    const auto before = call;
    (void)validate_call(reg, call);
    CHECK(call == before);
}

TEST_CASE("registry rejects duplicate names") {
    Registry reg;
    reg.add(ActionSpec{"A", "first", {}, {}, {}, false});
    CHECK_THROWS_AS(reg.add(ActionSpec{"A", "again", {}, {}, {}, false}), Error);
}

TEST_CASE("system prompt reproduces the reference listing") {
    auto expected = read_file(std::string(COTA_TEST_DATA) + "/generation_prompt.txt");
    REQUIRE_FALSE(expected.empty());
    if (expected.back() == '\n') expected.pop_back();
    auto prompt = render_system_prompt(builtin_registry(), default_few_shots());
    CHECK(prompt == expected);
    CHECK(prompt.rfind("[BEGIN OF GOAL]", 0) == 0);
    CHECK(prompt.find("[END OF EXAMPLES]") != std::string::npos);
    CHECK(prompt.find("VisualizeRegionsOnImage") == std::string::npos);
    CHECK(render_system_prompt(builtin_registry(), default_few_shots()) == prompt);
}

TEST_CASE("system prompt variants") {
    auto empty = render_system_prompt(builtin_registry(), {});
    auto begin = empty.find("[BEGIN OF EXAMPLES]");
    REQUIRE(begin != std::string::npos);
    CHECK(empty.substr(begin) == "[BEGIN OF EXAMPLES]:\n[END OF EXAMPLES]");
    CHECK(count_of(empty, "Name: ") == 16);

    const auto builtin = builtin_registry();
    Registry one;
    one.add(*builtin.find("Terminate"));
    auto single = render_system_prompt(one, {});
    CHECK(count_of(single, "Name: ") == 1);
    CHECK(single.find("must always call Terminate") != std::string::npos);

    CHECK_THROWS_AS(render_system_prompt(Registry{}, {}), EmptyRegistry);
    Registry internal_only;
    internal_only.add(*builtin.find("VisualizeRegionsOnImage"));
    CHECK_THROWS_AS(render_system_prompt(internal_only, {}), EmptyRegistry);
}

TEST_CASE("registry export round-trips") {
    auto reg = builtin_registry();
    auto doc = registry_to_json(reg);
    REQUIRE(doc.at("specs").size() == 17);
    auto back = registry_from_json(Value::parse(doc.dump()));
    CHECK(canonical_dump(registry_to_json(back)) == canonical_dump(doc));
    CHECK(render_system_prompt(back, default_few_shots()) == render_system_prompt(reg, default_few_shots()));
}
