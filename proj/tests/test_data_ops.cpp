// SPDX-License-Identifier: Apache-2.0
#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "cota/data_ops.hpp"

using namespace cota;
namespace fs = std::filesystem;

namespace {

SourceProfile profile(double cota_pos, double cota_neg, double cot_pos, double cot_neg, std::size_t n = 100) {
    SourceProfile p;
    p.source = "s";
    p.cota_pos = cota_pos;
    p.cota_neg = cota_neg;
    p.cot_pos = cot_pos;
    p.cot_neg = cot_neg;
    p.samples = n;
    return p;
}

TraceRecord record(const std::string& id, Format f, const std::string& source, Generator g = Generator::model,
                   std::size_t images = 1, std::size_t steps = 2) {
    TraceRecord r;
    r.example = QAExample{id, std::vector<std::string>(images, "img.jpg"), "q?", "1", AnswerKind::short_answer, source};
    r.format = f;
    r.generator = g;
    if (f != Format::DA) {
        Chain c;
        for (std::size_t i = 0; i + 1 < steps; ++i) {
            if (f == Format::CoT) {
                c.steps.push_back(Step{"think", {}, std::nullopt});
            } else {
                c.steps.push_back(Step{"ocr", {ActionCall{"OCR", Value{{"image", "image-0"}}}}, Value{{"text", "1"}}});
            }
        }
        c.steps.push_back(Step{"done", {ActionCall{"Terminate", Value{{"answer", "1"}}}}, Value{{"answer", "1"}}});
        r.chain = std::move(c);
        r.polarity = Polarity::pos;
    }
    return r;
}

fs::path temp_path(const std::string& name) {
    auto dir = fs::temp_directory_path() / "cota_tests";
    fs::create_directories(dir);
    return dir / name;
}

} // namespace

TEST_CASE("classify_source rule branches and boundary") {
    CHECK(classify_source(profile(30, 0, 45, 0)) == SourceClass::useless);
    CHECK(classify_source(profile(20, 50, 0, 0)) == SourceClass::useless);
    CHECK(classify_source(profile(60, 10, 20, 0)) == SourceClass::useful);
    CHECK(classify_source(profile(30, 0, 40, 0)) == SourceClass::useful);
    CHECK(classify_source(profile(30, 40, 0, 0)) == SourceClass::useful);
    CHECK(classify_source(profile(30, 0, 40.01, 0)) == SourceClass::useless);
    CHECK_THROWS_AS(classify_source(profile(1, 1, 1, 1, 49)), InsufficientSamples);
    ClassifyOptions lenient;
    lenient.min_samples = 10;
    CHECK(classify_source(profile(30, 0, 45, 0, 10), lenient) == SourceClass::useless);
}

TEST_CASE("classification from counts is scale invariant") {
    for (std::size_t k : {1u, 3u, 10u, 1000u}) {
        OutcomeCounts c;
        c.cota_pos = 35 * k;
        c.cot_pos = 45 * k;
        c.cota_neg = 10 * k;
        c.cot_neg = 5 * k;
        c.parse_failures = 5 * k;
        // cot_pos - cota_pos is exactly 10 points: still useful at every scale.
        CHECK(classify_source(SourceProfile::from_counts("s", c)) == SourceClass::useful);
        c.cot_pos += k;
        c.parse_failures -= k;
        CHECK(classify_source(SourceProfile::from_counts("s", c)) == SourceClass::useless);
    }
}

TEST_CASE("mixing sizes follow round(r * n)") {
    CHECK(mix_count(0.1, 293000) == 29300);
    CHECK(mix_count(0.25, 293000) == 73250);
    CHECK(mix_count(0.5, 293000) == 146500);
    CHECK(mix_count(1.0, 293000) == 293000);
    CHECK(mix_count(0.5, 3) == 2);
    CHECK(mix_count(0.0, 10) == 0);
}

TEST_CASE("apply_recipe filters, mixes and shuffles deterministically") {
    std::vector<TraceRecord> model, program;
    for (int i = 0; i < 40; ++i) {
        const Format f = i % 3 == 0 ? Format::CoTA : (i % 3 == 1 ? Format::CoT : Format::DA);
        model.push_back(record("m" + std::to_string(i), f, i % 2 ? "good" : "bad"));
    }
    for (int i = 0; i < 30; ++i) program.push_back(record("p" + std::to_string(i), Format::CoTA, "program:count", Generator::program));

    OutcomeCounts good, bad;
    good.cota_pos = 60;
    bad.cota_pos = 10;
    bad.cot_pos = 50;
    std::map<std::string, SourceProfile> profiles{{"good", SourceProfile::from_counts("good", good)},
                                                  {"bad", SourceProfile::from_counts("bad", bad)}};

    RecipeConfig recipe;
    recipe.formats = {Format::CoTA, Format::CoT};
    recipe.source_rule = SourceRule::action_useful_only;
    recipe.mix_ratio = 0.5;
    recipe.seed = 42;
    auto out = apply_recipe(model, program, recipe, profiles);

    std::size_t from_model = 0, from_program = 0;
    std::set<std::string> ids;
    for (const auto& r : out) {
        ids.insert(r.example.id);
        if (r.generator == Generator::program) {
            ++from_program;
            continue;
        }
        ++from_model;
        CHECK(r.example.source == "good");
        CHECK(r.format != Format::DA);
    }
    CHECK(from_model == 14);
    CHECK(from_program == mix_count(0.5, 14));
    CHECK(ids.size() == out.size());

    auto again = apply_recipe(model, program, recipe, profiles);
    REQUIRE(again.size() == out.size());
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(again[i].example.id == out[i].example.id);

    recipe.mix_ratio = 3.0;
    CHECK_THROWS_AS(apply_recipe(model, program, recipe, profiles), ProgramPoolTooSmall);

    recipe.mix_ratio = 0;
    recipe.source_rule = SourceRule::explicit_list;
    recipe.sources = {"bad"};
    auto only_bad = apply_recipe(model, program, recipe, profiles);
    for (const auto& r : only_bad) CHECK(r.example.source == "bad");

    recipe.source_rule = SourceRule::action_useful_only;
    CHECK_THROWS_AS(apply_recipe(model, program, recipe, {}), InsufficientSamples);
}

TEST_CASE("sampling without replacement draws distinct indices") {
    Rng rng(5);
    auto idx = sample_without_replacement(1000, 400, rng);
    std::set<std::size_t> s(idx.begin(), idx.end());
    CHECK(s.size() == 400);
    CHECK(*s.rbegin() < 1000);
    CHECK_THROWS_AS(sample_without_replacement(3, 4, rng), ProgramPoolTooSmall);
}

TEST_CASE("compute_stats") {
    std::vector<TraceRecord> rs{record("a", Format::CoTA, "x", Generator::model, 1, 2),
                                record("b", Format::CoTA, "x", Generator::model, 3, 5),
                                record("c", Format::DA, "y", Generator::model, 2)};
    auto s = compute_stats(rs);
    CHECK(s.total.instances == 3);
    CHECK(s.per_source.at("x").avg_images() == 2.0);
    CHECK(s.per_source.at("x").max_turns == 5);
    CHECK(s.per_source.at("y").avg_turns() == 1.0);
    CHECK(s.total.max_images == 3);
    CHECK(s.total.avg_turns() == Catch::Approx(2.7));

    auto empty = compute_stats({});
    CHECK(empty.total.instances == 0);
    CHECK(empty.total.avg_images() == 0.0);
    CHECK(empty.to_json().at("total").at("avg_turn") == 0.0);
}

TEST_CASE("JSONL round-trip and schema errors") {
    std::vector<TraceRecord> rs;
    for (int i = 0; i < 1000; ++i) {
        rs.push_back(record("r" + std::to_string(i), i % 3 == 0 ? Format::DA : (i % 3 == 1 ? Format::CoT : Format::CoTA),
                            "src" + std::to_string(i % 4), Generator::model, 1 + i % 3, 2 + i % 4));
    }
    const auto path = temp_path("round.jsonl");
    write_jsonl(path, rs);
    auto back = read_jsonl(path);
    CHECK(back == rs);

    const auto bad = temp_path("bad.jsonl");
    {
        std::ofstream out(bad);
        auto j = record_to_json(rs[0]);
        out << canonical_dump(j) << "\n";
        j.erase("format");
        out << canonical_dump(j) << "\n";
    }
    try {
        read_jsonl(bad);
        FAIL("expected SchemaViolation");
    } catch (const SchemaViolation& e) {
        CHECK(e.line() == 2);
        CHECK(e.field() == "format");
    }

    const auto empty = temp_path("empty.jsonl");
    { std::ofstream out(empty); }
    CHECK(read_jsonl(empty).empty());

    const auto garbage = temp_path("garbage.jsonl");
    { std::ofstream out(garbage); out << "\n{not json\n"; }
    try {
        read_jsonl(garbage);
        FAIL("expected SchemaViolation");
    } catch (const SchemaViolation& e) {
        CHECK(e.line() == 2);
    }
    CHECK_THROWS_AS(read_jsonl(temp_path("missing.jsonl")), Error);
}
