// SPDX-License-Identifier: Apache-2.0
#include <catch_amalgamated.hpp>

#include <random>

#include "cota/gen_model.hpp"
#include "cota/gen_program.hpp"
#include "oracles/scene_oracle.hpp"

using namespace cota;

namespace {

AnnotationStore random_store(std::uint64_t seed, int n) {
    std::mt19937_64 gen(seed);
    Value doc{{"images", Value::object()}};
    for (int i = 0; i < n; ++i) doc["images"]["image-" + std::to_string(i)] = oracle::random_scene(gen);
    AnnotationStore store;
    store.add_set("rand", doc);
    return store;
}

AnnotationStore fixed_store() {
    Value img0 = Value::parse(R"({
      "objects": [
        {"name": "dog", "attributes": ["brown"], "bbox": [0.1, 0.1, 0.3, 0.3], "depth": 2.0},
        {"name": "dog", "attributes": [], "bbox": [0.5, 0.5, 0.7, 0.7]},
        {"name": "dog", "attributes": ["brown"], "bbox": [0.6, 0.1, 0.8, 0.2]},
        {"name": "cat", "attributes": ["black"], "bbox": [0.7, 0.6, 0.9, 0.9], "depth": 5.0},
        {"name": "car", "attributes": ["red"], "bbox": [0.0, 0.4, 0.2, 0.6], "depth": 9.0}
      ]})");
    Value img1 = Value::parse(R"({"objects": [{"name": "cat", "attributes": [], "bbox": [0.2, 0.2, 0.4, 0.4]}]})");
    Value img2 = Value::parse(R"({"objects": [{"name": "car", "attributes": [], "bbox": [0.2, 0.2, 0.4, 0.4]}]})");
    AnnotationStore store;
    store.add_set("fx", Value{{"images", {{"image-0", img0}, {"image-1", img1}, {"image-2", img2}}}});
    return store;
}

std::vector<ImageAnnotation> anns_of(const AnnotationStore& store, const std::vector<std::string>& keys) {
    std::vector<ImageAnnotation> out;
    for (const auto& k : keys) out.push_back(*store.find(k)->annotation);
    return out;
}

} // namespace

TEST_CASE("sixteen templates with the table's question text") {
    CHECK(qa_templates().size() == 16);
    int multi = 0;
    for (const auto& t : qa_templates()) multi += t.multi_image;
    CHECK(multi == 6);
    CHECK(find_template("multi_count").question == "How many {object} are in in these images?");
    CHECK_THROWS_AS(find_template("nope"), Error);
}

TEST_CASE("every planned action has five thought templates") {
    for (const char* a : {"GetObjects", "LocalizeObjects", "EstimateObjectDepth", "EstimateRegionDepth", "Terminate"}) {
        const auto& list = thought_templates().at(a);
        std::set<std::string> distinct(list.begin(), list.end());
        CHECK(distinct.size() == 5);
    }
    CHECK(fill_slots("{a} and {a} {b}", {{"a", "x"}, {"b", "{a}"}}) == "x and x {a}");
}

TEST_CASE("compute_answer on a hand-built scene") {
    const auto store = fixed_store();
    const auto one = anns_of(store, {"fx/image-0"});
    const auto three = anns_of(store, {"fx/image-0", "fx/image-1", "fx/image-2"});
    auto ans = [&](const char* id, const std::vector<ImageAnnotation>& a, Slots s, bool permissive = false) {
        return compute_answer(find_template(id), a, s, AnswerOptions{permissive});
    };
    CHECK(ans("count", one, {"dog", {}, ""}) == "3");
    CHECK(ans("attribute_count", one, {"dog", {}, "brown"}) == "2");
    CHECK(ans("most_frequent", one, {"", {"cat", "dog"}, ""}) == "dog");
    CHECK(ans("least_frequent", one, {"", {"cat", "dog"}, ""}) == "cat");
    CHECK_THROWS_AS(ans("most_frequent", one, {"", {"cat", "car"}, ""}), UnanswerableInstance);
    CHECK(ans("most_frequent", one, {"", {"cat", "car"}, ""}, true) == "car");
    CHECK(ans("leftmost", one, {"", {"cat", "car"}, ""}) == "car");
    CHECK(ans("topmost", one, {"", {"dog", "cat"}, ""}) == "dog");
    CHECK(ans("closer", one, {"", {"cat", "car"}, ""}) == "cat");
    CHECK(ans("farther", one, {"", {"cat", "car"}, ""}) == "car");
    CHECK_THROWS_AS(ans("closer", one, {"", {"cat", "dog"}, ""}), UnanswerableInstance);
    CHECK_THROWS_AS(ans("count", one, {"tree", {}, ""}), UnanswerableInstance);
    CHECK(ans("which_has", three, {"dog", {}, ""}) == "image-0");
    CHECK_THROWS_AS(ans("which_has", three, {"cat", {}, ""}), UnanswerableInstance);
    CHECK(ans("multi_count", three, {"cat", {}, ""}) == "2");
    CHECK(ans("most_in_image", three, {"dog", {}, ""}) == "image-0");
    CHECK_THROWS_AS(ans("least_in_image", three, {"dog", {}, ""}), UnanswerableInstance);
    CHECK(ans("which_has_attribute", three, {"car", {}, "red"}) == "image-0");
    CHECK(ans("multi_attribute_count", three, {"cat", {}, "black"}) == "1");
}

TEST_CASE("questions fill slots verbatim") {
    CHECK(fill_question(find_template("count"), {"dog", {}, ""}) == "How many dog are there?");
    CHECK(fill_question(find_template("attribute_count"), {"apple", {}, "red"}) == "How many red apple are there?");
    CHECK(fill_question(find_template("leftmost"), {"", {"cat", "dog"}, ""}) ==
          "Among cat, dog, which is on the most left side?");
    auto ex = instantiate_qa(find_template("which_has"), {"a/0", "a/1", "a/2"}, {"cat", {}, ""}, "image-1", "q");
    CHECK(ex.source == "program:which_has");
    CHECK(ex.answer_kind == AnswerKind::short_answer);
    CHECK(user_request(ex) == "Given the input images image-0, image-1, image-2, Which image has cat?");
}

TEST_CASE("compute_answer agrees with a naive re-scan") {
    std::mt19937_64 gen(5150);
    const auto& vocab = oracle::vocabulary();
    const auto& attrs = oracle::attribute_pool();
    std::size_t answered = 0, compared = 0;
    for (int round = 0; round < 500; ++round) {
        std::vector<Value> scenes;
        const int n = 1 + static_cast<int>(gen() % 3);
        for (int i = 0; i < n; ++i) scenes.push_back(oracle::random_scene(gen));
        std::vector<ImageAnnotation> anns;
        for (const auto& s : scenes) anns.push_back(annotation_from_json(s));

        for (const auto& t : qa_templates()) {
            if (t.multi_image && n < 2) continue;
            Slots s;
            s.object = vocab[gen() % vocab.size()];
            s.attribute = attrs[gen() % attrs.size()];
            std::vector<std::string> names = vocab;
            std::shuffle(names.begin(), names.end(), gen);
            s.objects.assign(names.begin(), names.begin() + static_cast<long>(2 + gen() % (t.depth() ? 1 : 3)));
            const std::vector<ImageAnnotation> use = t.multi_image ? anns : std::vector<ImageAnnotation>{anns[0]};
            const std::vector<Value> raw = t.multi_image ? scenes : std::vector<Value>{scenes[0]};
            for (bool permissive : {false, true}) {
                std::optional<std::string> got;
                try {
                    got = compute_answer(t, use, s, AnswerOptions{permissive});
                } catch (const UnanswerableInstance&) {
                }
                const auto want = oracle::naive_answer(t.id, raw, s.object, s.objects, s.attribute, permissive);
                INFO(t.id << " round " << round);
                CHECK(got == want);
                ++compared;
                answered += got.has_value();
            }
        }
    }
    CHECK(compared > 10000);
    CHECK(answered > compared / 5);
}

TEST_CASE("synthesized chains follow the action plans") {
    const auto store = fixed_store();
    GenSpec spec;
    spec.seed = 3;
    spec.counts = {{"count", 2}, {"multi_count", 2}};
    spec.single_pool = {"fx/image-0"};
    auto recs = run_program_gen(spec, store);
    REQUIRE(recs.size() == 4);
    for (const auto& r : recs) {
        CHECK_FALSE(check_record(r).has_value());
        CHECK(r.generator == Generator::program);
        CHECK(r.chain->finalized());
        if (r.example.source == "program:count") {
            CHECK(r.chain->steps.size() == 2);
            CHECK(r.chain->steps[0].actions[0].name == "LocalizeObjects");
        } else {
            CHECK(r.chain->steps.size() == r.example.images.size() + 1);
            CHECK(r.chain->steps[0].thought.find("images") != std::string::npos);
        }
    }
}

TEST_CASE("depth templates use either route") {
    const auto store = random_store(77, 80);
    GenSpec spec;
    spec.seed = 11;
    spec.counts = {{"closer", 30}, {"farther", 30}};
    auto recs = run_program_gen(spec, store);
    REQUIRE(recs.size() == 60);
    std::size_t region = 0, object = 0;
    for (const auto& r : recs) {
        const auto& steps = r.chain->steps;
        if (steps[0].actions[0].name == "LocalizeObjects") {
            ++region;
            CHECK(steps.size() == 4);
            CHECK(steps[1].actions[0].name == "EstimateRegionDepth");
        } else {
            ++object;
            CHECK(steps.size() == 3);
            CHECK(steps[0].actions[0].name == "EstimateObjectDepth");
        }
    }
    CHECK(region > 10);
    CHECK(object > 10);
}

TEST_CASE("program records replay through the agent loop") {
    const auto store = random_store(2024, 60);
    GenSpec spec;
    spec.seed = 9;
    for (const auto& t : qa_templates()) spec.counts[t.id] = 6;
    auto recs = run_program_gen(spec, store);
    REQUIRE(recs.size() == 96);
    const Registry reg = builtin_registry();
    for (const auto& r : recs) {
        auto ep = replay_with_oracle(r, store, spec.seed, reg);
        INFO(r.example.id);
        CHECK(ep.status == EpisodeStatus::terminated);
        CHECK(verify_answer(ep.final_answer.value_or(""), r.example.groundtruth, r.example.answer_kind));
        CHECK(ep.chain == *r.chain);
    }
}

TEST_CASE("program generation is deterministic and worker-independent") {
    const auto store = random_store(31, 40);
    GenSpec spec;
    spec.seed = 7;
    spec.counts = {{"count", 5}, {"leftmost", 3}, {"which_has", 2}};
    auto dump = [](const std::vector<TraceRecord>& rs) {
        std::string s;
        for (const auto& r : rs) s += canonical_dump(record_to_json(r)) + "\n";
        return s;
    };
    spec.workers = 1;
    const auto a = dump(run_program_gen(spec, store));
    spec.workers = 4;
    const auto b = dump(run_program_gen(spec, store));
    CHECK(a == b);
    spec.seed = 8;
    CHECK(dump(run_program_gen(spec, store)) != a);
}

TEST_CASE("program generation reports exhausted annotations") {
    AnnotationStore empty;
    GenSpec spec;
    spec.counts = {{"count", 1}};
    CHECK_THROWS_AS(run_program_gen(spec, empty), InsufficientAnnotations);

    const auto store = fixed_store();
    spec.counts = {{"count", 50}};
    spec.single_pool = {"fx/image-0"};
    CHECK_THROWS_AS(run_program_gen(spec, store), InsufficientAnnotations);
}

TEST_CASE("thought templates are sampled evenly") {
    const auto store = random_store(404, 500);
    GenSpec spec;
    spec.seed = 1;
    spec.counts = {{"count", 400}, {"closer", 150}, {"multi_count", 200}};
    auto recs = run_program_gen(spec, store);
    std::map<std::string, std::map<std::string, std::size_t>> freq;
    for (const auto& r : recs) {
        for (const auto& s : r.chain->steps) ++freq[s.actions[0].name][s.thought];
    }
    for (const auto& [action, hist] : freq) {
        std::size_t total = 0;
        std::map<std::size_t, std::size_t> per_template;
        const auto& pats = thought_templates().at(action);
        for (const auto& [text, n] : hist) {
            total += n;
            // Attribute each thought to the pattern whose fixed prefix it starts with.
            for (std::size_t k = 0; k < 5; ++k) {
                const std::string prefix = pats[k].substr(0, pats[k].find('{'));
                if (text.rfind(prefix, 0) == 0 && (prefix.size() > 0)) {
                    per_template[k] += n;
                    break;
                }
            }
        }
        INFO(action);
        REQUIRE(per_template.size() == 5);
        for (const auto& [k, n] : per_template) {
            const double share = static_cast<double>(n) / static_cast<double>(total);
            CHECK(share >= 0.10);
            CHECK(share <= 0.30);
        }
    }
}
