// SPDX-License-Identifier: Apache-2.0
#include <catch_amalgamated.hpp>

#include "cota/agent.hpp"

using namespace cota;

namespace {

QAExample eggs_example() {
    const auto shots = default_few_shots();
    return QAExample{"eggs", {"plate.jpg"}, shots[0].request, "A", AnswerKind::multiple_choice, "fixture"};
}

/// Counts calls and answers with a fixed payload.
class CountingBackend : public Backend {
public:
    int calls = 0;
    Observation execute(const ActionCall& call, ExecutionContext&) override {
        ++calls;
        Observation o;
        o.payload = Value{{"text", call.name}};
        return o;
    }
};

class DownBackend : public Backend {
public:
    int calls = 0;
    Observation execute(const ActionCall&, ExecutionContext&) override {
        ++calls;
        throw BackendUnavailable("connection refused");
    }
};

const std::string kOcr = R"({"thought": "read", "actions": [{"name": "OCR", "arguments": {"image": "image-0"}}]})";
const std::string kDone = R"({"thought": "done", "actions": [{"name": "Terminate", "arguments": {"answer": "B"}}]})";

} // namespace

TEST_CASE("replayed worked example terminates with the recorded answer") {
    const auto shots = default_few_shots();
    const Chain recorded = few_shot_chain(shots[0]);
    ReplayBackend replay;
    replay.add_chain(recorded);
    auto policy = ScriptedPolicy::from_chain(recorded);
    const Registry reg = builtin_registry();

    auto r = run_episode(policy, eggs_example(), replay, reg);
    CHECK(r.status == EpisodeStatus::terminated);
    REQUIRE(r.final_answer.has_value());
    CHECK(*r.final_answer == "A");
    CHECK(r.turns_used == 4);
    CHECK(r.chain.finalized());
    CHECK(r.chain.steps[0].observation->at("regions").size() == 2);
    CHECK(r.chain == recorded);
}

TEST_CASE("a policy that never terminates stops at the turn cap") {
    CountingBackend backend;
    FunctionPolicy loop([](const PolicyInput&) { return kOcr; });
    auto r = run_episode(loop, eggs_example(), backend, builtin_registry());
    CHECK(r.status == EpisodeStatus::max_turns_exceeded);
    CHECK(r.turns_used == 10);
    CHECK(backend.calls == 10);
    CHECK_FALSE(r.final_answer.has_value());

    RuntimeOptions opts;
    opts.limits.max_turns = 3;
    auto short_run = run_episode(loop, eggs_example(), backend, builtin_registry(), opts);
    CHECK(short_run.turns_used == 3);
}

TEST_CASE("malformed output fails the episode on that turn") {
    CountingBackend backend;
    FunctionPolicy bad([](const PolicyInput&) { return std::string("I think the answer is A"); });
    auto r = run_episode(bad, eggs_example(), backend, builtin_registry());
    CHECK(r.status == EpisodeStatus::parse_failed);
    CHECK(r.turns_used == 1);
    CHECK(backend.calls == 0);
    CHECK_FALSE(r.error.empty());
}

TEST_CASE("multi-action steps depend on the step mode") {
    const std::string two =
        R"({"thought": "", "actions": [{"name": "OCR", "arguments": {"image": "image-0"}}, {"name": "GetObjects", "arguments": {"image": "image-0"}}]})";
    ScriptedPolicy strict_policy({two, kDone});
    CountingBackend backend;
    auto strict = run_episode(strict_policy, eggs_example(), backend, builtin_registry());
    CHECK(strict.status == EpisodeStatus::parse_failed);
    CHECK(backend.calls == 0);

    ScriptedPolicy lenient_policy({two, kDone});
    RuntimeOptions opts;
    opts.mode = StepMode::data_gen;
    auto lenient = run_episode(lenient_policy, eggs_example(), backend, builtin_registry(), opts);
    CHECK(lenient.status == EpisodeStatus::terminated);
    CHECK(lenient.warnings == 1);
    CHECK(backend.calls == 2);
    CHECK(lenient.chain.steps[0].observation->at("text") == "GetObjects");

    const std::string with_term =
        R"({"thought": "", "actions": [{"name": "OCR", "arguments": {"image": "image-0"}}, {"name": "Terminate", "arguments": {"answer": "A"}}]})";
    ScriptedPolicy mixed({with_term});
    auto m = run_episode(mixed, eggs_example(), backend, builtin_registry(), opts);
    CHECK(m.status == EpisodeStatus::parse_failed);
}

TEST_CASE("nothing runs after Terminate") {
    ScriptedPolicy p({kOcr, kDone, kOcr, kOcr});
    CountingBackend backend;
    auto r = run_episode(p, eggs_example(), backend, builtin_registry());
    CHECK(r.status == EpisodeStatus::terminated);
    CHECK(r.turns_used == 2);
    CHECK(backend.calls == 1);
    CHECK(r.raw_steps.size() == 2);
}

TEST_CASE("invalid calls and tool errors become observations") {
    const std::string unknown = R"({"thought": "", "actions": [{"name": "Teleport", "arguments": {}}]})";
    const std::string bad_term = R"({"thought": "", "actions": [{"name": "Terminate", "arguments": {}}]})";
    const std::string crop =
        R"({"thought": "", "actions": [{"name": "Crop", "arguments": {"image": "image-0", "bbox": [0.1, 0.1, 0.05, 0.2]}}]})";
    ScriptedPolicy p({unknown, bad_term, crop, kDone});
    OracleBackend oracle;
    auto r = run_episode(p, eggs_example(), oracle, builtin_registry());
    CHECK(r.status == EpisodeStatus::terminated);
    REQUIRE(r.chain.steps.size() == 4);
    CHECK(r.chain.steps[0].observation->contains("error"));
    CHECK(r.chain.steps[1].observation->contains("error"));
    CHECK(r.chain.steps[2].observation->contains("error"));
    CHECK(*r.final_answer == "B");
}

TEST_CASE("an unreachable backend ends the episode after retries") {
    ScriptedPolicy p({kOcr, kDone});
    DownBackend down;
    RuntimeOptions opts;
    opts.backend_retries = 2;
    auto r = run_episode(p, eggs_example(), down, builtin_registry(), opts);
    CHECK(r.status == EpisodeStatus::tool_failed);
    CHECK(down.calls == 3);
    CHECK(r.turns_used == 1);
}

TEST_CASE("policy errors propagate") {
    ScriptedPolicy empty({});
    CountingBackend backend;
    CHECK_THROWS_AS(run_episode(empty, eggs_example(), backend, builtin_registry()), Error);
}

TEST_CASE("the policy sees the growing transcript") {
    std::vector<std::string> seen;
    FunctionPolicy spy([&](const PolicyInput& in) {
        seen.push_back(in.dialogue);
        CHECK(in.transcript().rfind("[BEGIN OF GOAL]", 0) == 0);
        return in.turn == 0 ? kOcr : kDone;
    });
    CountingBackend backend;
    auto r = run_episode(spy, eggs_example(), backend, builtin_registry());
    REQUIRE(seen.size() == 2);
    CHECK(seen[0] == "# USER REQUEST #:\n Given the input image image-0, " + eggs_example().question + "\n# RESPONSE #:");
    CHECK(seen[1] == seen[0] + "\n" + serialize_step(parse_step(kOcr)) + "\nOBSERVATION:\n{\"text\":\"OCR\"}");
    CHECK(render_dialogue(eggs_example(), r.chain) == r.transcript);
    CHECK(render_transcript(eggs_example(), r.chain, builtin_registry()) ==
          Runtime(builtin_registry(), backend).system_prompt() + "\n\n" + r.transcript);
}

TEST_CASE("episode logs round-trip") {
    ScriptedPolicy p({kOcr, kDone});
    CountingBackend backend;
    auto r = run_episode(p, eggs_example(), backend, builtin_registry());
    auto j = episode_to_json(r);
    auto back = episode_from_json(Value::parse(canonical_dump(j)));
    CHECK(canonical_dump(episode_to_json(back)) == canonical_dump(j));
    CHECK(back.chain == r.chain);
    CHECK(back.status == EpisodeStatus::terminated);

    // Replaying the stored raw steps against the stored observations reproduces the chain.
    ReplayBackend replay;
    replay.add_chain(back.chain);
    ScriptedPolicy again(back.raw_steps);
    auto re = run_episode(again, back.example, replay, builtin_registry());
    CHECK(canonical_dump(episode_to_json(re)) == canonical_dump(j));
}
