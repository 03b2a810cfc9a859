// SPDX-License-Identifier: Apache-2.0
#pragma once

// The episode loop: render, ask the policy for a step, parse, validate,
// execute, record the observation, stop on Terminate or at the turn cap.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cota/backend.hpp"
#include "cota/error.hpp"
#include "cota/json_text.hpp"
#include "cota/registry.hpp"
#include "cota/scene.hpp"
#include "cota/trace.hpp"

namespace cota {

struct EpisodeLimits {
    int max_turns = 10;
    /// Decoding hints forwarded to remote policies; not enforceable here.
    int max_new_tokens = 2000;
    double temperature = 0.0;
};

enum class StepMode {
    /// More than one action in a step fails the episode before anything runs.
    strict,
    /// Extra actions run in order and only count a warning; the last observation is kept.
    data_gen,
};

enum class EpisodeStatus { terminated, max_turns_exceeded, parse_failed, tool_failed };

inline std::string to_string(EpisodeStatus s) {
    switch (s) {
    case EpisodeStatus::terminated: return "terminated";
    case EpisodeStatus::max_turns_exceeded: return "max_turns_exceeded";
    case EpisodeStatus::parse_failed: return "parse_failed";
    case EpisodeStatus::tool_failed: return "tool_failed";
    }
    return "unknown";
}

inline std::optional<EpisodeStatus> parse_episode_status(std::string_view s) {
    if (s == "terminated") return EpisodeStatus::terminated;
    if (s == "max_turns_exceeded") return EpisodeStatus::max_turns_exceeded;
    if (s == "parse_failed") return EpisodeStatus::parse_failed;
    if (s == "tool_failed") return EpisodeStatus::tool_failed;
    return std::nullopt;
}

struct EpisodeResult {
    QAExample example;
    Chain chain;
    EpisodeStatus status = EpisodeStatus::max_turns_exceeded;
    std::optional<std::string> final_answer;
    int turns_used = 0;
    /// Policy output per turn, verbatim.
    std::vector<std::string> raw_steps;
    /// Request block plus every step and observation; the system prompt is omitted.
    std::string transcript;
    int warnings = 0;
    std::string error;
    EpisodeLimits limits;
};

// ---------------------------------------------------------------------------
// Policies

struct PolicyInput {
    const QAExample& example;
    const std::string& system_prompt;
    /// Everything after the system prompt: the request and the steps so far.
    const std::string& dialogue;
    std::size_t turn;
    const EpisodeLimits& limits;

    std::string transcript() const { return system_prompt + "\n\n" + dialogue; }
};

class Policy {
public:
    virtual ~Policy() = default;
    /// Raw text of the next step. Exceptions propagate out of run_episode.
    virtual std::string next_step(const PolicyInput& input) = 0;
};

/// Replays a fixed list of step texts; asking past the end is an error.
class ScriptedPolicy : public Policy {
public:
    explicit ScriptedPolicy(std::vector<std::string> steps) : steps_(std::move(steps)) {}

    /// Steps of a stored chain in their canonical text form.
    static ScriptedPolicy from_chain(const Chain& chain) {
        std::vector<std::string> steps;
        for (const auto& s : chain.steps) steps.push_back(serialize_step(s));
        return ScriptedPolicy(std::move(steps));
    }

    std::string next_step(const PolicyInput& input) override {
        if (input.turn >= steps_.size()) throw Error("scripted policy has no step " + std::to_string(input.turn));
        return steps_[input.turn];
    }

private:
    std::vector<std::string> steps_;
};

/// Produces each step from a function of the input (fuzzing, loops, fakes).
class FunctionPolicy : public Policy {
public:
    explicit FunctionPolicy(std::function<std::string(const PolicyInput&)> fn) : fn_(std::move(fn)) {}
    std::string next_step(const PolicyInput& input) override { return fn_(input); }

private:
    std::function<std::string(const PolicyInput&)> fn_;
};

// ---------------------------------------------------------------------------
// Transcript

/// "Given the input image image-0, <question>" with the refs of every input image.
inline std::string user_request(const QAExample& example) {
    if (example.images.empty()) return example.question;
    std::string refs;
    for (std::size_t i = 0; i < example.images.size(); ++i) {
        if (i) refs += ", ";
        refs += image_ref(i);
    }
    return std::string("Given the input ") + (example.images.size() == 1 ? "image " : "images ") + refs + ", " +
           example.question;
}

inline void append_step(std::string& dialogue, const Step& step) {
    dialogue += "\n";
    dialogue += serialize_step(step);
    if (step.observation) {
        dialogue += "\nOBSERVATION:\n";
        dialogue += canonical_dump(*step.observation);
    }
}

inline std::string render_dialogue(const QAExample& example, const Chain& chain) {
    std::string out = render_request(user_request(example));
    for (const auto& s : chain.steps) append_step(out, s);
    return out;
}

/// Full prompt text: system prompt, request block, and the steps with observations.
inline std::string render_transcript(const QAExample& example, const Chain& chain, const Registry& registry,
                                     const std::vector<FewShotExample>& few_shots = default_few_shots()) {
    return render_system_prompt(registry, few_shots) + "\n\n" + render_dialogue(example, chain);
}

// ---------------------------------------------------------------------------
// Runtime

struct RuntimeOptions {
    EpisodeLimits limits;
    StepMode mode = StepMode::strict;
    /// Extra attempts after BackendUnavailable before the episode ends as tool_failed.
    int backend_retries = 2;
    std::uint64_t seed = 0;
    const AnnotationStore* store = nullptr;
};

class Runtime {
public:
    Runtime(const Registry& registry, Backend& backend, RuntimeOptions options = {},
            const std::vector<FewShotExample>& few_shots = default_few_shots())
        : registry_(registry),
          backend_(backend),
          opts_(options),
          system_prompt_(render_system_prompt(registry, few_shots)) {}

    const std::string& system_prompt() const { return system_prompt_; }
    const RuntimeOptions& options() const { return opts_; }

    EpisodeResult run(Policy& policy, const QAExample& example) const {
        ExecutionContext ctx = make_context(example, opts_.store, opts_.seed);
        return run(policy, example, ctx);
    }

    EpisodeResult run(Policy& policy, const QAExample& example, ExecutionContext& ctx) const {
        EpisodeResult r;
        r.example = example;
        r.limits = opts_.limits;
        r.transcript = render_request(user_request(example));
        const int cap = std::max(0, opts_.limits.max_turns);

        for (int turn = 0; turn < cap; ++turn) {
            const PolicyInput input{example, system_prompt_, r.transcript, static_cast<std::size_t>(turn), opts_.limits};
            std::string raw = policy.next_step(input);
            r.raw_steps.push_back(raw);
            r.turns_used = turn + 1;

            Step step;
            try {
                step = parse_step(raw);
            } catch (const MalformedStep& e) {
                r.status = EpisodeStatus::parse_failed;
                r.error = e.what();
                return r;
            }

            if (step.actions.size() > 1) {
                const bool has_terminate = std::any_of(step.actions.begin(), step.actions.end(),
                                                       [](const ActionCall& a) { return a.name == kTerminate; });
                if (opts_.mode == StepMode::strict || has_terminate) {
                    r.status = EpisodeStatus::parse_failed;
                    r.error = has_terminate ? "Terminate must be the only action in its step"
                                            : "step calls more than one action";
                    return r;
                }
                ++r.warnings;
            }

            bool terminated = false;
            for (std::size_t k = 0; k < step.actions.size(); ++k) {
                ctx.set_position(static_cast<std::size_t>(turn), k);
                const ActionCall& call = step.actions[k];
                auto outcome = execute_one(call, ctx);
                if (!outcome) {
                    r.status = EpisodeStatus::tool_failed;
                    r.error = last_error_;
                    step.observation.reset();
                    r.chain.steps.push_back(std::move(step));
                    append_step(r.transcript, r.chain.steps.back());
                    return r;
                }
                step.observation = std::move(outcome->payload);
                terminated = call.name == kTerminate && step.observation->contains("answer") &&
                             !step.observation->contains("error");
            }

            r.chain.steps.push_back(std::move(step));
            append_step(r.transcript, r.chain.steps.back());
            if (terminated) {
                r.status = EpisodeStatus::terminated;
                r.final_answer = value_text(r.chain.steps.back().observation->at("answer"));
                return r;
            }
        }
        r.status = EpisodeStatus::max_turns_exceeded;
        return r;
    }

private:
    /// nullopt when the backend stayed unavailable through every retry.
    std::optional<Observation> execute_one(const ActionCall& call, ExecutionContext& ctx) const {
        auto report = validate_call(registry_, call);
        if (!report.ok()) return error_observation(report.message());
        if (call.name == kTerminate) {
            Observation o;
            o.payload = Value{{"answer", call.arguments.at("answer")}};
            return o;
        }
        for (int attempt = 0;; ++attempt) {
            try {
                return backend_.execute(call, ctx);
            } catch (const BackendUnavailable& e) {
                if (attempt >= opts_.backend_retries) {
                    last_error_ = e.what();
                    return std::nullopt;
                }
            } catch (const Error& e) {
                return error_observation(e.what());
            } catch (const nlohmann::json::exception& e) {
                return error_observation(e.what());
            }
        }
    }

    static Observation error_observation(const std::string& message) {
        Observation o;
        o.payload = Value{{"error", message}};
        return o;
    }

    const Registry& registry_;
    Backend& backend_;
    RuntimeOptions opts_;
    std::string system_prompt_;
    static inline thread_local std::string last_error_;
};

/// The stored chain of a worked prompt example; Terminate gets its {"answer"} observation.
inline Chain few_shot_chain(const FewShotExample& shot) {
    Chain chain;
    for (const auto& turn : shot.turns) {
        Step s = step_from_json(turn.response, false);
        if (turn.observation) {
            s.observation = *turn.observation;
        } else if (s.actions.size() == 1 && s.actions.front().name == kTerminate) {
            s.observation = Value{{"answer", s.actions.front().arguments.at("answer")}};
        }
        chain.steps.push_back(std::move(s));
    }
    return chain;
}

inline EpisodeResult run_episode(Policy& policy, const QAExample& example, Backend& backend, const Registry& registry,
                                 const RuntimeOptions& options = {}) {
    return Runtime(registry, backend, options).run(policy, example);
}

// ---------------------------------------------------------------------------
// Episode logs

inline Value episode_to_json(const EpisodeResult& r) {
    Value v = Value::object();
    v["id"] = r.example.id;
    v["example"] = example_to_json(r.example);
    v["status"] = to_string(r.status);
    v["final_answer"] = r.final_answer ? Value(*r.final_answer) : Value(nullptr);
    v["turns_used"] = r.turns_used;
    Value steps = Value::array();
    for (const auto& s : r.chain.steps) steps.push_back(step_to_json(s, true));
    v["chain"] = std::move(steps);
    v["raw_steps"] = r.raw_steps;
    v["transcript"] = r.transcript;
    v["warnings"] = r.warnings;
    v["error"] = r.error;
    v["decoding"] = Value{{"max_turns", r.limits.max_turns},
                          {"max_new_tokens", r.limits.max_new_tokens},
                          {"temperature", r.limits.temperature}};
    return v;
}

inline EpisodeResult episode_from_json(const Value& v, std::size_t line = 0) {
    EpisodeResult r;
    try {
        r.example = example_from_json(v.at("example"), line);
        auto st = parse_episode_status(v.at("status").get<std::string>());
        if (!st) throw SchemaViolation(line, "status", "unknown episode status");
        r.status = *st;
        if (v.contains("final_answer") && !v.at("final_answer").is_null()) {
            r.final_answer = value_text(v.at("final_answer"));
        }
        r.turns_used = v.value("turns_used", 0);
        for (const auto& s : v.value("chain", Value::array())) r.chain.steps.push_back(step_from_json(s, true));
        r.raw_steps = v.value("raw_steps", std::vector<std::string>{});
        r.transcript = v.value("transcript", std::string());
        r.warnings = v.value("warnings", 0);
        r.error = v.value("error", std::string());
        if (v.contains("decoding")) {
            const auto& d = v.at("decoding");
            r.limits.max_turns = d.value("max_turns", r.limits.max_turns);
            r.limits.max_new_tokens = d.value("max_new_tokens", r.limits.max_new_tokens);
            r.limits.temperature = d.value("temperature", r.limits.temperature);
        }
    } catch (const SchemaViolation&) {
        throw;
    } catch (const std::exception& e) {
        throw SchemaViolation(line, "episode", e.what());
    }
    return r;
}

} // namespace cota
