// SPDX-License-Identifier: Apache-2.0
#pragma once

// Benchmark evaluation: answer extraction, pluggable judges, per-benchmark
// accuracy and deltas against a baseline report.

#include <cctype>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <regex>
#include <set>
#include <string>
#include <vector>

#include "cota/agent.hpp"
#include "cota/gen_model.hpp"
#include "cota/judge_prompts.hpp"
#include "cota/parallel.hpp"

namespace cota {

/// The Terminate answer as text; empty for episodes that never terminated.
inline std::string extract_answer(const EpisodeResult& result) {
    if (result.status != EpisodeStatus::terminated) return "";
    if (auto a = result.chain.terminate_answer()) return value_text(*a);
    return result.final_answer.value_or("");
}

// ---------------------------------------------------------------------------
// Judges

struct JudgeQuery {
    std::string question;
    std::string groundtruth;
    std::string prediction;
    /// Lets fixture-backed judges key their replies.
    std::string example_id;
};

class Judge {
public:
    virtual ~Judge() = default;
    virtual std::string name() const = 0;
    /// A score in [0, 1]. Throws JudgeUnavailable when no score can be had.
    virtual double score(const JudgeQuery& q) = 0;

    double score(const std::string& question, const std::string& groundtruth, const std::string& prediction) {
        return score(JudgeQuery{question, groundtruth, prediction, ""});
    }
};

/// 1 when the normalized answers agree (numbers within relative 1e-6), else 0.
class ExactJudge : public Judge {
public:
    using Judge::score;
    std::string name() const override { return "exact"; }
    double score(const JudgeQuery& q) override {
        return verify_answer(q.prediction, q.groundtruth, AnswerKind::short_answer) ? 1.0 : 0.0;
    }
};

namespace detail {

inline std::vector<std::string> split_marker(const std::string& s, const std::string& marker) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = s.find(marker, start);
        out.push_back(trim(s.substr(start, pos == std::string::npos ? std::string::npos : pos - start)));
        if (pos == std::string::npos) break;
        start = pos + marker.size();
    }
    return out;
}

inline bool word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '.'; }

/// `needle` occurs in `hay` without running into neighbouring letters or digits.
inline bool contains_term(const std::string& hay, const std::string& needle) {
    if (needle.empty()) return false;
    for (auto pos = hay.find(needle); pos != std::string::npos; pos = hay.find(needle, pos + 1)) {
        const bool left = pos == 0 || !word_char(hay[pos - 1]) || !word_char(needle.front());
        const std::size_t end = pos + needle.size();
        const bool right = end == hay.size() || !word_char(hay[end]) || !word_char(needle.back());
        if (left && right) return true;
    }
    return false;
}

} // namespace detail

/// Offline stand-in for the <AND>/<OR> rubric: with <AND>, the share of
/// groundtruth elements present in the prediction; with <OR>, 1 if any is.
/// Plain groundtruths fall back to exact matching.
class RubricJudge : public Judge {
public:
    using Judge::score;
    std::string name() const override { return "rubric"; }
    double score(const JudgeQuery& q) override {
        const std::string pred = normalize_answer(q.prediction);
        if (q.groundtruth.find("<AND>") != std::string::npos) {
            const auto parts = detail::split_marker(q.groundtruth, "<AND>");
            std::size_t hit = 0;
            for (const auto& p : parts) hit += detail::contains_term(pred, normalize_answer(p)) ? 1 : 0;
            return round2(static_cast<double>(hit) / static_cast<double>(parts.size()));
        }
        if (q.groundtruth.find("<OR>") != std::string::npos) {
            for (const auto& p : detail::split_marker(q.groundtruth, "<OR>")) {
                if (detail::contains_term(pred, normalize_answer(p))) return 1.0;
            }
            return 0.0;
        }
        return ExactJudge().score(q);
    }
};

enum class JudgeStyle {
    /// The model writes a correctness score in [0, 1].
    mmvet,
    /// The model extracts the final answer, which is then matched exactly.
    mathvista,
};

/// LLM judge driven by one of the shipped prompt templates. Each attempt is a
/// separate chat request; attempt k is sent as turn k.
class RemoteJudge : public Judge {
public:
    using Judge::score;
    RemoteJudge(ChatClient& client, JudgeStyle style, int attempts = 5)
        : client_(client), style_(style), attempts_(std::max(1, attempts)) {}

    std::string name() const override { return style_ == JudgeStyle::mmvet ? "remote-mmvet" : "remote-mathvista"; }

    std::string prompt(const JudgeQuery& q) const {
        if (style_ == JudgeStyle::mmvet) {
            return std::string(kMMVetJudgePrompt) + "\n" + q.question + " | " + q.groundtruth + " | " + q.prediction +
                   " | ";
        }
        return std::string(kMathVistaJudgePrompt) + "\n\nQuestion: " + q.question + "\nModel response: " + q.prediction +
               "\nExtracted answer: ";
    }

    double score(const JudgeQuery& q) override {
        ChatRequest req;
        req.messages = {{"user", prompt(q)}};
        req.max_new_tokens = 64;
        req.temperature = 0.0;
        req.example_id = q.example_id;
        std::string last = "no reply";
        for (int k = 0; k < attempts_; ++k) {
            req.turn = static_cast<std::size_t>(k);
            std::string reply;
            try {
                reply = client_.complete(req);
            } catch (const std::exception& e) {
                last = e.what();
                continue;
            }
            if (auto s = read_reply(reply, q)) return *s;
            last = "unusable reply '" + reply + "'";
        }
        throw JudgeUnavailable(name() + " gave no score after " + std::to_string(attempts_) + " attempts: " + last);
    }

private:
    std::optional<double> read_reply(const std::string& reply, const JudgeQuery& q) const {
        if (style_ == JudgeStyle::mathvista) {
            const std::string extracted = detail::trim(reply);
            if (extracted.empty()) return std::nullopt;
            return verify_answer(extracted, q.groundtruth, AnswerKind::short_answer) ? 1.0 : 0.0;
        }
        static const std::regex number(R"(-?\d+(\.\d+)?)");
        std::smatch m;
        if (!std::regex_search(reply, m, number)) return std::nullopt;
        const double v = std::stod(m.str());
        if (v < 0.0 || v > 1.0) return std::nullopt;
        return v;
    }

    ChatClient& client_;
    JudgeStyle style_;
    int attempts_;
};

/// Judge per benchmark, with a fallback.
struct JudgeSet {
    Judge* fallback = nullptr;
    std::map<std::string, Judge*> per_benchmark;

    Judge& for_benchmark(const std::string& benchmark) const {
        if (auto it = per_benchmark.find(benchmark); it != per_benchmark.end()) return *it->second;
        if (!fallback) throw Error("no judge configured for benchmark '" + benchmark + "'");
        return *fallback;
    }
};

/// Multiple choice goes through letter extraction and exact comparison; free-form
/// answers go to the judge.
inline double score_example(Judge& judge, const QAExample& example, const std::string& prediction) {
    if (example.answer_kind == AnswerKind::multiple_choice) {
        return verify_answer(prediction, example.groundtruth, AnswerKind::multiple_choice) ? 1.0 : 0.0;
    }
    const double s = judge.score(JudgeQuery{example.question, example.groundtruth, prediction, example.id});
    if (!(s >= 0.0 && s <= 1.0)) throw JudgeUnavailable(judge.name() + " returned out-of-range score");
    return s;
}

// ---------------------------------------------------------------------------
// Reports

struct BenchmarkScore {
    /// Mean score x 100, one decimal; null when nothing was scored.
    std::optional<double> accuracy;
    std::size_t examples = 0;
    std::size_t scored = 0;
    std::size_t unscored = 0;
    std::optional<double> delta;
};

struct EvalReport {
    std::string name;
    std::map<std::string, BenchmarkScore> benchmarks;
    /// Mean of the reported per-benchmark accuracies, one decimal.
    std::optional<double> average;
    std::size_t unscored = 0;
    std::optional<std::string> baseline;
    std::optional<double> delta;

    Value to_json() const {
        auto opt = [](const std::optional<double>& d) { return d ? Value(*d) : Value(nullptr); };
        Value b = Value::object();
        for (const auto& [k, s] : benchmarks) {
            b[k] = Value{{"accuracy", opt(s.accuracy)},
                         {"examples", s.examples},
                         {"scored", s.scored},
                         {"unscored", s.unscored},
                         {"delta", opt(s.delta)}};
        }
        return Value{{"name", name},
                     {"benchmarks", std::move(b)},
                     {"average", opt(average)},
                     {"unscored", unscored},
                     {"baseline", baseline ? Value(*baseline) : Value(nullptr)},
                     {"delta", opt(delta)}};
    }

    /// Accepts full reports and minimal baselines such as {"name": "...", "average": 48.0}.
    static EvalReport from_json(const Value& v) {
        auto opt = [](const Value& o, const char* key) -> std::optional<double> {
            if (!o.contains(key) || o.at(key).is_null()) return std::nullopt;
            return o.at(key).get<double>();
        };
        EvalReport r;
        r.name = v.value("name", std::string());
        if (v.contains("benchmarks")) {
            for (auto it = v.at("benchmarks").begin(); it != v.at("benchmarks").end(); ++it) {
                BenchmarkScore s;
                const Value& e = it.value();
                if (e.is_number()) {
                    s.accuracy = e.get<double>();
                } else {
                    s.accuracy = opt(e, "accuracy");
                    s.examples = e.value("examples", std::size_t{0});
                    s.scored = e.value("scored", std::size_t{0});
                    s.unscored = e.value("unscored", std::size_t{0});
                    s.delta = opt(e, "delta");
                }
                r.benchmarks[it.key()] = s;
            }
        }
        r.average = opt(v, "average");
        r.unscored = v.value("unscored", std::size_t{0});
        if (v.contains("baseline") && v.at("baseline").is_string()) r.baseline = v.at("baseline").get<std::string>();
        r.delta = opt(v, "delta");
        return r;
    }
};

struct ExampleScore {
    std::string id;
    std::string benchmark;
    std::string prediction;
    /// Empty when the judge was unavailable.
    std::optional<double> score;
    std::string note;

    Value to_json() const {
        return Value{{"id", id},
                     {"benchmark", benchmark},
                     {"prediction", prediction},
                     {"score", score ? Value(*score) : Value(nullptr)},
                     {"note", note}};
    }
};

/// Folds per-example scores into a report. Deltas use the rounded figures, as
/// they would be read off two printed tables.
inline EvalReport aggregate(const std::vector<ExampleScore>& scores, const EvalReport* baseline = nullptr,
                            std::string name = "") {
    if (scores.empty()) throw EmptyBenchmark();
    EvalReport r;
    r.name = std::move(name);
    std::map<std::string, double> sums;
    for (const auto& s : scores) {
        auto& b = r.benchmarks[s.benchmark];
        ++b.examples;
        if (s.score) {
            ++b.scored;
            sums[s.benchmark] += *s.score;
        } else {
            ++b.unscored;
            ++r.unscored;
        }
    }
    double total = 0;
    std::size_t counted = 0;
    for (auto& [k, b] : r.benchmarks) {
        if (b.scored == 0) continue;
        b.accuracy = round_to(100.0 * sums[k] / static_cast<double>(b.scored), 1);
        total += *b.accuracy;
        ++counted;
    }
    if (counted) r.average = round_to(total / static_cast<double>(counted), 1);
    if (baseline) {
        r.baseline = baseline->name.empty() ? std::string("baseline") : baseline->name;
        if (r.average && baseline->average) r.delta = round_to(*r.average - *baseline->average, 1);
        for (auto& [k, b] : r.benchmarks) {
            auto it = baseline->benchmarks.find(k);
            if (it == baseline->benchmarks.end() || !b.accuracy || !it->second.accuracy) continue;
            b.delta = round_to(*b.accuracy - *it->second.accuracy, 1);
        }
    }
    return r;
}

// ---------------------------------------------------------------------------
// Driver

struct EvalOptions {
    RuntimeOptions runtime;
    std::size_t workers = 4;
    const EvalReport* baseline = nullptr;
    std::string name;
};

struct EvalRun {
    std::vector<EpisodeResult> episodes;
    std::vector<ExampleScore> scores;
    std::vector<ClientFailure> failures;
    EvalReport report;

    Value manifest() const {
        Value failed = Value::array();
        for (const auto& f : failures) failed.push_back(Value{{"index", f.index}, {"id", f.id}, {"error", f.error}});
        return Value{{"failed", std::move(failed)}};
    }
};

/// Scores stored episodes. Judging runs in parallel; the report is a fold in input order.
inline EvalRun evaluate_logs(std::vector<EpisodeResult> episodes, const JudgeSet& judges, const EvalOptions& options = {}) {
    if (episodes.empty()) throw EmptyBenchmark();
    EvalRun run;
    run.scores.resize(episodes.size());
    parallel_for(episodes.size(), options.workers, [&](std::size_t i) {
        const auto& ep = episodes[i];
        ExampleScore& s = run.scores[i];
        s.id = ep.example.id;
        s.benchmark = ep.example.source;
        s.prediction = extract_answer(ep);
        if (ep.status != EpisodeStatus::terminated) s.note = to_string(ep.status);
        try {
            s.score = score_example(judges.for_benchmark(s.benchmark), ep.example, s.prediction);
        } catch (const JudgeUnavailable& e) {
            s.note = e.what();
        }
    });
    run.report = aggregate(run.scores, options.baseline, options.name);
    run.episodes = std::move(episodes);
    return run;
}

using PolicyFactory = std::function<std::unique_ptr<Policy>(const QAExample&)>;

/// Runs every example through the agent loop, then scores. Examples whose policy
/// fails are listed in the manifest and left out of the report.
inline EvalRun evaluate(const std::vector<QAExample>& examples, const PolicyFactory& make_policy, Backend& backend,
                        const Registry& registry, const JudgeSet& judges, const EvalOptions& options = {}) {
    if (examples.empty()) throw EmptyBenchmark();
    const Runtime runtime(registry, backend, options.runtime);
    std::vector<std::optional<EpisodeResult>> done(examples.size());
    std::vector<std::string> errors(examples.size());
    parallel_for(examples.size(), options.workers, [&](std::size_t i) {
        try {
            auto policy = make_policy(examples[i]);
            done[i] = runtime.run(*policy, examples[i]);
        } catch (const ClientError& e) {
            errors[i] = e.what();
        }
    });
    std::vector<EpisodeResult> episodes;
    std::vector<ClientFailure> failures;
    for (std::size_t i = 0; i < examples.size(); ++i) {
        if (done[i]) {
            episodes.push_back(std::move(*done[i]));
        } else {
            failures.push_back({i, examples[i].id, errors[i]});
        }
    }
    if (episodes.empty()) {
        EvalRun run;
        run.failures = std::move(failures);
        throw ClientError("", "every example failed; first error: " + run.failures.front().error);
    }
    EvalRun run = evaluate_logs(std::move(episodes), judges, options);
    run.failures = std::move(failures);
    return run;
}

inline EvalRun evaluate(const std::vector<QAExample>& examples, ChatClient& client, Backend& backend,
                        const Registry& registry, const JudgeSet& judges, const EvalOptions& options = {}) {
    return evaluate(
        examples, [&](const QAExample&) { return std::make_unique<ChatPolicy>(client); }, backend, registry, judges,
        options);
}

} // namespace cota
