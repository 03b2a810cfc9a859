// SPDX-License-Identifier: Apache-2.0
// cota: command-line entry point for generation, data recipes and evaluation.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <set>
#include <sstream>

#include "cota/cota.hpp"

namespace fs = std::filesystem;
using namespace cota;

namespace {

Value read_json(const std::string& path) { return AnnotationStore::read_json_file(path); }

void write_json(const std::string& path, const Value& v) {
    const std::string text = v.dump(2) + "\n";
    if (path.empty() || path == "-") {
        std::cout << text;
    } else {
        write_file_atomic(path, text);
    }
}

bool starts_with(const std::string& s, const std::string& prefix) { return s.rfind(prefix, 0) == 0; }

std::string after(const std::string& s, const std::string& prefix) { return s.substr(prefix.size()); }

struct BackendArgs {
    std::string spec = "oracle";
    std::string annotations;
    std::string oracle_fixtures;
    double timeout = 30.0;
};

void add_backend_options(CLI::App* cmd, BackendArgs& a) {
    cmd->add_option("--backend", a.spec, "oracle | remote:<url> | replay:<path>")->capture_default_str();
    cmd->add_option("--annotations", a.annotations, "Directory of annotation sets (*.json)");
    cmd->add_option("--oracle-fixtures", a.oracle_fixtures, "Lookup tables for the query tools");
    cmd->add_option("--tool-timeout", a.timeout, "Seconds per remote tool call")->capture_default_str();
}

std::unique_ptr<AnnotationStore> load_store(const std::string& dir) {
    if (dir.empty()) return nullptr;
    return std::make_unique<AnnotationStore>(AnnotationStore::load_dir(dir));
}

std::unique_ptr<Backend> make_backend(const BackendArgs& a) {
    if (a.spec == "oracle") {
        OracleOptions o;
        if (!a.oracle_fixtures.empty()) o.fixtures = OracleFixtures::from_json(read_json(a.oracle_fixtures));
        return std::make_unique<OracleBackend>(o);
    }
    if (starts_with(a.spec, "remote:")) return std::make_unique<RemoteBackend>(RemoteOptions{a.spec, a.timeout, std::nullopt});
    if (starts_with(a.spec, "replay:")) return std::make_unique<ReplayBackend>(ReplayBackend::load(after(a.spec, "replay:")));
    throw Error("unknown backend '" + a.spec + "'");
}

std::unique_ptr<ChatClient> make_chat(const std::string& spec, const std::string& model) {
    if (starts_with(spec, "fixture:")) {
        return std::make_unique<FixtureChatClient>(FixtureChatClient::from_json(read_json(after(spec, "fixture:"))));
    }
    if (starts_with(spec, "remote:")) {
        RemoteChatOptions o;
        o.url = spec;
        o.model = model;
        return std::make_unique<RemoteChatClient>(o);
    }
    throw Error("unknown policy '" + spec + "' (expected fixture:<path> or remote:<url>)");
}

std::set<std::string> manifest_ids(const std::string& path) {
    std::set<std::string> ids;
    if (path.empty() || !fs::exists(path)) return ids;
    for (const auto& f : read_json(path).value("failed", Value::array())) ids.insert(f.at("id").get<std::string>());
    return ids;
}

// ---------------------------------------------------------------------------

struct GenerateModelArgs {
    std::string input, chat, model = "gpt-4o", out, report, manifest, rejects;
    BackendArgs backend;
    std::size_t workers = 4;
    std::uint64_t seed = 0;
    int max_turns = 10;
    bool resume = false;
};

int generate_model(const GenerateModelArgs& a) {
    auto examples = read_examples(a.input);
    const std::string manifest = a.manifest.empty() ? a.out + ".manifest.json" : a.manifest;
    const std::string report_path = a.report.empty() ? a.out + ".report.json" : a.report;

    std::vector<TraceRecord> kept;
    GenerationReport report;
    if (a.resume && fs::exists(manifest)) {
        const auto failed = manifest_ids(manifest);
        std::vector<QAExample> retry;
        for (auto& e : examples) {
            if (failed.count(e.id)) retry.push_back(std::move(e));
        }
        examples = std::move(retry);
        if (fs::exists(a.out)) kept = read_jsonl(a.out);
        if (fs::exists(report_path)) report = GenerationReport::from_json(read_json(report_path));
        std::cerr << "resuming " << examples.size() << " failed examples\n";
    }

    auto store = load_store(a.backend.annotations);
    auto backend = make_backend(a.backend);
    auto chat = make_chat(a.chat, a.model);
    GenerationOptions opts;
    opts.limits.max_turns = a.max_turns;
    opts.workers = a.workers;
    opts.seed = a.seed;
    opts.store = store.get();
    opts.keep_rejects = !a.rejects.empty();
    const Registry registry = builtin_registry();
    auto batch = run_batch(*chat, examples, registry, *backend, opts);

    kept.insert(kept.end(), batch.records.begin(), batch.records.end());
    report += batch.report;
    write_jsonl(a.out, kept);
    write_json(report_path, report.to_json());
    write_json(manifest, batch.manifest());
    if (!a.rejects.empty()) write_jsonl(a.rejects, batch.rejects);
    std::cerr << batch.records.size() << " records, " << batch.failures.size() << " client failures\n";
    return batch.failures.empty() ? 0 : 3;
}

struct GenerateProgramArgs {
    std::string spec, annotations, out;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> workers;
};

int generate_program(const GenerateProgramArgs& a) {
    GenSpec spec = GenSpec::from_json(read_json(a.spec));
    if (a.seed) spec.seed = *a.seed;
    if (a.workers) spec.workers = *a.workers;
    const auto store = AnnotationStore::load_dir(a.annotations);
    auto records = run_program_gen(spec, store);
    write_jsonl(a.out, records);
    std::cerr << records.size() << " program records\n";
    return 0;
}

std::map<std::string, SourceProfile> load_profiles(const std::string& report) {
    if (report.empty()) return {};
    return profiles_from_report(GenerationReport::from_json(read_json(report)));
}

struct RecipeArgs {
    std::string input, program, recipe, report, out;
};

int filter_cmd(const RecipeArgs& a) {
    const RecipeConfig recipe = RecipeConfig::from_json(read_json(a.recipe));
    auto kept = filter_records(read_jsonl(a.input), recipe, load_profiles(a.report));
    write_jsonl(a.out, kept);
    std::cerr << kept.size() << " records kept\n";
    return 0;
}

int mix_cmd(const RecipeArgs& a) {
    const RecipeConfig recipe = RecipeConfig::from_json(read_json(a.recipe));
    auto mixed = apply_recipe(read_jsonl(a.input), read_jsonl(a.program), recipe, load_profiles(a.report));
    write_jsonl(a.out, mixed);
    std::cerr << mixed.size() << " records written\n";
    return 0;
}

int classify_cmd(const std::string& report, std::size_t min_samples) {
    ClassifyOptions opts;
    opts.min_samples = min_samples;
    Value out = Value::object();
    for (const auto& [src, p] : load_profiles(report)) {
        Value v = p.to_json();
        try {
            v["class"] = to_string(classify_source(p, opts));
        } catch (const InsufficientSamples& e) {
            v["class"] = nullptr;
            v["note"] = e.what();
        }
        out[src] = std::move(v);
    }
    write_json("-", Value{{"denominator", "all generation attempts per source"}, {"sources", std::move(out)}});
    return 0;
}

int stats_cmd(const std::string& input, const std::string& out) {
    write_json(out, compute_stats(read_jsonl(input)).to_json());
    return 0;
}

struct RunAgentArgs {
    std::string example, policy, model = "gpt-4o", out;
    BackendArgs backend;
    int max_turns = 10;
    std::uint64_t seed = 0;
    bool data_gen = false;
};

int run_agent(const RunAgentArgs& a) {
    const QAExample ex = example_from_json(read_json(a.example));
    auto store = load_store(a.backend.annotations);
    auto backend = make_backend(a.backend);
    RuntimeOptions ro;
    ro.limits.max_turns = a.max_turns;
    ro.mode = a.data_gen ? StepMode::data_gen : StepMode::strict;
    ro.seed = a.seed;
    ro.store = store.get();
    const Registry registry = builtin_registry();
    EpisodeResult r;
    if (starts_with(a.policy, "script:")) {
        std::vector<std::string> steps;
        for (const auto& s : read_json(after(a.policy, "script:"))) steps.push_back(s.is_string() ? s.get<std::string>() : canonical_dump(s));
        ScriptedPolicy policy(std::move(steps));
        r = run_episode(policy, ex, *backend, registry, ro);
    } else {
        auto chat = make_chat(a.policy, a.model);
        ChatPolicy policy(*chat);
        r = run_episode(policy, ex, *backend, registry, ro);
    }
    write_json(a.out, episode_to_json(r));
    return r.status == EpisodeStatus::terminated ? 0 : 2;
}

struct EvaluateArgs {
    std::string benchmark, policy, model = "gpt-4o", judge = "exact", judge_model = "gpt-4-turbo", baseline, out, logs,
        from_logs, scores, name;
    std::vector<std::string> judge_for;
    BackendArgs backend;
    std::size_t workers = 4;
    int max_turns = 10;
    std::uint64_t seed = 0;
    bool resume = false;
};

struct JudgeFactory {
    std::string model;
    std::vector<std::unique_ptr<ChatClient>> clients;
    std::vector<std::unique_ptr<Judge>> judges;

    Judge* make(const std::string& spec) {
        if (spec == "exact") {
            judges.push_back(std::make_unique<ExactJudge>());
        } else if (spec == "rubric") {
            judges.push_back(std::make_unique<RubricJudge>());
        } else if (starts_with(spec, "remote:") || starts_with(spec, "remote-mmvet:") || starts_with(spec, "remote-mathvista:")) {
            const auto colon = spec.find(':');
            const std::string kind = spec.substr(0, colon);
            RemoteChatOptions o;
            o.url = spec.substr(colon + 1);
            o.model = model;
            clients.push_back(std::make_unique<RemoteChatClient>(o));
            judges.push_back(std::make_unique<RemoteJudge>(*clients.back(),
                                                           kind == "remote-mathvista" ? JudgeStyle::mathvista : JudgeStyle::mmvet));
        } else if (starts_with(spec, "fixture-mmvet:") || starts_with(spec, "fixture-mathvista:")) {
            const auto colon = spec.find(':');
            clients.push_back(std::make_unique<FixtureChatClient>(FixtureChatClient::from_json(read_json(spec.substr(colon + 1)))));
            judges.push_back(std::make_unique<RemoteJudge>(
                *clients.back(), starts_with(spec, "fixture-mathvista") ? JudgeStyle::mathvista : JudgeStyle::mmvet));
        } else {
            throw Error("unknown judge '" + spec + "'");
        }
        return judges.back().get();
    }
};

std::vector<EpisodeResult> read_episodes(const std::string& path) {
    std::vector<EpisodeResult> out;
    for_each_jsonl(path, [&](const Value& v, std::size_t line) { out.push_back(episode_from_json(v, line)); });
    return out;
}

int evaluate_cmd(const EvaluateArgs& a) {
    JudgeFactory jf{a.judge_model, {}, {}};
    JudgeSet judges;
    judges.fallback = jf.make(a.judge);
    for (const auto& m : a.judge_for) {
        const auto eq = m.find('=');
        if (eq == std::string::npos) throw Error("--judge-for expects <benchmark>=<judge>, got '" + m + "'");
        judges.per_benchmark[m.substr(0, eq)] = jf.make(m.substr(eq + 1));
    }
    std::optional<EvalReport> baseline;
    if (!a.baseline.empty()) {
        baseline = EvalReport::from_json(read_json(a.baseline));
        if (baseline->name.empty()) baseline->name = fs::path(a.baseline).stem().string();
    }
    EvalOptions opts;
    opts.workers = a.workers;
    opts.baseline = baseline ? &*baseline : nullptr;
    opts.name = a.name;
    opts.runtime.limits.max_turns = a.max_turns;
    opts.runtime.seed = a.seed;

    EvalRun run;
    if (!a.from_logs.empty()) {
        run = evaluate_logs(read_episodes(a.from_logs), judges, opts);
    } else {
        if (a.benchmark.empty() || a.policy.empty()) throw Error("evaluate needs --benchmark and --policy, or --from-logs");
        auto examples = read_examples(a.benchmark);
        if (examples.empty()) throw EmptyBenchmark();
        std::vector<EpisodeResult> previous;
        if (a.resume && !a.logs.empty() && fs::exists(a.logs)) {
            previous = read_episodes(a.logs);
            std::set<std::string> done;
            for (const auto& e : previous) done.insert(e.example.id);
            std::vector<QAExample> todo;
            for (auto& e : examples) {
                if (!done.count(e.id)) todo.push_back(std::move(e));
            }
            examples = std::move(todo);
            std::cerr << "resuming: " << previous.size() << " logged, " << examples.size() << " to run\n";
        }
        auto store = load_store(a.backend.annotations);
        opts.runtime.store = store.get();
        auto backend = make_backend(a.backend);
        auto chat = make_chat(a.policy, a.model);
        const Registry registry = builtin_registry();
        std::vector<ClientFailure> failures;
        if (!examples.empty()) {
            auto fresh = evaluate(examples, *chat, *backend, registry, judges, opts);
            failures = std::move(fresh.failures);
            for (auto& e : fresh.episodes) previous.push_back(std::move(e));
        }
        run = evaluate_logs(std::move(previous), judges, opts);
        run.failures = std::move(failures);
        if (!a.logs.empty()) {
            std::vector<Value> lines;
            for (const auto& e : run.episodes) lines.push_back(episode_to_json(e));
            write_jsonl_values(a.logs, lines);
            write_json(a.logs + ".manifest.json", run.manifest());
        }
    }
    if (!a.scores.empty()) {
        std::vector<Value> lines;
        for (const auto& s : run.scores) lines.push_back(s.to_json());
        write_jsonl_values(a.scores, lines);
    }
    write_json(a.out, run.report.to_json());
    if (run.report.unscored) std::cerr << run.report.unscored << " examples unscored (judge unavailable)\n";
    if (!run.failures.empty()) std::cerr << run.failures.size() << " examples failed; rerun with --resume\n";
    return run.failures.empty() ? 0 : 3;
}

int export_fixtures(const std::string& dir) {
    fs::create_directories(dir);
    write_json((fs::path(dir) / "registry.json").string(), registry_to_json(builtin_registry()));
    write_json((fs::path(dir) / "calculate_vector.json").string(), calculate_conformance_vector());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Chain-of-thought-and-action data generation, recipes and evaluation"};
    app.require_subcommand(1);

    GenerateModelArgs gm;
    auto* c_gm = app.add_subcommand("generate-model", "Generate traces with a chat model and verify them");
    c_gm->add_option("--input", gm.input, "QA examples (JSONL)")->required();
    c_gm->add_option("--chat", gm.chat, "fixture:<path> | remote:<url>")->required();
    c_gm->add_option("--model", gm.model, "Model name for remote endpoints")->capture_default_str();
    c_gm->add_option("--out", gm.out, "Trace records (JSONL)")->required();
    c_gm->add_option("--report", gm.report, "Outcome report (default <out>.report.json)");
    c_gm->add_option("--manifest", gm.manifest, "Failure manifest (default <out>.manifest.json)");
    c_gm->add_option("--rejects", gm.rejects, "Also write the unverified chains here");
    c_gm->add_option("--workers", gm.workers)->capture_default_str();
    c_gm->add_option("--seed", gm.seed)->capture_default_str();
    c_gm->add_option("--max-turns", gm.max_turns)->capture_default_str();
    c_gm->add_flag("--resume", gm.resume, "Retry only the examples listed in the manifest");
    add_backend_options(c_gm, gm.backend);

    GenerateProgramArgs gp;
    auto* c_gp = app.add_subcommand("generate-program", "Synthesize QA pairs and chains from annotations");
    c_gp->add_option("--spec", gp.spec, "Generation spec (JSON)")->required();
    c_gp->add_option("--annotations", gp.annotations, "Directory of annotation sets")->required();
    c_gp->add_option("--out", gp.out)->required();
    c_gp->add_option("--seed", gp.seed, "Overrides the spec seed");
    c_gp->add_option("--workers", gp.workers);

    RecipeArgs fa;
    auto* c_f = app.add_subcommand("filter", "Keep records by format and source rule");
    c_f->add_option("--input", fa.input)->required();
    c_f->add_option("--recipe", fa.recipe)->required();
    c_f->add_option("--report", fa.report, "Generation report with per-source outcomes");
    c_f->add_option("--out", fa.out)->required();

    RecipeArgs ma;
    auto* c_m = app.add_subcommand("mix", "Filter model records and mix in program records");
    c_m->add_option("--model", ma.input, "Model-generated records")->required();
    c_m->add_option("--program", ma.program, "Program-generated records")->required();
    c_m->add_option("--recipe", ma.recipe)->required();
    c_m->add_option("--report", ma.report);
    c_m->add_option("--out", ma.out)->required();

    std::string cl_report;
    std::size_t cl_min = 50;
    auto* c_cl = app.add_subcommand("classify", "Label sources action-useful or action-useless");
    c_cl->add_option("--report", cl_report)->required();
    c_cl->add_option("--min-samples", cl_min)->capture_default_str();

    std::string st_in, st_out;
    auto* c_s = app.add_subcommand("stats", "Dataset statistics per source");
    c_s->add_option("--input", st_in)->required();
    c_s->add_option("--out", st_out, "Default: stdout");

    RunAgentArgs ra;
    auto* c_ra = app.add_subcommand("run-agent", "Run one episode for a JSON example");
    c_ra->add_option("--example", ra.example)->required();
    c_ra->add_option("--policy", ra.policy, "fixture:<path> | remote:<url> | script:<path>")->required();
    c_ra->add_option("--model", ra.model)->capture_default_str();
    c_ra->add_option("--out", ra.out, "Default: stdout");
    c_ra->add_option("--max-turns", ra.max_turns)->capture_default_str();
    c_ra->add_option("--seed", ra.seed)->capture_default_str();
    c_ra->add_flag("--data-gen", ra.data_gen, "Allow several actions per step");
    add_backend_options(c_ra, ra.backend);

    EvaluateArgs ev;
    auto* c_ev = app.add_subcommand("evaluate", "Run and score a benchmark");
    c_ev->add_option("--benchmark", ev.benchmark, "QA examples (JSONL); the source field names the benchmark");
    c_ev->add_option("--policy", ev.policy, "fixture:<path> | remote:<url>");
    c_ev->add_option("--model", ev.model)->capture_default_str();
    c_ev->add_option("--from-logs", ev.from_logs, "Score stored episode logs instead of running");
    c_ev->add_option("--judge", ev.judge, "exact | rubric | remote[-mmvet|-mathvista]:<url> | fixture-mmvet:<path>")
        ->capture_default_str();
    c_ev->add_option("--judge-for", ev.judge_for, "<benchmark>=<judge>, repeatable");
    c_ev->add_option("--judge-model", ev.judge_model)->capture_default_str();
    c_ev->add_option("--baseline", ev.baseline, "Report to compute deltas against");
    c_ev->add_option("--name", ev.name, "Name recorded in the report");
    c_ev->add_option("--out", ev.out, "Report (default stdout)");
    c_ev->add_option("--logs", ev.logs, "Episode logs (JSONL)");
    c_ev->add_option("--scores", ev.scores, "Per-example scores (JSONL)");
    c_ev->add_option("--workers", ev.workers)->capture_default_str();
    c_ev->add_option("--max-turns", ev.max_turns)->capture_default_str();
    c_ev->add_option("--seed", ev.seed)->capture_default_str();
    c_ev->add_flag("--resume", ev.resume, "Skip examples already present in --logs");
    add_backend_options(c_ev, ev.backend);

    std::string reg_out;
    auto* c_reg = app.add_subcommand("export-registry", "Write the action registry as JSON");
    c_reg->add_option("--out", reg_out, "Default: stdout");

    std::string fx_dir;
    auto* c_fx = app.add_subcommand("export-fixtures", "Write registry and Calculate conformance fixtures");
    c_fx->add_option("--out-dir", fx_dir)->required();

    std::string prompt_out;
    auto* c_pr = app.add_subcommand("system-prompt", "Print the data-generation system prompt");
    c_pr->add_option("--out", prompt_out);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*c_gm) return generate_model(gm);
        if (*c_gp) return generate_program(gp);
        if (*c_f) return filter_cmd(fa);
        if (*c_m) return mix_cmd(ma);
        if (*c_cl) return classify_cmd(cl_report, cl_min);
        if (*c_s) return stats_cmd(st_in, st_out);
        if (*c_ra) return run_agent(ra);
        if (*c_ev) return evaluate_cmd(ev);
        if (*c_reg) {
            write_json(reg_out, registry_to_json(builtin_registry()));
            return 0;
        }
        if (*c_fx) return export_fixtures(fx_dir);
        if (*c_pr) {
            const std::string p = render_system_prompt(builtin_registry(), default_few_shots());
            if (prompt_out.empty()) {
                std::cout << p;
            } else {
                write_file_atomic(prompt_out, p);
            }
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
