// SPDX-License-Identifier: Apache-2.0
#pragma once

// Dataset recipes: source classification, format/source filtering,
// model:program mixing, statistics, and JSONL storage.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "cota/gen_model.hpp"
#include "cota/scene.hpp"
#include "cota/trace.hpp"

namespace cota {

// ---------------------------------------------------------------------------
// JSONL

/// Calls fn(value, line) for every non-blank line. Unparseable lines raise
/// SchemaViolation with their 1-based line number.
inline void for_each_jsonl(const std::filesystem::path& path, const std::function<void(const Value&, std::size_t)>& fn) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    std::string text;
    std::size_t line = 0;
    while (std::getline(in, text)) {
        ++line;
        if (!text.empty() && text.back() == '\r') text.pop_back();
        if (text.find_first_not_of(" \t") == std::string::npos) continue;
        Value v;
        try {
            v = Value::parse(text);
        } catch (const nlohmann::json::exception& e) {
            throw SchemaViolation(line, "<json>", e.what());
        }
        fn(v, line);
    }
}

/// Writes `content` next to `path` and renames it into place.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
    const auto dir = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
    std::filesystem::create_directories(dir);
    const auto tmp = dir / ("." + path.filename().string() + ".tmp" + std::to_string(::getpid()));
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write " + tmp.string());
        out << content;
        out.flush();
        if (!out) throw Error("write failed for " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp);
        throw Error("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
    }
}

inline void write_jsonl_values(const std::filesystem::path& path, const std::vector<Value>& values) {
    std::string out;
    for (const auto& v : values) {
        out += canonical_dump(v);
        out += '\n';
    }
    write_file_atomic(path, out);
}

inline std::vector<TraceRecord> read_jsonl(const std::filesystem::path& path) {
    std::vector<TraceRecord> out;
    for_each_jsonl(path, [&](const Value& v, std::size_t line) { out.push_back(record_from_json(v, line)); });
    return out;
}

inline void write_jsonl(const std::filesystem::path& path, const std::vector<TraceRecord>& records) {
    std::string out;
    for (const auto& r : records) {
        if (auto p = check_record(r)) throw SchemaViolation(0, p->field, r.example.id + ": " + p->reason);
        out += canonical_dump(record_to_json(r));
        out += '\n';
    }
    write_file_atomic(path, out);
}

inline std::vector<QAExample> read_examples(const std::filesystem::path& path) {
    std::vector<QAExample> out;
    for_each_jsonl(path, [&](const Value& v, std::size_t line) { out.push_back(example_from_json(v, line)); });
    return out;
}

inline void write_examples(const std::filesystem::path& path, const std::vector<QAExample>& examples) {
    std::vector<Value> vs;
    for (const auto& e : examples) vs.push_back(example_to_json(e));
    write_jsonl_values(path, vs);
}

// ---------------------------------------------------------------------------
// Source classification

/// Outcome shares of one source, in percentage points of all generation attempts.
struct SourceProfile {
    std::string source;
    double cota_pos = 0;
    double cota_neg = 0;
    double cot_pos = 0;
    double cot_neg = 0;
    std::size_t samples = 0;

    static SourceProfile from_counts(const std::string& source, const OutcomeCounts& c) {
        SourceProfile p;
        p.source = source;
        p.samples = c.total();
        if (p.samples == 0) return p;
        const double n = static_cast<double>(p.samples);
        p.cota_pos = 100.0 * static_cast<double>(c.cota_pos) / n;
        p.cota_neg = 100.0 * static_cast<double>(c.cota_neg) / n;
        p.cot_pos = 100.0 * static_cast<double>(c.cot_pos) / n;
        p.cot_neg = 100.0 * static_cast<double>(c.cot_neg) / n;
        return p;
    }

    Value to_json() const {
        return Value{{"source", source},   {"cota_pos", cota_pos}, {"cota_neg", cota_neg},
                     {"cot_pos", cot_pos}, {"cot_neg", cot_neg},   {"samples", samples}};
    }
};

inline std::map<std::string, SourceProfile> profiles_from_report(const GenerationReport& report) {
    std::map<std::string, SourceProfile> out;
    for (const auto& [src, counts] : report.per_source) out[src] = SourceProfile::from_counts(src, counts);
    return out;
}

enum class SourceClass { useful, useless };

inline std::string to_string(SourceClass c) { return c == SourceClass::useful ? "useful" : "useless"; }

struct ClassifyOptions {
    std::size_t min_samples = 50;
    /// Gap in percentage points that must be exceeded to call a source useless.
    double threshold = 10.0;
};

/// Useless when CoT-pos or CoTA-neg exceeds CoTA-pos by more than the threshold.
/// A gap of exactly the threshold is still useful.
inline SourceClass classify_source(const SourceProfile& p, const ClassifyOptions& opts = {}) {
    if (p.samples < opts.min_samples) throw InsufficientSamples(p.source, p.samples, opts.min_samples);
    // Shares come from divisions; absorb the rounding so a true gap of 10 is not read as 10.000000001.
    const double limit = opts.threshold + 1e-9;
    if (p.cot_pos - p.cota_pos > limit) return SourceClass::useless;
    if (p.cota_neg - p.cota_pos > limit) return SourceClass::useless;
    return SourceClass::useful;
}

// ---------------------------------------------------------------------------
// Recipes

enum class SourceRule { all, action_useful_only, explicit_list };

struct RecipeConfig {
    std::set<Format> formats{Format::CoTA, Format::CoT, Format::DA};
    SourceRule source_rule = SourceRule::all;
    std::set<std::string> sources;
    /// Program records drawn per kept model record.
    double mix_ratio = 0.0;
    std::uint64_t seed = 0;
    ClassifyOptions classify;

    static RecipeConfig from_json(const Value& v) {
        RecipeConfig r;
        if (v.contains("formats")) {
            r.formats.clear();
            for (const auto& f : v.at("formats")) {
                auto fmt = parse_format(f.get<std::string>());
                if (!fmt) throw Error("unknown format '" + f.get<std::string>() + "'");
                r.formats.insert(*fmt);
            }
        }
        const std::string rule = v.value("source_rule", std::string("all"));
        if (rule == "all") {
            r.source_rule = SourceRule::all;
        } else if (rule == "action_useful_only" || rule == "action-useful") {
            r.source_rule = SourceRule::action_useful_only;
        } else if (rule == "explicit_list" || rule == "list") {
            r.source_rule = SourceRule::explicit_list;
        } else {
            throw Error("unknown source rule '" + rule + "'");
        }
        for (const auto& s : v.value("sources", Value::array())) r.sources.insert(s.get<std::string>());
        r.mix_ratio = v.value("mix_ratio", 0.0);
        if (r.mix_ratio < 0.0) throw Error("mix_ratio must be non-negative");
        r.seed = v.value("seed", std::uint64_t{0});
        r.classify.min_samples = v.value("min_samples", r.classify.min_samples);
        r.classify.threshold = v.value("threshold", r.classify.threshold);
        return r;
    }
};

/// Model records that pass the recipe's format set and source rule, in input order.
inline std::vector<TraceRecord> filter_records(const std::vector<TraceRecord>& records, const RecipeConfig& recipe,
                                               const std::map<std::string, SourceProfile>& profiles = {}) {
    std::map<std::string, bool> keep_source;
    auto source_ok = [&](const std::string& src) {
        if (recipe.source_rule == SourceRule::all) return true;
        if (recipe.source_rule == SourceRule::explicit_list) return recipe.sources.count(src) > 0;
        auto it = keep_source.find(src);
        if (it != keep_source.end()) return it->second;
        auto p = profiles.find(src);
        if (p == profiles.end()) throw InsufficientSamples(src, 0, recipe.classify.min_samples);
        const bool ok = classify_source(p->second, recipe.classify) == SourceClass::useful;
        keep_source[src] = ok;
        return ok;
    };
    std::vector<TraceRecord> out;
    for (const auto& r : records) {
        if (!recipe.formats.count(r.format)) continue;
        if (!source_ok(r.example.source)) continue;
        out.push_back(r);
    }
    return out;
}

/// round(r * n), halves away from zero.
inline std::size_t mix_count(double ratio, std::size_t model_kept) {
    return static_cast<std::size_t>(std::llround(ratio * static_cast<double>(model_kept)));
}

/// Indices of `k` distinct draws from [0, n), by partial Fisher-Yates.
inline std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k, Rng& rng) {
    if (k > n) throw ProgramPoolTooSmall(k, n);
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(k);
    return idx;
}

inline std::vector<TraceRecord> apply_recipe(const std::vector<TraceRecord>& model,
                                             const std::vector<TraceRecord>& program, const RecipeConfig& recipe,
                                             const std::map<std::string, SourceProfile>& profiles = {}) {
    std::vector<TraceRecord> out = filter_records(model, recipe, profiles);
    const std::size_t want = mix_count(recipe.mix_ratio, out.size());
    Rng draw = derive_rng(recipe.seed, "mix", 0);
    for (std::size_t i : sample_without_replacement(program.size(), want, draw)) out.push_back(program[i]);
    Rng order = derive_rng(recipe.seed, "shuffle", 0);
    order.shuffle(out);
    return out;
}

// ---------------------------------------------------------------------------
// Statistics

struct GroupStats {
    std::size_t instances = 0;
    std::size_t max_images = 0;
    std::size_t max_turns = 0;
    std::size_t image_sum = 0;
    std::size_t turn_sum = 0;

    double avg_images() const { return instances ? round_to(double(image_sum) / double(instances), 1) : 0.0; }
    double avg_turns() const { return instances ? round_to(double(turn_sum) / double(instances), 1) : 0.0; }

    void add(std::size_t images, std::size_t turns) {
        ++instances;
        max_images = std::max(max_images, images);
        max_turns = std::max(max_turns, turns);
        image_sum += images;
        turn_sum += turns;
    }

    Value to_json() const {
        return Value{{"instances", instances},       {"max_image", max_images}, {"avg_image", avg_images()},
                     {"max_turn", max_turns},        {"avg_turn", avg_turns()}};
    }
};

struct DatasetStats {
    std::map<std::string, GroupStats> per_source;
    GroupStats total;

    Value to_json() const {
        Value src = Value::object();
        for (const auto& [k, g] : per_source) src[k] = g.to_json();
        return Value{{"sources", std::move(src)}, {"total", total.to_json()}};
    }
};

/// Turns are chain steps; a DA record counts as a single turn.
inline std::size_t record_turns(const TraceRecord& r) { return r.chain ? r.chain->steps.size() : 1; }

inline DatasetStats compute_stats(const std::vector<TraceRecord>& records) {
    DatasetStats s;
    for (const auto& r : records) {
        const std::size_t images = r.example.images.size();
        const std::size_t turns = record_turns(r);
        s.per_source[r.example.source].add(images, turns);
        s.total.add(images, turns);
    }
    return s;
}

} // namespace cota
