// SPDX-License-Identifier: Apache-2.0
#pragma once

// Model-driven trace generation: a chat model acts as the policy, its final
// answer is verified against groundtruth, and failures fall back to DA.

#include <cctype>
#include <cmath>
#include <cstdlib>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "cota/agent.hpp"
#include "cota/parallel.hpp"

namespace cota {

// ---------------------------------------------------------------------------
// Chat clients

struct ChatMessage {
    std::string role;
    std::string content;
};

struct ChatRequest {
    std::vector<ChatMessage> messages;
    int max_new_tokens = 2000;
    double temperature = 0.0;
    /// Bookkeeping for fakes and logs; remote clients ignore them.
    std::string example_id;
    std::size_t turn = 0;
};

class ChatClient {
public:
    virtual ~ChatClient() = default;
    /// Text of the assistant reply. Throws ClientError when no reply can be had.
    virtual std::string complete(const ChatRequest& request) = 0;
};

/// Replies from a table keyed by example id: a list of per-turn texts, or
/// {"error": msg} to simulate a failing endpoint.
class FixtureChatClient : public ChatClient {
public:
    FixtureChatClient() = default;

    void set_responses(const std::string& id, std::vector<std::string> turns) { table_[id] = std::move(turns); }
    void set_error(const std::string& id, std::string message) { errors_[id] = std::move(message); }

    /// {"<id>": ["turn 0 text", ...] | {"error": "..."}}
    static FixtureChatClient from_json(const Value& v) {
        if (!v.is_object()) throw Error("chat fixtures must be an object keyed by example id");
        FixtureChatClient c;
        for (auto it = v.begin(); it != v.end(); ++it) {
            const Value& e = it.value();
            if (e.is_object() && e.contains("error")) {
                c.set_error(it.key(), value_text(e.at("error")));
            } else if (e.is_array()) {
                std::vector<std::string> turns;
                for (const auto& t : e) turns.push_back(t.is_string() ? t.get<std::string>() : canonical_dump(t));
                c.set_responses(it.key(), std::move(turns));
            } else {
                throw Error("chat fixture for '" + it.key() + "' must be a list or an error object");
            }
        }
        return c;
    }

    std::string complete(const ChatRequest& request) override {
        if (auto e = errors_.find(request.example_id); e != errors_.end()) {
            throw ClientError(request.example_id, e->second);
        }
        auto it = table_.find(request.example_id);
        if (it == table_.end()) throw ClientError(request.example_id, "no fixture responses");
        if (request.turn >= it->second.size()) {
            throw ClientError(request.example_id, "fixture has no response for turn " + std::to_string(request.turn));
        }
        return it->second[request.turn];
    }

private:
    std::map<std::string, std::vector<std::string>> table_;
    std::map<std::string, std::string> errors_;
};

/// Runs a chat client as the episode policy.
class ChatPolicy : public Policy {
public:
    explicit ChatPolicy(ChatClient& client) : client_(client) {}

    std::string next_step(const PolicyInput& in) override {
        ChatRequest req;
        req.messages = {{"system", in.system_prompt}, {"user", in.dialogue}};
        req.max_new_tokens = in.limits.max_new_tokens;
        req.temperature = in.limits.temperature;
        req.example_id = in.example.id;
        req.turn = in.turn;
        try {
            return client_.complete(req);
        } catch (const ClientError& e) {
            if (!e.example_id().empty()) throw;
            throw ClientError(in.example.id, e.what());
        } catch (const std::exception& e) {
            throw ClientError(in.example.id, e.what());
        }
    }

private:
    ChatClient& client_;
};

// ---------------------------------------------------------------------------
// Verification

namespace detail {

inline std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

inline std::optional<double> parse_number(const std::string& s) {
    if (s.empty()) return std::nullopt;
    const char* begin = s.c_str();
    char* end = nullptr;
    const double v = std::strtod(begin, &end);
    if (end != begin + s.size() || !std::isfinite(v)) return std::nullopt;
    return v;
}

} // namespace detail

/// Option letter of a multiple-choice answer: the whole answer once punctuation is
/// stripped, else the only standalone capital A-E in it.
inline std::optional<char> option_letter(std::string_view text) {
    std::string bare;
    for (char c : text) {
        if (std::isalnum(static_cast<unsigned char>(c))) bare += c;
    }
    if (bare.size() == 1) {
        const char up = static_cast<char>(std::toupper(static_cast<unsigned char>(bare[0])));
        if (up >= 'A' && up <= 'E') return up;
        return std::nullopt;
    }
    std::optional<char> found;
    std::string token;
    auto flush = [&]() -> bool {
        if (token.size() == 1 && token[0] >= 'A' && token[0] <= 'E') {
            if (found && *found != token[0]) return false;
            found = token[0];
        }
        token.clear();
        return true;
    };
    for (char c : text) {
        if (std::isalnum(static_cast<unsigned char>(c))) {
            token += c;
        } else if (!flush()) {
            return std::nullopt;
        }
    }
    if (!flush()) return std::nullopt;
    return found;
}

/// Trimmed, casefolded, whitespace collapsed to single spaces.
inline std::string normalize_answer(std::string_view text) {
    std::string out;
    bool space = false;
    for (char c : detail::trim(text)) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            space = true;
            continue;
        }
        if (space && !out.empty()) out += ' ';
        space = false;
        out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
    return out;
}

inline bool numbers_match(double a, double b, double rel = 1e-6) {
    if (a == b) return true;
    return std::fabs(a - b) <= rel * std::max(std::fabs(a), std::fabs(b));
}

inline bool verify_answer(std::string_view predicted, std::string_view groundtruth, AnswerKind kind) {
    if (kind == AnswerKind::multiple_choice) {
        auto p = option_letter(predicted);
        auto g = option_letter(groundtruth);
        return p && g && *p == *g;
    }
    const std::string p = normalize_answer(predicted);
    const std::string g = normalize_answer(groundtruth);
    if (p == g) return true;
    auto pn = detail::parse_number(p);
    auto gn = detail::parse_number(g);
    return pn && gn && numbers_match(*pn, *gn);
}

// ---------------------------------------------------------------------------
// Finalization and reporting

enum class Outcome { cota_pos, cota_neg, cot_pos, cot_neg, parse_failure };

struct OutcomeCounts {
    std::size_t cota_pos = 0;
    std::size_t cota_neg = 0;
    std::size_t cot_pos = 0;
    std::size_t cot_neg = 0;
    std::size_t parse_failures = 0;

    std::size_t total() const { return cota_pos + cota_neg + cot_pos + cot_neg + parse_failures; }

    void add(Outcome o) {
        switch (o) {
        case Outcome::cota_pos: ++cota_pos; break;
        case Outcome::cota_neg: ++cota_neg; break;
        case Outcome::cot_pos: ++cot_pos; break;
        case Outcome::cot_neg: ++cot_neg; break;
        case Outcome::parse_failure: ++parse_failures; break;
        }
    }

    OutcomeCounts& operator+=(const OutcomeCounts& o) {
        cota_pos += o.cota_pos;
        cota_neg += o.cota_neg;
        cot_pos += o.cot_pos;
        cot_neg += o.cot_neg;
        parse_failures += o.parse_failures;
        return *this;
    }

    friend bool operator==(const OutcomeCounts&, const OutcomeCounts&) = default;

    Value to_json() const {
        return Value{{"cota_pos", cota_pos}, {"cota_neg", cota_neg}, {"cot_pos", cot_pos},
                     {"cot_neg", cot_neg},   {"parse_failures", parse_failures}, {"total", total()}};
    }

    static OutcomeCounts from_json(const Value& v) {
        OutcomeCounts c;
        c.cota_pos = v.value("cota_pos", std::size_t{0});
        c.cota_neg = v.value("cota_neg", std::size_t{0});
        c.cot_pos = v.value("cot_pos", std::size_t{0});
        c.cot_neg = v.value("cot_neg", std::size_t{0});
        c.parse_failures = v.value("parse_failures", std::size_t{0});
        return c;
    }
};

struct GenerationReport {
    OutcomeCounts totals;
    std::map<std::string, OutcomeCounts> per_source;
    /// Multi-action steps seen during generation.
    std::size_t warnings = 0;

    void add(const std::string& source, Outcome o) {
        totals.add(o);
        per_source[source].add(o);
    }

    GenerationReport& operator+=(const GenerationReport& o) {
        totals += o.totals;
        for (const auto& [k, v] : o.per_source) per_source[k] += v;
        warnings += o.warnings;
        return *this;
    }

    Value to_json() const {
        Value v = totals.to_json();
        Value ps = Value::object();
        for (const auto& [k, c] : per_source) ps[k] = c.to_json();
        v["per_source"] = std::move(ps);
        v["warnings"] = warnings;
        return v;
    }

    static GenerationReport from_json(const Value& v) {
        GenerationReport r;
        r.totals = OutcomeCounts::from_json(v);
        if (v.contains("per_source")) {
            for (auto it = v.at("per_source").begin(); it != v.at("per_source").end(); ++it) {
                r.per_source[it.key()] = OutcomeCounts::from_json(it.value());
            }
        }
        r.warnings = v.value("warnings", std::size_t{0});
        return r;
    }
};

struct Finalized {
    /// What gets stored: a CoTA/CoT pos record, or DA.
    TraceRecord record;
    Outcome outcome = Outcome::parse_failure;
    /// The rejected chain for audit, when the outcome is a neg.
    std::optional<TraceRecord> reject;
};

/// True when every raw step parses and the stored steps survive a text round-trip.
inline bool steps_reparse(const EpisodeResult& episode) {
    if (episode.status == EpisodeStatus::parse_failed) return false;
    try {
        for (const auto& raw : episode.raw_steps) parse_step(raw);
        for (const auto& s : episode.chain.steps) {
            Step bare = s;
            bare.observation.reset();
            if (!(parse_step(serialize_step(bare)) == bare)) return false;
        }
    } catch (const MalformedStep&) {
        return false;
    }
    return true;
}

inline Finalized finalize_record(const QAExample& example, const EpisodeResult& episode, bool verified,
                                 Generator generator = Generator::model) {
    Finalized f;
    if (!steps_reparse(episode)) {
        f.record = make_direct_answer(example, generator);
        f.outcome = Outcome::parse_failure;
        return f;
    }
    const bool finalized = episode.chain.finalized();
    const bool ok = verified && finalized && episode.status == EpisodeStatus::terminated;
    const bool cot = episode.chain.only_terminate();

    TraceRecord full;
    full.example = example;
    full.chain = episode.chain;
    full.format = cot ? Format::CoT : Format::CoTA;
    full.polarity = ok ? Polarity::pos : Polarity::neg;
    full.generator = generator;

    if (ok) {
        f.record = std::move(full);
        f.outcome = cot ? Outcome::cot_pos : Outcome::cota_pos;
        return f;
    }
    f.record = convert_to_da(full);
    f.outcome = cot ? Outcome::cot_neg : Outcome::cota_neg;
    f.reject = std::move(full);
    return f;
}

inline bool episode_verified(const EpisodeResult& episode) {
    return episode.status == EpisodeStatus::terminated && episode.final_answer &&
           verify_answer(*episode.final_answer, episode.example.groundtruth, episode.example.answer_kind);
}

// ---------------------------------------------------------------------------
// Generation

struct GenerationOptions {
    EpisodeLimits limits;
    std::size_t workers = 4;
    std::uint64_t seed = 0;
    const AnnotationStore* store = nullptr;
    bool keep_rejects = false;
};

/// Drives one episode with the chat model as policy. Returns whatever chain was
/// produced, terminated or not; client failures surface as ClientError.
inline EpisodeResult generate_trace(ChatClient& client, const QAExample& example, const Registry& registry,
                                    Backend& backend, const GenerationOptions& options = {}) {
    RuntimeOptions ro;
    ro.limits = options.limits;
    ro.mode = StepMode::data_gen;
    ro.seed = options.seed;
    ro.store = options.store;
    ChatPolicy policy(client);
    return Runtime(registry, backend, ro).run(policy, example);
}

struct ClientFailure {
    std::size_t index = 0;
    std::string id;
    std::string error;
};

struct BatchResult {
    std::vector<TraceRecord> records;
    GenerationReport report;
    std::vector<ClientFailure> failures;
    std::vector<TraceRecord> rejects;

    /// Resumable manifest: the examples whose client calls failed.
    Value manifest() const {
        Value failed = Value::array();
        for (const auto& f : failures) failed.push_back(Value{{"index", f.index}, {"id", f.id}, {"error", f.error}});
        return Value{{"failed", std::move(failed)}};
    }
};

inline BatchResult run_batch(ChatClient& client, const std::vector<QAExample>& examples, const Registry& registry,
                             Backend& backend, const GenerationOptions& options = {}) {
    struct Slot {
        std::optional<Finalized> done;
        std::optional<std::string> error;
        std::size_t warnings = 0;
    };
    std::vector<Slot> slots(examples.size());
    // One runtime renders the system prompt once; it is read-only across workers.
    RuntimeOptions ro;
    ro.limits = options.limits;
    ro.mode = StepMode::data_gen;
    ro.seed = options.seed;
    ro.store = options.store;
    const Runtime runtime(registry, backend, ro);

    parallel_for(examples.size(), options.workers, [&](std::size_t i) {
        const QAExample& ex = examples[i];
        ChatPolicy policy(client);
        try {
            EpisodeResult ep = runtime.run(policy, ex);
            slots[i].warnings = static_cast<std::size_t>(ep.warnings);
            slots[i].done = finalize_record(ex, ep, episode_verified(ep));
        } catch (const ClientError& e) {
            slots[i].error = e.what();
        }
    });

    BatchResult out;
    for (std::size_t i = 0; i < slots.size(); ++i) {
        auto& s = slots[i];
        if (s.error) {
            out.failures.push_back({i, examples[i].id, *s.error});
            continue;
        }
        out.report.add(examples[i].source, s.done->outcome);
        out.report.warnings += s.warnings;
        out.records.push_back(std::move(s.done->record));
        if (options.keep_rejects && s.done->reject) out.rejects.push_back(std::move(*s.done->reject));
    }
    return out;
}

} // namespace cota
