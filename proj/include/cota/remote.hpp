// SPDX-License-Identifier: Apache-2.0
#pragma once

// HTTP clients: the tool-server backend and an OpenAI-style chat endpoint.
// Credentials come from the environment only (COTA_TOOL_TOKEN, COTA_API_KEY).

#include <chrono>
#include <cstdlib>
#include <optional>
#include <string>
#include <thread>

#include <httplib.h>

#include "cota/backend.hpp"
#include "cota/gen_model.hpp"

namespace cota {

inline std::optional<std::string> env_value(const char* name) {
    const char* v = std::getenv(name);
    if (!v || !*v) return std::nullopt;
    return std::string(v);
}

/// Strips an optional "remote:" prefix and a trailing slash.
inline std::string endpoint_url(std::string spec) {
    if (spec.rfind("remote:", 0) == 0) spec = spec.substr(7);
    while (!spec.empty() && spec.back() == '/') spec.pop_back();
    return spec;
}

struct RemoteOptions {
    std::string url;
    double timeout_seconds = 30.0;
    /// Sent as X-Tool-Token; defaults to COTA_TOOL_TOKEN.
    std::optional<std::string> token;
};

namespace detail {

inline void apply_timeout(httplib::Client& cli, double seconds) {
    const auto us = std::chrono::microseconds(static_cast<long long>(seconds * 1e6));
    const auto sec = std::chrono::duration_cast<std::chrono::seconds>(us);
    const auto rest = us - sec;
    cli.set_connection_timeout(sec.count(), rest.count());
    cli.set_read_timeout(sec.count(), rest.count());
    cli.set_write_timeout(sec.count(), rest.count());
}

inline Value context_images(const ExecutionContext& ctx) {
    Value images = Value::object();
    for (const auto& [ref, h] : ctx.images()) {
        images[ref] = Value{{"source", h.source}, {"width", h.width}, {"height", h.height}};
    }
    return images;
}

} // namespace detail

/// Client side of the tool-server wire protocol.
///   POST /execute {"name", "arguments", "context": {"images": {...}}}
///     -> {"payload": {...}, "new_images": [...]} | {"error_kind", "message"}
class RemoteBackend : public Backend {
public:
    explicit RemoteBackend(RemoteOptions options) : opts_(std::move(options)) {
        opts_.url = endpoint_url(opts_.url);
        if (!opts_.token) opts_.token = env_value("COTA_TOOL_TOKEN");
    }

    Observation execute(const ActionCall& call, ExecutionContext& ctx) override {
        const Value body{{"name", call.name},
                         {"arguments", call.arguments},
                         {"context", Value{{"images", detail::context_images(ctx)}}}};
        auto res = post("/execute", canonical_dump(body));
        if (!res) {
            throw BackendUnavailable("tool server " + opts_.url + " unreachable: " + httplib::to_string(res.error()));
        }
        Value v;
        try {
            v = Value::parse(res->body);
        } catch (const nlohmann::json::exception&) {
            throw RemoteToolError(call.name, "protocol", "Malformed response from tool server.");
        }
        if (!v.is_object()) throw RemoteToolError(call.name, "protocol", "Malformed response from tool server.");
        if (v.contains("error_kind")) {
            throw RemoteToolError(call.name, value_text(v.at("error_kind")),
                                  v.contains("message") ? value_text(v.at("message")) : "Tool server error.");
        }
        if (res->status >= 400 || !v.contains("payload") || !v.at("payload").is_object()) {
            throw RemoteToolError(call.name, "protocol", "Malformed response from tool server.");
        }
        Observation obs;
        obs.payload = v.at("payload");
        for (const auto& n : v.value("new_images", Value::array())) {
            std::string ref;
            ImageHandle h;
            h.source = "remote";
            if (n.is_string()) {
                ref = n.get<std::string>();
            } else if (n.is_object() && n.contains("ref") && n.at("ref").is_string()) {
                ref = n.at("ref").get<std::string>();
                h.width = n.value("width", h.width);
                h.height = n.value("height", h.height);
            } else {
                throw RemoteToolError(call.name, "protocol", "Malformed new_images entry.");
            }
            ctx.adopt(ref, std::move(h));
            obs.new_images.push_back(ref);
        }
        return obs;
    }

    /// GET /specs: the server's registry export.
    Value specs() const {
        auto res = get("/specs");
        if (!res) throw BackendUnavailable("tool server " + opts_.url + " unreachable");
        return Value::parse(res->body);
    }

    bool healthy() const {
        auto res = get("/health");
        if (!res || res->status != 200) return false;
        try {
            return Value::parse(res->body).value("status", std::string()) == "ok";
        } catch (const nlohmann::json::exception&) {
            return false;
        }
    }

private:
    httplib::Headers headers() const {
        httplib::Headers h;
        if (opts_.token) h.emplace("X-Tool-Token", *opts_.token);
        return h;
    }

    // A client per request; httplib clients are not meant to be shared across threads.
    httplib::Result post(const std::string& path, const std::string& body) const {
        httplib::Client cli(opts_.url);
        detail::apply_timeout(cli, opts_.timeout_seconds);
        return cli.Post(path, headers(), body, "application/json");
    }

    httplib::Result get(const std::string& path) const {
        httplib::Client cli(opts_.url);
        detail::apply_timeout(cli, opts_.timeout_seconds);
        return cli.Get(path, headers());
    }

    RemoteOptions opts_;
};

struct RemoteChatOptions {
    std::string url;
    std::string model = "gpt-4o";
    std::string path = "/v1/chat/completions";
    double timeout_seconds = 120.0;
    /// Bearer token; defaults to COTA_API_KEY.
    std::optional<std::string> api_key;
};

/// OpenAI-compatible chat completions.
class RemoteChatClient : public ChatClient {
public:
    explicit RemoteChatClient(RemoteChatOptions options) : opts_(std::move(options)) {
        opts_.url = endpoint_url(opts_.url);
        if (!opts_.api_key) opts_.api_key = env_value("COTA_API_KEY");
    }

    std::string complete(const ChatRequest& request) override {
        Value messages = Value::array();
        for (const auto& m : request.messages) messages.push_back(Value{{"role", m.role}, {"content", m.content}});
        const Value body{{"model", opts_.model},
                         {"messages", std::move(messages)},
                         {"max_tokens", request.max_new_tokens},
                         {"temperature", request.temperature}};
        httplib::Client cli(opts_.url);
        detail::apply_timeout(cli, opts_.timeout_seconds);
        httplib::Headers h;
        if (opts_.api_key) h.emplace("Authorization", "Bearer " + *opts_.api_key);
        auto res = cli.Post(opts_.path, h, body.dump(), "application/json");
        if (!res) throw ClientError(request.example_id, "chat endpoint unreachable: " + httplib::to_string(res.error()));
        if (res->status != 200) {
            throw ClientError(request.example_id, "chat endpoint returned HTTP " + std::to_string(res->status));
        }
        try {
            const Value v = Value::parse(res->body);
            return v.at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const nlohmann::json::exception& e) {
            throw ClientError(request.example_id, std::string("malformed chat response: ") + e.what());
        }
    }

private:
    RemoteChatOptions opts_;
};

} // namespace cota
