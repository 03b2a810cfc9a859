// SPDX-License-Identifier: Apache-2.0
#pragma once

// JSON text helpers shared by every module: the canonical compact form used on
// the wire and in records, the Python-style form the generation prompt uses,
// and the 2-decimal rounding the tools apply to every number they report.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace cota {

/// Argument values, observation payloads and record fields. Keeps insertion order
/// so prompt rendering can reproduce source order; canonical output sorts.
using Value = nlohmann::ordered_json;

/// Rounds half away from zero to `decimals` places.
inline double round_to(double x, int decimals) {
    const double scale = std::pow(10.0, decimals);
    return std::round(x * scale) / scale;
}

inline double round2(double x) { return round_to(x, 2); }

/// Integral doubles inside the exact range become JSON integers, so "2 + 2" reports 4, not 4.0.
inline Value number_value(double x) {
    if (std::isfinite(x) && std::trunc(x) == x && std::fabs(x) < 9007199254740992.0) {
        return Value(static_cast<std::int64_t>(x));
    }
    return Value(x);
}

namespace detail {

inline void dump_scalar(const Value& v, std::string& out, bool ensure_ascii) {
    out += v.dump(-1, ' ', ensure_ascii, nlohmann::detail::error_handler_t::strict);
}

inline void dump_canonical(const Value& v, std::string& out) {
    if (v.is_object()) {
        std::vector<const std::string*> keys;
        keys.reserve(v.size());
        for (auto it = v.begin(); it != v.end(); ++it) keys.push_back(&it.key());
        std::sort(keys.begin(), keys.end(), [](auto* a, auto* b) { return *a < *b; });
        out += '{';
        bool first = true;
        for (const auto* key : keys) {
            if (!first) out += ',';
            first = false;
            dump_scalar(Value(*key), out, false);
            out += ':';
            dump_canonical(v.at(*key), out);
        }
        out += '}';
    } else if (v.is_array()) {
        out += '[';
        bool first = true;
        for (const auto& item : v) {
            if (!first) out += ',';
            first = false;
            dump_canonical(item, out);
        }
        out += ']';
    } else {
        dump_scalar(v, out, false);
    }
}

inline void dump_python(const Value& v, std::string& out) {
    if (v.is_object()) {
        out += '{';
        bool first = true;
        for (auto it = v.begin(); it != v.end(); ++it) {
            if (!first) out += ", ";
            first = false;
            dump_scalar(Value(it.key()), out, true);
            out += ": ";
            dump_python(it.value(), out);
        }
        out += '}';
    } else if (v.is_array()) {
        out += '[';
        bool first = true;
        for (const auto& item : v) {
            if (!first) out += ", ";
            first = false;
            dump_python(item, out);
        }
        out += ']';
    } else {
        dump_scalar(v, out, true);
    }
}

} // namespace detail

/// Sorted keys, no insignificant whitespace.
inline std::string canonical_dump(const Value& v) {
    std::string out;
    detail::dump_canonical(v, out);
    return out;
}

/// Insertion order with ", " and ": " separators and ASCII escapes (Python json.dumps defaults).
inline std::string python_dump(const Value& v) {
    std::string out;
    detail::dump_python(v, out);
    return out;
}

/// Python repr() of a str: single quotes unless the text holds a single quote and no double quote.
inline std::string python_repr(std::string_view s) {
    const bool has_single = s.find('\'') != std::string_view::npos;
    const bool has_double = s.find('"') != std::string_view::npos;
    const char quote = (has_single && !has_double) ? '"' : '\'';
    std::string out(1, quote);
    for (char c : s) {
        switch (c) {
        case '\\': out += "\\\\"; break;
        case '\n': out += "\\n"; break;
        case '\r': out += "\\r"; break;
        case '\t': out += "\\t"; break;
        default:
            if (c == quote) out += '\\';
            out += c;
        }
    }
    out += quote;
    return out;
}

/// Python repr() of a dict of str -> str, in the given order.
inline std::string python_repr(const std::vector<std::pair<std::string, std::string>>& items) {
    std::string out = "{";
    bool first = true;
    for (const auto& [k, v] : items) {
        if (!first) out += ", ";
        first = false;
        out += python_repr(k);
        out += ": ";
        out += python_repr(v);
    }
    out += '}';
    return out;
}

/// Text form of a scalar answer: strings verbatim, everything else canonical JSON.
inline std::string value_text(const Value& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number_float()) return canonical_dump(number_value(v.get<double>()));
    return canonical_dump(v);
}

/// Structural equality that ignores object key order.
inline bool same_value(const Value& a, const Value& b) { return canonical_dump(a) == canonical_dump(b); }

} // namespace cota
