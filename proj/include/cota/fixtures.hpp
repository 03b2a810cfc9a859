// SPDX-License-Identifier: Apache-2.0
#pragma once

// Shared conformance fixtures for out-of-process tool servers.

#include <cstdio>
#include <string>
#include <vector>

#include "cota/expression.hpp"
#include "cota/json_text.hpp"
#include "cota/scene.hpp"

namespace cota {

namespace detail {

inline std::string random_operand(Rng& rng) {
    char buf[32];
    const auto whole = rng.below(100);
    if (rng.below(3) == 0) {
        std::snprintf(buf, sizeof buf, "%llu.%llu", static_cast<unsigned long long>(whole),
                      static_cast<unsigned long long>(rng.below(100)));
    } else {
        std::snprintf(buf, sizeof buf, "%llu", static_cast<unsigned long long>(whole));
    }
    return buf;
}

inline std::string random_expression(Rng& rng, int depth) {
    if (depth == 0 || rng.below(3) == 0) return random_operand(rng);
    static const char* ops[] = {" + ", " - ", " * ", " / ", "+", "-", "*", "/"};
    std::string lhs = random_expression(rng, depth - 1);
    std::string rhs = random_expression(rng, depth - 1);
    if (rng.below(2) == 0) lhs = "(" + lhs + ")";
    if (rng.below(2) == 0) rhs = "(" + rhs + ")";
    return lhs + ops[rng.below(8)] + rhs;
}

} // namespace detail

/// {"expression", "result"} pairs. Opens with hand-written cases, then seeded
/// random expressions; none of them divides by zero.
inline Value calculate_conformance_vector(std::size_t n = 100, std::uint64_t seed = 7) {
    std::vector<std::string> exprs{"2 + 2", "(0.6-0.5) * (0.8-0.6)", "(3 + 5) / 2", "-4 * -2.5", "10 / 4", "1 - 1 - 1",
                                   "2 * (3 + 4) - 5 / (1 + 1)"};
    Rng rng(seed);
    while (exprs.size() < n) {
        std::string e = detail::random_expression(rng, 3);
        try {
            eval_expression(e);
        } catch (const Error&) {
            continue;
        }
        exprs.push_back(std::move(e));
    }
    exprs.resize(n);
    Value out = Value::array();
    for (const auto& e : exprs) out.push_back(Value{{"expression", e}, {"result", number_value(eval_expression(e))}});
    return out;
}

} // namespace cota
