// SPDX-License-Identifier: Apache-2.0
#pragma once

// Arithmetic for the Calculate tool and the linear solver behind the offline
// SolveMathEquation.
//
//   expr    := term (('+' | '-') term)*
//   term    := unary (('*' | '/') unary)*
//   unary   := '-' unary | primary
//   primary := number | '(' expr ')'
//   number  := digits ['.' digits] | '.' digits

#include <cctype>
#include <charconv>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cota/error.hpp"
#include "cota/json_text.hpp"

namespace cota {

namespace detail {

class Cursor {
public:
    explicit Cursor(std::string_view text) : text_(text) {}

    void skip_space() {
        while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    }

    char peek() {
        skip_space();
        return pos_ < text_.size() ? text_[pos_] : '\0';
    }

    bool eat(char c) {
        if (peek() != c) return false;
        ++pos_;
        return true;
    }

    bool at_end() { return peek() == '\0'; }
    std::size_t pos() const { return pos_; }

    /// Reads a decimal literal at the cursor, or returns nullopt without consuming.
    std::optional<double> number() {
        skip_space();
        const std::size_t start = pos_;
        std::size_t end = pos_;
        bool digits = false;
        while (end < text_.size() && std::isdigit(static_cast<unsigned char>(text_[end]))) {
            ++end;
            digits = true;
        }
        if (end < text_.size() && text_[end] == '.') {
            ++end;
            while (end < text_.size() && std::isdigit(static_cast<unsigned char>(text_[end]))) {
                ++end;
                digits = true;
            }
        }
        if (!digits) return std::nullopt;
        double value = 0.0;
        auto [ptr, ec] = std::from_chars(text_.data() + start, text_.data() + end, value);
        if (ec == std::errc::result_out_of_range) {
            value = HUGE_VAL;
        } else if (ec != std::errc() || ptr != text_.data() + end) {
            throw ExpressionSyntaxError("bad number", start);
        }
        pos_ = end;
        return value;
    }

    /// Reads one ASCII letter at the cursor.
    std::optional<char> letter() {
        char c = peek();
        if (!std::isalpha(static_cast<unsigned char>(c))) return std::nullopt;
        ++pos_;
        return c;
    }

private:
    std::string_view text_;
    std::size_t pos_ = 0;
};

class ArithmeticParser {
public:
    explicit ArithmeticParser(std::string_view text) : cur_(text) {}

    double parse() {
        if (cur_.at_end()) throw ExpressionSyntaxError("empty expression", 0);
        double v = expr();
        if (!cur_.at_end()) throw ExpressionSyntaxError("unexpected character", cur_.pos());
        return v;
    }

private:
    double expr() {
        double v = term();
        for (;;) {
            if (cur_.eat('+')) {
                v += term();
            } else if (cur_.eat('-')) {
                v -= term();
            } else {
                return v;
            }
        }
    }

    double term() {
        double v = unary();
        for (;;) {
            if (cur_.eat('*')) {
                v *= unary();
            } else if (cur_.eat('/')) {
                double d = unary();
                if (d == 0.0) throw DivisionByZero();
                v /= d;
            } else {
                return v;
            }
        }
    }

    double unary() {
        if (cur_.eat('-')) return -unary();
        return primary();
    }

    double primary() {
        if (cur_.eat('(')) {
            double v = expr();
            if (!cur_.eat(')')) throw ExpressionSyntaxError("expected ')'", cur_.pos());
            return v;
        }
        if (auto n = cur_.number()) return *n;
        throw ExpressionSyntaxError(cur_.at_end() ? "unexpected end of expression" : "expected a number",
                                    cur_.pos());
    }

    Cursor cur_;
};

} // namespace detail

/// Evaluates decimal arithmetic with + - * /, unary minus and parentheses.
inline double eval_expression(std::string_view expr) { return detail::ArithmeticParser(expr).parse(); }

// ---------------------------------------------------------------------------
// Linear equations

namespace detail {

/// slope * x + offset
struct Linear {
    double slope = 0.0;
    double offset = 0.0;

    bool constant() const { return slope == 0.0; }
};

class LinearParser {
public:
    explicit LinearParser(std::string_view text) : cur_(text) {}

    Linear parse_side() {
        if (cur_.at_end()) throw UnsupportedEquation("empty side of equation");
        Linear v = expr();
        if (!cur_.at_end()) throw UnsupportedEquation("unexpected text in equation");
        return v;
    }

    std::optional<char> variable() const { return variable_; }
    void share_variable(std::optional<char> v) { variable_ = v; }

private:
    Linear expr() {
        Linear v = term();
        for (;;) {
            if (cur_.eat('+')) {
                auto r = term();
                v = {v.slope + r.slope, v.offset + r.offset};
            } else if (cur_.eat('-')) {
                auto r = term();
                v = {v.slope - r.slope, v.offset - r.offset};
            } else {
                return v;
            }
        }
    }

    static Linear multiply(const Linear& a, const Linear& b) {
        if (!a.constant() && !b.constant()) throw UnsupportedEquation("equation is not linear");
        return {a.slope * b.offset + b.slope * a.offset, a.offset * b.offset};
    }

    Linear term() {
        Linear v = power();
        for (;;) {
            if (cur_.eat('*')) {
                v = multiply(v, power());
            } else if (cur_.eat('/')) {
                auto d = power();
                if (!d.constant()) throw UnsupportedEquation("division by the unknown");
                if (d.offset == 0.0) throw DivisionByZero();
                v = {v.slope / d.offset, v.offset / d.offset};
            } else if (starts_primary()) {
                v = multiply(v, power()); // implicit product: 2x, 3(x+1)
            } else {
                return v;
            }
        }
    }

    Linear power() {
        Linear base = unary();
        if (!cur_.eat('^')) return base;
        Linear exponent = power();
        if (!exponent.constant()) throw UnsupportedEquation("unknown in an exponent");
        const double e = exponent.offset;
        if (base.constant()) return {0.0, std::pow(base.offset, e)};
        if (e == 1.0) return base;
        if (e == 0.0) return {0.0, 1.0};
        throw UnsupportedEquation("equation is not linear");
    }

    Linear unary() {
        if (cur_.eat('-')) {
            auto v = unary();
            return {-v.slope, -v.offset};
        }
        if (cur_.eat('+')) return unary();
        return primary();
    }

    bool starts_primary() {
        char c = cur_.peek();
        return c == '(' || c == '.' || std::isalnum(static_cast<unsigned char>(c));
    }

    Linear primary() {
        if (cur_.eat('(')) {
            auto v = expr();
            if (!cur_.eat(')')) throw UnsupportedEquation("unbalanced parentheses");
            return v;
        }
        if (auto n = cur_.number()) return {0.0, *n};
        if (auto c = cur_.letter()) {
            if (variable_ && *variable_ != *c) throw UnsupportedEquation("more than one unknown");
            variable_ = *c;
            return {1.0, 0.0};
        }
        throw UnsupportedEquation("unexpected text in equation");
    }

    Cursor cur_;
    std::optional<char> variable_;
};

/// The clause of `query` holding '=', with plain words ("Solve", "what") dropped.
inline std::string equation_clause(std::string_view query) {
    std::size_t eq = query.find('=');
    if (eq == std::string_view::npos) throw UnsupportedEquation("no equation found");
    std::size_t begin = query.find_last_of(",;?:\n", eq);
    begin = begin == std::string_view::npos ? 0 : begin + 1;
    std::size_t end = query.find_first_of(",;?:\n", eq);
    if (end == std::string_view::npos) end = query.size();
    std::string_view clause = query.substr(begin, end - begin);

    std::string out;
    std::size_t i = 0;
    while (i < clause.size()) {
        if (std::isalpha(static_cast<unsigned char>(clause[i]))) {
            std::size_t j = i;
            while (j < clause.size() && std::isalpha(static_cast<unsigned char>(clause[j]))) ++j;
            const bool word_start = i == 0 || !std::isalnum(static_cast<unsigned char>(clause[i - 1]));
            if (j - i >= 2 && word_start) {
                i = j; // a word, not a variable
                continue;
            }
            out.append(clause.substr(i, j - i));
            i = j;
        } else {
            out += clause[i++];
        }
    }
    return out;
}

} // namespace detail

struct LinearSolution {
    char variable = 'x';
    double value = 0.0;

    /// "x = 8"
    std::string text() const {
        const double v = value == 0.0 ? 0.0 : value;
        return std::string(1, variable) + " = " + value_text(number_value(v));
    }
};

/// Solves one equation in one unknown that reduces to a*x + b = 0 with a != 0.
inline LinearSolution solve_linear(std::string_view query) {
    const std::string clause = detail::equation_clause(query);
    const std::size_t eq = clause.find('=');
    if (clause.find('=', eq + 1) != std::string::npos) throw UnsupportedEquation("more than one '='");

    detail::LinearParser left(std::string_view(clause).substr(0, eq));
    auto lhs = left.parse_side();
    detail::LinearParser right(std::string_view(clause).substr(eq + 1));
    right.share_variable(left.variable());
    auto rhs = right.parse_side();

    const double slope = lhs.slope - rhs.slope;
    const double offset = lhs.offset - rhs.offset;
    if (slope == 0.0 || !std::isfinite(slope)) throw UnsupportedEquation("no unique solution");
    auto var = right.variable() ? right.variable() : left.variable();
    return LinearSolution{var.value_or('x'), -offset / slope};
}

} // namespace cota
