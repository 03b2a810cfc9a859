// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cota {

/// Base of every error raised by this library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// trace-core

class MalformedStep : public Error {
public:
    using Error::Error;
};

class UnfinalizedChain : public Error {
public:
    UnfinalizedChain() : Error("chain does not end with a single Terminate action") {}
    explicit UnfinalizedChain(const std::string& what) : Error(what) {}
};

class AlreadyDirectAnswer : public Error {
public:
    AlreadyDirectAnswer() : Error("record is already in direct-answer format") {}
};

// action-registry

class EmptyRegistry : public Error {
public:
    EmptyRegistry() : Error("registry has no renderable actions") {}
};

// tool-exec

/// A tool ran but could not produce a result. The message is what the model sees.
class ToolRuntimeError : public Error {
public:
    ToolRuntimeError(std::string tool, const std::string& reason)
        : Error(reason), tool_(std::move(tool)) {}

    const std::string& tool() const noexcept { return tool_; }

private:
    std::string tool_;
};

class InvalidValue : public ToolRuntimeError {
public:
    InvalidValue(std::string tool, std::string argument, const std::string& reason)
        : ToolRuntimeError(std::move(tool), reason), argument_(std::move(argument)) {}

    const std::string& argument() const noexcept { return argument_; }

private:
    std::string argument_;
};

class MissingDepth : public ToolRuntimeError {
public:
    explicit MissingDepth(std::string tool = "EstimateRegionDepth")
        : ToolRuntimeError(std::move(tool), "No depth map is available for this image.") {}
};

class EmptyRegion : public ToolRuntimeError {
public:
    explicit EmptyRegion(std::string tool = "EstimateRegionDepth")
        : ToolRuntimeError(std::move(tool), "The bounding box covers no depth cells.") {}
};

class EmptyCandidates : public ToolRuntimeError {
public:
    explicit EmptyCandidates(std::string tool)
        : ToolRuntimeError(std::move(tool), "No candidates to compare against.") {}
};

/// Server-side failure reported over the wire, or a response that breaks the protocol.
class RemoteToolError : public ToolRuntimeError {
public:
    RemoteToolError(std::string tool, std::string kind, const std::string& message)
        : ToolRuntimeError(std::move(tool), message), kind_(std::move(kind)) {}

    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

/// The backend could not be reached at all (connection refused, timeout).
class BackendUnavailable : public Error {
public:
    using Error::Error;
};

class ExpressionSyntaxError : public Error {
public:
    ExpressionSyntaxError(const std::string& what, std::size_t position)
        : Error(what + " at position " + std::to_string(position)), position_(position) {}

    std::size_t position() const noexcept { return position_; }

private:
    std::size_t position_;
};

class DivisionByZero : public Error {
public:
    DivisionByZero() : Error("division by zero") {}
};

class UnsupportedEquation : public Error {
public:
    using Error::Error;
};

// agent-runtime / gen-model

/// A policy or chat client failed to produce a response.
class ClientError : public Error {
public:
    ClientError(std::string example_id, const std::string& what)
        : Error(example_id.empty() ? what : example_id + ": " + what), example_id_(std::move(example_id)) {}

    const std::string& example_id() const noexcept { return example_id_; }

private:
    std::string example_id_;
};

// gen-program

class UnanswerableInstance : public Error {
public:
    using Error::Error;
};

class InsufficientAnnotations : public Error {
public:
    using Error::Error;
};

// data-ops

class InsufficientSamples : public Error {
public:
    InsufficientSamples(const std::string& source, std::size_t have, std::size_t need)
        : Error("source '" + source + "' has " + std::to_string(have) + " samples, need at least " +
                std::to_string(need)) {}
};

class ProgramPoolTooSmall : public Error {
public:
    ProgramPoolTooSmall(std::size_t want, std::size_t have)
        : Error("program pool has " + std::to_string(have) + " records, recipe needs " + std::to_string(want)) {}
};

class SchemaViolation : public Error {
public:
    SchemaViolation(std::size_t line, std::string field, const std::string& reason)
        : Error("line " + std::to_string(line) + ": field '" + field + "': " + reason),
          line_(line),
          field_(std::move(field)) {}

    std::size_t line() const noexcept { return line_; }
    const std::string& field() const noexcept { return field_; }

private:
    std::size_t line_;
    std::string field_;
};

// eval

class JudgeUnavailable : public Error {
public:
    using Error::Error;
};

class EmptyBenchmark : public Error {
public:
    EmptyBenchmark() : Error("benchmark contains no examples") {}
};

} // namespace cota
