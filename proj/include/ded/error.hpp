#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ded {

// Base for every error this library raises on contract violations.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// --- scene world ---

struct MalformedPrompt : Error {
    MalformedPrompt(size_t token_position, std::string expected_tokens, const std::string& got)
        : Error("malformed prompt at token " + std::to_string(token_position) + ": expected " +
                expected_tokens + ", got '" + got + "'"),
          position(token_position),
          expected(std::move(expected_tokens)) {}
    size_t position;
    std::string expected;
};

struct Unsatisfiable : Error {
    using Error::Error;
};

// --- tokenizer ---

struct InsufficientData : Error {
    using Error::Error;
};
struct DimensionMismatch : Error {
    using Error::Error;
};
struct IndexOutOfRange : Error {
    using Error::Error;
};
struct BadWrapper : Error {
    using Error::Error;
};
struct BadLength : Error {
    using Error::Error;
};
struct OutOfRange : Error {
    using Error::Error;
};
struct UntrainedVariant : Error {
    using Error::Error;
};

// --- neural core ---

struct StepOutOfRange : Error {
    using Error::Error;
};
struct MissingGradient : Error {
    using Error::Error;
};
struct NonFiniteLoss : Error {
    using Error::Error;
};

// --- drafter / diffuser ---

struct ContextOverflow : Error {
    using Error::Error;
};
struct BadTimestep : Error {
    using Error::Error;
};
struct MissingSegment : Error {
    using Error::Error;
};
struct LengthOverflow : Error {
    using Error::Error;
};
struct NonFiniteSample : Error {
    using Error::Error;
};

// --- data pipeline / bench ---

struct UntrainedCodebook : Error {
    using Error::Error;
};
struct PerturbationExhausted : Error {
    using Error::Error;
};
struct CountMismatchError : Error {
    using Error::Error;
};
struct MissingModel : Error {
    using Error::Error;
};
struct IoError : Error {
    using Error::Error;
};

}  // namespace ded
