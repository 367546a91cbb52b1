#pragma once

#include <string>
#include <string_view>
#include <variant>

#include "sdcore/model.hpp"

namespace sd {

struct ParseError {
    int line = 0;    // 1-based
    int column = 0;  // 1-based
    std::string message;
    std::string token;  // offending token text, empty at end of input

    std::string to_string() const;
};

using ModelParse = std::variant<Model, ParseError>;
using OverrideParse = std::variant<OverrideSet, ParseError>;

/// Parses the model DSL. Total: any input yields a Model or a ParseError,
/// never a crash. Duplicate definitions and unknown builtins are parse errors.
ModelParse parse_model(std::string_view text);

/// Canonical text form: MODEL header, then STOCK, FLOW, AUX, CONST, TABLE
/// definitions, each group lexicographically sorted. Numbers use shortest
/// round-trip formatting, so serialize(parse(serialize(m))) == serialize(m)
/// byte for byte. Requires a valid model.
std::string serialize_model(const Model& model);

/// Override file: one `name = value` (Set) or `name *= factor` (Scale) per
/// line, `#` comments, blank lines ignored.
OverrideParse parse_override_set(std::string_view text);

/// Serializes an override set in the file format, sorted by target.
std::string serialize_override_set(const OverrideSet& overrides);

/// Parses a single expression (used by tests and tools).
std::variant<ExprPtr, ParseError> parse_expression(std::string_view text);

/// Shortest-round-trip decimal rendering used across all text output.
std::string format_double(double v);

}  // namespace sd
