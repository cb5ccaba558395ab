#pragma once

#include "memfresh/ir/module.hpp"

#include <stdexcept>
#include <string>
#include <string_view>

namespace memfresh::ir {

/// Syntax or name-resolution failure, positioned at the offending token.
class ParseError : public std::runtime_error {
public:
    ParseError(SourceLoc loc, const std::string& message);

    SourceLoc loc() const { return loc_; }
    const std::string& message() const { return message_; }

private:
    SourceLoc loc_;
    std::string message_;
};

/// Parses `.zir` text. Instruction ids are assigned in source order.
Module parse_module(std::string_view text);

/// Parses a standalone type expression, e.g. "[4 x i32]". Named aggregates
/// resolve against `types`.
Type parse_type(std::string_view text, const Module& types);

}  // namespace memfresh::ir
