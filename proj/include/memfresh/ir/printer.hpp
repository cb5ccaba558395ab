#pragma once

#include "memfresh/ir/module.hpp"

#include <string>

namespace memfresh::ir {

/// Canonical `.zir` text. Aggregates come first, so every named type is
/// defined before use, and parse_module(print_module(m)) == m.
std::string print_module(const Module& m);

std::string print_instr(const Instr& in);

}  // namespace memfresh::ir
