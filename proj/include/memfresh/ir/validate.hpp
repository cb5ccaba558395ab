#pragma once

#include "memfresh/ir/module.hpp"

#include <optional>
#include <string>
#include <vector>

namespace memfresh::ir {

struct Diagnostic {
    std::uint32_t instr_id = 0;  // 0 when not tied to an instruction
    std::string rule;
    std::string message;
    std::string function;

    std::string str() const;
};

/// Empty iff the module is well formed. Rules: ssa-single-def,
/// undefined-register, use-before-def, unknown-global, unknown-function,
/// unknown-label, duplicate-label, no-blocks, missing-terminator,
/// terminator-not-last, type-mismatch, arity-mismatch, bad-index,
/// return-type, param-type, global-init-size, hybrid-global-use.
std::vector<Diagnostic> validate_module(const Module& m);

/// Type reached by a gep over `base` with the given operands (the first one
/// strides over `base` itself). Empty with `why` set when the path is invalid.
std::optional<Type> gep_target(const Type& base, const std::vector<Operand>& indices, std::size_t first,
                               const Module& m, std::string* why = nullptr);

/// Throws std::runtime_error listing every diagnostic when validation fails.
void require_valid(const Module& m);

}  // namespace memfresh::ir
