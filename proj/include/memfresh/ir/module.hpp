#pragma once

#include "memfresh/ir/type.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace memfresh::ir {

struct SourceLoc {
    std::uint32_t line = 0;
    std::uint32_t col = 0;
};

struct Operand {
    enum class Kind : std::uint8_t { Reg, Imm, Global };

    Kind kind = Kind::Imm;
    std::string name;  // register or global name, without sigil
    std::uint64_t imm = 0;

    static Operand reg(std::string n) { return {Kind::Reg, std::move(n), 0}; }
    static Operand constant(std::uint64_t v) { return {Kind::Imm, {}, v}; }
    static Operand global(std::string n) { return {Kind::Global, std::move(n), 0}; }

    bool is_reg() const { return kind == Kind::Reg; }
    bool is_imm() const { return kind == Kind::Imm; }
    bool is_global() const { return kind == Kind::Global; }

    std::string str() const;
    friend bool operator==(const Operand&, const Operand&) = default;
};

enum class Opcode : std::uint8_t {
    Alloca,
    Load,
    Store,
    Gep,
    Add,
    Sub,
    Mul,
    And,
    Or,
    Xor,
    Shl,
    Lshr,
    Icmp,
    Select,
    Zext,
    Trunc,
    PtrToInt,
    IntToPtr,
    Br,
    CondBr,
    Ret,
    Call,
    FnAddr,
    Malloc,
    Free,
    Memcpy,
    Memset,
    Declassify,
    // Only produced by the hardening passes.
    BlkLoad,
    BlkStore,
    CtrInc,
    MaskGen,
};

enum class CmpPred : std::uint8_t { Eq, Ne, Ult, Slt };

enum class MaskRng : std::uint8_t { Incrementing, XorShift128Plus, KeyedHash };

std::string_view opcode_name(Opcode op);
std::optional<Opcode> opcode_from_name(std::string_view name);
std::string_view pred_name(CmpPred p);
std::optional<CmpPred> pred_from_name(std::string_view name);
std::string_view mask_rng_name(MaskRng r);
std::optional<MaskRng> mask_rng_from_name(std::string_view name);

bool is_binary(Opcode op);
bool is_terminator(Opcode op);
bool is_hardening_only(Opcode op);

/// One instruction. Field use per opcode:
///   type    : alloca/load/store/gep/binop/icmp/select element or operand type,
///              call return type, memcpy/memset element type, cast source type,
///              blkload/blkstore block type, maskgen value type.
///   to_type : zext/trunc destination.
///   args    : value operands in source order. For an indirect call args[0]
///              is the callee address.
struct Instr {
    std::uint32_t id = 0;
    Opcode op = Opcode::Ret;
    std::string result;
    Type type;
    Type to_type;
    CmpPred pred = CmpPred::Eq;
    MaskRng rng = MaskRng::Incrementing;
    std::vector<Operand> args;
    std::vector<std::string> targets;
    std::string callee;  // direct call / fnaddr; empty for an indirect call
    SourceLoc loc;

    bool has_result() const { return !result.empty(); }
    bool is_indirect_call() const { return op == Opcode::Call && callee.empty(); }

    // Structural equality; source locations are ignored.
    friend bool operator==(const Instr& a, const Instr& b);
};

struct BasicBlock {
    std::string label;
    std::vector<Instr> instrs;
    friend bool operator==(const BasicBlock&, const BasicBlock&) = default;
};

struct Param {
    std::string name;
    Type type;
    friend bool operator==(const Param&, const Param&) = default;
};

struct Function {
    std::string name;
    std::vector<Param> params;
    Type ret;
    bool protect = false;
    std::vector<BasicBlock> blocks;
    SourceLoc loc;

    friend bool operator==(const Function& a, const Function& b);
};

struct Global {
    std::string name;
    Type type;
    std::vector<std::uint8_t> init;  // empty = zeroinit
    SourceLoc loc;

    bool zero_init() const { return init.empty(); }
    friend bool operator==(const Global& a, const Global& b);
};

struct AggregateDef {
    std::string name;
    std::vector<Type> fields;
    friend bool operator==(const AggregateDef&, const AggregateDef&) = default;
};

/// How the VM seeds the freshness counter / mask generator of a hardened module.
struct CounterSeedPolicy {
    bool random = true;
    std::uint64_t seed = 0;

    static CounterSeedPolicy per_run_random() { return {true, 0}; }
    static CounterSeedPolicy fixed(std::uint64_t s) { return {false, s}; }
    friend bool operator==(const CounterSeedPolicy&, const CounterSeedPolicy&) = default;
};

struct Module {
    std::vector<AggregateDef> aggregates;
    std::vector<Global> globals;
    std::vector<Function> functions;
    std::optional<CounterSeedPolicy> counter;
    std::optional<std::uint64_t> shadow_displacement;

    const AggregateDef* find_aggregate(std::string_view name) const;
    const Global* find_global(std::string_view name) const;
    const Function* find_function(std::string_view name) const;
    Function* find_function(std::string_view name);

    /// Reassigns instruction ids in source order, starting at 1.
    void renumber();
    std::size_t instruction_count() const;

    friend bool operator==(const Module&, const Module&) = default;
};

/// Packed byte size of a type (no alignment padding between fields).
std::uint64_t size_of(const Type& t, const Module& m);

/// A primitive leaf reached by a depth-first walk of a type.
struct Leaf {
    std::vector<std::uint32_t> path;  // array index / field index per level
    Type type;
    std::uint64_t offset = 0;  // packed byte offset in the original type
};

/// Depth-first, declaration-order list of primitive leaves.
std::vector<Leaf> leaves_of(const Type& t, const Module& m);

/// Number of primitive leaves without materializing them.
std::uint64_t leaf_count(const Type& t, const Module& m);

/// Result type of the instruction, or void.
Type result_type(const Instr& in, const Module& m);

/// Type of every register (parameters and instruction results) of a function.
/// Registers defined more than once keep their first definition.
std::map<std::string, Type> register_types(const Function& f, const Module& m);

}  // namespace memfresh::ir
