#include "memfresh/ir/module.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <array>
#include <stdexcept>

namespace memfresh::ir {

namespace {

struct OpInfo {
    Opcode op;
    std::string_view name;
};

constexpr std::array kOpcodes{
    OpInfo{Opcode::Alloca, "alloca"},     OpInfo{Opcode::Load, "load"},
    OpInfo{Opcode::Store, "store"},       OpInfo{Opcode::Gep, "gep"},
    OpInfo{Opcode::Add, "add"},           OpInfo{Opcode::Sub, "sub"},
    OpInfo{Opcode::Mul, "mul"},           OpInfo{Opcode::And, "and"},
    OpInfo{Opcode::Or, "or"},             OpInfo{Opcode::Xor, "xor"},
    OpInfo{Opcode::Shl, "shl"},           OpInfo{Opcode::Lshr, "lshr"},
    OpInfo{Opcode::Icmp, "icmp"},         OpInfo{Opcode::Select, "select"},
    OpInfo{Opcode::Zext, "zext"},         OpInfo{Opcode::Trunc, "trunc"},
    OpInfo{Opcode::PtrToInt, "ptrtoint"}, OpInfo{Opcode::IntToPtr, "inttoptr"},
    OpInfo{Opcode::Br, "br"},             OpInfo{Opcode::CondBr, "condbr"},
    OpInfo{Opcode::Ret, "ret"},           OpInfo{Opcode::Call, "call"},
    OpInfo{Opcode::FnAddr, "fnaddr"},     OpInfo{Opcode::Malloc, "malloc"},
    OpInfo{Opcode::Free, "free"},         OpInfo{Opcode::Memcpy, "memcpy"},
    OpInfo{Opcode::Memset, "memset"},     OpInfo{Opcode::Declassify, "declassify"},
    OpInfo{Opcode::BlkLoad, "blkload"},   OpInfo{Opcode::BlkStore, "blkstore"},
    OpInfo{Opcode::CtrInc, "ctrinc"},     OpInfo{Opcode::MaskGen, "maskgen"},
};

}  // namespace

std::string_view opcode_name(Opcode op)
{
    for (const auto& info : kOpcodes) {
        if (info.op == op) {
            return info.name;
        }
    }
    return "?";
}

std::optional<Opcode> opcode_from_name(std::string_view name)
{
    for (const auto& info : kOpcodes) {
        if (info.name == name) {
            return info.op;
        }
    }
    return std::nullopt;
}

std::string_view pred_name(CmpPred p)
{
    switch (p) {
    case CmpPred::Eq: return "eq";
    case CmpPred::Ne: return "ne";
    case CmpPred::Ult: return "ult";
    case CmpPred::Slt: return "slt";
    }
    return "?";
}

std::optional<CmpPred> pred_from_name(std::string_view name)
{
    for (auto p : {CmpPred::Eq, CmpPred::Ne, CmpPred::Ult, CmpPred::Slt}) {
        if (pred_name(p) == name) {
            return p;
        }
    }
    return std::nullopt;
}

std::string_view mask_rng_name(MaskRng r)
{
    switch (r) {
    case MaskRng::Incrementing: return "incrementing";
    case MaskRng::XorShift128Plus: return "xorshift128plus";
    case MaskRng::KeyedHash: return "keyed_hash";
    }
    return "?";
}

std::optional<MaskRng> mask_rng_from_name(std::string_view name)
{
    if (name == "keyed-hash") {
        return MaskRng::KeyedHash;
    }
    if (name == "xorshift128+") {
        return MaskRng::XorShift128Plus;
    }
    for (auto r : {MaskRng::Incrementing, MaskRng::XorShift128Plus, MaskRng::KeyedHash}) {
        if (mask_rng_name(r) == name) {
            return r;
        }
    }
    return std::nullopt;
}

bool is_binary(Opcode op)
{
    switch (op) {
    case Opcode::Add:
    case Opcode::Sub:
    case Opcode::Mul:
    case Opcode::And:
    case Opcode::Or:
    case Opcode::Xor:
    case Opcode::Shl:
    case Opcode::Lshr: return true;
    default: return false;
    }
}

bool is_terminator(Opcode op)
{
    return op == Opcode::Br || op == Opcode::CondBr || op == Opcode::Ret;
}

bool is_hardening_only(Opcode op)
{
    return op == Opcode::BlkLoad || op == Opcode::BlkStore || op == Opcode::CtrInc || op == Opcode::MaskGen;
}

std::string Operand::str() const
{
    switch (kind) {
    case Kind::Reg: return "%" + name;
    case Kind::Global: return "@" + name;
    case Kind::Imm: return imm >= 0x10000 ? fmt::format("{:#x}", imm) : fmt::format("{}", imm);
    }
    return "?";
}

bool operator==(const Instr& a, const Instr& b)
{
    return a.id == b.id && a.op == b.op && a.result == b.result && a.type == b.type && a.to_type == b.to_type &&
           a.pred == b.pred && a.rng == b.rng && a.args == b.args && a.targets == b.targets && a.callee == b.callee;
}

bool operator==(const Function& a, const Function& b)
{
    return a.name == b.name && a.params == b.params && a.ret == b.ret && a.protect == b.protect &&
           a.blocks == b.blocks;
}

bool operator==(const Global& a, const Global& b)
{
    return a.name == b.name && a.type == b.type && a.init == b.init;
}

const AggregateDef* Module::find_aggregate(std::string_view name) const
{
    auto it = std::find_if(aggregates.begin(), aggregates.end(), [&](const auto& a) { return a.name == name; });
    return it == aggregates.end() ? nullptr : &*it;
}

const Global* Module::find_global(std::string_view name) const
{
    auto it = std::find_if(globals.begin(), globals.end(), [&](const auto& g) { return g.name == name; });
    return it == globals.end() ? nullptr : &*it;
}

const Function* Module::find_function(std::string_view name) const
{
    auto it = std::find_if(functions.begin(), functions.end(), [&](const auto& f) { return f.name == name; });
    return it == functions.end() ? nullptr : &*it;
}

Function* Module::find_function(std::string_view name)
{
    auto it = std::find_if(functions.begin(), functions.end(), [&](const auto& f) { return f.name == name; });
    return it == functions.end() ? nullptr : &*it;
}

void Module::renumber()
{
    std::uint32_t next = 1;
    for (auto& f : functions) {
        for (auto& b : f.blocks) {
            for (auto& in : b.instrs) {
                in.id = next++;
            }
        }
    }
}

std::size_t Module::instruction_count() const
{
    std::size_t n = 0;
    for (const auto& f : functions) {
        for (const auto& b : f.blocks) {
            n += b.instrs.size();
        }
    }
    return n;
}

std::uint64_t size_of(const Type& t, const Module& m)
{
    switch (t.kind()) {
    case Type::Kind::Void: return 0;
    case Type::Kind::Int:
    case Type::Kind::Addr: return t.byte_width();
    case Type::Kind::Array: return t.count() * size_of(t.element(), m);
    case Type::Kind::Block: return t.block_size();
    case Type::Kind::Named: {
        const auto* def = m.find_aggregate(t.name());
        if (def == nullptr) {
            throw std::invalid_argument("unknown aggregate " + t.name());
        }
        std::uint64_t total = 0;
        for (const auto& f : def->fields) {
            total += size_of(f, m);
        }
        return total;
    }
    }
    return 0;
}

namespace {

void collect_leaves(const Type& t, const Module& m, std::vector<std::uint32_t>& path, std::uint64_t offset,
                    std::vector<Leaf>& out)
{
    switch (t.kind()) {
    case Type::Kind::Void: return;
    case Type::Kind::Int:
    case Type::Kind::Addr:
    case Type::Kind::Block: out.push_back({path, t, offset}); return;
    case Type::Kind::Array: {
        const auto stride = size_of(t.element(), m);
        for (std::uint64_t i = 0; i < t.count(); ++i) {
            path.push_back(static_cast<std::uint32_t>(i));
            collect_leaves(t.element(), m, path, offset + i * stride, out);
            path.pop_back();
        }
        return;
    }
    case Type::Kind::Named: {
        const auto* def = m.find_aggregate(t.name());
        if (def == nullptr) {
            throw std::invalid_argument("unknown aggregate " + t.name());
        }
        std::uint64_t field_offset = offset;
        for (std::uint32_t i = 0; i < def->fields.size(); ++i) {
            path.push_back(i);
            collect_leaves(def->fields[i], m, path, field_offset, out);
            path.pop_back();
            field_offset += size_of(def->fields[i], m);
        }
        return;
    }
    }
}

}  // namespace

std::vector<Leaf> leaves_of(const Type& t, const Module& m)
{
    std::vector<Leaf> out;
    std::vector<std::uint32_t> path;
    collect_leaves(t, m, path, 0, out);
    return out;
}

std::uint64_t leaf_count(const Type& t, const Module& m)
{
    switch (t.kind()) {
    case Type::Kind::Void: return 0;
    case Type::Kind::Int:
    case Type::Kind::Addr:
    case Type::Kind::Block: return 1;
    case Type::Kind::Array: return t.count() * leaf_count(t.element(), m);
    case Type::Kind::Named: {
        const auto* def = m.find_aggregate(t.name());
        if (def == nullptr) {
            throw std::invalid_argument("unknown aggregate " + t.name());
        }
        std::uint64_t n = 0;
        for (const auto& f : def->fields) {
            n += leaf_count(f, m);
        }
        return n;
    }
    }
    return 0;
}

Type result_type(const Instr& in, const Module& m)
{
    switch (in.op) {
    case Opcode::Alloca:
    case Opcode::Gep:
    case Opcode::IntToPtr:
    case Opcode::FnAddr:
    case Opcode::Malloc: return Type::address();
    case Opcode::Load:
    case Opcode::Select:
    case Opcode::MaskGen: return in.type;
    case Opcode::Icmp:
    case Opcode::PtrToInt:
    case Opcode::CtrInc: return Type::i64();
    case Opcode::Zext:
    case Opcode::Trunc: return in.to_type;
    case Opcode::BlkLoad: return in.type.is_block() ? in.type.element() : Type();
    case Opcode::Call: {
        if (!in.is_indirect_call()) {
            if (const auto* callee = m.find_function(in.callee)) {
                return callee->ret;
            }
        }
        return in.type;
    }
    default:
        if (is_binary(in.op)) {
            return in.type;
        }
        return Type();
    }
}

std::map<std::string, Type> register_types(const Function& f, const Module& m)
{
    std::map<std::string, Type> types;
    for (const auto& p : f.params) {
        types.emplace(p.name, p.type);
    }
    for (const auto& b : f.blocks) {
        for (const auto& in : b.instrs) {
            if (in.has_result()) {
                types.emplace(in.result, result_type(in, m));
            }
        }
    }
    return types;
}

}  // namespace memfresh::ir
