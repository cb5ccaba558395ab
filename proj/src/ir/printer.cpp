#include "memfresh/ir/printer.hpp"

#include <fmt/format.h>

namespace memfresh::ir {

namespace {

std::string join_operands(const std::vector<Operand>& ops, std::size_t from = 0)
{
    std::string out;
    for (std::size_t i = from; i < ops.size(); ++i) {
        if (i > from) {
            out += ", ";
        }
        out += ops[i].str();
    }
    return out;
}

std::string hex_bytes(const std::vector<std::uint8_t>& bytes)
{
    std::string out;
    out.reserve(bytes.size() * 2);
    for (auto b : bytes) {
        out += fmt::format("{:02x}", b);
    }
    return out;
}

}  // namespace

std::string print_instr(const Instr& in)
{
    std::string lhs = in.has_result() ? "%" + in.result + " = " : "";
    const auto name = opcode_name(in.op);
    const auto& a = in.args;
    switch (in.op) {
    case Opcode::Alloca: return fmt::format("{}alloca {}", lhs, in.type.str());
    case Opcode::Load:
    case Opcode::BlkLoad: return fmt::format("{}{} {}, {}", lhs, name, in.type.str(), a[0].str());
    case Opcode::Store: return fmt::format("store {} {}, {}", in.type.str(), a[0].str(), a[1].str());
    case Opcode::BlkStore:
        return fmt::format("blkstore {} {}, {}, {}", in.type.str(), a[0].str(), a[1].str(), a[2].str());
    case Opcode::Gep: return fmt::format("{}gep {}, {}", lhs, in.type.str(), join_operands(a));
    case Opcode::Icmp:
        return fmt::format("{}icmp {} {} {}, {}", lhs, pred_name(in.pred), in.type.str(), a[0].str(), a[1].str());
    case Opcode::Select: return fmt::format("{}select {} {}", lhs, in.type.str(), join_operands(a));
    case Opcode::Zext:
    case Opcode::Trunc:
        return fmt::format("{}{} {} {} to {}", lhs, name, in.type.str(), a[0].str(), in.to_type.str());
    case Opcode::PtrToInt:
    case Opcode::IntToPtr:
    case Opcode::Malloc:
    case Opcode::Free: return fmt::format("{}{} {}", lhs, name, a[0].str());
    case Opcode::Br: return fmt::format("br {}", in.targets[0]);
    case Opcode::CondBr: return fmt::format("condbr {}, {}, {}", a[0].str(), in.targets[0], in.targets[1]);
    case Opcode::Ret: return a.empty() ? "ret" : fmt::format("ret {}", a[0].str());
    case Opcode::Call:
        if (in.is_indirect_call()) {
            return fmt::format("{}call {} {}({})", lhs, in.type.str(), a[0].str(), join_operands(a, 1));
        }
        return fmt::format("{}call {} {}({})", lhs, in.type.str(), in.callee, join_operands(a));
    case Opcode::FnAddr: return fmt::format("{}fnaddr {}", lhs, in.callee);
    case Opcode::Memcpy:
    case Opcode::Memset: return fmt::format("{} {}, {}", name, join_operands(a), in.type.str());
    case Opcode::Declassify: return fmt::format("declassify {} {}", in.type.str(), a[0].str());
    case Opcode::CtrInc: return fmt::format("{}ctrinc", lhs);
    case Opcode::MaskGen: return fmt::format("{}maskgen {} {}", lhs, in.type.str(), mask_rng_name(in.rng));
    default:
        if (is_binary(in.op)) {
            return fmt::format("{}{} {} {}, {}", lhs, name, in.type.str(), a[0].str(), a[1].str());
        }
        return "?";
    }
}

std::string print_module(const Module& m)
{
    std::string out;
    if (m.counter) {
        out += m.counter->random ? "counter random\n" : fmt::format("counter fixed {}\n", m.counter->seed);
    }
    if (m.shadow_displacement) {
        out += fmt::format("shadow {:#x}\n", *m.shadow_displacement);
    }
    for (const auto& a : m.aggregates) {
        out += fmt::format("aggregate {} = {{ ", a.name);
        for (std::size_t i = 0; i < a.fields.size(); ++i) {
            out += (i ? ", " : "") + a.fields[i].str();
        }
        out += " }\n";
    }
    for (const auto& g : m.globals) {
        out += fmt::format("global @{} : {} = {}\n", g.name, g.type.str(),
                           g.zero_init() ? std::string("zeroinit") : "bytes(" + hex_bytes(g.init) + ")");
    }
    for (const auto& f : m.functions) {
        out += fmt::format("\nfn {}{}(", f.protect ? "protect " : "", f.name);
        for (std::size_t i = 0; i < f.params.size(); ++i) {
            out += fmt::format("{}%{}: {}", i ? ", " : "", f.params[i].name, f.params[i].type.str());
        }
        out += fmt::format(") -> {} {{\n", f.ret.str());
        for (const auto& b : f.blocks) {
            out += b.label + ":\n";
            for (const auto& in : b.instrs) {
                out += "    " + print_instr(in) + "\n";
            }
        }
        out += "}\n";
    }
    return out;
}

}  // namespace memfresh::ir
