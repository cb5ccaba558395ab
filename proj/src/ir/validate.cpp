#include "memfresh/ir/validate.hpp"

#include "memfresh/ir/call_graph.hpp"

#include <fmt/format.h>

#include <map>
#include <set>
#include <stdexcept>

namespace memfresh::ir {

std::string Diagnostic::str() const
{
    if (instr_id == 0) {
        return fmt::format("[{}] {}: {}", rule, function.empty() ? "module" : function, message);
    }
    return fmt::format("[{}] {}#{}: {}", rule, function, instr_id, message);
}

std::optional<Type> gep_target(const Type& base, const std::vector<Operand>& indices, std::size_t first,
                               const Module& m, std::string* why)
{
    Type cur = base;
    for (std::size_t i = first + 1; i < indices.size(); ++i) {
        if (cur.is_array()) {
            if (indices[i].is_imm() && indices[i].imm >= cur.count()) {
                if (why) *why = fmt::format("index {} is past the end of {}", indices[i].imm, cur.str());
                return std::nullopt;
            }
            cur = cur.element();
        } else if (cur.is_named()) {
            const auto* def = m.find_aggregate(cur.name());
            if (def == nullptr) {
                if (why) *why = "unknown aggregate " + cur.name();
                return std::nullopt;
            }
            if (!indices[i].is_imm() || indices[i].imm >= def->fields.size()) {
                if (why) *why = fmt::format("field index {} of {} must be a literal below {}", indices[i].str(),
                                            cur.name(), def->fields.size());
                return std::nullopt;
            }
            cur = def->fields[indices[i].imm];
        } else {
            if (why) *why = fmt::format("cannot index into {}", cur.str());
            return std::nullopt;
        }
    }
    return cur;
}

namespace {

class Checker {
public:
    Checker(const Module& m, const Function& f, std::vector<Diagnostic>& out) : m_(m), f_(f), out_(out) {}

    void run()
    {
        if (f_.blocks.empty()) {
            report(0, "no-blocks", "function has no blocks");
            return;
        }
        if (!f_.ret.is_void() && !f_.ret.is_primitive()) {
            report(0, "return-type", "return type must be void, an integer or addr");
        }
        collect_labels();
        collect_defs();
        compute_dominators();
        for (std::size_t b = 0; b < f_.blocks.size(); ++b) {
            const auto& blk = f_.blocks[b];
            if (blk.instrs.empty() || !is_terminator(blk.instrs.back().op)) {
                report(blk.instrs.empty() ? 0 : blk.instrs.back().id, "missing-terminator",
                       fmt::format("block '{}' does not end in a terminator", blk.label));
            }
            for (std::size_t i = 0; i < blk.instrs.size(); ++i) {
                const auto& in = blk.instrs[i];
                if (is_terminator(in.op) && i + 1 != blk.instrs.size()) {
                    report(in.id, "terminator-not-last", fmt::format("terminator in the middle of '{}'", blk.label));
                }
                check_uses(in, b, i);
                check_instr(in);
            }
        }
    }

private:
    void report(std::uint32_t id, std::string rule, std::string msg)
    {
        out_.push_back({id, std::move(rule), std::move(msg), f_.name});
    }

    void collect_labels()
    {
        for (std::size_t b = 0; b < f_.blocks.size(); ++b) {
            if (!labels_.emplace(f_.blocks[b].label, b).second) {
                report(f_.blocks[b].instrs.empty() ? 0 : f_.blocks[b].instrs.front().id, "duplicate-label",
                       fmt::format("label '{}' defined twice", f_.blocks[b].label));
            }
        }
    }

    void collect_defs()
    {
        for (const auto& p : f_.params) {
            if (!defs_.emplace(p.name, Def{SIZE_MAX, 0}).second) {
                report(0, "ssa-single-def", fmt::format("parameter %{} declared twice", p.name));
            }
            types_.emplace(p.name, p.type);
        }
        for (std::size_t b = 0; b < f_.blocks.size(); ++b) {
            for (std::size_t i = 0; i < f_.blocks[b].instrs.size(); ++i) {
                const auto& in = f_.blocks[b].instrs[i];
                if (!in.has_result()) {
                    continue;
                }
                if (!defs_.emplace(in.result, Def{b, i}).second) {
                    report(in.id, "ssa-single-def", fmt::format("register %{} is defined more than once", in.result));
                    continue;
                }
                types_.emplace(in.result, result_type(in, m_));
            }
        }
    }

    std::vector<std::size_t> successors(std::size_t b) const
    {
        std::vector<std::size_t> out;
        const auto& blk = f_.blocks[b];
        if (blk.instrs.empty()) {
            return out;
        }
        for (const auto& t : blk.instrs.back().targets) {
            if (auto it = labels_.find(t); it != labels_.end()) {
                out.push_back(it->second);
            }
        }
        return out;
    }

    void compute_dominators()
    {
        const std::size_t n = f_.blocks.size();
        std::vector<std::vector<std::size_t>> preds(n);
        reachable_.assign(n, false);
        std::vector<std::size_t> work{0};
        reachable_[0] = true;
        while (!work.empty()) {
            auto b = work.back();
            work.pop_back();
            for (auto s : successors(b)) {
                preds[s].push_back(b);
                if (!reachable_[s]) {
                    reachable_[s] = true;
                    work.push_back(s);
                }
            }
        }
        dom_.assign(n, std::vector<bool>(n, true));
        dom_[0].assign(n, false);
        dom_[0][0] = true;
        for (bool changed = true; changed;) {
            changed = false;
            for (std::size_t b = 1; b < n; ++b) {
                if (!reachable_[b]) {
                    continue;
                }
                std::vector<bool> d(n, true);
                for (auto p : preds[b]) {
                    if (!reachable_[p]) continue;
                    for (std::size_t k = 0; k < n; ++k) {
                        d[k] = d[k] && dom_[p][k];
                    }
                }
                d[b] = true;
                if (d != dom_[b]) {
                    dom_[b] = std::move(d);
                    changed = true;
                }
            }
        }
    }

    void check_uses(const Instr& in, std::size_t b, std::size_t i)
    {
        for (const auto& op : in.args) {
            if (op.is_global()) {
                if (m_.find_global(op.name) == nullptr) {
                    report(in.id, "unknown-global", fmt::format("@{} is not defined", op.name));
                }
                continue;
            }
            if (!op.is_reg()) {
                continue;
            }
            auto it = defs_.find(op.name);
            if (it == defs_.end()) {
                report(in.id, "undefined-register", fmt::format("%{} is never defined", op.name));
                continue;
            }
            const Def d = it->second;
            if (d.block == SIZE_MAX || !reachable_[b]) {
                continue;
            }
            const bool ok = d.block == b ? d.index < i : dom_[b][d.block];
            if (!ok) {
                report(in.id, "use-before-def", fmt::format("%{} does not dominate this use", op.name));
            }
        }
        for (const auto& t : in.targets) {
            if (!labels_.count(t)) {
                report(in.id, "unknown-label", fmt::format("no block named '{}'", t));
            }
        }
    }

    // Type of an operand, or empty for untyped literals and unknown registers.
    std::optional<Type> type_of(const Operand& op) const
    {
        if (op.is_global()) {
            return Type::address();
        }
        if (op.is_reg()) {
            if (auto it = types_.find(op.name); it != types_.end()) {
                return it->second;
            }
        }
        return std::nullopt;
    }

    void expect(const Instr& in, const Operand& op, const Type& want, std::string_view what)
    {
        auto t = type_of(op);
        if (t && *t != want) {
            report(in.id, "type-mismatch", fmt::format("{} {} has type {}, expected {}", what, op.str(), t->str(), want.str()));
        }
    }

    void expect_int(const Instr& in, const Operand& op, std::string_view what)
    {
        auto t = type_of(op);
        if (t && !t->is_int()) {
            report(in.id, "type-mismatch", fmt::format("{} {} must be an integer, found {}", what, op.str(), t->str()));
        }
    }

    bool need(const Instr& in, bool cond, std::string msg)
    {
        if (!cond) {
            report(in.id, "type-mismatch", std::move(msg));
        }
        return cond;
    }

    bool arity(const Instr& in, std::size_t n)
    {
        if (in.args.size() != n) {
            report(in.id, "arity-mismatch", fmt::format("'{}' takes {} operands, found {}", opcode_name(in.op), n, in.args.size()));
            return false;
        }
        return true;
    }

    bool known_type(const Instr& in, const Type& t)
    {
        try {
            (void)size_of(t, m_);
            return true;
        } catch (const std::exception& e) {
            report(in.id, "type-mismatch", e.what());
            return false;
        }
    }

    void check_instr(const Instr& in)
    {
        const Type addr = Type::address();
        const auto& a = in.args;
        switch (in.op) {
        case Opcode::Alloca:
            need(in, !in.type.is_void(), "alloca of void");
            known_type(in, in.type);
            break;
        case Opcode::Load:
            if (!arity(in, 1)) break;
            need(in, in.type.is_primitive(), "load needs an integer or addr type");
            expect(in, a[0], addr, "address");
            break;
        case Opcode::Store:
            if (!arity(in, 2)) break;
            if (need(in, in.type.is_primitive(), "store needs an integer or addr type")) {
                expect(in, a[0], in.type, "stored value");
            }
            expect(in, a[1], addr, "address");
            break;
        case Opcode::Gep: {
            if (a.size() < 2) {
                report(in.id, "arity-mismatch", "gep needs a base and at least one index");
                break;
            }
            expect(in, a[0], addr, "base");
            for (std::size_t i = 1; i < a.size(); ++i) {
                expect_int(in, a[i], "index");
            }
            if (!known_type(in, in.type)) break;
            std::string why;
            if (!gep_target(in.type, a, 1, m_, &why)) {
                report(in.id, "bad-index", why);
            }
            break;
        }
        case Opcode::Icmp:
            if (!arity(in, 2)) break;
            if (need(in, in.type.is_primitive(), "icmp needs an integer or addr type")) {
                expect(in, a[0], in.type, "operand");
                expect(in, a[1], in.type, "operand");
            }
            break;
        case Opcode::Select:
            if (!arity(in, 3)) break;
            expect_int(in, a[0], "condition");
            if (need(in, in.type.is_primitive(), "select needs an integer or addr type")) {
                expect(in, a[1], in.type, "operand");
                expect(in, a[2], in.type, "operand");
            }
            break;
        case Opcode::Zext:
        case Opcode::Trunc:
            if (!arity(in, 1)) break;
            if (need(in, in.type.is_int() && in.to_type.is_int(), "casts convert between integer types")) {
                expect(in, a[0], in.type, "operand");
                const bool widening = in.to_type.bits() >= in.type.bits();
                need(in, in.op == Opcode::Zext ? widening : in.to_type.bits() <= in.type.bits(),
                     fmt::format("{} from {} to {}", opcode_name(in.op), in.type.str(), in.to_type.str()));
            }
            break;
        case Opcode::PtrToInt:
            if (arity(in, 1)) expect(in, a[0], addr, "operand");
            break;
        case Opcode::IntToPtr:
            if (arity(in, 1)) expect(in, a[0], Type::i64(), "operand");
            break;
        case Opcode::Br: break;
        case Opcode::CondBr:
            if (arity(in, 1)) expect_int(in, a[0], "condition");
            break;
        case Opcode::Ret:
            if (f_.ret.is_void()) {
                if (!a.empty()) report(in.id, "return-type", "void function returns a value");
            } else if (a.size() != 1) {
                report(in.id, "return-type", "missing return value");
            } else if (auto t = type_of(a[0]); t && *t != f_.ret) {
                report(in.id, "return-type", fmt::format("returns {}, function returns {}", t->str(), f_.ret.str()));
            }
            break;
        case Opcode::Call: check_call(in); break;
        case Opcode::FnAddr:
            if (m_.find_function(in.callee) == nullptr) {
                report(in.id, "unknown-function", fmt::format("no function named '{}'", in.callee));
            }
            break;
        case Opcode::Malloc:
            if (arity(in, 1)) expect_int(in, a[0], "size");
            break;
        case Opcode::Free:
            if (arity(in, 1)) expect(in, a[0], addr, "address");
            break;
        case Opcode::Memcpy:
        case Opcode::Memset:
            if (!arity(in, 3)) break;
            known_type(in, in.type);
            expect(in, a[0], addr, "destination");
            if (in.op == Opcode::Memcpy) {
                expect(in, a[1], addr, "source");
            } else {
                expect_int(in, a[1], "fill byte");
            }
            expect_int(in, a[2], "count");
            break;
        case Opcode::Declassify:
            if (!arity(in, 1)) break;
            if (need(in, in.type.is_primitive(), "declassify needs an integer or addr type")) {
                expect(in, a[0], in.type, "operand");
            }
            break;
        case Opcode::BlkLoad:
            if (!arity(in, 1)) break;
            need(in, in.type.is_block(), "blkload needs a block type");
            expect(in, a[0], addr, "address");
            break;
        case Opcode::BlkStore:
            if (!arity(in, 3)) break;
            if (need(in, in.type.is_block(), "blkstore needs a block type")) {
                expect(in, a[0], in.type.element(), "stored value");
            }
            expect_int(in, a[1], "counter");
            expect(in, a[2], addr, "address");
            break;
        case Opcode::CtrInc: arity(in, 0); break;
        case Opcode::MaskGen: need(in, in.type.is_int(), "maskgen needs an integer type"); break;
        default:
            if (is_binary(in.op)) {
                if (!arity(in, 2)) break;
                if (need(in, in.type.is_int(), fmt::format("{} needs an integer type", opcode_name(in.op)))) {
                    expect(in, a[0], in.type, "operand");
                    expect(in, a[1], in.type, "operand");
                }
            }
            break;
        }
    }

    void check_call(const Instr& in)
    {
        if (in.is_indirect_call()) {
            if (in.args.empty()) {
                report(in.id, "arity-mismatch", "indirect call without a callee");
                return;
            }
            expect(in, in.args[0], Type::address(), "callee");
            return;
        }
        const auto* callee = m_.find_function(in.callee);
        if (callee == nullptr) {
            report(in.id, "unknown-function", fmt::format("no function named '{}'", in.callee));
            return;
        }
        if (callee->ret != in.type) {
            report(in.id, "return-type", fmt::format("call expects {}, '{}' returns {}", in.type.str(), callee->name,
                                                     callee->ret.str()));
        }
        if (in.args.size() != callee->params.size()) {
            report(in.id, "arity-mismatch", fmt::format("'{}' takes {} arguments, found {}", callee->name,
                                                        callee->params.size(), in.args.size()));
            return;
        }
        for (std::size_t i = 0; i < in.args.size(); ++i) {
            auto t = type_of(in.args[i]);
            if (t && *t != callee->params[i].type) {
                report(in.id, "param-type", fmt::format("argument {} has type {}, parameter %{} is {}", i, t->str(),
                                                        callee->params[i].name, callee->params[i].type.str()));
            }
        }
    }

    struct Def {
        std::size_t block;
        std::size_t index;
    };

    const Module& m_;
    const Function& f_;
    std::vector<Diagnostic>& out_;
    std::map<std::string, std::size_t> labels_;
    std::map<std::string, Def> defs_;
    std::map<std::string, Type> types_;
    std::vector<bool> reachable_;
    std::vector<std::vector<bool>> dom_;
};

void check_globals(const Module& m, std::vector<Diagnostic>& out)
{
    for (const auto& g : m.globals) {
        std::uint64_t size = 0;
        try {
            size = size_of(g.type, m);
        } catch (const std::exception& e) {
            out.push_back({0, "type-mismatch", e.what(), ""});
            continue;
        }
        if (!g.zero_init() && g.init.size() != size) {
            out.push_back({0, "global-init-size",
                           fmt::format("@{} is {} bytes but its initializer has {}", g.name, size, g.init.size()), ""});
        }
    }
}

void check_hybrid_globals(const Module& m, std::vector<Diagnostic>& out)
{
    const auto prot = protected_closure(m);
    std::map<std::string, std::pair<std::uint32_t, std::uint32_t>> refs;  // first protected / unprotected use
    std::map<std::string, std::string> unprot_user;
    for (const auto& f : m.functions) {
        const bool p = prot.count(f.name) > 0;
        for (const auto& b : f.blocks) {
            for (const auto& in : b.instrs) {
                for (const auto& op : in.args) {
                    if (!op.is_global()) continue;
                    auto& r = refs[op.name];
                    auto& slot = p ? r.first : r.second;
                    if (slot == 0) {
                        slot = in.id;
                        if (!p) unprot_user[op.name] = f.name;
                    }
                }
            }
        }
    }
    for (const auto& [name, r] : refs) {
        if (r.first != 0 && r.second != 0) {
            out.push_back({r.second, "hybrid-global-use",
                           fmt::format("@{} is used by protected code (#{}) and by unprotected '{}'", name, r.first,
                                       unprot_user[name]),
                           unprot_user[name]});
        }
    }
}

}  // namespace

std::vector<Diagnostic> validate_module(const Module& m)
{
    std::vector<Diagnostic> out;
    check_globals(m, out);
    std::set<std::string> seen;
    for (const auto& f : m.functions) {
        if (!seen.insert(f.name).second) {
            out.push_back({0, "duplicate-function", fmt::format("function '{}' defined twice", f.name), f.name});
        }
        for (const auto& p : f.params) {
            if (!p.type.is_primitive()) {
                out.push_back({0, "param-type", fmt::format("parameter %{} must be an integer or addr", p.name), f.name});
            }
        }
        Checker(m, f, out).run();
    }
    check_hybrid_globals(m, out);
    return out;
}

void require_valid(const Module& m)
{
    auto diags = validate_module(m);
    if (diags.empty()) {
        return;
    }
    std::string msg = "module failed validation:";
    for (const auto& d : diags) {
        msg += "\n  " + d.str();
    }
    throw std::runtime_error(msg);
}

}  // namespace memfresh::ir
