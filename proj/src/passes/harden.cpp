#include "memfresh/passes/harden.hpp"

#include "memfresh/ir/call_graph.hpp"
#include "memfresh/ir/validate.hpp"

#include <fmt/format.h>

namespace memfresh::passes {

using ir::Instr;
using ir::Opcode;
using ir::Operand;
using ir::Type;
using layout::LayoutMode;

std::string_view mode_name(Mode m)
{
    switch (m) {
    case Mode::Interleave: return "interleave";
    case Mode::Mask: return "mask";
    case Mode::Cio: return "cio";
    case Mode::Dmp: return "dmp";
    }
    return "?";
}

Mode mode_from_name(std::string_view s)
{
    for (auto m : {Mode::Interleave, Mode::Mask, Mode::Cio, Mode::Dmp}) {
        if (mode_name(m) == s) return m;
    }
    throw HardeningError(fmt::format("unknown hardening mode '{}'", s));
}

std::string_view scope_name(Scope s) { return s == Scope::Whole ? "whole" : "attr"; }

Scope scope_from_name(std::string_view s)
{
    if (s == "whole") return Scope::Whole;
    if (s == "attr") return Scope::Attr;
    throw HardeningError(fmt::format("unknown scope '{}'", s));
}

void HardeningConfig::check() const
{
    if (mask_rng && mode != Mode::Mask) {
        throw HardeningError("a mask generator only applies to mask mode");
    }
}

LayoutMode HardeningConfig::layout_mode() const
{
    return mode == Mode::Dmp ? LayoutMode::Dmp8 : LayoutMode::Standard16;
}

Protection propagate_protection(const Module& m, Scope scope)
{
    Protection p;
    const auto g = ir::build_call_graph(m);
    if (scope == Scope::Whole) {
        p.functions.insert(g.nodes.begin(), g.nodes.end());
    } else {
        std::set<std::string> roots;
        for (const auto& f : m.functions) {
            if (f.protect) roots.insert(f.name);
        }
        if (roots.empty()) {
            throw HardeningError("attribute scope needs at least one function marked protect");
        }
        p.functions = ir::call_closure(g, roots);
    }
    for (const auto& site : g.indirect_sites) {
        if (p.functions.count(site.caller)) {
            p.warnings.push_back({"indirect-call", site.instr_id, site.caller,
                                  "indirect call inside the protection scope; its target is not hardened "
                                  "unless it is reachable through direct calls"});
        }
    }
    return p;
}

nlohmann::ordered_json report_to_json(const HardeningReport& r)
{
    nlohmann::ordered_json j;
    j["mode"] = mode_name(r.mode);
    j["scope"] = scope_name(r.scope);
    j["mask_rng"] = r.mask_rng ? nlohmann::ordered_json(ir::mask_rng_name(*r.mask_rng)) : nlohmann::ordered_json();
    j["counter"] = r.counter.random ? nlohmann::ordered_json("random")
                                    : nlohmann::ordered_json({{"fixed", r.counter.seed}});
    j["protected_functions"] = r.protected_functions;
    j["counts"] = r.counts;
    auto warnings = nlohmann::ordered_json::array();
    for (const auto& w : r.warnings) {
        warnings.push_back({{"kind", w.kind}, {"instr_id", w.instr_id}, {"function", w.function}, {"message", w.message}});
    }
    j["warnings"] = std::move(warnings);
    j["flags"] = r.flags;
    j["globals_rewritten"] = r.globals_rewritten;
    j["helpers"] = r.helpers;
    return j;
}

namespace {

Instr make(Opcode op, std::string result, Type type, std::vector<Operand> args = {})
{
    Instr in;
    in.op = op;
    in.result = std::move(result);
    in.type = std::move(type);
    in.args = std::move(args);
    return in;
}

std::uint64_t ones(unsigned width) { return width >= 8 ? ~std::uint64_t{0} : (std::uint64_t{1} << (8 * width)) - 1; }

bool compatible(const Type& pointee, const Type& elem)
{
    if (pointee == elem) return true;
    return pointee.is_array() && compatible(pointee.element(), elem);
}

struct Slot {
    std::uint64_t offset;
    Type type;
};

/// Chooses a register prefix no existing register starts with.
class NameGen {
public:
    explicit NameGen(const Module& m)
    {
        std::set<std::string> regs;
        for (const auto& f : m.functions) {
            for (const auto& p : f.params) regs.insert(p.name);
            for (const auto& b : f.blocks)
                for (const auto& in : b.instrs)
                    if (in.has_result()) regs.insert(in.result);
        }
        for (int k = 0;; ++k) {
            prefix_ = k == 0 ? "mf." : fmt::format("mf{}.", k);
            bool clash = false;
            for (const auto& r : regs) {
                if (r.rfind(prefix_, 0) == 0) {
                    clash = true;
                    break;
                }
            }
            if (!clash) break;
        }
    }

    std::string fresh() { return fmt::format("{}{}", prefix_, next_++); }

private:
    std::string prefix_;
    std::uint64_t next_ = 0;
};

class Hardener {
public:
    Hardener(const Module& in, HardeningConfig cfg) : in_(in), out_(in), cfg_(std::move(cfg)), names_(in)
    {
        cfg_.check();
        if (cfg_.mode == Mode::Mask && !cfg_.mask_rng) {
            cfg_.mask_rng = ir::MaskRng::XorShift128Plus;
        }
        mode_ = cfg_.layout_mode();
        report_.mode = cfg_.mode;
        report_.scope = cfg_.scope;
        report_.mask_rng = cfg_.mask_rng;
        report_.counter = cfg_.counter;
        for (const char* k : {"stores", "loads", "allocas", "geps", "mallocs", "memcpy", "memset",
                              "mem_element_stores", "helpers", "globals"}) {
            report_.counts[k] = 0;
        }
    }

    bool interleaving() const { return cfg_.mode == Mode::Interleave || cfg_.mode == Mode::Dmp; }

    void check_input()
    {
        auto diags = ir::validate_module(in_);
        if (!diags.empty()) {
            std::string msg = "input does not validate:";
            for (const auto& d : diags) msg += "\n  " + d.str();
            throw HardeningError(msg);
        }
        if (in_.counter || in_.shadow_displacement) {
            throw HardeningError("input is already hardened (counter/shadow directive present)");
        }
        for (const auto& f : in_.functions)
            for (const auto& b : f.blocks)
                for (const auto& in : b.instrs)
                    if (ir::is_hardening_only(in.op)) {
                        throw HardeningError(fmt::format("unsupported instruction '{}' (#{}) in {}",
                                                         ir::opcode_name(in.op), in.id, f.name));
                    }
    }

    Hardened run()
    {
        check_input();
        auto prot = propagate_protection(in_, cfg_.scope);
        protected_ = prot.functions;
        report_.protected_functions = protected_;
        report_.warnings = std::move(prot.warnings);
        boundary_warnings();

        if (interleaving()) rewrite_globals();
        for (auto& f : out_.functions) {
            if (!protected_.count(f.name)) continue;
            f.protect = true;
            rewrite_function(f);
        }
        if (cfg_.mode != Mode::Cio) out_.counter = cfg_.counter;
        if (cfg_.mode == Mode::Mask) {
            out_.shadow_displacement = kShadowDisplacement;
            if (*cfg_.mask_rng == ir::MaskRng::Incrementing) report_.flags.push_back("weak-rng");
        }
        for (auto& h : helpers_) out_.functions.push_back(std::move(h));
        out_.renumber();
        auto diags = ir::validate_module(out_);
        if (!diags.empty()) {
            std::string msg = "hardened module does not validate:";
            for (const auto& d : diags) msg += "\n  " + d.str();
            throw HardeningError(msg);
        }
        return {std::move(out_), std::move(report_)};
    }

    // Expansion of a single intrinsic, used by rewrite_mem_intrinsic().
    std::vector<Instr> expand_intrinsic(const Instr& in, const ir::Function& ctx)
    {
        protected_.insert(ctx.name);
        pointees_ = pointee_map(ctx);
        reg_types_ = ir::register_types(ctx, in_);
        std::vector<Instr> out;
        sink_ = &out;
        mem_intrinsic(in, ctx.name);
        sink_ = nullptr;
        return out;
    }

    std::vector<ir::Function> take_helpers() { return std::move(helpers_); }

private:
    // ---- emission primitives ---------------------------------------------

    Operand emit(Instr in)
    {
        if (in.has_result()) {
            Operand r = Operand::reg(in.result);
            sink_->push_back(std::move(in));
            return r;
        }
        sink_->push_back(std::move(in));
        return {};
    }

    std::string name_or_fresh(const std::string& want) { return want.empty() ? names_.fresh() : want; }

    Operand slot_addr(const Operand& base, std::uint64_t off)
    {
        if (off == 0) return base;
        return emit(make(Opcode::Gep, names_.fresh(), Type::i8(), {base, Operand::constant(off)}));
    }

    Operand to_int(const Operand& v)
    {
        if (v.is_imm()) return v;
        return emit(make(Opcode::PtrToInt, names_.fresh(), Type(), {v}));
    }

    Operand shadow_of(const Operand& p)
    {
        auto pi = emit(make(Opcode::PtrToInt, names_.fresh(), Type(), {p}));
        auto si = emit(make(Opcode::Add, names_.fresh(), Type::i64(), {pi, Operand::constant(kShadowDisplacement)}));
        return emit(make(Opcode::IntToPtr, names_.fresh(), Type(), {si}));
    }

    Operand guard()
    {
        auto c = emit(make(Opcode::CtrInc, names_.fresh(), Type()));
        Instr t = make(Opcode::Trunc, names_.fresh(), Type::i64(), {c});
        t.to_type = Type::i32();
        auto tr = emit(std::move(t));
        auto lo = emit(make(Opcode::And, names_.fresh(), Type::i32(), {tr, Operand::constant(0xFFFFFF)}));
        return emit(make(Opcode::Or, names_.fresh(), Type::i32(), {lo, Operand::constant(0xFF000000)}));
    }

    Operand cast(Opcode op, const Type& from, const Operand& v, const Type& to, const std::string& dst = {})
    {
        Instr in = make(op, name_or_fresh(dst), from, {v});
        in.to_type = to;
        return emit(std::move(in));
    }

    /// Reads an original primitive of type `t` stored at hardened address `p`.
    Operand load_prim(const Type& t, const Operand& p, const std::string& dst = {})
    {
        const unsigned w = t.byte_width();
        switch (cfg_.mode) {
        case Mode::Interleave:
            return emit(make(Opcode::BlkLoad, name_or_fresh(dst), Type::block(t, 16), {p}));
        case Mode::Dmp: {
            if (w <= 4) return emit(make(Opcode::BlkLoad, name_or_fresh(dst), Type::block(t, 8), {p}));
            const Type half = Type::block(Type::i32(), 8);
            auto lo = emit(make(Opcode::BlkLoad, names_.fresh(), half, {p}));
            auto hp = emit(make(Opcode::Gep, names_.fresh(), half, {p, Operand::constant(1)}));
            auto hi = emit(make(Opcode::BlkLoad, names_.fresh(), half, {hp}));
            auto lo64 = cast(Opcode::Zext, Type::i32(), lo, Type::i64());
            auto hi64 = cast(Opcode::Zext, Type::i32(), hi, Type::i64());
            auto hs = emit(make(Opcode::Shl, names_.fresh(), Type::i64(), {hi64, Operand::constant(32)}));
            if (t.is_addr()) {
                auto v = emit(make(Opcode::Or, names_.fresh(), Type::i64(), {hs, lo64}));
                return emit(make(Opcode::IntToPtr, name_or_fresh(dst), Type(), {v}));
            }
            return emit(make(Opcode::Or, name_or_fresh(dst), Type::i64(), {hs, lo64}));
        }
        case Mode::Mask: {
            const Type wt = t.is_addr() ? Type::i64() : t;
            auto x = emit(make(Opcode::Load, names_.fresh(), wt, {p}));
            auto m = emit(make(Opcode::Load, names_.fresh(), wt, {shadow_of(p)}));
            if (t.is_addr()) {
                auto v = emit(make(Opcode::Xor, names_.fresh(), wt, {x, m}));
                return emit(make(Opcode::IntToPtr, name_or_fresh(dst), Type(), {v}));
            }
            return emit(make(Opcode::Xor, name_or_fresh(dst), wt, {x, m}));
        }
        case Mode::Cio: return emit(make(Opcode::Load, name_or_fresh(dst), t, {p}));
        }
        return {};
    }

    /// Writes original primitive `v` of type `t` to hardened address `p`.
    void store_prim(const Type& t, const Operand& v, const Operand& p)
    {
        const unsigned w = t.byte_width();
        switch (cfg_.mode) {
        case Mode::Interleave: {
            auto c = emit(make(Opcode::CtrInc, names_.fresh(), Type()));
            emit(make(Opcode::BlkStore, "", Type::block(t, 16), {v, c, p}));
            return;
        }
        case Mode::Dmp: {
            if (w <= 4) {
                auto g = guard();
                emit(make(Opcode::BlkStore, "", Type::block(t, 8), {v, g, p}));
                return;
            }
            const Type half = Type::block(Type::i32(), 8);
            Operand lo, hi;
            if (v.is_imm()) {
                lo = Operand::constant(v.imm & 0xFFFFFFFF);
                hi = Operand::constant(v.imm >> 32);
            } else {
                auto vi = t.is_addr() ? to_int(v) : v;
                lo = cast(Opcode::Trunc, Type::i64(), vi, Type::i32());
                auto hs = emit(make(Opcode::Lshr, names_.fresh(), Type::i64(), {vi, Operand::constant(32)}));
                hi = cast(Opcode::Trunc, Type::i64(), hs, Type::i32());
            }
            auto g1 = guard();
            emit(make(Opcode::BlkStore, "", half, {lo, g1, p}));
            auto hp = emit(make(Opcode::Gep, names_.fresh(), half, {p, Operand::constant(1)}));
            auto g2 = guard();
            emit(make(Opcode::BlkStore, "", half, {hi, g2, hp}));
            return;
        }
        case Mode::Mask: {
            const Type wt = t.is_addr() ? Type::i64() : t;
            Instr mg = make(Opcode::MaskGen, names_.fresh(), wt);
            mg.rng = *cfg_.mask_rng;
            auto m = emit(std::move(mg));
            auto vi = t.is_addr() ? to_int(v) : v;
            auto x = emit(make(Opcode::Xor, names_.fresh(), wt, {vi, m}));
            emit(make(Opcode::Store, "", wt, {x, p}));
            emit(make(Opcode::Store, "", wt, {m, shadow_of(p)}));
            return;
        }
        case Mode::Cio: {
            if (v.is_imm()) {
                emit(make(Opcode::Store, "", t.is_addr() ? Type::i64() : t, {Operand::constant(~v.imm & ones(w)), p}));
            } else {
                const Type wt = t.is_addr() ? Type::i64() : t;
                auto vi = t.is_addr() ? to_int(v) : v;
                auto nv = emit(make(Opcode::Xor, names_.fresh(), wt, {vi, Operand::constant(ones(w))}));
                emit(make(Opcode::Store, "", wt, {nv, p}));
            }
            emit(make(Opcode::Store, "", t, {v, p}));
            return;
        }
        }
    }

    // ---- element-wise copies ------------------------------------------------

    std::vector<Slot> slots(const Type& t)
    {
        std::vector<Slot> out;
        if (interleaving()) {
            const auto plan = layout::plan_layout(t, mode_, in_);
            for (const auto& s : plan.leaves) {
                out.push_back({s.block_index * layout::block_size(mode_),
                               s.data_width < s.leaf_type.byte_width() ? Type::i32() : s.leaf_type});
            }
        } else {
            for (const auto& leaf : ir::leaves_of(t, in_)) out.push_back({leaf.offset, leaf.type});
        }
        return out;
    }

    std::uint64_t stride(const Type& t)
    {
        return interleaving() ? layout::interleaved_size(t, mode_, in_) : ir::size_of(t, in_);
    }

    void copy_element(const Type& t, const Operand& dst, const Operand& src)
    {
        for (const auto& s : slots(t)) {
            auto v = load_prim(s.type, slot_addr(src, s.offset));
            store_prim(s.type, v, slot_addr(dst, s.offset));
            ++report_.counts["mem_element_stores"];
        }
    }

    void fill_element(const Type& t, const Operand& dst, const Operand& fill)
    {
        for (const auto& s : slots(t)) {
            const unsigned w = s.type.byte_width();
            Operand v;
            if (fill.is_imm()) {
                v = Operand::constant(fill.imm & ones(w));
            } else if (s.type.is_addr()) {
                v = emit(make(Opcode::IntToPtr, names_.fresh(), Type(), {fill}));
            } else if (w < 8) {
                v = cast(Opcode::Trunc, Type::i64(), fill, s.type);
            } else {
                v = fill;
            }
            store_prim(s.type, v, slot_addr(dst, s.offset));
            ++report_.counts["mem_element_stores"];
        }
    }

    Operand widen_to_i64(const Operand& v)
    {
        if (!v.is_reg()) return v;
        const auto it = reg_types_.find(v.name);
        if (it == reg_types_.end() || it->second == Type::i64() || !it->second.is_int()) return v;
        return cast(Opcode::Zext, it->second, v, Type::i64());
    }

    Operand fill_pattern(const Operand& byte)
    {
        if (byte.is_imm()) return Operand::constant((byte.imm & 0xFF) * 0x0101010101010101ull);
        auto b = widen_to_i64(byte);
        auto b8 = emit(make(Opcode::And, names_.fresh(), Type::i64(), {b, Operand::constant(0xFF)}));
        return emit(make(Opcode::Mul, names_.fresh(), Type::i64(), {b8, Operand::constant(0x0101010101010101ull)}));
    }

    std::optional<Type> pointee(const Operand& op) const
    {
        if (op.is_global()) {
            if (const auto* g = in_.find_global(op.name)) return g->type;
        } else if (op.is_reg()) {
            if (auto it = pointees_.find(op.name); it != pointees_.end()) return it->second;
        }
        return std::nullopt;
    }

    std::map<std::string, Type> pointee_map(const ir::Function& f) const
    {
        std::map<std::string, Type> out;
        for (const auto& b : f.blocks) {
            for (const auto& in : b.instrs) {
                if (in.op == Opcode::Alloca) {
                    out.emplace(in.result, in.type);
                } else if (in.op == Opcode::Gep) {
                    if (auto t = ir::gep_target(in.type, in.args, 1, in_)) out.emplace(in.result, *t);
                }
            }
        }
        return out;
    }

    void mem_intrinsic(const Instr& in, const std::string& fn)
    {
        const bool is_copy = in.op == Opcode::Memcpy;
        const Type& t = in.type;
        for (std::size_t k = 0; k < (is_copy ? 2u : 1u); ++k) {
            if (auto p = pointee(in.args[k]); p && !compatible(*p, t)) {
                throw HardeningError(fmt::format("{} #{} in {}: element type {} does not match {} {} of type {}",
                                                 ir::opcode_name(in.op), in.id, fn, t.str(),
                                                 k == 0 ? "destination" : "source", in.args[k].str(), p->str()));
            }
        }
        ++report_.counts[is_copy ? "memcpy" : "memset"];
        const Operand dst = in.args[0];
        const Operand count = in.args[2];
        const auto per_element = slots(t).size();
        const std::uint64_t st = stride(t);

        if (count.is_imm() && count.imm * per_element <= 64) {
            if (count.imm == 0) return;
            const Operand fill = is_copy ? Operand{} : fill_pattern(in.args[1]);
            for (std::uint64_t e = 0; e < count.imm; ++e) {
                auto d = slot_addr(dst, e * st);
                if (is_copy) {
                    copy_element(t, d, slot_addr(in.args[1], e * st));
                } else {
                    fill_element(t, d, fill);
                }
            }
            return;
        }
        const std::string helper = helper_for(in.op, t);
        const Operand second = is_copy ? in.args[1] : fill_pattern(in.args[1]);
        Instr call = make(Opcode::Call, "", Type::void_type(), {dst, second, widen_to_i64(count)});
        call.callee = helper;
        emit(std::move(call));
    }

    std::string helper_for(Opcode op, const Type& t)
    {
        const auto key = fmt::format("{}:{}", ir::opcode_name(op), t.str());
        if (auto it = helper_names_.find(key); it != helper_names_.end()) return it->second;
        std::string name;
        for (std::size_t k = helper_names_.size();; ++k) {
            name = fmt::format("__mf_{}_{}", ir::opcode_name(op), k);
            if (in_.find_function(name) == nullptr) break;
        }
        helper_names_[key] = name;

        const bool is_copy = op == Opcode::Memcpy;
        ir::Function f;
        f.name = name;
        f.protect = true;
        f.ret = Type::void_type();
        f.params = {{"d", Type::address()},
                    {is_copy ? "s" : "f", is_copy ? Type::address() : Type::i64()},
                    {"n", Type::i64()}};
        auto* saved = sink_;
        const Operand d = Operand::reg("d"), s = Operand::reg(is_copy ? "s" : "f"), n = Operand::reg("n");

        ir::BasicBlock entry{"entry", {}}, body{"step", {}}, done{"done", {}};
        sink_ = &entry.instrs;
        Instr z = make(Opcode::Icmp, names_.fresh(), Type::i64(), {n, Operand::constant(0)});
        z.pred = ir::CmpPred::Eq;
        auto zr = emit(std::move(z));
        Instr br = make(Opcode::CondBr, "", Type(), {zr});
        br.targets = {"done", "step"};
        emit(std::move(br));

        sink_ = &body.instrs;
        const std::uint64_t st = stride(t);
        if (is_copy) {
            copy_element(t, d, s);
        } else {
            fill_element(t, d, s);
        }
        auto d1 = slot_addr(d, st);
        auto s1 = is_copy ? slot_addr(s, st) : s;
        auto n1 = emit(make(Opcode::Sub, names_.fresh(), Type::i64(), {n, Operand::constant(1)}));
        Instr rec = make(Opcode::Call, "", Type::void_type(), {d1, s1, n1});
        rec.callee = name;
        emit(std::move(rec));
        Instr j = make(Opcode::Br, "", Type());
        j.targets = {"done"};
        emit(std::move(j));

        sink_ = &done.instrs;
        emit(make(Opcode::Ret, "", Type()));
        sink_ = saved;

        f.blocks = {std::move(entry), std::move(body), std::move(done)};
        helpers_.push_back(std::move(f));
        report_.helpers.push_back(name);
        ++report_.counts["helpers"];
        return name;
    }

    // ---- module-level rewriting ------------------------------------------

    void boundary_warnings()
    {
        for (const auto& f : in_.functions) {
            const bool fp = protected_.count(f.name) > 0;
            for (const auto& b : f.blocks) {
                for (const auto& in : b.instrs) {
                    if (in.op == Opcode::IntToPtr && fp && interleaving()) {
                        report_.warnings.push_back({"pointer-arith", in.id, f.name,
                                                    "integer-to-address conversion in protected code may not "
                                                    "follow the interleaved layout"});
                    }
                    if (in.op != Opcode::Call || in.is_indirect_call()) continue;
                    const auto* callee = in_.find_function(in.callee);
                    if (callee == nullptr || fp == (protected_.count(callee->name) > 0)) continue;
                    const bool passes_addr =
                        std::any_of(callee->params.begin(), callee->params.end(),
                                    [](const ir::Param& p) { return p.type.is_addr(); }) ||
                        callee->ret.is_addr();
                    if (passes_addr) {
                        report_.warnings.push_back(
                            {"pointer-crossing", in.id, f.name,
                             fmt::format("address passed between {} '{}' and {} '{}'", fp ? "protected" : "unprotected",
                                         f.name, fp ? "unprotected" : "protected", callee->name)});
                    }
                }
            }
        }
    }

    void rewrite_globals()
    {
        std::set<std::string> used;
        for (const auto& f : in_.functions) {
            if (!protected_.count(f.name)) continue;
            for (const auto& b : f.blocks)
                for (const auto& in : b.instrs)
                    for (const auto& op : in.args)
                        if (op.is_global()) used.insert(op.name);
        }
        for (auto& g : out_.globals) {
            if (!used.count(g.name)) continue;
            g.init = layout::encode_initializer(g.type, g.init, mode_, in_);
            if (mode_ == LayoutMode::Standard16 &&
                std::all_of(g.init.begin(), g.init.end(), [](std::uint8_t b) { return b == 0; })) {
                g.init.clear();
            }
            g.type = layout::interleaved_type(g.type, mode_, out_);
            report_.globals_rewritten.push_back(g.name);
            ++report_.counts["globals"];
        }
    }

    void rewrite_function(ir::Function& f)
    {
        const ir::Function original = f;
        pointees_ = pointee_map(original);
        reg_types_ = ir::register_types(original, in_);
        for (auto& b : f.blocks) {
            std::vector<Instr> out;
            sink_ = &out;
            for (const auto& in : b.instrs) {
                rewrite_instr(in, f.name);
            }
            b.instrs = std::move(out);
        }
        sink_ = nullptr;
    }

    void rewrite_instr(const Instr& in, const std::string& fn)
    {
        switch (in.op) {
        case Opcode::Alloca: {
            ++report_.counts["allocas"];
            Instr c = in;
            if (interleaving()) c.type = layout::interleaved_type(in.type, mode_, out_);
            emit(std::move(c));
            return;
        }
        case Opcode::Load:
            ++report_.counts["loads"];
            load_prim(in.type, in.args[0], in.result);
            return;
        case Opcode::Store:
            ++report_.counts["stores"];
            store_prim(in.type, in.args[0], in.args[1]);
            return;
        case Opcode::Gep: {
            ++report_.counts["geps"];
            Instr c = in;
            if (interleaving()) c.type = layout::interleaved_type(in.type, mode_, out_);
            emit(std::move(c));
            return;
        }
        case Opcode::Malloc: {
            ++report_.counts["mallocs"];
            Instr c = in;
            if (interleaving()) {
                const std::uint64_t factor = layout::heap_expansion_factor(mode_);
                const Operand& n = in.args[0];
                if (n.is_imm()) {
                    c.args[0] = Operand::constant(n.imm * factor);
                } else {
                    const auto it = reg_types_.find(n.name);
                    const Type nt = it != reg_types_.end() ? it->second : Type::i64();
                    c.args[0] = emit(make(Opcode::Mul, names_.fresh(), nt, {n, Operand::constant(factor)}));
                }
            }
            emit(std::move(c));
            return;
        }
        case Opcode::Memcpy:
        case Opcode::Memset: mem_intrinsic(in, fn); return;
        default: emit(in); return;
        }
    }

    const Module& in_;
    Module out_;
    HardeningConfig cfg_;
    LayoutMode mode_ = LayoutMode::Standard16;
    NameGen names_;
    HardeningReport report_;
    std::set<std::string> protected_;
    std::map<std::string, Type> pointees_;
    std::map<std::string, Type> reg_types_;
    std::map<std::string, std::string> helper_names_;
    std::vector<ir::Function> helpers_;
    std::vector<Instr>* sink_ = nullptr;
};

Hardened run_mode(const Module& m, HardeningConfig config, Mode mode)
{
    config.mode = mode;
    return Hardener(m, std::move(config)).run();
}

}  // namespace

Hardened harden(const Module& m, const HardeningConfig& config) { return run_mode(m, config, config.mode); }
Hardened harden_interleave(const Module& m, HardeningConfig config) { return run_mode(m, std::move(config), Mode::Interleave); }
Hardened harden_dmp(const Module& m, HardeningConfig config) { return run_mode(m, std::move(config), Mode::Dmp); }
Hardened harden_mask(const Module& m, HardeningConfig config) { return run_mode(m, std::move(config), Mode::Mask); }
Hardened harden_cio(const Module& m, HardeningConfig config) { return run_mode(m, std::move(config), Mode::Cio); }

std::vector<Instr> rewrite_mem_intrinsic(const Instr& in, const ir::Function& context, Module& out,
                                         const HardeningConfig& config)
{
    if (in.op != Opcode::Memcpy && in.op != Opcode::Memset) {
        throw HardeningError("rewrite_mem_intrinsic expects memcpy or memset");
    }
    Hardener h(out, config);
    auto seq = h.expand_intrinsic(in, context);
    for (auto& f : h.take_helpers()) out.functions.push_back(std::move(f));
    return seq;
}

}  // namespace memfresh::passes
