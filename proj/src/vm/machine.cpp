#include "memfresh/vm/machine.hpp"

#include "memfresh/ir/call_graph.hpp"
#include "memfresh/ir/validate.hpp"

#include <fmt/format.h>
#include <sodium.h>

#include <cstring>
#include <random>

namespace memfresh::vm {

using ir::Opcode;

Trap::Trap(std::uint32_t instr_id, std::uint64_t step, const std::string& message)
    : std::runtime_error(fmt::format("trap at instruction #{} (step {}): {}", instr_id, step, message)),
      instr_id_(instr_id), step_(step)
{
}

namespace {

struct Opnd {
    enum class K : std::uint8_t { Slot, Imm, Global } k = K::Imm;
    std::uint64_t v = 0;
};

struct GepTerm {
    Opnd idx;
    std::uint64_t stride;
};

struct LeafRef {
    std::uint64_t offset;
    unsigned width;
};

struct CInstr {
    Opcode op = Opcode::Ret;
    std::uint32_t id = 0;
    std::int32_t dst = -1;
    unsigned width = 8;     // value width in bytes (result, stored value, compared operands)
    unsigned in_width = 8;  // source width of casts
    Opnd a, b, c;
    std::uint64_t imm = 0;  // alloca size, gep constant offset, block size, element size
    std::vector<GepTerm> terms;
    std::vector<Opnd> args;
    std::vector<LeafRef> leaves;
    std::uint32_t t0 = 0, t1 = 0;
    std::int32_t callee = -1;
    ir::CmpPred pred = ir::CmpPred::Eq;
    ir::MaskRng rng = ir::MaskRng::Incrementing;
    std::string label;
};

struct CFunc {
    std::string name;
    std::size_t nparams = 0;
    std::vector<unsigned> param_widths;
    std::size_t nslots = 0;
    bool protect = false;
    bool returns_value = false;
    std::vector<CInstr> code;
};

struct CGlobal {
    std::string name;
    std::uint64_t size = 0;
    std::vector<std::uint8_t> init;
    bool protected_region = false;
};

std::uint64_t mask_to(std::uint64_t v, unsigned width)
{
    return width >= 8 ? v : v & ((std::uint64_t{1} << (8 * width)) - 1);
}

std::int64_t sign_extend(std::uint64_t v, unsigned width)
{
    if (width >= 8) return static_cast<std::int64_t>(v);
    const unsigned shift = 64 - 8 * width;
    return static_cast<std::int64_t>(v << shift) >> shift;
}

unsigned width_of(const ir::Type& t) { return t.is_primitive() ? t.byte_width() : 8; }

std::uint64_t splitmix64(std::uint64_t& x)
{
    std::uint64_t z = (x += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

}  // namespace

struct Program::Impl {
    ir::Module module;
    std::vector<CFunc> funcs;
    std::map<std::string, std::size_t> func_index;
    std::vector<CGlobal> globals;

    explicit Impl(const ir::Module& m) : module(m)
    {
        ir::require_valid(module);
        const auto prot = ir::protected_closure(module);
        for (std::size_t i = 0; i < module.functions.size(); ++i) {
            func_index[module.functions[i].name] = i;
        }
        std::map<std::string, std::size_t> global_index;
        for (const auto& g : module.globals) {
            global_index[g.name] = globals.size();
            globals.push_back({g.name, ir::size_of(g.type, module), g.init, false});
        }
        for (const auto& f : module.functions) {
            funcs.push_back(compile(f, prot.count(f.name) > 0, global_index));
        }
        for (const auto& f : module.functions) {
            if (!prot.count(f.name)) continue;
            for (const auto& b : f.blocks) {
                for (const auto& in : b.instrs) {
                    for (const auto& op : in.args) {
                        if (op.is_global()) globals[global_index[op.name]].protected_region = true;
                    }
                }
            }
        }
    }

    CFunc compile(const ir::Function& f, bool protect, const std::map<std::string, std::size_t>& global_index)
    {
        CFunc cf;
        cf.name = f.name;
        cf.nparams = f.params.size();
        cf.protect = protect;
        cf.returns_value = !f.ret.is_void();
        std::map<std::string, std::size_t> slots;
        for (const auto& p : f.params) {
            slots.emplace(p.name, slots.size());
            cf.param_widths.push_back(width_of(p.type));
        }
        std::map<std::string, std::uint32_t> block_start;
        std::uint32_t pc = 0;
        for (const auto& b : f.blocks) {
            block_start[b.label] = pc;
            for (const auto& in : b.instrs) {
                if (in.has_result()) slots.emplace(in.result, slots.size());
                ++pc;
            }
        }
        cf.nslots = slots.size();
        const auto types = ir::register_types(f, module);

        auto opnd = [&](const ir::Operand& o) {
            Opnd r;
            if (o.is_reg()) {
                r.k = Opnd::K::Slot;
                r.v = slots.at(o.name);
            } else if (o.is_global()) {
                r.k = Opnd::K::Global;
                r.v = global_index.at(o.name);
            } else {
                r.v = o.imm;
            }
            return r;
        };

        for (const auto& b : f.blocks) {
            for (const auto& in : b.instrs) {
                CInstr c;
                c.op = in.op;
                c.id = in.id;
                if (in.has_result()) c.dst = static_cast<std::int32_t>(slots.at(in.result));
                if (!in.args.empty()) c.a = opnd(in.args[0]);
                if (in.args.size() > 1) c.b = opnd(in.args[1]);
                if (in.args.size() > 2) c.c = opnd(in.args[2]);
                if (in.type.is_primitive()) c.width = in.type.byte_width();
                switch (in.op) {
                case Opcode::Alloca:
                    c.imm = ir::size_of(in.type, module);
                    c.label = fmt::format("{}:%{}", f.name, in.result);
                    break;
                case Opcode::Gep: {
                    const auto stride0 = ir::size_of(in.type, module);
                    auto add_term = [&](const Opnd& idx, std::uint64_t stride) {
                        if (idx.k == Opnd::K::Imm) {
                            c.imm += idx.v * stride;
                        } else {
                            c.terms.push_back({idx, stride});
                        }
                    };
                    add_term(c.b, stride0);
                    ir::Type cur = in.type;
                    for (std::size_t i = 2; i < in.args.size(); ++i) {
                        if (cur.is_array()) {
                            cur = cur.element();
                            add_term(opnd(in.args[i]), ir::size_of(cur, module));
                        } else {
                            const auto* def = module.find_aggregate(cur.name());
                            for (std::uint64_t k = 0; k < in.args[i].imm; ++k) {
                                c.imm += ir::size_of(def->fields[k], module);
                            }
                            cur = def->fields[in.args[i].imm];
                        }
                    }
                    break;
                }
                case Opcode::Icmp: c.pred = in.pred; break;
                case Opcode::Zext:
                case Opcode::Trunc:
                    c.in_width = in.type.byte_width();
                    c.width = in.to_type.byte_width();
                    break;
                case Opcode::Br: c.t0 = block_start.at(in.targets[0]); break;
                case Opcode::CondBr:
                    c.t0 = block_start.at(in.targets[0]);
                    c.t1 = block_start.at(in.targets[1]);
                    break;
                case Opcode::Call:
                    for (std::size_t i = in.is_indirect_call() ? 1 : 0; i < in.args.size(); ++i) {
                        c.args.push_back(opnd(in.args[i]));
                    }
                    if (!in.is_indirect_call()) c.callee = static_cast<std::int32_t>(func_index.at(in.callee));
                    break;
                case Opcode::FnAddr: c.imm = function_address(func_index.at(in.callee)); break;
                case Opcode::Malloc: c.label = fmt::format("{}:%{}", f.name, in.result); break;
                case Opcode::Memcpy:
                case Opcode::Memset:
                    c.imm = ir::size_of(in.type, module);
                    for (const auto& leaf : ir::leaves_of(in.type, module)) {
                        c.leaves.push_back({leaf.offset, width_of(leaf.type)});
                    }
                    break;
                case Opcode::BlkLoad:
                case Opcode::BlkStore:
                    c.imm = in.type.block_size();
                    c.width = in.type.element().byte_width();
                    break;
                case Opcode::MaskGen: c.rng = in.rng; break;
                case Opcode::Ret:
                    if (in.args.size() == 1) c.width = width_of(f.ret);
                    break;
                default: break;
                }
                cf.code.push_back(std::move(c));
            }
        }
        return cf;
    }
};

namespace {

class Machine {
public:
    Machine(const Program::Impl& p, const MachineConfig& cfg, const RunOptions& opts)
        : p_(p), cfg_(cfg), opts_(opts), cipher_(cfg.cipher_key_seed),
          mem_(cfg.heap_base, shadow_limit(p.module, cfg))
    {
    }

    RunResult run(const std::string& entry, const std::vector<std::uint64_t>& args)
    {
        auto it = p_.func_index.find(entry);
        if (it == p_.func_index.end()) {
            throw std::invalid_argument(fmt::format("entry function '{}' not found", entry));
        }
        const CFunc& ef = p_.funcs[it->second];
        if (args.size() != ef.nparams) {
            throw std::invalid_argument(
                fmt::format("'{}' takes {} arguments, {} given", entry, ef.nparams, args.size()));
        }
        seed_state();
        res_.header.config = config_to_json(cfg_);
        res_.header.counter_seed = res_.counter_seed;
        res_.header.entry = entry;
        res_.header.args = args;
        if (opts_.on_start) opts_.on_start(res_.header);

        for (const auto& g : p_.globals) {
            Region& r = allocate(g.size, RegionKind::Global, g.protected_region, "@" + g.name, g.init, 0);
            global_addr_.push_back(r.base);
            res_.globals[g.name] = {r.base, g.size};
        }

        Frame f;
        f.fn = &ef;
        f.slots.assign(ef.nslots, 0);
        for (std::size_t i = 0; i < args.size(); ++i) {
            f.slots[i] = mask_to(args[i], ef.param_widths[i]);
        }
        stack_.push_back(std::move(f));
        loop();
        res_.counters.dynamic_instructions = step_;
        res_.final_counter = counter_;
        return std::move(res_);
    }

private:
    struct Frame {
        const CFunc* fn = nullptr;
        std::size_t pc = 0;
        std::vector<std::uint64_t> slots;
        std::int32_t ret_dst = -1;
        std::vector<std::uint64_t> allocas;
    };

    static std::uint64_t shadow_limit(const ir::Module& m, const MachineConfig& cfg)
    {
        cfg.check();
        if (m.shadow_displacement) {
            const auto d = *m.shadow_displacement;
            if (d < cfg.heap_base || d % 16 != 0 || d + cfg.heap_base > (std::uint64_t{1} << 32)) {
                throw std::invalid_argument(fmt::format("shadow displacement {:#x} is unusable", d));
            }
            return std::min(cfg.heap_limit, d);
        }
        return cfg.heap_limit;
    }

    void seed_state()
    {
        if (p_.module.counter && !p_.module.counter->random) {
            res_.counter_seed = p_.module.counter->seed;
        } else if (p_.module.counter && !cfg_.counter_seed) {
            std::random_device rd;
            res_.counter_seed = (std::uint64_t{rd()} << 32) | rd();
        } else {
            res_.counter_seed = cfg_.counter_seed.value_or(0);
        }
        counter_ = res_.counter_seed;
        inc_state_ = res_.counter_seed;
        std::uint64_t sm = res_.counter_seed;
        xs_[0] = splitmix64(sm);
        xs_[1] = splitmix64(sm);
        if (sodium_init() < 0) {
            throw std::runtime_error("libsodium failed to initialize");
        }
        std::array<std::uint8_t, 8> seed{};
        std::memcpy(seed.data(), &res_.counter_seed, 8);
        static constexpr char kContext[] = "memfresh mask key";
        crypto_generichash_state st;
        crypto_generichash_init(&st, nullptr, 0, sip_key_.size());
        crypto_generichash_update(&st, reinterpret_cast<const unsigned char*>(kContext), sizeof(kContext) - 1);
        crypto_generichash_update(&st, seed.data(), seed.size());
        crypto_generichash_final(&st, sip_key_.data(), sip_key_.size());
    }

    std::uint64_t next_mask(ir::MaskRng rng)
    {
        switch (rng) {
        case ir::MaskRng::Incrementing: return ++inc_state_;
        case ir::MaskRng::XorShift128Plus: {
            std::uint64_t s1 = xs_[0];
            const std::uint64_t s0 = xs_[1];
            const std::uint64_t out = s0 + s1;
            xs_[0] = s0;
            s1 ^= s1 << 23;
            xs_[1] = s1 ^ s0 ^ (s1 >> 18) ^ (s0 >> 5);
            return out;
        }
        case ir::MaskRng::KeyedHash: {
            std::array<std::uint8_t, 8> msg{};
            const std::uint64_t n = hash_ctr_++;
            std::memcpy(msg.data(), &n, 8);
            std::array<std::uint8_t, crypto_shorthash_BYTES> out{};
            crypto_shorthash(out.data(), msg.data(), msg.size(), sip_key_.data());
            std::uint64_t v = 0;
            std::memcpy(&v, out.data(), 8);
            return v;
        }
        }
        return 0;
    }

    void emit(TraceEvent& e)
    {
        e.step = step_;
        switch (e.kind) {
        case EventKind::Store: ++res_.counters.stores; break;
        case EventKind::StoreSilenced:
            ++res_.counters.stores;
            ++res_.counters.silenced;
            break;
        case EventKind::Load: break;
        case EventKind::Alloc: ++res_.counters.allocs; break;
        case EventKind::Free: ++res_.counters.frees; break;
        case EventKind::PrefetchCandidate: ++res_.counters.prefetch_candidates; break;
        }
        if (e.kind == EventKind::Store && e.chunk_mask != 0) {
            ++res_.counters.partial;
        }
        if (opts_.sink) opts_.sink(e);
        if (opts_.collect_trace) res_.trace.push_back(e);
    }

    Region& allocate(std::uint64_t size, RegionKind kind, bool prot, std::string label,
                     const std::vector<std::uint8_t>& init, std::uint32_t id)
    {
        Region& r = mem_.allocate(size, kind, prot, std::move(label), init);
        TraceEvent e;
        e.instr_id = id;
        e.kind = EventKind::Alloc;
        e.addr = r.base;
        e.width = r.requested;
        e.region = kind;
        e.protected_region = prot;
        e.label = r.label;
        if (std::any_of(r.bytes.begin(), r.bytes.end(), [](std::uint8_t b) { return b != 0; })) {
            e.init = r.bytes;
        }
        const std::uint64_t base = r.base;
        const std::uint64_t rsize = r.size;
        emit(e);
        if (p_.module.shadow_displacement) {
            Region& s = mem_.map_at(base + *p_.module.shadow_displacement, rsize, RegionKind::Shadow, prot,
                                    "shadow:" + e.label);
            TraceEvent se;
            se.instr_id = id;
            se.kind = EventKind::Alloc;
            se.addr = s.base;
            se.width = e.width;
            se.region = RegionKind::Shadow;
            se.shadow = true;
            se.protected_region = prot;
            se.label = s.label;
            emit(se);
        }
        res_.peak_memory = std::max(res_.peak_memory, mem_.live_bytes());
        return *mem_.find(base);
    }

    void release(std::uint64_t base, std::uint32_t id)
    {
        auto emit_free = [&](std::uint64_t b, bool shadow) {
            const Region* r = mem_.find(b);
            TraceEvent e;
            e.instr_id = id;
            e.kind = EventKind::Free;
            e.addr = b;
            e.width = r ? r->size : 0;
            e.shadow = shadow;
            mem_.release(b);
            emit(e);
        };
        emit_free(base, false);
        if (p_.module.shadow_displacement) {
            emit_free(base + *p_.module.shadow_displacement, true);
        }
    }

    std::uint64_t load(std::uint64_t addr, unsigned width, std::uint32_t id)
    {
        std::uint8_t buf[16] = {};
        mem_.read(addr, width, buf);
        ++res_.counters.loads;
        if (cfg_.record_loads) {
            const Region* r = mem_.find(addr, width);
            TraceEvent e;
            e.instr_id = id;
            e.kind = EventKind::Load;
            e.addr = addr;
            e.width = width;
            std::memcpy(e.after.data(), buf, width);
            e.shadow = r->kind == RegionKind::Shadow;
            e.protected_region = r->protected_region;
            emit(e);
        }
        if (cfg_.dmp_enabled) {
            for (const auto& c : mem_.dmp_scan(addr, cfg_.dmp_scan_window)) {
                TraceEvent e;
                e.instr_id = id;
                e.kind = EventKind::PrefetchCandidate;
                e.addr = c.source;
                e.width = 8;
                e.candidate = c.value;
                e.protected_region = c.protected_region;
                emit(e);
            }
        }
        std::uint64_t v = 0;
        std::memcpy(&v, buf, std::min(width, 8u));
        return v;
    }

    void store(std::uint64_t addr, unsigned width, const std::uint8_t* bytes, std::uint32_t id)
    {
        TraceEvent e;
        e.instr_id = id;
        mem_.apply_store(addr, width, bytes, cfg_.silent_granularity, cipher_, e);
        emit(e);
    }

    void store_value(std::uint64_t addr, unsigned width, std::uint64_t v, std::uint32_t id)
    {
        std::uint8_t buf[8];
        std::memcpy(buf, &v, 8);
        store(addr, width, buf, id);
    }

    std::uint64_t val(const Frame& f, const Opnd& o) const
    {
        switch (o.k) {
        case Opnd::K::Slot: return f.slots[o.v];
        case Opnd::K::Global: return global_addr_[o.v];
        case Opnd::K::Imm: return o.v;
        }
        return 0;
    }

    void check_block_alignment(std::uint64_t addr, std::uint64_t block)
    {
        if (addr % block != 0) {
            throw MemoryFault(fmt::format("block access at {:#x} is not {}-byte aligned", addr, block));
        }
    }

    void mem_intrinsic(const Frame& f, const CInstr& in)
    {
        const std::uint64_t dst = val(f, in.a);
        const std::uint64_t count = val(f, in.c);
        if (in.op == Opcode::Memcpy) {
            const std::uint64_t src = val(f, in.b);
            for (std::uint64_t e = 0; e < count; ++e) {
                for (const auto& leaf : in.leaves) {
                    const auto v = load(src + e * in.imm + leaf.offset, leaf.width, in.id);
                    store_value(dst + e * in.imm + leaf.offset, leaf.width, v, in.id);
                }
            }
        } else {
            const std::uint64_t fill = (val(f, in.b) & 0xFF) * 0x0101010101010101ull;
            for (std::uint64_t e = 0; e < count; ++e) {
                for (const auto& leaf : in.leaves) {
                    store_value(dst + e * in.imm + leaf.offset, leaf.width, fill, in.id);
                }
            }
        }
    }

    void do_return(const CInstr& in, std::uint64_t value)
    {
        Frame& f = stack_.back();
        if (stack_.size() == 1) {
            res_.snapshot = mem_.snapshot();
        }
        for (auto it = f.allocas.rbegin(); it != f.allocas.rend(); ++it) {
            release(*it, in.id);
        }
        const auto dst = f.ret_dst;
        stack_.pop_back();
        if (stack_.empty()) {
            res_.exit_value = value;
        } else if (dst >= 0) {
            stack_.back().slots[dst] = value;
        }
    }

    void call(const CInstr& in, const CFunc& callee, std::vector<std::uint64_t> args)
    {
        if (args.size() != callee.nparams) {
            throw MemoryFault(fmt::format("call of '{}' with {} arguments, expected {}", callee.name, args.size(),
                                          callee.nparams));
        }
        if (stack_.size() >= 1'000'000) {
            throw MemoryFault("call depth limit exceeded");
        }
        Frame nf;
        nf.fn = &callee;
        nf.slots.assign(callee.nslots, 0);
        for (std::size_t i = 0; i < args.size(); ++i) {
            nf.slots[i] = mask_to(args[i], callee.param_widths[i]);
        }
        nf.ret_dst = in.dst;
        stack_.push_back(std::move(nf));
    }

    void loop()
    {
        while (!stack_.empty()) {
            Frame& f = stack_.back();
            const CInstr& in = f.fn->code[f.pc++];
            if (++step_ > cfg_.max_steps) {
                throw Trap(in.id, step_, fmt::format("step limit of {} exceeded", cfg_.max_steps));
            }
            try {
                exec(f, in);
            } catch (const MemoryFault& e) {
                throw Trap(in.id, step_, e.what());
            }
        }
    }

    void exec(Frame& f, const CInstr& in)
    {
        auto set = [&](std::uint64_t v) { f.slots[in.dst] = mask_to(v, in.width); };
        switch (in.op) {
        case Opcode::Alloca: {
            Region& r = allocate(in.imm, RegionKind::Stack, f.fn->protect, in.label, {}, in.id);
            f.allocas.push_back(r.base);
            f.slots[in.dst] = r.base;
            break;
        }
        case Opcode::Load: set(load(val(f, in.a), in.width, in.id)); break;
        case Opcode::Store: store_value(val(f, in.b), in.width, val(f, in.a), in.id); break;
        case Opcode::Gep: {
            std::uint64_t addr = val(f, in.a) + in.imm;
            for (const auto& t : in.terms) addr += val(f, t.idx) * t.stride;
            f.slots[in.dst] = addr;
            break;
        }
        case Opcode::Add: set(val(f, in.a) + val(f, in.b)); break;
        case Opcode::Sub: set(val(f, in.a) - val(f, in.b)); break;
        case Opcode::Mul: set(val(f, in.a) * val(f, in.b)); break;
        case Opcode::And: set(val(f, in.a) & val(f, in.b)); break;
        case Opcode::Or: set(val(f, in.a) | val(f, in.b)); break;
        case Opcode::Xor: set(val(f, in.a) ^ val(f, in.b)); break;
        case Opcode::Shl: {
            const auto s = val(f, in.b);
            set(s >= 8u * in.width ? 0 : val(f, in.a) << s);
            break;
        }
        case Opcode::Lshr: {
            const auto s = val(f, in.b);
            set(s >= 8u * in.width ? 0 : mask_to(val(f, in.a), in.width) >> s);
            break;
        }
        case Opcode::Icmp: {
            const auto x = mask_to(val(f, in.a), in.width);
            const auto y = mask_to(val(f, in.b), in.width);
            bool r = false;
            switch (in.pred) {
            case ir::CmpPred::Eq: r = x == y; break;
            case ir::CmpPred::Ne: r = x != y; break;
            case ir::CmpPred::Ult: r = x < y; break;
            case ir::CmpPred::Slt: r = sign_extend(x, in.width) < sign_extend(y, in.width); break;
            }
            f.slots[in.dst] = r ? 1 : 0;
            break;
        }
        case Opcode::Select: set(val(f, in.a) != 0 ? val(f, in.b) : val(f, in.c)); break;
        case Opcode::Zext: set(mask_to(val(f, in.a), in.in_width)); break;
        case Opcode::Trunc: set(val(f, in.a)); break;
        case Opcode::PtrToInt:
        case Opcode::IntToPtr: f.slots[in.dst] = val(f, in.a); break;
        case Opcode::Br: f.pc = in.t0; break;
        case Opcode::CondBr: f.pc = val(f, in.a) != 0 ? in.t0 : in.t1; break;
        case Opcode::Ret: do_return(in, in.a.k == Opnd::K::Imm && !f.fn->returns_value ? 0 : mask_to(val(f, in.a), in.width)); break;
        case Opcode::Call: {
            std::vector<std::uint64_t> args;
            args.reserve(in.args.size());
            for (const auto& a : in.args) args.push_back(val(f, a));
            const CFunc* callee = nullptr;
            if (in.callee >= 0) {
                callee = &p_.funcs[in.callee];
            } else {
                const std::uint64_t target = val(f, in.a);
                const std::uint64_t base = function_address(0);
                if (target < base || (target - base) % 16 != 0 || (target - base) / 16 >= p_.funcs.size()) {
                    throw MemoryFault(fmt::format("indirect call to {:#x}, which is not a function", target));
                }
                callee = &p_.funcs[(target - base) / 16];
            }
            call(in, *callee, std::move(args));
            break;
        }
        case Opcode::FnAddr: f.slots[in.dst] = in.imm; break;
        case Opcode::Malloc: {
            Region& r = allocate(val(f, in.a), RegionKind::Heap, f.fn->protect, in.label, {}, in.id);
            f.slots[in.dst] = r.base;
            break;
        }
        case Opcode::Free: release(val(f, in.a), in.id); break;
        case Opcode::Memcpy:
        case Opcode::Memset: mem_intrinsic(f, in); break;
        case Opcode::Declassify: res_.outputs.push_back(mask_to(val(f, in.a), in.width)); break;
        case Opcode::BlkLoad: {
            const std::uint64_t addr = val(f, in.a);
            check_block_alignment(addr, in.imm);
            f.slots[in.dst] = mask_to(load(addr, static_cast<unsigned>(in.imm), in.id), in.width);
            break;
        }
        case Opcode::BlkStore: {
            const std::uint64_t addr = val(f, in.c);
            check_block_alignment(addr, in.imm);
            std::uint8_t buf[16] = {};
            const std::uint64_t v = val(f, in.a);
            const std::uint64_t ctr = val(f, in.b);
            std::memcpy(buf, &v, in.width);
            std::memcpy(buf + in.imm / 2, &ctr, in.imm / 2);
            store(addr, static_cast<unsigned>(in.imm), buf, in.id);
            break;
        }
        case Opcode::CtrInc: f.slots[in.dst] = ++counter_; break;
        case Opcode::MaskGen: set(next_mask(in.rng)); break;
        }
    }

    const Program::Impl& p_;
    const MachineConfig& cfg_;
    const RunOptions& opts_;
    Cipher cipher_;
    Memory mem_;
    RunResult res_;
    std::vector<Frame> stack_;
    std::vector<std::uint64_t> global_addr_;
    std::uint64_t step_ = 0;
    std::uint64_t counter_ = 0;
    std::uint64_t inc_state_ = 0;
    std::uint64_t hash_ctr_ = 0;
    std::array<std::uint64_t, 2> xs_{};
    std::array<std::uint8_t, crypto_shorthash_KEYBYTES> sip_key_{};
};

}  // namespace

Program::Program(const ir::Module& m) : impl_(std::make_unique<Impl>(m)) {}
Program::~Program() = default;
Program::Program(Program&&) noexcept = default;
Program& Program::operator=(Program&&) noexcept = default;

const ir::Module& Program::module() const { return impl_->module; }

RunResult Program::run(const std::string& entry, const std::vector<std::uint64_t>& args, const MachineConfig& config,
                       const RunOptions& options) const
{
    Machine m(*impl_, config, options);
    return m.run(entry, args);
}

RunResult execute(const ir::Module& m, const std::string& entry, const std::vector<std::uint64_t>& args,
                  const MachineConfig& config, const RunOptions& options)
{
    return Program(m).run(entry, args, config, options);
}

nlohmann::ordered_json result_to_json(const RunResult& r)
{
    nlohmann::ordered_json j;
    j["exit_value"] = r.exit_value;
    j["outputs"] = r.outputs;
    nlohmann::ordered_json c;
    c["stores"] = r.counters.stores;
    c["silenced"] = r.counters.silenced;
    c["partial"] = r.counters.partial;
    c["loads"] = r.counters.loads;
    c["prefetch_candidates"] = r.counters.prefetch_candidates;
    c["dynamic_instructions"] = r.counters.dynamic_instructions;
    c["allocs"] = r.counters.allocs;
    c["frees"] = r.counters.frees;
    j["counters"] = std::move(c);
    j["peak_memory"] = r.peak_memory;
    j["counter_seed"] = r.counter_seed;
    j["final_counter"] = r.final_counter;
    nlohmann::ordered_json g = nlohmann::ordered_json::object();
    for (const auto& [name, info] : r.globals) {
        g[name] = {{"addr", fmt::format("{:#x}", info.addr)}, {"size", info.size}};
    }
    j["globals"] = std::move(g);
    return j;
}

}  // namespace memfresh::vm
