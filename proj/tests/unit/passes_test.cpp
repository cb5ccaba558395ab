#include "support.hpp"

#include "memfresh/ir/parser.hpp"
#include "memfresh/ir/printer.hpp"
#include "memfresh/ir/validate.hpp"
#include "memfresh/oracle/audit.hpp"
#include "memfresh/passes/harden.hpp"
#include "memfresh/vm/machine.hpp"

#include <doctest.h>

#include <cstring>

using namespace memfresh;
using ir::Opcode;
using passes::Mode;

namespace {

const Mode kModes[] = {Mode::Interleave, Mode::Mask, Mode::Cio, Mode::Dmp};

passes::HardeningConfig config(Mode mode, std::uint64_t seed = 1)
{
    passes::HardeningConfig hc;
    hc.mode = mode;
    hc.counter = ir::CounterSeedPolicy::fixed(seed);
    return hc;
}

std::size_t count_ops(const ir::Function& f, Opcode op)
{
    std::size_t n = 0;
    for (const auto& b : f.blocks) {
        for (const auto& in : b.instrs) n += in.op == op ? 1 : 0;
    }
    return n;
}

std::size_t count_ops(const std::vector<ir::Instr>& v, Opcode op)
{
    std::size_t n = 0;
    for (const auto& in : v) n += in.op == op ? 1 : 0;
    return n;
}

const ir::Instr& first_op(const ir::Function& f, Opcode op)
{
    for (const auto& b : f.blocks) {
        for (const auto& in : b.instrs) {
            if (in.op == op) return in;
        }
    }
    throw std::logic_error("opcode not found");
}

}  // namespace

TEST_CASE("malloc sizes scale by the heap expansion factor")
{
    auto m = ir::parse_module(
        "fn protect main(%n: i64) -> i64 {\nentry:\n    %p = malloc 8\n    %q = malloc 4\n    %r = malloc %n\n"
        "    free %p\n    free %q\n    free %r\n    ret %n\n}\n");
    auto h16 = passes::harden(m, config(Mode::Interleave));
    auto h8 = passes::harden(m, config(Mode::Dmp));
    std::vector<std::uint64_t> sizes16, sizes8;
    for (const auto& in : h16.module.functions[0].blocks[0].instrs) {
        if (in.op == Opcode::Malloc && in.args[0].is_imm()) sizes16.push_back(in.args[0].imm);
    }
    for (const auto& in : h8.module.functions[0].blocks[0].instrs) {
        if (in.op == Opcode::Malloc && in.args[0].is_imm()) sizes8.push_back(in.args[0].imm);
    }
    CHECK(sizes16 == std::vector<std::uint64_t>{128, 64});
    CHECK(sizes8 == std::vector<std::uint64_t>{64, 32});
    vm::MachineConfig cfg;
    for (const auto& [h, f] : {std::pair{&h16, 16u}, std::pair{&h8, 8u}}) {
        auto r = vm::execute(h->module, "main", {5}, cfg);
        std::vector<std::uint64_t> widths;
        for (const auto& e : r.trace) {
            if (e.kind == vm::EventKind::Alloc && e.region == vm::RegionKind::Heap) widths.push_back(e.width);
        }
        CHECK(widths == std::vector<std::uint64_t>{8 * f, 4 * f, 5 * f});
    }
}

TEST_CASE("memcpy and memset expansion")
{
    auto m = ir::parse_module(
        "global @s : [4 x i32] = zeroinit\nglobal @d : [4 x i32] = zeroinit\nglobal @c : [1 x i8] = zeroinit\n"
        "fn protect main(%n: i64) -> i64 {\nentry:\n    memcpy @d, @s, 4, i32\n    memset @c, 0, 1, i8\n"
        "    memcpy @d, @s, 0, i32\n    memcpy @d, @s, %n, i32\n    ret %n\n}\n");
    const auto& f = m.functions[0];
    const auto& ins = f.blocks[0].instrs;
    auto out = m;
    auto copy4 = passes::rewrite_mem_intrinsic(ins[0], f, out, config(Mode::Interleave));
    CHECK(count_ops(copy4, Opcode::BlkStore) == 4);
    CHECK(count_ops(copy4, Opcode::CtrInc) == 4);
    CHECK(count_ops(copy4, Opcode::BlkLoad) == 4);
    auto set1 = passes::rewrite_mem_intrinsic(ins[1], f, out, config(Mode::Interleave));
    CHECK(count_ops(set1, Opcode::BlkStore) == 1);
    CHECK(passes::rewrite_mem_intrinsic(ins[2], f, out, config(Mode::Interleave)).empty());
    const auto before = out.functions.size();
    auto dyn = passes::rewrite_mem_intrinsic(ins[3], f, out, config(Mode::Interleave));
    CHECK(count_ops(dyn, Opcode::Call) == 1);
    CHECK(out.functions.size() == before + 1);
    // The helper recurses instead of keeping loop state in memory.
    const auto& helper = out.functions.back();
    CHECK(count_ops(helper, Opcode::Call) == 1);
    CHECK(count_ops(helper, Opcode::Alloca) == 0);
    CHECK(count_ops(helper, Opcode::BlkStore) == 1);
}

TEST_CASE("mismatched memcpy element type aborts the transform")
{
    auto m = ir::parse_module(
        "global @s : [4 x i32] = zeroinit\nglobal @d : [2 x i64] = zeroinit\n"
        "fn protect main(%n: i64) -> i64 {\nentry:\n    memcpy @d, @s, 2, i32\n    ret %n\n}\n");
    CHECK_THROWS_AS(passes::harden(m, config(Mode::Interleave)), passes::HardeningError);
}

TEST_CASE("interleaved stores are single combined block stores")
{
    auto m = testing::load_corpus("ctswap");
    auto h = passes::harden(m, config(Mode::Interleave));
    CHECK(h.module.counter == ir::CounterSeedPolicy::fixed(1));
    for (const auto& f : h.module.functions) {
        CHECK(count_ops(f, Opcode::Store) == 0);
        CHECK(count_ops(f, Opcode::Load) == 0);
        CHECK(count_ops(f, Opcode::BlkStore) == count_ops(*m.find_function(f.name), Opcode::Store));
        CHECK(count_ops(f, Opcode::CtrInc) == count_ops(f, Opcode::BlkStore));
    }
    CHECK(h.report.counts.at("stores") == 6);
    CHECK(h.report.protected_functions == std::set<std::string>{"cswap", "main"});
}

TEST_CASE("coverage: rewritten stores equal the static stores in scope")
{
    for (const auto& name : testing::corpus_names()) {
        auto m = testing::load_corpus(name);
        std::uint64_t stores = 0, mems = 0;
        for (const auto& f : m.functions) {
            stores += count_ops(f, Opcode::Store);
            mems += count_ops(f, Opcode::Memcpy) + count_ops(f, Opcode::Memset);
        }
        for (auto mode : kModes) {
            CAPTURE(name);
            CAPTURE(passes::mode_name(mode));
            auto h = passes::harden(m, config(mode));
            CHECK(h.report.counts.at("stores") == stores);
            CHECK(h.report.counts.at("memcpy") + h.report.counts.at("memset") == mems);
        }
    }
}

TEST_CASE("mode-specific module directives and flags")
{
    auto m = testing::load_corpus("masktoggle");
    auto cfg = config(Mode::Mask);
    cfg.mask_rng = ir::MaskRng::Incrementing;
    auto h = passes::harden(m, cfg);
    CHECK(h.module.shadow_displacement == passes::kShadowDisplacement);
    CHECK(std::find(h.report.flags.begin(), h.report.flags.end(), "weak-rng") != h.report.flags.end());
    auto hx = passes::harden(m, config(Mode::Mask));
    CHECK(hx.report.mask_rng == ir::MaskRng::XorShift128Plus);
    CHECK(hx.report.flags.empty());
    auto c = passes::harden(m, config(Mode::Cio));
    CHECK(!c.module.counter);
    CHECK(!c.module.shadow_displacement);
    CHECK(count_ops(*c.module.find_function("toggle"), Opcode::Store) == 2);
    CHECK_THROWS_AS(passes::harden(h.module, config(Mode::Interleave)), passes::HardeningError);
}

TEST_CASE("attr scope hardens only the protect closure")
{
    auto m = ir::parse_module(
        "global @k : i64 = zeroinit\nglobal @pub : i64 = zeroinit\n"
        "fn helper(%v: i64) -> void {\nentry:\n    store i64 %v, @k\n    ret\n}\n"
        "fn protect root(%v: i64) -> void {\nentry:\n    call void helper(%v)\n    ret\n}\n"
        "fn outside(%v: i64) -> i64 {\nentry:\n    store i64 %v, @pub\n    call void root(%v)\n    ret %v\n}\n");
    auto cfg = config(Mode::Interleave);
    cfg.scope = passes::Scope::Attr;
    auto h = passes::harden(m, cfg);
    CHECK(h.report.protected_functions == std::set<std::string>{"root", "helper"});
    CHECK(h.module.find_function("helper")->protect);
    CHECK(count_ops(*h.module.find_function("helper"), Opcode::BlkStore) == 1);
    CHECK(count_ops(*h.module.find_function("outside"), Opcode::Store) == 1);
    CHECK(h.report.globals_rewritten == std::vector<std::string>{"k"});
    auto r0 = vm::execute(m, "outside", {9}, {});
    auto r1 = vm::execute(h.module, "outside", {9}, {});
    CHECK(r0.exit_value == r1.exit_value);

    auto none = ir::parse_module("fn f() -> void {\nentry:\n    ret\n}\n");
    CHECK_THROWS_AS(passes::harden(none, cfg), passes::HardeningError);
}

TEST_CASE("pointers crossing the protection boundary are reported")
{
    auto m = ir::parse_module(
        "fn protect root(%p: addr) -> void {\nentry:\n    ret\n}\n"
        "fn outer() -> void {\nentry:\n    %x = alloca i64\n    call void root(%x)\n    ret\n}\n");
    auto cfg = config(Mode::Interleave);
    cfg.scope = passes::Scope::Attr;
    auto h = passes::harden(m, cfg);
    REQUIRE(!h.report.warnings.empty());
    CHECK(h.report.warnings[0].kind == "pointer-crossing");
}

TEST_CASE("hardened corpus modules validate and round-trip")
{
    for (const auto& name : testing::corpus_names()) {
        for (auto mode : kModes) {
            CAPTURE(name);
            CAPTURE(passes::mode_name(mode));
            auto h = passes::harden(testing::load_corpus(name), config(mode));
            CHECK(ir::validate_module(h.module).empty());
            CHECK(ir::parse_module(ir::print_module(h.module)) == h.module);
            const auto j = passes::report_to_json(h.report);
            CHECK(j.at("mode") == passes::mode_name(mode));
        }
    }
}

TEST_CASE("property: hardening preserves declassified outputs")
{
    std::mt19937_64 rng(41);
    for (int trial = 0; trial < 60; ++trial) {
        auto g = testing::generate_program(rng, 1 + rng() % 50);
        auto m = ir::parse_module(g.text);
        for (auto mode : kModes) {
            auto h = passes::harden(m, config(mode, rng()));
            vm::MachineConfig cfg;
            cfg.silent_granularity = 8;
            auto r = vm::execute(h.module, "main", {g.a, g.b}, cfg);
            CAPTURE(g.text);
            REQUIRE_MESSAGE(r.outputs == g.expected, passes::mode_name(mode));
        }
    }
}

TEST_CASE("property: interleaved counters strictly increase and blocks never repeat")
{
    std::mt19937_64 rng(43);
    for (int trial = 0; trial < 60; ++trial) {
        auto g = testing::generate_program(rng, 10 + rng() % 50);
        auto h = passes::harden(ir::parse_module(g.text), config(Mode::Interleave, rng() >> 1));
        auto r = vm::execute(h.module, "main", {g.a, g.b}, {});
        std::optional<std::uint64_t> last;
        for (const auto& e : r.trace) {
            if (!e.is_store()) continue;
            REQUIRE(e.width == 16);
            std::uint64_t ctr = 0;
            std::memcpy(&ctr, e.after.data() + 8, 8);
            if (last) CHECK(ctr > *last);
            last = ctr;
        }
        CHECK(oracle::audit_collisions(r.trace).empty());
    }
}
