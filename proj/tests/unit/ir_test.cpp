#include "support.hpp"

#include "memfresh/ir/call_graph.hpp"
#include "memfresh/ir/parser.hpp"
#include "memfresh/ir/printer.hpp"
#include "memfresh/ir/validate.hpp"

#include <doctest.h>

using namespace memfresh;

namespace {

std::vector<std::string> rules(const std::string& text)
{
    std::vector<std::string> out;
    for (const auto& d : ir::validate_module(ir::parse_module(text))) out.push_back(d.rule);
    return out;
}

bool has_rule(const std::string& text, const std::string& rule)
{
    for (const auto& r : rules(text)) {
        if (r == rule) return true;
    }
    return false;
}

}  // namespace

TEST_CASE("corpus modules parse, validate and round-trip")
{
    for (const auto& name : testing::corpus_names()) {
        CAPTURE(name);
        auto m = testing::load_corpus(name);
        CHECK(ir::validate_module(m).empty());
        CHECK(ir::parse_module(ir::print_module(m)) == m);
    }
}

TEST_CASE("instruction ids follow source order from 1")
{
    auto m = ir::parse_module("fn f(%x: i64) -> i64 {\nentry:\n    %y = add i64 %x, 1\n    ret %y\n}\n");
    const auto& ins = m.functions[0].blocks[0].instrs;
    REQUIRE(ins.size() == 2);
    CHECK(ins[0].id == 1);
    CHECK(ins[1].id == 2);
}

TEST_CASE("aggregates print before globals that use them")
{
    auto m = ir::parse_module("aggregate P = { i8, i64 }\nglobal @g : P = zeroinit\n");
    const auto text = ir::print_module(m);
    CHECK(text.find("aggregate P") < text.find("global @g"));
}

TEST_CASE("hex literals, bytes initializers and negative immediates")
{
    auto m = ir::parse_module(
        "global @g : [2 x i16] = bytes(0102ff7f)\n"
        "fn f() -> i64 {\nentry:\n    %y = add i64 0x10, -1\n    ret %y\n}\n");
    CHECK(m.globals[0].init == std::vector<std::uint8_t>{1, 2, 0xff, 0x7f});
    const auto& add = m.functions[0].blocks[0].instrs[0];
    CHECK(add.args[0].imm == 16);
    CHECK(add.args[1].imm == ~std::uint64_t{0});
}

TEST_CASE("parse errors carry a position")
{
    try {
        ir::parse_module("fn f() -> i64 {\nentry:\n    %y = frob i64 1, 2\n}\n");
        FAIL("expected a parse error");
    } catch (const ir::ParseError& e) {
        CHECK(e.loc().line == 3);
    }
    CHECK_THROWS_AS(ir::parse_module("global @g : i64 = zeroinit\nglobal @g : i64 = zeroinit\n"), ir::ParseError);
    CHECK_THROWS_AS(ir::parse_module("global @g : Missing = zeroinit\n"), ir::ParseError);
}

TEST_CASE("validator rules")
{
    CHECK(has_rule("fn f() -> i64 {\nentry:\n    ret %x\n}\n", "undefined-register"));
    CHECK(has_rule("fn f() -> i64 {\nentry:\n    %x = add i64 1, 2\n    %x = add i64 1, 2\n    ret %x\n}\n",
                   "ssa-single-def"));
    CHECK(has_rule("fn f() -> void {\nentry:\n    %x = add i64 1, 2\n}\n", "missing-terminator"));
    CHECK(has_rule("fn f() -> void {\nentry:\n    br nowhere\n}\n", "unknown-label"));
    CHECK(has_rule("fn f() -> void {\nentry:\n    store i64 1, @nope\n    ret\n}\n", "unknown-global"));
    CHECK(has_rule("fn f() -> void {\nentry:\n    call void g()\n    ret\n}\n", "unknown-function"));
    CHECK(has_rule("fn f(%p: addr) -> void {\nentry:\n    store i64 %p, %p\n    ret\n}\n", "type-mismatch"));
    CHECK(has_rule("fn g(%x: i64) -> void {\nentry:\n    ret\n}\nfn f() -> void {\nentry:\n    call void g()\n"
                   "    ret\n}\n",
                   "arity-mismatch"));
    CHECK(has_rule("global @g : [2 x i64] = zeroinit\nfn f() -> void {\nentry:\n    %p = gep [2 x i64], @g, 0, 2\n"
                   "    ret\n}\n",
                   "bad-index"));
    CHECK(has_rule("global @g : [2 x i8] = bytes(01)\n", "global-init-size"));
    // The definition of %y does not dominate its use in `b`.
    CHECK(has_rule("fn f(%c: i64) -> i64 {\nentry:\n    condbr %c, a, b\na:\n    %y = add i64 1, 1\n    br b\n"
                   "b:\n    ret %y\n}\n",
                   "use-before-def"));
    // A global shared by protected and unprotected code.
    CHECK(has_rule("global @g : i64 = zeroinit\nfn protect f() -> void {\nentry:\n    store i64 1, @g\n    ret\n}\n"
                   "fn h() -> i64 {\nentry:\n    %v = load i64, @g\n    ret %v\n}\n",
                   "hybrid-global-use"));
}

TEST_CASE("protection closure follows direct calls from protect roots")
{
    auto m = ir::parse_module(
        "fn leaf() -> void {\nentry:\n    ret\n}\n"
        "fn mid() -> void {\nentry:\n    call void leaf()\n    ret\n}\n"
        "fn other() -> void {\nentry:\n    ret\n}\n"
        "fn protect root() -> void {\nentry:\n    call void mid()\n    ret\n}\n");
    const auto p = ir::protected_closure(m);
    CHECK(p == std::set<std::string>{"root", "mid", "leaf"});
}

TEST_CASE("property: generated programs round-trip and validate")
{
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        auto g = testing::generate_program(rng, 1 + rng() % 40);
        auto m = ir::parse_module(g.text);
        REQUIRE_MESSAGE(ir::validate_module(m).empty(), g.text);
        const auto printed = ir::print_module(m);
        CHECK(ir::parse_module(printed) == m);
        CHECK(ir::print_module(ir::parse_module(printed)) == printed);
    }
}
