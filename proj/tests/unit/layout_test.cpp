#include "memfresh/ir/parser.hpp"
#include "memfresh/layout/layout.hpp"

#include <doctest.h>
#include <fmt/format.h>

#include <random>

using namespace memfresh;
using layout::LayoutMode;

namespace {

struct OracleLeaf {
    std::vector<std::uint32_t> path;
    unsigned width;
};

// Random type text plus its depth-first leaves, built side by side.
struct GenType {
    std::string text;
    std::vector<OracleLeaf> leaves;
};

GenType gen_type(std::mt19937_64& rng, std::string& defs, int depth, int& agg_id)
{
    static const char* prims[] = {"i8", "i16", "i32", "i64", "addr"};
    static const unsigned widths[] = {1, 2, 4, 8, 8};
    const int pick = depth <= 0 ? 0 : static_cast<int>(rng() % 3);
    GenType g;
    if (pick == 0) {
        const auto k = rng() % 5;
        g.text = prims[k];
        g.leaves.push_back({{}, widths[k]});
    } else if (pick == 1) {
        const unsigned n = 1 + rng() % 3;
        auto e = gen_type(rng, defs, depth - 1, agg_id);
        g.text = fmt::format("[{} x {}]", n, e.text);
        for (unsigned i = 0; i < n; ++i) {
            for (auto l : e.leaves) {
                l.path.insert(l.path.begin(), i);
                g.leaves.push_back(l);
            }
        }
    } else {
        const unsigned n = 1 + rng() % 3;
        std::vector<std::string> fields;
        for (unsigned i = 0; i < n; ++i) {
            auto f = gen_type(rng, defs, depth - 1, agg_id);
            fields.push_back(f.text);
            for (auto l : f.leaves) {
                l.path.insert(l.path.begin(), i);
                g.leaves.push_back(l);
            }
        }
        const std::string name = fmt::format("A{}", agg_id++);
        defs += fmt::format("aggregate {} = {{ {} }}\n", name, fmt::join(fields, ", "));
        g.text = name;
    }
    return g;
}

}  // namespace

TEST_CASE("block geometry per mode")
{
    CHECK(layout::block_size(LayoutMode::Standard16) == 16);
    CHECK(layout::data_capacity(LayoutMode::Standard16) == 8);
    CHECK(layout::block_size(LayoutMode::Dmp8) == 8);
    CHECK(layout::data_capacity(LayoutMode::Dmp8) == 4);
    CHECK(layout::heap_expansion_factor(LayoutMode::Standard16) == 16);
    CHECK(layout::heap_expansion_factor(LayoutMode::Dmp8) == 8);
}

TEST_CASE("sizes and offsets of small aggregates")
{
    auto m = ir::parse_module("aggregate P = { i64, i8 }\naggregate Q = { i8, i64 }\n");
    CHECK(layout::interleaved_size(ir::Type::named("P"), LayoutMode::Standard16, m) == 32);
    auto plan = layout::plan_layout(ir::Type::named("Q"), LayoutMode::Standard16, m);
    auto acc = layout::translate_access(plan, {1});
    CHECK(acc.offset == 16);
    CHECK(acc.width == 8);
    // Dmp8: the i64 needs two 4-byte chunks.
    auto d = layout::plan_layout(ir::Type::named("Q"), LayoutMode::Dmp8, m);
    CHECK(d.size_bytes() == 24);
    CHECK(layout::translate_access(d, {1}, 1).offset == 16);
    CHECK(layout::translate_access(d, {1}, 1).width == 4);
    CHECK_THROWS(layout::translate_access(plan, {2}));
}

TEST_CASE("guard word keeps the top byte set")
{
    CHECK(layout::guard_word(0) == 0xFF000000u);
    CHECK(layout::guard_word(0x12345678) == 0xFF345678u);
    CHECK(layout::guard_word(~std::uint64_t{0}) == 0xFFFFFFFFu);
}

TEST_CASE("property: plans match a depth-first oracle")
{
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 300; ++trial) {
        std::string defs;
        int agg = 0;
        auto g = gen_type(rng, defs, 3, agg);
        auto m = ir::parse_module(defs);
        auto t = ir::parse_type(g.text, m);
        CAPTURE(defs);
        CAPTURE(g.text);
        for (auto mode : {LayoutMode::Standard16, LayoutMode::Dmp8}) {
            auto plan = layout::plan_layout(t, mode, m);
            std::uint64_t block = 0;
            std::size_t slot = 0;
            for (const auto& l : g.leaves) {
                const unsigned parts = mode == LayoutMode::Dmp8 && l.width > 4 ? 2 : 1;
                for (unsigned p = 0; p < parts; ++p, ++block) {
                    auto acc = layout::translate_access(plan, l.path, p);
                    CHECK(acc.offset == block * layout::block_size(mode));
                    CHECK(acc.width == (mode == LayoutMode::Dmp8 ? std::min(l.width, 4u) : l.width));
                    ++slot;
                }
            }
            CHECK(plan.total_blocks == block);
            CHECK(plan.leaves.size() == slot);
            CHECK(layout::interleaved_size(t, mode, m) == block * layout::block_size(mode));
            auto m2 = m;
            auto it = layout::interleaved_type(t, mode, m2);
            CHECK(ir::size_of(it, m2) == block * layout::block_size(mode));
        }
    }
}

TEST_CASE("property: encoded initializers place data and zero counters")
{
    std::mt19937_64 rng(9);
    auto m = ir::parse_module("aggregate R = { i8, [2 x i16], i64 }\n");
    const auto t = ir::Type::array(ir::Type::named("R"), 3);
    const auto leaves = ir::leaves_of(t, m);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<std::uint8_t> init(ir::size_of(t, m));
        for (auto& b : init) b = static_cast<std::uint8_t>(rng());
        for (auto mode : {LayoutMode::Standard16, LayoutMode::Dmp8}) {
            const auto enc = layout::encode_initializer(t, init, mode, m);
            const unsigned bs = layout::block_size(mode), cap = layout::data_capacity(mode);
            std::vector<std::uint8_t> expect;
            for (const auto& l : leaves) {
                const unsigned w = static_cast<unsigned>(ir::size_of(l.type, m));
                for (unsigned done = 0; done < w; done += cap) {
                    std::vector<std::uint8_t> blk(bs, 0);
                    for (unsigned k = 0; k < std::min(cap, w - done); ++k) blk[k] = init[l.offset + done + k];
                    if (mode == LayoutMode::Dmp8) blk[7] = 0xFF;
                    expect.insert(expect.end(), blk.begin(), blk.end());
                }
            }
            CHECK(enc == expect);
        }
    }
}

TEST_CASE("plan json lists every leaf")
{
    auto m = ir::parse_module("aggregate P = { i64, [2 x i8] }\n");
    auto j = layout::plan_to_json(layout::plan_layout(ir::Type::named("P"), LayoutMode::Standard16, m));
    CHECK(j.dump().find("\"mode\"") != std::string::npos);
    CHECK(!layout::plan_table(layout::plan_layout(ir::Type::named("P"), LayoutMode::Dmp8, m)).empty());
}
