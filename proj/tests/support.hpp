#pragma once

#include "memfresh/ir/parser.hpp"

#include <fmt/format.h>

#include <array>
#include <cstdint>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace memfresh::testing {

inline const std::vector<std::string>& corpus_names()
{
    static const std::vector<std::string> names = {"ctswap", "ctselect", "memops", "dictionary", "masktoggle",
                                                   "gofetch"};
    return names;
}

inline std::string corpus_path(const std::string& name) { return std::string(MEMFRESH_CORPUS_DIR) + "/" + name + ".zir"; }

inline ir::Module load_corpus(const std::string& name)
{
    std::ifstream in(corpus_path(name));
    std::stringstream ss;
    ss << in.rdbuf();
    return ir::parse_module(ss.str());
}

// Straight-line program over two i64 parameters that mixes arithmetic with
// global-array traffic. The expected declassified outputs are computed while
// generating, without the VM.
struct GeneratedProgram {
    std::string text;
    std::uint64_t a = 0, b = 0;
    std::vector<std::uint64_t> expected;
};

inline GeneratedProgram generate_program(std::mt19937_64& rng, std::size_t ops)
{
    GeneratedProgram g;
    g.a = rng();
    g.b = rng() % 4 == 0 ? g.a : rng();
    std::array<std::uint64_t, 8> m{};
    std::array<std::uint32_t, 4> n{};
    std::vector<std::uint64_t> regs = {g.a, g.b};
    std::vector<std::string> names = {"%a", "%b"};
    std::string body;
    auto pick = [&] { return rng() % regs.size(); };
    auto fresh = [&](std::uint64_t v) {
        names.push_back(fmt::format("%v{}", names.size()));
        regs.push_back(v);
        return names.back();
    };
    for (std::size_t k = 0; k < ops; ++k) {
        const std::size_t x = pick(), y = pick();
        const std::string nx = names[x], ny = names[y];
        switch (rng() % 12) {
        case 0: body += fmt::format("    {} = add i64 {}, {}\n", fresh(regs[x] + regs[y]), nx, ny); break;
        case 1: body += fmt::format("    {} = sub i64 {}, {}\n", fresh(regs[x] - regs[y]), nx, ny); break;
        case 2: body += fmt::format("    {} = mul i64 {}, {}\n", fresh(regs[x] * regs[y]), nx, ny); break;
        case 3: body += fmt::format("    {} = xor i64 {}, {}\n", fresh(regs[x] ^ regs[y]), nx, ny); break;
        case 4: {
            const unsigned s = rng() % 70;
            const std::uint64_t v = s >= 64 ? 0 : regs[x] >> s;
            body += fmt::format("    {} = lshr i64 {}, {}\n", fresh(v), nx, s);
            break;
        }
        case 5: {
            const auto c = regs[x] < regs[y];
            const auto cn = fresh(c ? 1 : 0);
            body += fmt::format("    {} = icmp ult i64 {}, {}\n", cn, nx, ny);
            body += fmt::format("    {} = select i64 {}, {}, {}\n", fresh(c ? regs[x] : regs[y]), cn, nx,
                                ny);
            break;
        }
        case 6:
        case 7: {
            const unsigned i = rng() % 8;
            m[i] = regs[x];
            body += fmt::format("    %p{} = gep [8 x i64], @m, 0, {}\n    store i64 {}, %p{}\n", k, i, nx, k);
            break;
        }
        case 8: {
            const unsigned i = rng() % 8;
            body += fmt::format("    %p{} = gep [8 x i64], @m, 0, {}\n", k, i);
            body += fmt::format("    {} = load i64, %p{}\n", fresh(m[i]), k);
            break;
        }
        case 9: {
            const unsigned i = rng() % 4;
            n[i] = static_cast<std::uint32_t>(regs[x]);
            body += fmt::format("    %t{} = trunc i64 {} to i32\n    %q{} = gep [4 x i32], @n, 0, {}\n", k, nx,
                                k, i);
            body += fmt::format("    store i32 %t{}, %q{}\n", k, k);
            break;
        }
        case 10: {
            const unsigned i = rng() % 4;
            body += fmt::format("    %q{} = gep [4 x i32], @n, 0, {}\n    %w{} = load i32, %q{}\n", k, i, k, k);
            body += fmt::format("    {} = zext i32 %w{} to i64\n", fresh(n[i]), k);
            break;
        }
        case 11: {
            const unsigned cnt = 1 + rng() % 4;
            for (unsigned i = 0; i < cnt; ++i) m[4 + i % 4] = m[i];
            body += fmt::format("    %s{} = gep [8 x i64], @m, 0, 4\n    memcpy %s{}, @m, {}, i64\n", k, k, cnt);
            break;
        }
        }
    }
    std::string tail;
    for (std::size_t i = 0; i < 8; ++i) {
        tail += fmt::format("    %o{} = gep [8 x i64], @m, 0, {}\n    %r{} = load i64, %o{}\n", i, i, i, i);
        tail += fmt::format("    declassify i64 %r{}\n", i);
        g.expected.push_back(m[i]);
    }
    tail += fmt::format("    declassify i64 {}\n", names.back());
    g.expected.push_back(regs.back());
    g.text = "global @m : [8 x i64] = zeroinit\nglobal @n : [4 x i32] = zeroinit\n\n"
             "fn protect main(%a: i64, %b: i64) -> i64 {\nentry:\n" +
             body + tail + "    ret %a\n}\n";
    return g;
}

}  // namespace memfresh::testing
