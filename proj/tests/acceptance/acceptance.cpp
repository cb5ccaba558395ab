// One line per acceptance criterion; exits non-zero when any criterion fails.

#include "support.hpp"

#include "memfresh/cli/cli.hpp"
#include "memfresh/ir/parser.hpp"
#include "memfresh/oracle/attack.hpp"
#include "memfresh/oracle/audit.hpp"
#include "memfresh/passes/harden.hpp"
#include "memfresh/vm/cipher.hpp"
#include "memfresh/vm/machine.hpp"

#include <fmt/format.h>

#include <chrono>
#include <cstring>
#include <filesystem>
#include <functional>
#include <map>
#include <iostream>
#include <set>
#include <sstream>

using namespace memfresh;
using passes::Mode;
using vm::EventKind;

namespace {

const Mode kModes[] = {Mode::Interleave, Mode::Mask, Mode::Cio, Mode::Dmp};

struct Verdict {
    bool pass;
    std::string detail;
};

ir::Module harden(const ir::Module& m, Mode mode, std::uint64_t seed = 2024,
                  std::optional<ir::MaskRng> rng = std::nullopt)
{
    passes::HardeningConfig hc;
    hc.mode = mode;
    hc.mask_rng = rng;
    hc.counter = ir::CounterSeedPolicy::fixed(seed);
    return passes::harden(m, hc).module;
}

vm::MachineConfig config(std::optional<unsigned> g = std::nullopt, bool dmp = false)
{
    vm::MachineConfig c;
    c.counter_seed = 7;
    c.cipher_key_seed = 11;
    c.silent_granularity = g;
    c.dmp_enabled = dmp;
    return c;
}

std::uint64_t counter_field(const vm::TraceEvent& e)
{
    std::uint64_t v = 0;
    std::memcpy(&v, e.after.data() + 8, 8);
    return v;
}

// Every corpus program, unprotected and in each mode.
std::vector<std::pair<std::string, ir::Module>> corpus_variants()
{
    std::vector<std::pair<std::string, ir::Module>> out;
    for (const auto& name : testing::corpus_names()) {
        auto m = testing::load_corpus(name);
        out.emplace_back(name, m);
        for (auto mode : kModes) out.emplace_back(name + "/" + std::string(passes::mode_name(mode)), harden(m, mode));
    }
    return out;
}

Verdict collision_attack()
{
    std::mt19937_64 rng(1);
    const std::uint64_t secrets = rng();
    auto r = vm::execute(testing::load_corpus("ctswap"), "main", {secrets, 64}, config(8));
    auto res = oracle::recover_ctswap_secret(r.trace, r.globals.at("a").addr, r.globals.at("b").addr,
                                             oracle::secret_bits(secrets, 64), {});
    return {res.accuracy == 1.0, fmt::format("accuracy {:.3f} on 64 bits", res.accuracy)};
}

Verdict interleaving_freshness()
{
    const std::uint64_t iterations = 100000;
    auto m = harden(testing::load_corpus("ctswap"), Mode::Interleave);
    auto cfg = config(16);
    cfg.record_loads = false;
    oracle::CollisionAudit collisions;
    oracle::SilentStoreAudit silent(16, 16u);
    vm::RunOptions opts;
    opts.collect_trace = false;
    opts.sink = [&](const vm::TraceEvent& e) {
        collisions.feed(e);
        silent.feed(e);
    };
    std::mt19937_64 rng(2);
    vm::execute(m, "main", {rng(), iterations}, cfg, opts);
    const bool ok = collisions.findings().empty() && silent.findings().empty() && silent.disagreements().empty() &&
                    collisions.stores_seen() > 2 * iterations;
    return {ok, fmt::format("{} stores, {} collisions, {} silent(g=16)", collisions.stores_seen(),
                            collisions.findings().size(), silent.findings().size())};
}

Verdict silent_subsumption()
{
    std::size_t traces = 0, full = 0, missing = 0;
    std::mt19937_64 rng(3);
    for (const auto& [name, m] : corpus_variants()) {
        for (int k = 0; k < 3; ++k) {
            auto r = vm::execute(m, "main", {rng(), 1 + rng() % 64}, config(16));
            std::set<std::pair<std::uint64_t, std::uint64_t>> col;
            for (const auto& c : oracle::audit_collisions(r.trace, true)) col.insert({c.block, c.step});
            for (const auto& s : oracle::audit_silent_stores({r.header, r.trace}, 16, true).findings) {
                if (!s.full) continue;
                ++full;
                missing += col.count({s.addr & ~std::uint64_t{15}, s.step}) ? 0 : 1;
            }
            ++traces;
        }
    }
    return {missing == 0 && full > 0,
            fmt::format("{} traces, {} full silences, {} not among collisions", traces, full, missing)};
}

Verdict cio_residual()
{
    std::mt19937_64 rng(4);
    const std::uint64_t secrets = rng();
    auto m = harden(testing::load_corpus("ctswap"), Mode::Cio);
    std::uint64_t silenced = 0;
    for (unsigned g : {1u, 2u, 4u, 8u, 16u}) {
        silenced += vm::execute(m, "main", {secrets, 64}, config(g)).counters.silenced;
    }
    auto r = vm::execute(m, "main", {secrets, 64}, config(8));
    oracle::AttackOptions opts;
    opts.filter_dummies = true;
    auto res = oracle::recover_ctswap_secret(r.trace, r.globals.at("a").addr, r.globals.at("b").addr,
                                             oracle::secret_bits(secrets, 64), opts);
    return {silenced == 0 && res.accuracy == 1.0,
            fmt::format("{} silenced stores over g=1..16, filtered attack accuracy {:.3f}", silenced, res.accuracy)};
}

Verdict mask_cancellation()
{
    const auto m = testing::load_corpus("masktoggle");
    auto weak = vm::execute(harden(m, Mode::Mask, 2024, ir::MaskRng::Incrementing), "main", {0, 256}, config());
    std::size_t data_stores = 0;
    for (const auto& e : weak.trace) data_stores += e.is_store() && !e.shadow ? 1 : 0;
    const auto weak_findings = oracle::audit_collisions(weak.trace).size();

    auto strong = harden(m, Mode::Mask, 2024, ir::MaskRng::KeyedHash);
    auto cfg = config();
    cfg.record_loads = false;
    oracle::CollisionAudit audit;
    vm::RunOptions opts;
    opts.collect_trace = false;
    opts.sink = [&](const vm::TraceEvent& e) { audit.feed(e); };
    vm::execute(strong, "main", {0, 10000}, cfg, opts);
    return {data_stores == 256 && weak_findings >= 1 && audit.stores_seen() == 10000 && audit.findings().empty(),
            fmt::format("incrementing: {} findings in {} stores; keyed_hash: {} findings in {} stores",
                        weak_findings, data_stores, audit.findings().size(), audit.stores_seen())};
}

Verdict heap_expansion()
{
    auto m = ir::parse_module(
        "fn protect main(%x: i64, %n: i64) -> i64 {\nentry:\n    %a = malloc 1\n    %b = malloc 8\n"
        "    %c = malloc 13\n    %d = malloc %n\n    %e = malloc 0\n    free %a\n    ret %x\n}\n");
    std::size_t structural = 0, dynamic = 0, bad = 0;
    for (const auto& [name, prog] : std::vector<std::pair<std::string, ir::Module>>{
             {"synthetic", m}, {"memops", testing::load_corpus("memops")}}) {
        for (auto [mode, f] : {std::pair{Mode::Interleave, 16u}, std::pair{Mode::Dmp, 8u}}) {
            auto h = harden(prog, mode);
            std::vector<std::uint64_t> before, after;
            for (const auto& fn : prog.functions) {
                for (const auto& b : fn.blocks) {
                    for (const auto& in : b.instrs) {
                        if (in.op == ir::Opcode::Malloc && in.args[0].is_imm()) before.push_back(in.args[0].imm);
                    }
                }
            }
            for (const auto& fn : h.functions) {
                for (const auto& b : fn.blocks) {
                    for (const auto& in : b.instrs) {
                        if (in.op == ir::Opcode::Malloc && in.args[0].is_imm()) after.push_back(in.args[0].imm);
                    }
                }
            }
            bad += before.size() == after.size() ? 0 : 1;
            for (std::size_t i = 0; i < std::min(before.size(), after.size()); ++i, ++structural) {
                bad += after[i] == f * before[i] ? 0 : 1;
            }
            for (std::uint64_t n : {0u, 1u, 5u, 17u}) {
                auto heap = [&](const ir::Module& mod) {
                    std::vector<std::uint64_t> w;
                    for (const auto& e : vm::execute(mod, "main", {3, n}, config()).trace) {
                        if (e.kind == EventKind::Alloc && e.region == vm::RegionKind::Heap) w.push_back(e.width);
                    }
                    return w;
                };
                auto w0 = heap(prog), w1 = heap(h);
                bad += w0.size() == w1.size() ? 0 : 1;
                for (std::size_t i = 0; i < std::min(w0.size(), w1.size()); ++i, ++dynamic) {
                    bad += w1[i] == f * w0[i] ? 0 : 1;
                }
            }
        }
    }
    return {bad == 0 && structural > 0 && dynamic > 0,
            fmt::format("{} static and {} traced allocations, {} mismatches", structural, dynamic, bad)};
}

Verdict memcpy_refresh()
{
    auto m = harden(testing::load_corpus("memops"), Mode::Interleave);
    std::size_t copies = 0, bad = 0;
    for (std::uint64_t n = 0; n < 8; ++n) {
        auto r = vm::execute(m, "main", {0x0123456789ABCDEF, n}, config());
        const std::uint64_t dst = r.globals.at("dst").addr, dst_size = r.globals.at("dst").size;
        std::uint64_t buf = 0, buf_size = 0;
        for (const auto& e : r.trace) {
            if (e.kind == EventKind::Alloc && e.region == vm::RegionKind::Heap) {
                buf = e.addr;
                buf_size = e.width;
            }
        }
        // Element stores of `memcpy @dst, @src, 8` and of `memcpy %buf, @src, n+1`, which follows
        // an 8-element memset of the same buffer.
        std::vector<std::size_t> dst_idx, buf_idx;
        for (std::size_t i = 0; i < r.trace.size(); ++i) {
            const auto& e = r.trace[i];
            if (!e.is_store()) continue;
            if (e.addr >= dst && e.addr < dst + dst_size) dst_idx.push_back(i);
            if (e.addr >= buf && e.addr < buf + buf_size) buf_idx.push_back(i);
        }
        std::vector<std::vector<std::size_t>> groups = {dst_idx};
        if (buf_idx.size() > 8) groups.emplace_back(buf_idx.begin() + 8, buf_idx.end());
        const std::size_t want[] = {8, n + 1};
        for (std::size_t gi = 0; gi < groups.size(); ++gi) {
            const auto& grp = groups[gi];
            bad += grp.size() == want[gi] ? 0 : 1;
            if (grp.empty()) continue;
            std::set<std::uint64_t> earlier, copied;
            for (std::size_t i = 0; i < grp.front(); ++i) {
                if (r.trace[i].is_store() && r.trace[i].width == 16) earlier.insert(counter_field(r.trace[i]));
            }
            for (auto i : grp) {
                const auto c = counter_field(r.trace[i]);
                bad += copied.insert(c).second ? 0 : 1;
                bad += earlier.count(c) ? 1 : 0;
            }
            ++copies;
        }
    }
    return {bad == 0 && copies == 16, fmt::format("{} copies checked, {} violations", copies, bad)};
}

Verdict dmp_hardening()
{
    std::mt19937_64 rng(8);
    const std::uint64_t secrets = rng();
    const auto m = testing::load_corpus("gofetch");
    auto plain = vm::execute(m, "main", {secrets, 64}, config(std::nullopt, true));
    auto attack = oracle::recover_dmp_secret(plain.trace, plain.globals.at("a").addr,
                                             oracle::secret_bits(secrets, 64), {});
    auto hard = vm::execute(harden(m, Mode::Dmp), "main", {secrets, 64}, config(std::nullopt, true));
    std::size_t in_protected = 0;
    for (const auto& f : oracle::audit_dmp({hard.header, hard.trace}, hard.snapshot)) {
        in_protected += f.protected_region ? 1 : 0;
    }
    return {attack.accuracy == 1.0 && in_protected == 0 && plain.counters.prefetch_candidates > 0,
            fmt::format("unprotected: {} candidates, attack accuracy {:.3f}; hardened: {} in protected regions",
                        plain.counters.prefetch_candidates, attack.accuracy, in_protected)};
}

Verdict semantic_preservation()
{
    std::mt19937_64 rng(9);
    std::size_t runs = 0, diffs = 0;
    auto cfg = config(8);
    cfg.record_loads = false;
    vm::RunOptions opts;
    opts.collect_trace = false;
    for (const auto& name : testing::corpus_names()) {
        const auto m = testing::load_corpus(name);
        vm::Program original(m);
        std::vector<vm::Program> hardened;
        for (auto mode : kModes) hardened.emplace_back(harden(m, mode, rng()));
        for (int v = 0; v < 100; ++v) {
            const std::vector<std::uint64_t> args = {rng(), 1 + rng() % 64};
            const auto want = original.run("main", args, cfg, opts).outputs;
            for (const auto& p : hardened) {
                diffs += p.run("main", args, cfg, opts).outputs == want ? 0 : 1;
                ++runs;
            }
        }
    }
    return {diffs == 0, fmt::format("{} hardened runs, {} output differences", runs, diffs)};
}

Verdict determinism()
{
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / fmt::format("memfresh-accept-{}", ::getpid());
    fs::create_directories(dir);
    auto cli = [](std::vector<std::string> args) {
        args.insert(args.begin(), "memfresh");
        std::vector<const char*> argv;
        for (const auto& a : args) argv.push_back(a.c_str());
        std::ostringstream out, err;
        return cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    };
    auto slurp = [](const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        std::stringstream ss;
        ss << in.rdbuf();
        return ss.str();
    };
    const std::map<std::string, std::string> watched = {{"ctswap", "@a"},     {"ctselect", "@out"},
                                                        {"memops", "@dst"},   {"dictionary", "@x"},
                                                        {"masktoggle", "@t"}, {"gofetch", "@a"}};
    std::size_t pipelines = 0, differing = 0, errors = 0;
    for (const auto& name : testing::corpus_names()) {
        for (auto mode : kModes) {
            std::string files[2];
            for (int i = 0; i < 2; ++i) {
                const auto p = [&](const std::string& f) { return (dir / fmt::format("{}{}", f, i)).string(); };
                int rc = cli({"harden", testing::corpus_path(name), "--mode", std::string(passes::mode_name(mode)),
                              "--counter", "31337", "-o", p("h"), "--report", p("hr")});
                rc |= cli({"--dmp", "--silent-granularity", "8", "--cipher-key", "5", "run", p("h"), "--args", "977,12",
                           "--trace", p("t"), "--result", p("r"), "--snapshot", p("s")});
                rc |= cli({"audit", p("t"), "--snapshot", p("s"), "-o", p("a")});
                rc |= cli({"attack", "dictionary", p("t"), "--addr", watched.at(name), "--profile", "2", "-o", p("k")});
                errors += rc > 1 ? 1 : 0;
                for (const auto& f : {"h", "hr", "t", "r", "s", "a", "k"}) files[i] += slurp(p(f)) + "\x1e";
            }
            ++pipelines;
            differing += files[0] == files[1] ? 0 : 1;
        }
    }
    fs::remove_all(dir);
    return {differing == 0 && errors == 0,
            fmt::format("{} pipelines run twice, {} differ, {} errors", pipelines, differing, errors)};
}

Verdict ciphertext_soundness()
{
    std::size_t traces = 0, checked = 0, bad = 0, collisions = 0;
    std::mt19937_64 rng(10);
    const auto cfg = config(8);
    const vm::Cipher cipher(cfg.cipher_key_seed);
    for (const auto& [name, m] : corpus_variants()) {
        auto r = vm::execute(m, "main", {rng(), 1 + rng() % 64}, cfg);
        std::map<std::uint64_t, vm::Block16> plain;
        std::map<std::uint64_t, std::map<vm::Digest, vm::Block16>> seen;
        for (const auto& e : r.trace) {
            if (e.kind == EventKind::Alloc) {
                for (std::uint64_t off = 0; off < std::max<std::uint64_t>(e.width, 1); off += 16) {
                    vm::Block16 b{};
                    for (std::size_t k = 0; k < 16 && off + k < e.init.size(); ++k) b[k] = e.init[off + k];
                    plain[e.addr + off] = b;
                }
                continue;
            }
            if (!e.is_store()) continue;
            for (unsigned d = 0; d < e.digest_count; ++d) {
                const auto& bd = e.digests[d];
                vm::Block16 before = plain[bd.block], after = before;
                for (unsigned k = 0; k < e.byte_count(); ++k) {
                    const auto a = e.addr + k;
                    if (a >= bd.block && a < bd.block + 16) after[a - bd.block] = e.after[k];
                }
                plain[bd.block] = after;
                bad += (bd.before == bd.after) == (before == after) ? 0 : 1;
                bad += bd.before == cipher.encrypt_block(bd.block, before) ? 0 : 1;
                bad += bd.after == cipher.encrypt_block(bd.block, after) ? 0 : 1;
                for (const auto& [dg, pt] : {std::pair{bd.before, before}, std::pair{bd.after, after}}) {
                    auto [it, fresh] = seen[bd.block].emplace(dg, pt);
                    collisions += !fresh && it->second != pt ? 1 : 0;
                }
                ++checked;
            }
        }
        ++traces;
    }
    return {bad == 0 && collisions == 0 && checked > 0,
            fmt::format("{} traces, {} block updates, {} mismatches, {} digest collisions", traces, checked, bad,
                        collisions)};
}

}  // namespace

int main()
{
    const std::vector<std::tuple<int, std::string, double, std::function<Verdict()>>> criteria = {
        {1, "collision-attack reproduction", 1.0, collision_attack},
        {2, "interleaving freshness", 30.0, interleaving_freshness},
        {3, "silent-store subsumption", 10.0, silent_subsumption},
        {4, "cio residual leakage", 0.0, cio_residual},
        {5, "mask cancellation counterexample", 0.0, mask_cancellation},
        {6, "heap expansion", 0.0, heap_expansion},
        {7, "memcpy counter refresh", 0.0, memcpy_refresh},
        {8, "dmp hardening", 0.0, dmp_hardening},
        {9, "semantic preservation", 0.0, semantic_preservation},
        {10, "determinism", 0.0, determinism},
        {11, "ciphertext model soundness", 0.0, ciphertext_soundness},
    };
    int failed = 0;
    for (const auto& [id, title, budget, check] : criteria) {
        const auto t0 = std::chrono::steady_clock::now();
        Verdict v;
        try {
            v = check();
        } catch (const std::exception& e) {
            v = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::string timing = fmt::format("{:.2f} s", secs);
        if (budget > 0) {
            timing += fmt::format(" (budget {} s)", budget);
            if (secs >= budget) {
                v.pass = false;
                v.detail += "; over time budget";
            }
        }
        std::cout << fmt::format("[{}] {:>2}. {}: {} [{}]\n", v.pass ? "PASS" : "FAIL", id, title, v.detail, timing);
        failed += v.pass ? 0 : 1;
    }
    std::cout << fmt::format("{} of {} criteria passed\n", criteria.size() - failed, criteria.size());
    return failed == 0 ? 0 : 1;
}
