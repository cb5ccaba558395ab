#include "support.hpp"

#include "memfresh/cli/cli.hpp"

#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace memfresh;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    int code;
    std::string out;
    std::string err;
};

Outcome memfresh_cli(std::vector<std::string> args)
{
    args.insert(args.begin(), "memfresh");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct TempDir {
    fs::path path;
    TempDir()
    {
        path = fs::temp_directory_path() / fs::path("memfresh-cli-" + std::to_string(::getpid()) + "-" +
                                                    std::to_string(counter()++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string operator/(const std::string& name) const { return (path / name).string(); }
    static int& counter()
    {
        static int n = 0;
        return n;
    }
};

}  // namespace

TEST_CASE("parse reports diagnostics with exit code 2")
{
    TempDir d;
    std::ofstream(d / "bad.zir") << "fn f() -> i64 {\nentry:\n    ret %nope\n}\n";
    auto r = memfresh_cli({"parse", d / "bad.zir"});
    CHECK(r.code == 2);
    CHECK(r.err.find("undefined-register") != std::string::npos);
    CHECK(memfresh_cli({"parse", testing::corpus_path("ctswap")}).code == 0);
    CHECK(memfresh_cli({"harden", d / "bad.zir", "--mode", "interleave"}).code == 2);
    CHECK(memfresh_cli({"frobnicate"}).code == 2);
}

TEST_CASE("harden writes the module and a report with a header")
{
    TempDir d;
    auto r = memfresh_cli({"--counter-seed", "5", "harden", testing::corpus_path("masktoggle"), "--mode", "mask",
                        "--mask-rng", "incrementing", "--counter", "7", "-o", d / "h.zir", "--report",
                        d / "report.json"});
    REQUIRE(r.code == 0);
    auto j = nlohmann::json::parse(slurp(d / "report.json"));
    CHECK(j["header"]["tool"] == "memfresh");
    CHECK(j["header"]["seeds"]["counter"] == 7);
    CHECK(j["header"].contains("config_hash"));
    CHECK(j["report"]["flags"][0] == "weak-rng");
    CHECK(memfresh_cli({"parse", d / "h.zir"}).code == 0);
}

TEST_CASE("run, audit gating and attack")
{
    TempDir d;
    const auto ctswap = testing::corpus_path("ctswap");
    auto r = memfresh_cli({"--silent-granularity", "8", "--counter-seed", "3", "run", ctswap, "--args", "13,5",
                        "--trace", d / "t0.jsonl", "--result", d / "r0.json"});
    REQUIRE(r.code == 0);
    auto res = nlohmann::json::parse(slurp(d / "r0.json"));
    CHECK(res["result"]["counters"]["silenced"] == 4);
    CHECK(res["header"]["seeds"]["counter"] == 3);
    CHECK(memfresh_cli({"audit", d / "t0.jsonl", "--fail-on", "collisions"}).code == 1);
    CHECK(memfresh_cli({"audit", d / "t0.jsonl"}).code == 0);
    CHECK(memfresh_cli({"audit", d / "t0.jsonl", "--granularity", "4"}).code == 2);

    REQUIRE(memfresh_cli({"harden", ctswap, "--mode", "interleave", "--counter", "1", "-o", d / "h.zir"}).code == 0);
    REQUIRE(memfresh_cli({"--silent-granularity", "16", "run", d / "h.zir", "--args", "13,5", "--trace",
                       d / "t1.jsonl", "--result", d / "r1.json"})
                .code == 0);
    CHECK(memfresh_cli({"audit", d / "t1.jsonl", "--fail-on", "collisions,silent", "-o", d / "leak.json"}).code == 0);
    auto leak = nlohmann::json::parse(slurp(d / "leak.json"));
    CHECK(leak["leak_report"]["summary"]["collisions"] == 0);
    CHECK(leak["header"]["seeds"]["counter"] == 1);

    auto a0 = memfresh_cli({"attack", "ctswap", d / "t0.jsonl", "--a", "@a", "--b", "@b", "--result", d / "r0.json",
                         "--bits", "5", "-o", d / "att.json"});
    CHECK(a0.code == 0);
    CHECK(nlohmann::json::parse(slurp(d / "att.json"))["attack"]["accuracy"] == 1.0);
    auto a1 = memfresh_cli({"attack", "ctswap", d / "t1.jsonl", "--a", "@a", "--b", "@b", "--result", d / "r1.json",
                         "--bits", "5"});
    CHECK(a1.code == 0);
    CHECK(a1.out.find("0.6000") != std::string::npos);
    CHECK(memfresh_cli({"attack", "ctswap", d / "t1.jsonl", "--a", "@nothere", "--b", "@b", "--secrets", "1"}).code ==
          2);
}

TEST_CASE("malformed traces are rejected with a line number")
{
    TempDir d;
    REQUIRE(memfresh_cli({"run", testing::corpus_path("ctswap"), "--args", "1,1", "--trace", d / "t.jsonl"}).code == 0);
    const auto text = slurp(d / "t.jsonl");
    const auto lines = std::count(text.begin(), text.end(), '\n');
    std::ofstream(d / "t.jsonl", std::ios::app) << "{not json\n";
    auto r = memfresh_cli({"audit", d / "t.jsonl"});
    CHECK(r.code == 2);
    CHECK(r.err.find("line " + std::to_string(lines + 1)) != std::string::npos);
}

TEST_CASE("step limit surfaces as an error with the step count")
{
    auto r = memfresh_cli({"run", testing::corpus_path("ctswap"), "--args", "1,1000", "--max-steps", "10"});
    CHECK(r.code == 2);
    CHECK(r.err.find("step 11") != std::string::npos);
}

TEST_CASE("fixed-seed pipelines are byte-identical")
{
    TempDir d;
    const auto prog = testing::corpus_path("gofetch");
    for (int i = 0; i < 2; ++i) {
        const auto tag = std::to_string(i);
        REQUIRE(memfresh_cli({"harden", prog, "--mode", "dmp", "--counter", "77", "-o", d / ("h" + tag + ".zir"),
                           "--report", d / ("rep" + tag + ".json")})
                    .code == 0);
        REQUIRE(memfresh_cli({"--dmp", "--silent-granularity", "4", "--cipher-key", "9", "run", d / ("h" + tag + ".zir"),
                           "--args", "181,8", "--trace", d / ("t" + tag + ".jsonl"), "--result",
                           d / ("r" + tag + ".json"), "--snapshot", d / ("s" + tag + ".json")})
                    .code == 0);
        REQUIRE(memfresh_cli({"audit", d / ("t" + tag + ".jsonl"), "--snapshot", d / ("s" + tag + ".json"), "-o",
                           d / ("a" + tag + ".json")})
                    .code == 0);
    }
    for (const auto& f : {"h", "rep", "t", "r", "s", "a"}) {
        const std::string ext = std::string(f) == "h" ? ".zir" : std::string(f) == "t" ? ".jsonl" : ".json";
        CAPTURE(f);
        CHECK(slurp(d / (std::string(f) + "0" + ext)) == slurp(d / (std::string(f) + "1" + ext)));
    }
}

TEST_CASE("bench reports structural ratios")
{
    auto r = memfresh_cli({"--counter-seed", "1", "bench", testing::corpus_path("ctswap"), "--args", "13,5"});
    CHECK(r.code == 0);
    vm::MachineConfig cfg;
    cfg.counter_seed = 1;
    auto m = testing::load_corpus("ctswap");
    passes::HardeningConfig hc;
    hc.counter = ir::CounterSeedPolicy::fixed(1);
    for (auto [mode, ratio] : {std::pair{passes::Mode::Interleave, 1.0}, std::pair{passes::Mode::Cio, 2.0}}) {
        hc.mode = mode;
        auto row = cli::bench_program("ctswap", m, hc, "main", {13, 5}, cfg);
        CHECK(row.identity);
        CHECK(row.outputs_match);
        CHECK(static_cast<double>(row.stores[1]) / static_cast<double>(row.stores[0]) == ratio);
        CHECK(row.instructions[1] > row.instructions[0]);
    }
    // memcpy-heavy: destination stores equal the copied element count.
    auto mm = ir::parse_module(
        "global @s : [32 x i64] = zeroinit\nglobal @d : [32 x i64] = zeroinit\n"
        "fn protect main(%x: i64, %n: i64) -> i64 {\nentry:\n    memcpy @d, @s, %n, i64\n    ret %x\n}\n");
    hc.mode = passes::Mode::Interleave;
    auto row = cli::bench_program("copy", mm, hc, "main", {0, 27}, cfg);
    CHECK(row.identity);
    CHECK(row.stores[1] == 27);
}
