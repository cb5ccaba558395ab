#include "memfresh/cli/cli.hpp"

#include "memfresh/ir/parser.hpp"
#include "memfresh/ir/printer.hpp"
#include "memfresh/ir/validate.hpp"
#include "memfresh/layout/layout.hpp"
#include "memfresh/oracle/attack.hpp"
#include "memfresh/oracle/audit.hpp"
#include "memfresh/vm/machine.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <fstream>
#include <memory>
#include <sstream>
#include <stdexcept>

namespace memfresh::cli {

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string read_file(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error(fmt::format("cannot open {}", path));
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error(fmt::format("cannot write {}", path));
    }
    out << text;
}

std::uint64_t parse_u64(const std::string& s)
{
    std::size_t pos = 0;
    std::uint64_t v = 0;
    try {
        v = std::stoull(s, &pos, 0);
    } catch (const std::exception&) {
        throw UsageError(fmt::format("not a number: '{}'", s));
    }
    if (pos != s.size()) {
        throw UsageError(fmt::format("not a number: '{}'", s));
    }
    return v;
}

std::vector<std::uint64_t> parse_list(const std::string& s)
{
    std::vector<std::uint64_t> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(parse_u64(item));
    }
    return out;
}

ir::Module load_module(const std::string& path)
{
    auto m = ir::parse_module(read_file(path));
    ir::require_valid(m);
    return m;
}

// "@name" resolves through the trace's allocation events, anything else is a number.
std::uint64_t resolve_address(const vm::Trace& t, const std::string& what)
{
    if (what.empty() || what[0] != '@') {
        return parse_u64(what);
    }
    for (const auto& e : t.events) {
        if (e.kind == vm::EventKind::Alloc && !e.shadow && e.label == what) return e.addr;
    }
    throw std::runtime_error(fmt::format("no allocation labelled {} in the trace", what));
}

std::string dump(const nlohmann::ordered_json& j) { return j.dump(2) + "\n"; }

struct Globals {
    std::string config_file;
    std::optional<std::uint64_t> counter_seed;
    std::optional<std::uint64_t> cipher_key;
    std::string granularity;
    bool dmp = false;

    vm::MachineConfig machine() const
    {
        vm::MachineConfig c;
        if (!config_file.empty()) {
            c = vm::config_from_json(nlohmann::json::parse(read_file(config_file)), c);
        }
        if (counter_seed) c.counter_seed = counter_seed;
        if (cipher_key) c.cipher_key_seed = *cipher_key;
        if (granularity == "off") {
            c.silent_granularity.reset();
        } else if (!granularity.empty()) {
            c.silent_granularity = static_cast<unsigned>(parse_u64(granularity));
        }
        if (dmp) c.dmp_enabled = true;
        c.check();
        return c;
    }
};

unsigned store_multiplier(passes::Mode mode, std::uint64_t width)
{
    switch (mode) {
    case passes::Mode::Interleave:
    case passes::Mode::Mask: return 1;
    case passes::Mode::Cio: return 2;
    case passes::Mode::Dmp: return width > 4 ? 2 : 1;
    }
    return 1;
}

}  // namespace

nlohmann::ordered_json artifact_header(const vm::MachineConfig& config, std::uint64_t counter_seed)
{
    const auto cj = vm::config_to_json(config);
    nlohmann::ordered_json h;
    h["tool"] = vm::kToolName;
    h["version"] = vm::kToolVersion;
    h["seeds"] = {{"cipher_key", config.cipher_key_seed}, {"counter", counter_seed}};
    h["config_hash"] = vm::json_hash(cj);
    return h;
}

BenchRow bench_program(const std::string& name, const ir::Module& m, const passes::HardeningConfig& hc,
                       const std::string& entry, const std::vector<std::uint64_t>& args,
                       const vm::MachineConfig& config)
{
    BenchRow row;
    row.program = name;
    row.mode = std::string(passes::mode_name(hc.mode));
    auto h = passes::harden(m, hc);

    std::map<std::uint32_t, std::string> owner;
    for (const auto& f : m.functions) {
        for (const auto& b : f.blocks) {
            for (const auto& in : b.instrs) owner[in.id] = f.name;
        }
    }

    vm::RunOptions opts;
    opts.collect_trace = false;
    vm::MachineConfig c = config;
    c.record_loads = false;
    opts.sink = [&](const vm::TraceEvent& e) {
        if (!e.is_store() || e.shadow) return;
        auto it = owner.find(e.instr_id);
        const bool prot = it != owner.end() && h.report.protected_functions.count(it->second);
        row.expected_stores += prot ? store_multiplier(hc.mode, e.width) : 1;
    };
    auto r0 = vm::execute(m, entry, args, c, opts);

    std::uint64_t data_stores = 0;
    opts.sink = [&](const vm::TraceEvent& e) {
        if (!e.is_store()) return;
        if (e.shadow) {
            ++row.shadow_stores;
        } else {
            ++data_stores;
        }
    };
    auto r1 = vm::execute(h.module, entry, args, c, opts);

    row.instructions[0] = r0.counters.dynamic_instructions;
    row.instructions[1] = r1.counters.dynamic_instructions;
    row.stores[0] = r0.counters.stores;
    row.stores[1] = data_stores;
    row.silenced[0] = r0.counters.silenced;
    row.silenced[1] = r1.counters.silenced;
    row.peak_memory[0] = r0.peak_memory;
    row.peak_memory[1] = r1.peak_memory;
    row.outputs_match = r0.outputs == r1.outputs;
    row.identity = data_stores == row.expected_stores &&
                   (hc.mode != passes::Mode::Mask || row.shadow_stores == data_stores);
    return row;
}

nlohmann::ordered_json bench_to_json(const BenchRow& r)
{
    auto ratio = [](std::uint64_t a, std::uint64_t b) { return a == 0 ? 0.0 : static_cast<double>(b) / a; };
    nlohmann::ordered_json j;
    j["program"] = r.program;
    j["mode"] = r.mode;
    j["instructions"] = {r.instructions[0], r.instructions[1]};
    j["stores"] = {r.stores[0], r.stores[1]};
    j["shadow_stores"] = r.shadow_stores;
    j["silenced"] = {r.silenced[0], r.silenced[1]};
    j["peak_memory"] = {r.peak_memory[0], r.peak_memory[1]};
    j["ratios"] = {{"instructions", ratio(r.instructions[0], r.instructions[1])},
                   {"stores", ratio(r.stores[0], r.stores[1])},
                   {"peak_memory", ratio(r.peak_memory[0], r.peak_memory[1])}};
    j["expected_stores"] = r.expected_stores;
    j["outputs_match"] = r.outputs_match;
    j["identity"] = r.identity;
    return j;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Hardening toolchain against memory-centric side channels", "memfresh"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--config", g.config_file, "machine config JSON");
    app.add_option("--counter-seed", g.counter_seed, "seed for random counters and mask generators");
    app.add_option("--cipher-key", g.cipher_key, "memory encryption key seed");
    app.add_option("--silent-granularity", g.granularity, "silent-store chunk width (1,2,4,8,16 or off)");
    app.add_flag("--dmp", g.dmp, "model the data memory-dependent prefetcher");

    // parse
    auto* parse = app.add_subcommand("parse", "parse and validate a module");
    std::string parse_in;
    bool parse_print = false;
    parse->add_option("input", parse_in)->required();
    parse->add_flag("--print", parse_print, "print the normalized module");

    // layout
    auto* lay = app.add_subcommand("layout", "show the interleaved layout of a type");
    std::string lay_type, lay_module, lay_mode = "standard16";
    bool lay_json = false;
    lay->add_option("--type", lay_type)->required();
    lay->add_option("--module", lay_module, "module providing named aggregates");
    lay->add_option("--mode", lay_mode)->check(CLI::IsMember({"standard16", "dmp8"}));
    lay->add_flag("--json", lay_json);

    // harden
    auto* hard = app.add_subcommand("harden", "apply a hardening pass");
    std::string hard_in, hard_out, hard_report, hard_mode = "interleave", hard_scope = "whole", hard_rng,
                                                   hard_counter = "random";
    hard->add_option("input", hard_in)->required();
    hard->add_option("--mode", hard_mode)->check(CLI::IsMember({"interleave", "mask", "cio", "dmp"}));
    hard->add_option("--scope", hard_scope)->check(CLI::IsMember({"whole", "attr"}));
    hard->add_option("--mask-rng", hard_rng)->check(CLI::IsMember({"incrementing", "xorshift128plus", "keyed_hash"}));
    hard->add_option("--counter", hard_counter, "counter seed policy: random or a fixed number");
    hard->add_option("-o,--output", hard_out);
    hard->add_option("--report", hard_report);

    // run
    auto* runc = app.add_subcommand("run", "execute a module in the VM");
    std::string run_in, run_entry = "main", run_args, run_trace, run_result, run_snapshot;
    std::optional<std::uint64_t> run_max;
    bool run_no_loads = false;
    runc->add_option("input", run_in)->required();
    runc->add_option("--entry", run_entry);
    runc->add_option("--args", run_args, "comma separated i64 arguments");
    runc->add_option("--trace", run_trace);
    runc->add_option("--result", run_result);
    runc->add_option("--snapshot", run_snapshot);
    runc->add_option("--max-steps", run_max);
    runc->add_flag("--no-loads", run_no_loads, "omit load events from the trace");

    // audit
    auto* aud = app.add_subcommand("audit", "audit a trace for leaky writes");
    std::string aud_in, aud_snapshot, aud_out, aud_fail;
    std::optional<unsigned> aud_g;
    bool aud_shadow = false;
    aud->add_option("trace", aud_in)->required();
    aud->add_option("--snapshot", aud_snapshot);
    aud->add_option("--granularity", aud_g);
    aud->add_flag("--include-shadow", aud_shadow);
    aud->add_option("--fail-on", aud_fail, "comma separated: collisions, silent, dmp");
    aud->add_option("-o,--output", aud_out);

    // attack
    auto* att = app.add_subcommand("attack", "run an attacker model over a trace");
    att->require_subcommand(1);
    std::string att_in, att_a, att_b, att_result, att_out;
    std::optional<std::uint64_t> att_secrets;
    std::size_t att_bits = 64, att_profile = 2;
    oracle::AttackOptions att_opts;
    auto attack_common = [&](CLI::App* s) {
        s->add_option("trace", att_in)->required();
        s->add_option("--result", att_result, "result JSON holding the ground truth");
        s->add_option("--secrets", att_secrets, "ground truth secret word");
        s->add_option("--bits", att_bits);
        s->add_option("-o,--output", att_out);
    };
    auto* att_ct = att->add_subcommand("ctswap", "collision attack on a conditional swap");
    attack_common(att_ct);
    att_ct->add_option("--a", att_a)->required();
    att_ct->add_option("--b", att_b)->required();
    att_ct->add_option("--stride", att_opts.stride);
    att_ct->add_option("--phase", att_opts.phase);
    att_ct->add_flag("--filter-dummies", att_opts.filter_dummies);
    auto* att_dict = att->add_subcommand("dictionary", "dictionary attack on one address");
    attack_common(att_dict);
    att_dict->add_option("--addr", att_a)->required();
    att_dict->add_option("--profile", att_profile, "stores used to build the dictionary");
    auto* att_dmp = att->add_subcommand("dmp", "prefetch-activation attack");
    attack_common(att_dmp);
    att_dmp->add_option("--a", att_a)->required();
    att_dmp->add_option("--stride", att_opts.stride);
    att_dmp->add_option("--phase", att_opts.phase);

    // bench
    auto* ben = app.add_subcommand("bench", "structural overhead of the hardening modes");
    std::vector<std::string> ben_in;
    std::string ben_modes = "interleave,mask,cio,dmp", ben_entry = "main", ben_args, ben_out;
    ben->add_option("inputs", ben_in)->required();
    ben->add_option("--modes", ben_modes);
    ben->add_option("--entry", ben_entry);
    ben->add_option("--args", ben_args);
    ben->add_option("-o,--output", ben_out);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*parse) {
            auto m = ir::parse_module(read_file(parse_in));
            auto diags = ir::validate_module(m);
            for (const auto& d : diags) err << parse_in << ": " << d.str() << "\n";
            if (!diags.empty()) return 2;
            if (parse_print) {
                out << ir::print_module(m);
            } else {
                out << fmt::format("{}: ok ({} functions, {} globals)\n", parse_in, m.functions.size(),
                                   m.globals.size());
            }
            return 0;
        }

        if (*lay) {
            ir::Module m;
            if (!lay_module.empty()) m = load_module(lay_module);
            auto plan = layout::plan_layout(ir::parse_type(lay_type, m), layout::mode_from_name(lay_mode), m);
            out << (lay_json ? layout::plan_to_json(plan).dump(2) + "\n" : layout::plan_table(plan));
            return 0;
        }

        if (*hard) {
            auto m = load_module(hard_in);
            passes::HardeningConfig hc;
            hc.mode = passes::mode_from_name(hard_mode);
            hc.scope = passes::scope_from_name(hard_scope);
            if (!hard_rng.empty()) hc.mask_rng = ir::mask_rng_from_name(hard_rng);
            hc.counter = hard_counter == "random" ? ir::CounterSeedPolicy::per_run_random()
                                                  : ir::CounterSeedPolicy::fixed(parse_u64(hard_counter));
            auto h = passes::harden(m, hc);
            const std::string text = ir::print_module(h.module);
            if (hard_out.empty()) {
                out << text;
            } else {
                write_file(hard_out, text);
            }
            for (const auto& w : h.report.warnings) {
                err << fmt::format("warning: {} in {} (#{}): {}\n", w.kind, w.function, w.instr_id, w.message);
            }
            if (!hard_report.empty()) {
                const auto cfg = g.machine();
                nlohmann::ordered_json j;
                j["header"] = artifact_header(cfg, hc.counter.random ? cfg.counter_seed.value_or(0) : hc.counter.seed);
                j["report"] = passes::report_to_json(h.report);
                write_file(hard_report, dump(j));
            }
            return 0;
        }

        if (*runc) {
            auto cfg = g.machine();
            if (run_max) cfg.max_steps = *run_max;
            if (run_no_loads) cfg.record_loads = false;
            auto m = load_module(run_in);
            vm::Program prog(m);
            const auto args = parse_list(run_args);
            vm::RunOptions opts;
            opts.collect_trace = false;
            std::ofstream trace_out;
            std::optional<vm::TraceWriter> writer;
            if (!run_trace.empty()) {
                trace_out.open(run_trace, std::ios::binary);
                if (!trace_out) throw std::runtime_error(fmt::format("cannot write {}", run_trace));
                opts.on_start = [&](const vm::TraceHeader& h) { writer.emplace(trace_out, h); };
                opts.sink = [&](const vm::TraceEvent& e) { writer->write(e); };
            }
            auto r = prog.run(run_entry, args, cfg, opts);
            if (!run_result.empty()) {
                nlohmann::ordered_json j;
                j["header"] = artifact_header(cfg, r.counter_seed);
                j["result"] = vm::result_to_json(r);
                write_file(run_result, dump(j));
            }
            if (!run_snapshot.empty()) {
                nlohmann::ordered_json j;
                j["header"] = artifact_header(cfg, r.counter_seed);
                j["regions"] = vm::snapshots_to_json(r.snapshot);
                write_file(run_snapshot, dump(j));
            }
            std::string outs;
            for (auto v : r.outputs) outs += fmt::format(" {}", v);
            out << fmt::format("exit {} outputs [{} ] stores {} silenced {} steps {}\n", r.exit_value, outs,
                               r.counters.stores, r.counters.silenced, r.counters.dynamic_instructions);
            return 0;
        }

        if (*aud) {
            auto t = vm::read_trace_file(aud_in);
            oracle::LeakReport rep;
            rep.collisions = oracle::audit_collisions(t.events, aud_shadow);
            rep.granularity = aud_g ? aud_g : t.header.granularity();
            if (rep.granularity) {
                auto s = oracle::audit_silent_stores(t, *rep.granularity, aud_shadow);
                rep.silenced = std::move(s.findings);
                rep.disagreements = std::move(s.disagreements);
            }
            std::optional<std::vector<vm::RegionSnapshot>> snaps;
            if (!aud_snapshot.empty()) {
                snaps = vm::snapshots_from_json(nlohmann::json::parse(read_file(aud_snapshot)).at("regions"));
            }
            rep.dmp = oracle::audit_dmp(t, snaps);
            out << oracle::report_table(rep);
            if (!aud_out.empty()) {
                auto j = vm::header_to_json(t.header);
                j["leak_report"] = oracle::report_to_json(rep);
                write_file(aud_out, dump(j));
            }
            bool fail = false;
            for (const auto& cls : [&] {
                     std::vector<std::string> v;
                     std::stringstream ss(aud_fail);
                     std::string s;
                     while (std::getline(ss, s, ',')) {
                         if (!s.empty()) v.push_back(s);
                     }
                     return v;
                 }()) {
                if (cls == "collisions") {
                    fail |= !rep.collisions.empty();
                } else if (cls == "silent") {
                    fail |= !rep.silenced.empty() || !rep.disagreements.empty();
                } else if (cls == "dmp") {
                    fail |= !rep.dmp.empty();
                } else {
                    throw UsageError(fmt::format("unknown finding class '{}'", cls));
                }
            }
            return fail ? 1 : 0;
        }

        if (*att) {
            auto t = vm::read_trace_file(att_in);
            std::optional<std::uint64_t> truth = att_secrets;
            if (!truth && !att_result.empty()) {
                truth = nlohmann::json::parse(read_file(att_result)).at("result").at("exit_value").get<std::uint64_t>();
            }
            nlohmann::ordered_json j;
            j["header"] = vm::header_to_json(t.header).at("header");
            if (*att_dict) {
                const auto addr = resolve_address(t, att_a);
                auto dict = oracle::build_dictionary(t.events, addr, att_profile);
                auto seq = oracle::dictionary_attack(t.events, addr, dict, att_profile);
                auto arr = nlohmann::ordered_json::array();
                std::size_t known = 0;
                for (const auto& v : seq) {
                    arr.push_back(v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json("unknown"));
                    known += v ? 1 : 0;
                }
                j["dictionary_size"] = dict.size();
                j["recovered"] = arr;
                out << fmt::format("dictionary of {} entries, {} of {} stores recovered\n", dict.size(), known,
                                   seq.size());
            } else {
                if (!truth) throw UsageError("attack needs --secrets or --result for the ground truth");
                const auto gt = oracle::secret_bits(*truth, att_bits);
                oracle::AttackResult r;
                if (*att_ct) {
                    r = oracle::recover_ctswap_secret(t.events, resolve_address(t, att_a), resolve_address(t, att_b),
                                                      gt, att_opts);
                } else {
                    r = oracle::recover_dmp_secret(t.events, resolve_address(t, att_a), gt, att_opts);
                }
                j["attack"] = oracle::attack_to_json(r);
                out << fmt::format("accuracy {:.4f} over {} bits\n", r.accuracy, gt.size());
            }
            if (!att_out.empty()) write_file(att_out, dump(j));
            return 0;
        }

        if (*ben) {
            const auto cfg = g.machine();
            const auto args = parse_list(ben_args);
            nlohmann::ordered_json j;
            j["header"] = artifact_header(cfg, cfg.counter_seed.value_or(0));
            j["rows"] = nlohmann::ordered_json::array();
            bool ok = true;
            out << fmt::format("{:<16} {:<10} {:>10} {:>10} {:>10} {:>8} {:>8}\n", "program", "mode", "instr x",
                               "stores x", "memory x", "outputs", "identity");
            for (const auto& path : ben_in) {
                auto m = load_module(path);
                std::stringstream ss(ben_modes);
                std::string mode;
                while (std::getline(ss, mode, ',')) {
                    passes::HardeningConfig hc;
                    hc.mode = passes::mode_from_name(mode);
                    hc.counter = ir::CounterSeedPolicy::fixed(cfg.counter_seed.value_or(0));
                    auto row = bench_program(path, m, hc, ben_entry, args, cfg);
                    auto rj = bench_to_json(row);
                    out << fmt::format("{:<16} {:<10} {:>10.3f} {:>10.3f} {:>10.3f} {:>8} {:>8}\n",
                                       path.substr(path.find_last_of('/') + 1), mode,
                                       rj["ratios"]["instructions"].get<double>(),
                                       rj["ratios"]["stores"].get<double>(),
                                       rj["ratios"]["peak_memory"].get<double>(), row.outputs_match ? "same" : "DIFF",
                                       row.identity ? "ok" : "FAIL");
                    ok &= row.outputs_match && row.identity;
                    j["rows"].push_back(std::move(rj));
                }
            }
            if (!ben_out.empty()) write_file(ben_out, dump(j));
            return ok ? 0 : 1;
        }
    } catch (const ir::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const vm::Trap& e) {
        err << fmt::format("trap at step {} (#{}): {}\n", e.step(), e.instr_id(), e.what());
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}

}  // namespace memfresh::cli
