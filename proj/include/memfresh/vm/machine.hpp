#pragma once

#include "memfresh/ir/module.hpp"
#include "memfresh/vm/config.hpp"
#include "memfresh/vm/memory.hpp"
#include "memfresh/vm/trace.hpp"

#include <functional>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace memfresh::vm {

/// Guest fault: invalid access, step limit, unresolved call.
class Trap : public std::runtime_error {
public:
    Trap(std::uint32_t instr_id, std::uint64_t step, const std::string& message);
    std::uint32_t instr_id() const { return instr_id_; }
    std::uint64_t step() const { return step_; }

private:
    std::uint32_t instr_id_;
    std::uint64_t step_;
};

struct RunCounters {
    std::uint64_t stores = 0;  // including silenced ones
    std::uint64_t silenced = 0;
    std::uint64_t partial = 0;  // some but not all chunks suppressed
    std::uint64_t loads = 0;
    std::uint64_t prefetch_candidates = 0;
    std::uint64_t dynamic_instructions = 0;
    std::uint64_t allocs = 0;
    std::uint64_t frees = 0;
};

struct GlobalInfo {
    std::uint64_t addr = 0;
    std::uint64_t size = 0;
};

struct RunResult {
    std::uint64_t exit_value = 0;
    std::vector<std::uint64_t> outputs;  // declassified values in program order
    std::vector<TraceEvent> trace;       // empty unless collected
    RunCounters counters;
    std::map<std::string, GlobalInfo> globals;
    std::uint64_t peak_memory = 0;
    std::uint64_t counter_seed = 0;
    std::uint64_t final_counter = 0;
    std::vector<RegionSnapshot> snapshot;  // live regions when the entry function returns
    TraceHeader header;
};

nlohmann::ordered_json result_to_json(const RunResult& r);

struct RunOptions {
    bool collect_trace = true;
    TraceSink sink;  // called for every event, in order
    std::function<void(const TraceHeader&)> on_start;  // once the seeds are resolved, before any event
};

/// A module lowered to slot-indexed code. Build once, run many times.
class Program {
public:
    /// Throws std::runtime_error when the module does not validate.
    explicit Program(const ir::Module& m);
    ~Program();
    Program(Program&&) noexcept;
    Program& operator=(Program&&) noexcept;

    RunResult run(const std::string& entry, const std::vector<std::uint64_t>& args, const MachineConfig& config,
                  const RunOptions& options = {}) const;

    const ir::Module& module() const;

    struct Impl;

private:
    std::unique_ptr<Impl> impl_;
};

RunResult execute(const ir::Module& m, const std::string& entry, const std::vector<std::uint64_t>& args,
                  const MachineConfig& config, const RunOptions& options = {});

/// Address a `fnaddr` of the function at `index` evaluates to.
constexpr std::uint64_t function_address(std::size_t index) { return 0x7F00000000000000ull + index * 16; }

}  // namespace memfresh::vm
