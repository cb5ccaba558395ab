#pragma once

#include "memfresh/passes/harden.hpp"
#include "memfresh/vm/config.hpp"

#include <nlohmann/json.hpp>

#include <iosfwd>
#include <string>
#include <vector>

namespace memfresh::cli {

/// Runs the `memfresh` command line. Exit codes: 0 ok, 1 findings or a failed
/// identity check, 2 usage, input or runtime errors.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// Header carried by every JSON artifact that is not a trace.
nlohmann::ordered_json artifact_header(const vm::MachineConfig& config, std::uint64_t counter_seed);

struct BenchRow {
    std::string program;
    std::string mode;
    std::uint64_t instructions[2]{};  // original, hardened
    std::uint64_t stores[2]{};
    std::uint64_t silenced[2]{};
    std::uint64_t peak_memory[2]{};
    std::uint64_t expected_stores = 0;  // hardened data stores the rewrite should produce
    std::uint64_t shadow_stores = 0;
    bool outputs_match = false;
    bool identity = false;
};

/// Runs `m` and its hardened form under the same config and compares the
/// dynamic store counts against the per-store expansion of the mode.
BenchRow bench_program(const std::string& name, const ir::Module& m, const passes::HardeningConfig& hc,
                       const std::string& entry, const std::vector<std::uint64_t>& args,
                       const vm::MachineConfig& config);

nlohmann::ordered_json bench_to_json(const BenchRow& r);

}  // namespace memfresh::cli
