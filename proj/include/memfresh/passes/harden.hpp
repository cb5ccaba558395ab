#pragma once

#include "memfresh/ir/module.hpp"
#include "memfresh/layout/layout.hpp"

#include <nlohmann/json.hpp>

#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace memfresh::passes {

using ir::Module;

class HardeningError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Mode : std::uint8_t { Interleave, Mask, Cio, Dmp };
enum class Scope : std::uint8_t { Whole, Attr };

std::string_view mode_name(Mode m);
Mode mode_from_name(std::string_view s);
std::string_view scope_name(Scope s);
Scope scope_from_name(std::string_view s);

struct HardeningConfig {
    Mode mode = Mode::Interleave;
    Scope scope = Scope::Whole;
    std::optional<ir::MaskRng> mask_rng;  // mask mode only; defaults to xorshift128plus
    ir::CounterSeedPolicy counter = ir::CounterSeedPolicy::per_run_random();

    /// Throws HardeningError when the fields contradict each other.
    void check() const;
    layout::LayoutMode layout_mode() const;
};

/// Shadow displacement used by the mask pass.
inline constexpr std::uint64_t kShadowDisplacement = 0x80000000;

struct Warning {
    std::string kind;  // indirect-call, pointer-crossing, pointer-arith
    std::uint32_t instr_id = 0;
    std::string function;
    std::string message;
};

struct Protection {
    std::set<std::string> functions;
    std::vector<Warning> warnings;
};

/// Whole scope: every function. Attr scope: closure of the `protect` roots
/// over direct calls; throws HardeningError when there is no root. Indirect
/// call sites inside the result are reported as warnings.
Protection propagate_protection(const Module& m, Scope scope);

struct HardeningReport {
    Mode mode = Mode::Interleave;
    Scope scope = Scope::Whole;
    std::optional<ir::MaskRng> mask_rng;
    ir::CounterSeedPolicy counter;
    std::set<std::string> protected_functions;
    std::map<std::string, std::uint64_t> counts;
    std::vector<Warning> warnings;
    std::vector<std::string> flags;
    std::vector<std::string> globals_rewritten;
    std::vector<std::string> helpers;
};

nlohmann::ordered_json report_to_json(const HardeningReport& r);

struct Hardened {
    Module module;
    HardeningReport report;
};

/// Dispatches on config.mode. The input must validate and must not already
/// contain hardening-only instructions; the output validates.
Hardened harden(const Module& m, const HardeningConfig& config);

Hardened harden_interleave(const Module& m, HardeningConfig config);
Hardened harden_dmp(const Module& m, HardeningConfig config);
Hardened harden_mask(const Module& m, HardeningConfig config);
Hardened harden_cio(const Module& m, HardeningConfig config);

/// Expansion of one memcpy/memset of a protected function, for inspection.
/// `out` receives any helper functions the expansion needs.
std::vector<ir::Instr> rewrite_mem_intrinsic(const ir::Instr& in, const ir::Function& context, Module& out,
                                             const HardeningConfig& config);

}  // namespace memfresh::passes
