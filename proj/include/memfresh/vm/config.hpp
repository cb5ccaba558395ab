#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <optional>
#include <string>

namespace memfresh::vm {

struct MachineConfig {
    std::uint64_t cipher_key_seed = 0;
    // Seed for `counter random` modules and for the mask generators; a
    // module's `counter fixed N` takes precedence.
    std::optional<std::uint64_t> counter_seed;
    std::optional<unsigned> silent_granularity;  // 1, 2, 4, 8, 16 or off
    bool dmp_enabled = false;
    unsigned dmp_scan_window = 64;
    std::uint64_t heap_base = 0x1000;
    std::uint64_t heap_limit = 0x40000000;
    std::uint64_t max_steps = 100'000'000;
    bool record_loads = true;

    /// Throws std::invalid_argument on an inconsistent configuration.
    void check() const;
};

nlohmann::ordered_json config_to_json(const MachineConfig& c);

/// Accepts the keys produced by config_to_json; missing keys keep `base`.
MachineConfig config_from_json(const nlohmann::json& j, MachineConfig base = {});

/// Hex BLAKE2b-128 of the canonical (compact) JSON dump.
std::string json_hash(const nlohmann::ordered_json& j);

inline constexpr const char* kToolName = "memfresh";
inline constexpr const char* kToolVersion = "0.1.0";

}  // namespace memfresh::vm
