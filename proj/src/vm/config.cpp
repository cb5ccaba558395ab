#include "memfresh/vm/config.hpp"

#include "memfresh/vm/cipher.hpp"

#include <fmt/format.h>
#include <sodium.h>

#include <stdexcept>

namespace memfresh::vm {

void MachineConfig::check() const
{
    if (silent_granularity) {
        const unsigned g = *silent_granularity;
        if (g != 1 && g != 2 && g != 4 && g != 8 && g != 16) {
            throw std::invalid_argument(fmt::format("silent-store granularity {} does not divide 16", g));
        }
    }
    if (heap_base < 0x1000 || heap_base % 16 != 0) {
        throw std::invalid_argument("heap_base must be a 16-byte aligned address of at least 0x1000");
    }
    if (heap_limit <= heap_base || heap_limit > (std::uint64_t{1} << 32)) {
        throw std::invalid_argument("heap_limit must lie in (heap_base, 2^32]");
    }
    if (dmp_scan_window < 8 || (dmp_scan_window & (dmp_scan_window - 1)) != 0) {
        throw std::invalid_argument("dmp_scan_window must be a power of two of at least 8");
    }
}

nlohmann::ordered_json config_to_json(const MachineConfig& c)
{
    nlohmann::ordered_json j;
    j["cipher_key_seed"] = c.cipher_key_seed;
    j["counter_seed"] = c.counter_seed ? nlohmann::ordered_json(*c.counter_seed) : nlohmann::ordered_json();
    j["silent_granularity"] =
        c.silent_granularity ? nlohmann::ordered_json(*c.silent_granularity) : nlohmann::ordered_json("off");
    j["dmp_enabled"] = c.dmp_enabled;
    j["dmp_scan_window"] = c.dmp_scan_window;
    j["heap_base"] = c.heap_base;
    j["heap_limit"] = c.heap_limit;
    j["max_steps"] = c.max_steps;
    j["record_loads"] = c.record_loads;
    return j;
}

MachineConfig config_from_json(const nlohmann::json& j, MachineConfig c)
{
    if (!j.is_object()) {
        throw std::invalid_argument("machine config must be a JSON object");
    }
    for (const auto& [key, v] : j.items()) {
        if (key == "cipher_key_seed") {
            c.cipher_key_seed = v.get<std::uint64_t>();
        } else if (key == "counter_seed") {
            c.counter_seed = v.is_null() ? std::nullopt : std::optional<std::uint64_t>(v.get<std::uint64_t>());
        } else if (key == "silent_granularity") {
            if (v.is_string() && v.get<std::string>() == "off") {
                c.silent_granularity.reset();
            } else {
                c.silent_granularity = v.get<unsigned>();
            }
        } else if (key == "dmp_enabled") {
            c.dmp_enabled = v.get<bool>();
        } else if (key == "dmp_scan_window") {
            c.dmp_scan_window = v.get<unsigned>();
        } else if (key == "heap_base") {
            c.heap_base = v.get<std::uint64_t>();
        } else if (key == "heap_limit") {
            c.heap_limit = v.get<std::uint64_t>();
        } else if (key == "max_steps") {
            c.max_steps = v.get<std::uint64_t>();
        } else if (key == "record_loads") {
            c.record_loads = v.get<bool>();
        } else {
            throw std::invalid_argument(fmt::format("unknown machine config key '{}'", key));
        }
    }
    c.check();
    return c;
}

std::string json_hash(const nlohmann::ordered_json& j)
{
    if (sodium_init() < 0) {
        throw std::runtime_error("libsodium failed to initialize");
    }
    const std::string text = j.dump();
    std::array<std::uint8_t, 16> out{};
    crypto_generichash(out.data(), out.size(), reinterpret_cast<const unsigned char*>(text.data()), text.size(),
                       nullptr, 0);
    return to_hex(out);
}

}  // namespace memfresh::vm
