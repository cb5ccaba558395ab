#pragma once

#include "memfresh/vm/cipher.hpp"
#include "memfresh/vm/trace.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace memfresh::vm {

/// Invalid guest memory access; the machine turns it into a trap.
class MemoryFault : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Region {
    std::uint64_t base = 0;
    std::uint64_t size = 0;       // rounded up to whole 16-byte blocks
    std::uint64_t requested = 0;  // size the guest asked for
    bool live = true;
    RegionKind kind = RegionKind::Heap;
    bool protected_region = false;
    std::string label;
    std::vector<std::uint8_t> bytes;
};

struct RegionSnapshot {
    std::uint64_t base = 0;
    std::uint64_t size = 0;
    RegionKind kind = RegionKind::Heap;
    bool protected_region = false;
    std::string label;
    std::vector<std::uint8_t> bytes;
};

nlohmann::ordered_json snapshots_to_json(const std::vector<RegionSnapshot>& s);
std::vector<RegionSnapshot> snapshots_from_json(const nlohmann::json& j);

/// Guest memory: 16-byte aligned regions from a bump allocator, never reused.
class Memory {
public:
    Memory(std::uint64_t heap_base, std::uint64_t heap_limit);

    /// Allocates at the bump pointer. `init` shorter than `size` is zero-filled.
    Region& allocate(std::uint64_t size, RegionKind kind, bool protected_region, std::string label,
                     const std::vector<std::uint8_t>& init = {});
    /// Maps a region at a fixed base (used for mask shadow regions).
    Region& map_at(std::uint64_t base, std::uint64_t size, RegionKind kind, bool protected_region, std::string label);
    void release(std::uint64_t base);

    /// Live region containing [addr, addr + width), or nullptr.
    Region* find(std::uint64_t addr, std::uint64_t width = 1);
    const Region* find(std::uint64_t addr, std::uint64_t width = 1) const;
    Region& require(std::uint64_t addr, std::uint64_t width);

    void read(std::uint64_t addr, unsigned width, std::uint8_t* out);
    Block16 block(std::uint64_t block_addr) const;

    /// Writes `width` bytes, consulting silent-store semantics at granularity
    /// `g`. Fills the store-specific fields of `ev` (kind, bytes, digests,
    /// chunk flags).
    void apply_store(std::uint64_t addr, unsigned width, const std::uint8_t* value, std::optional<unsigned> g,
                     const Cipher& cipher, TraceEvent& ev);

    /// Aligned little-endian words of the `window`-byte window around `addr`
    /// whose value points into a live region: (word address, value, word
    /// lies in a protected region).
    struct Candidate {
        std::uint64_t source;
        std::uint64_t value;
        bool protected_region;
    };
    std::vector<Candidate> dmp_scan(std::uint64_t addr, unsigned window) const;

    std::vector<RegionSnapshot> snapshot() const;
    std::uint64_t live_bytes() const { return live_bytes_; }

private:
    Region& insert(Region r);

    std::uint64_t next_;
    std::uint64_t limit_;
    std::uint64_t live_bytes_ = 0;
    std::map<std::uint64_t, Region> regions_;
    mutable Region* last_ = nullptr;
};

}  // namespace memfresh::vm
