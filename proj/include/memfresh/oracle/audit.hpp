#pragma once

#include "memfresh/vm/memory.hpp"
#include "memfresh/vm/trace.hpp"

#include <nlohmann/json.hpp>

#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace memfresh::oracle {

using vm::Block16;
using vm::Trace;
using vm::TraceEvent;

struct CollisionFinding {
    std::uint64_t block = 0;
    Block16 plaintext{};
    std::uint32_t instr_id = 0;
    std::uint64_t step = 0;
    // Earliest write (or allocation) of the same plaintext to this block.
    std::uint32_t first_instr_id = 0;
    std::uint64_t first_step = 0;
    bool shadow = false;
};

struct SilenceFinding {
    std::uint64_t addr = 0;
    std::uint32_t instr_id = 0;
    std::uint64_t step = 0;
    unsigned granularity = 0;
    bool full = false;
    std::uint16_t chunk_mask = 0;
    std::uint8_t chunk_count = 0;
    bool shadow = false;
};

struct DmpFinding {
    std::uint64_t source = 0;
    std::uint64_t candidate = 0;
    std::uint64_t step = 0;  // 0 for snapshot findings
    std::uint32_t instr_id = 0;
    bool protected_region = false;
    bool from_snapshot = false;
    std::string label;
};

struct LeakReport {
    std::vector<CollisionFinding> collisions;
    std::vector<SilenceFinding> silenced;
    std::vector<DmpFinding> dmp;
    std::optional<unsigned> granularity;
    // Chunks where the offline recomputation and the VM's online flags differ.
    std::vector<std::string> disagreements;
};

nlohmann::ordered_json report_to_json(const LeakReport& r);
std::string report_table(const LeakReport& r);

/// Replays allocations and stores, keeping for each 16-byte block the set of
/// plaintexts it has held (initial contents included). A store whose
/// resulting block plaintext is already in the set is a finding; silenced
/// stores count as writes of their attempted value.
class CollisionAudit {
public:
    explicit CollisionAudit(bool include_shadow = false) : include_shadow_(include_shadow) {}
    void feed(const TraceEvent& e);
    const std::vector<CollisionFinding>& findings() const { return findings_; }
    std::uint64_t stores_seen() const { return stores_; }
    /// Current plaintext of a tracked block (zero when never seen).
    Block16 block(std::uint64_t addr) const;

private:
    struct Hash {
        std::size_t operator()(const Block16& b) const;
    };
    struct Seen {
        std::uint32_t instr_id;
        std::uint64_t step;
    };
    struct BlockState {
        Block16 current{};
        std::unordered_map<Block16, Seen, Hash> history;
    };

    bool include_shadow_;
    std::unordered_map<std::uint64_t, BlockState> blocks_;
    std::vector<CollisionFinding> findings_;
    std::uint64_t stores_ = 0;
};

std::vector<CollisionFinding> audit_collisions(const std::vector<TraceEvent>& events, bool include_shadow = false);

/// Recomputes silencing at granularity g from before/after bytes. When the
/// trace was recorded at the same g the VM's per-chunk flags are compared
/// with the recomputation.
class SilentStoreAudit {
public:
    /// Throws std::invalid_argument when `trace_granularity` is set and
    /// differs from `g`.
    SilentStoreAudit(unsigned g, std::optional<unsigned> trace_granularity, bool include_shadow = false);
    void feed(const TraceEvent& e);
    const std::vector<SilenceFinding>& findings() const { return findings_; }
    const std::vector<std::string>& disagreements() const { return disagreements_; }

private:
    unsigned g_;
    bool compare_;
    bool include_shadow_;
    std::vector<SilenceFinding> findings_;
    std::vector<std::string> disagreements_;
};

struct SilentSection {
    std::vector<SilenceFinding> findings;
    std::vector<std::string> disagreements;
};

SilentSection audit_silent_stores(const Trace& trace, unsigned g, bool include_shadow = false);

/// Prefetch-candidate events plus, for protected snapshot regions, every
/// aligned word holding a live address. Empty when the trace was recorded
/// without the DMP model; throws std::invalid_argument when it was and no
/// snapshots are given.
std::vector<DmpFinding> audit_dmp(const Trace& trace, const std::optional<std::vector<vm::RegionSnapshot>>& snapshots);

}  // namespace memfresh::oracle
