#include "memfresh/oracle/audit.hpp"

#include <fmt/format.h>

#include <cstring>
#include <stdexcept>

namespace memfresh::oracle {

using vm::EventKind;

std::size_t CollisionAudit::Hash::operator()(const Block16& b) const
{
    std::uint64_t lo = 0, hi = 0;
    std::memcpy(&lo, b.data(), 8);
    std::memcpy(&hi, b.data() + 8, 8);
    return std::hash<std::uint64_t>{}(lo * 0x9E3779B97F4A7C15ull ^ hi);
}

Block16 CollisionAudit::block(std::uint64_t addr) const
{
    auto it = blocks_.find(addr & ~std::uint64_t{15});
    return it == blocks_.end() ? Block16{} : it->second.current;
}

void CollisionAudit::feed(const TraceEvent& e)
{
    if (e.shadow && !include_shadow_) {
        return;
    }
    if (e.kind == EventKind::Alloc) {
        for (std::uint64_t off = 0; off < e.width; off += 16) {
            auto& st = blocks_[e.addr + off];
            st.current.fill(0);
            for (std::size_t k = 0; k < 16 && off + k < e.init.size(); ++k) {
                st.current[k] = e.init[off + k];
            }
            st.history.emplace(st.current, Seen{e.instr_id, e.step});
        }
        return;
    }
    if (!e.is_store()) {
        return;
    }
    ++stores_;
    const unsigned n = e.byte_count();
    for (unsigned d = 0; d < e.digest_count; ++d) {
        const std::uint64_t blk = e.digests[d].block;
        auto& st = blocks_[blk];
        for (unsigned k = 0; k < n; ++k) {
            const std::uint64_t a = e.addr + k;
            if (a >= blk && a < blk + 16) {
                st.current[a - blk] = e.after[k];
            }
        }
        auto [it, fresh] = st.history.emplace(st.current, Seen{e.instr_id, e.step});
        if (!fresh) {
            findings_.push_back({blk, st.current, e.instr_id, e.step, it->second.instr_id, it->second.step, e.shadow});
        }
    }
}

std::vector<CollisionFinding> audit_collisions(const std::vector<TraceEvent>& events, bool include_shadow)
{
    CollisionAudit audit(include_shadow);
    for (const auto& e : events) {
        audit.feed(e);
    }
    return audit.findings();
}

SilentStoreAudit::SilentStoreAudit(unsigned g, std::optional<unsigned> trace_granularity, bool include_shadow)
    : g_(g), compare_(trace_granularity.has_value()), include_shadow_(include_shadow)
{
    if (g != 1 && g != 2 && g != 4 && g != 8 && g != 16) {
        throw std::invalid_argument(fmt::format("granularity {} does not divide 16", g));
    }
    if (trace_granularity && *trace_granularity != g) {
        throw std::invalid_argument(fmt::format("trace was recorded at granularity {}, audit asked for {}",
                                                *trace_granularity, g));
    }
}

void SilentStoreAudit::feed(const TraceEvent& e)
{
    if (!e.is_store() || (e.shadow && !include_shadow_)) {
        return;
    }
    const std::uint64_t end = e.addr + e.byte_count();
    std::uint16_t mask = 0;
    std::uint8_t count = 0;
    for (std::uint64_t c = e.addr & ~std::uint64_t{g_ - 1}; c < end; c += g_, ++count) {
        const std::uint64_t lo = std::max(c, e.addr);
        const std::uint64_t hi = std::min(c + g_, end);
        if (std::memcmp(e.before.data() + (lo - e.addr), e.after.data() + (lo - e.addr), hi - lo) == 0) {
            mask |= static_cast<std::uint16_t>(1u << count);
        }
    }
    const bool full = mask == static_cast<std::uint16_t>((1u << count) - 1);
    if (compare_) {
        const bool vm_full = e.kind == EventKind::StoreSilenced;
        if (e.chunk_count != count || e.chunk_mask != mask || vm_full != full) {
            disagreements_.push_back(fmt::format("step {} #{} at {:#x}: vm chunks {:#x}/{}, recomputed {:#x}/{}",
                                                 e.step, e.instr_id, e.addr, e.chunk_mask, e.chunk_count, mask, count));
        }
    }
    if (mask != 0) {
        findings_.push_back({e.addr, e.instr_id, e.step, g_, full, mask, count, e.shadow});
    }
}

SilentSection audit_silent_stores(const Trace& trace, unsigned g, bool include_shadow)
{
    SilentStoreAudit audit(g, trace.header.granularity(), include_shadow);
    for (const auto& e : trace.events) {
        audit.feed(e);
    }
    return {audit.findings(), audit.disagreements()};
}

std::vector<DmpFinding> audit_dmp(const Trace& trace, const std::optional<std::vector<vm::RegionSnapshot>>& snapshots)
{
    std::vector<DmpFinding> out;
    if (!trace.header.dmp_enabled()) {
        return out;
    }
    if (!snapshots) {
        throw std::invalid_argument("the DMP audit needs the run's memory snapshots");
    }
    for (const auto& e : trace.events) {
        if (e.kind == EventKind::PrefetchCandidate) {
            out.push_back({e.addr, e.candidate, e.step, e.instr_id, e.protected_region, false, {}});
        }
    }
    auto live = [&](std::uint64_t v) {
        for (const auto& r : *snapshots) {
            if (v >= r.base && v - r.base < r.size) return true;
        }
        return false;
    };
    for (const auto& r : *snapshots) {
        if (!r.protected_region || r.kind == vm::RegionKind::Shadow) {
            continue;
        }
        for (std::uint64_t off = 0; off + 8 <= r.bytes.size(); off += 8) {
            std::uint64_t v = 0;
            std::memcpy(&v, r.bytes.data() + off, 8);
            if (live(v)) {
                out.push_back({r.base + off, v, 0, 0, true, true, r.label});
            }
        }
    }
    return out;
}

nlohmann::ordered_json report_to_json(const LeakReport& r)
{
    nlohmann::ordered_json j;
    auto col = nlohmann::ordered_json::array();
    for (const auto& c : r.collisions) {
        nlohmann::ordered_json f;
        f["block"] = fmt::format("{:#x}", c.block);
        f["plaintext"] = vm::to_hex(c.plaintext);
        f["instr_ids"] = {c.first_instr_id, c.instr_id};
        f["steps"] = {c.first_step, c.step};
        if (c.shadow) f["shadow"] = true;
        col.push_back(std::move(f));
    }
    auto sil = nlohmann::ordered_json::array();
    for (const auto& s : r.silenced) {
        nlohmann::ordered_json f;
        f["addr"] = fmt::format("{:#x}", s.addr);
        f["instr_id"] = s.instr_id;
        f["step"] = s.step;
        f["granularity"] = s.granularity;
        f["full"] = s.full;
        f["chunks"] = {{"count", s.chunk_count}, {"suppressed", s.chunk_mask}};
        sil.push_back(std::move(f));
    }
    auto dmp = nlohmann::ordered_json::array();
    for (const auto& d : r.dmp) {
        nlohmann::ordered_json f;
        f["source"] = fmt::format("{:#x}", d.source);
        f["candidate"] = fmt::format("{:#x}", d.candidate);
        f["step"] = d.step;
        f["instr_id"] = d.instr_id;
        f["protected"] = d.protected_region;
        f["origin"] = d.from_snapshot ? "snapshot" : "trace";
        if (!d.label.empty()) f["label"] = d.label;
        dmp.push_back(std::move(f));
    }
    std::size_t full = 0, protected_dmp = 0;
    for (const auto& s : r.silenced) full += s.full ? 1 : 0;
    for (const auto& d : r.dmp) protected_dmp += d.protected_region ? 1 : 0;
    j["summary"] = {{"collisions", r.collisions.size()},
                    {"silenced", r.silenced.size()},
                    {"silenced_full", full},
                    {"dmp_candidates", r.dmp.size()},
                    {"dmp_candidates_protected", protected_dmp},
                    {"disagreements", r.disagreements.size()}};
    j["granularity"] = r.granularity ? nlohmann::ordered_json(*r.granularity) : nlohmann::ordered_json("off");
    j["collisions"] = std::move(col);
    j["silenced"] = std::move(sil);
    j["dmp_candidates"] = std::move(dmp);
    j["disagreements"] = r.disagreements;
    return j;
}

std::string report_table(const LeakReport& r)
{
    std::string out;
    out += fmt::format("{:<22} {:>8}\n", "finding class", "count");
    out += fmt::format("{:<22} {:>8}\n", "ciphertext collisions", r.collisions.size());
    out += fmt::format("{:<22} {:>8}\n", "silenced stores", r.silenced.size());
    out += fmt::format("{:<22} {:>8}\n", "dmp candidates", r.dmp.size());
    if (!r.disagreements.empty()) {
        out += fmt::format("{:<22} {:>8}\n", "oracle/vm disagreements", r.disagreements.size());
    }
    std::map<std::uint32_t, std::size_t> per_instr;
    for (const auto& c : r.collisions) ++per_instr[c.instr_id];
    if (!per_instr.empty()) {
        out += "collisions by instruction:\n";
        for (const auto& [id, n] : per_instr) out += fmt::format("  #{:<6} {:>8}\n", id, n);
    }
    return out;
}

}  // namespace memfresh::oracle
