#include "memfresh/vm/memory.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cstring>

namespace memfresh::vm {

namespace {

std::uint64_t round16(std::uint64_t n) { return (n + 15) & ~std::uint64_t{15}; }

}  // namespace

Memory::Memory(std::uint64_t heap_base, std::uint64_t heap_limit) : next_(heap_base), limit_(heap_limit) {}

Region& Memory::insert(Region r)
{
    live_bytes_ += r.size;
    const auto base = r.base;
    auto [it, ok] = regions_.emplace(base, std::move(r));
    if (!ok) {
        throw MemoryFault(fmt::format("region at {:#x} already mapped", base));
    }
    return it->second;
}

Region& Memory::allocate(std::uint64_t size, RegionKind kind, bool protected_region, std::string label,
                         const std::vector<std::uint8_t>& init)
{
    const std::uint64_t rounded = std::max<std::uint64_t>(16, round16(size));
    if (rounded > limit_ - next_ || size > limit_) {
        throw MemoryFault(fmt::format("out of guest memory allocating {} bytes", size));
    }
    Region r;
    r.base = next_;
    r.size = rounded;
    r.requested = size;
    r.kind = kind;
    r.protected_region = protected_region;
    r.label = std::move(label);
    r.bytes.assign(rounded, 0);
    std::copy(init.begin(), init.begin() + static_cast<std::ptrdiff_t>(std::min<std::uint64_t>(init.size(), rounded)),
              r.bytes.begin());
    next_ += rounded;
    return insert(std::move(r));
}

Region& Memory::map_at(std::uint64_t base, std::uint64_t size, RegionKind kind, bool protected_region,
                       std::string label)
{
    Region r;
    r.base = base;
    r.size = std::max<std::uint64_t>(16, round16(size));
    r.kind = kind;
    r.protected_region = protected_region;
    r.label = std::move(label);
    r.bytes.assign(r.size, 0);
    return insert(std::move(r));
}

void Memory::release(std::uint64_t base)
{
    auto it = regions_.find(base);
    if (it == regions_.end() || !it->second.live) {
        throw MemoryFault(fmt::format("free of {:#x}, which is not a live allocation", base));
    }
    it->second.live = false;
    live_bytes_ -= it->second.size;
    // Dead regions keep their base so addresses are never handed out twice;
    // the contents are dropped.
    std::vector<std::uint8_t>().swap(it->second.bytes);
}

const Region* Memory::find(std::uint64_t addr, std::uint64_t width) const
{
    const Region* r = nullptr;
    if (last_ != nullptr && addr >= last_->base && addr - last_->base < last_->size) {
        r = last_;
    } else {
        auto it = regions_.upper_bound(addr);
        if (it == regions_.begin()) {
            return nullptr;
        }
        --it;
        r = &it->second;
        if (addr - r->base >= r->size) {
            return nullptr;
        }
        last_ = const_cast<Region*>(r);
    }
    if (!r->live || width > r->size - (addr - r->base)) {
        return nullptr;
    }
    return r;
}

Region* Memory::find(std::uint64_t addr, std::uint64_t width)
{
    return const_cast<Region*>(static_cast<const Memory*>(this)->find(addr, width));
}

Region& Memory::require(std::uint64_t addr, std::uint64_t width)
{
    Region* r = find(addr, width);
    if (r == nullptr) {
        throw MemoryFault(fmt::format("access of {} bytes at {:#x} outside any live region", width, addr));
    }
    return *r;
}

void Memory::read(std::uint64_t addr, unsigned width, std::uint8_t* out)
{
    Region& r = require(addr, width);
    std::memcpy(out, r.bytes.data() + (addr - r.base), width);
}

Block16 Memory::block(std::uint64_t block_addr) const
{
    const Region* r = find(block_addr, 16);
    if (r == nullptr) {
        throw MemoryFault(fmt::format("block {:#x} is not mapped", block_addr));
    }
    Block16 b;
    std::memcpy(b.data(), r->bytes.data() + (block_addr - r->base), 16);
    return b;
}

void Memory::apply_store(std::uint64_t addr, unsigned width, const std::uint8_t* value, std::optional<unsigned> g,
                         const Cipher& cipher, TraceEvent& ev)
{
    if (width == 0 || width > 16) {
        throw MemoryFault(fmt::format("store width {} out of range", width));
    }
    Region& r = require(addr, width);
    std::uint8_t* mem = r.bytes.data() + (addr - r.base);

    ev.addr = addr;
    ev.width = width;
    ev.shadow = r.kind == RegionKind::Shadow;
    ev.protected_region = r.protected_region;
    std::memcpy(ev.before.data(), mem, width);

    const std::uint64_t first_block = addr & ~std::uint64_t{15};
    const std::uint64_t last_block = (addr + width - 1) & ~std::uint64_t{15};
    ev.digest_count = first_block == last_block ? 1 : 2;
    for (unsigned i = 0; i < ev.digest_count; ++i) {
        ev.digests[i].block = first_block + 16u * i;
        ev.digests[i].before = cipher.encrypt_block(ev.digests[i].block, block(ev.digests[i].block));
    }

    bool all_suppressed = false;
    if (g) {
        const std::uint64_t gran = *g;
        const std::uint64_t start = addr & ~(gran - 1);
        ev.chunk_count = 0;
        ev.chunk_mask = 0;
        all_suppressed = true;
        for (std::uint64_t c = start; c < addr + width; c += gran, ++ev.chunk_count) {
            const std::uint64_t lo = std::max(c, addr);
            const std::uint64_t hi = std::min(c + gran, addr + width);
            const bool same = std::memcmp(mem + (lo - addr), value + (lo - addr), hi - lo) == 0;
            if (same) {
                ev.chunk_mask |= static_cast<std::uint16_t>(1u << ev.chunk_count);
            } else {
                all_suppressed = false;
                std::memcpy(mem + (lo - addr), value + (lo - addr), hi - lo);
            }
        }
    } else {
        std::memcpy(mem, value, width);
    }

    ev.kind = all_suppressed ? EventKind::StoreSilenced : EventKind::Store;
    std::memcpy(ev.after.data(), mem, width);
    for (unsigned i = 0; i < ev.digest_count; ++i) {
        ev.digests[i].after = cipher.encrypt_block(ev.digests[i].block, block(ev.digests[i].block));
    }
}

std::vector<Memory::Candidate> Memory::dmp_scan(std::uint64_t addr, unsigned window) const
{
    std::vector<Candidate> out;
    const std::uint64_t start = addr & ~std::uint64_t{window - 1};
    for (std::uint64_t w = start; w < start + window; w += 8) {
        const Region* r = find(w, 8);
        if (r == nullptr) {
            continue;
        }
        std::uint64_t v = 0;
        std::memcpy(&v, r->bytes.data() + (w - r->base), 8);
        if (find(v, 1) != nullptr) {
            out.push_back({w, v, r->protected_region});
        }
    }
    return out;
}

std::vector<RegionSnapshot> Memory::snapshot() const
{
    std::vector<RegionSnapshot> out;
    for (const auto& [base, r] : regions_) {
        if (r.live) {
            out.push_back({r.base, r.size, r.kind, r.protected_region, r.label, r.bytes});
        }
    }
    return out;
}

nlohmann::ordered_json snapshots_to_json(const std::vector<RegionSnapshot>& s)
{
    auto arr = nlohmann::ordered_json::array();
    for (const auto& r : s) {
        nlohmann::ordered_json j;
        j["base"] = fmt::format("{:#x}", r.base);
        j["size"] = r.size;
        j["region"] = region_kind_name(r.kind);
        j["protected"] = r.protected_region;
        j["label"] = r.label;
        j["bytes"] = to_hex(r.bytes.data(), r.bytes.size());
        arr.push_back(std::move(j));
    }
    return arr;
}

std::vector<RegionSnapshot> snapshots_from_json(const nlohmann::json& j)
{
    std::vector<RegionSnapshot> out;
    for (const auto& e : j) {
        RegionSnapshot r;
        r.base = std::stoull(e.at("base").get<std::string>(), nullptr, 16);
        r.size = e.at("size").get<std::uint64_t>();
        r.kind = region_kind_from_name(e.at("region").get<std::string>());
        r.protected_region = e.at("protected").get<bool>();
        r.label = e.value("label", "");
        const auto hex = e.at("bytes").get<std::string>();
        if (hex.size() != r.size * 2) {
            throw std::invalid_argument("snapshot byte count does not match region size");
        }
        r.bytes.resize(r.size);
        for (std::size_t i = 0; i < r.size; ++i) {
            r.bytes[i] = static_cast<std::uint8_t>(std::stoul(hex.substr(2 * i, 2), nullptr, 16));
        }
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace memfresh::vm
