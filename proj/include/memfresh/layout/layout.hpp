#pragma once

#include "memfresh/ir/module.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace memfresh::layout {

using ir::Module;
using ir::Type;

/// Standard16: 16-byte block, data chunk (up to 8 bytes) at offset 0, counter
/// at 8..16. Dmp8: 8-byte block, data chunk (up to 4 bytes) at 0, guard at 4..8.
enum class LayoutMode : std::uint8_t { Standard16, Dmp8 };

std::string_view mode_name(LayoutMode m);
LayoutMode mode_from_name(std::string_view name);

unsigned block_size(LayoutMode m);
unsigned data_capacity(LayoutMode m);
/// Worst case of one data byte per block.
unsigned heap_expansion_factor(LayoutMode m);

struct LeafSlot {
    std::vector<std::uint32_t> path;
    Type leaf_type;
    std::uint64_t block_index = 0;
    unsigned data_width = 0;
    unsigned part = 0;  // Dmp8 8-byte leaves: 0 = low half, 1 = high half
};

struct LayoutPlan {
    Type original;
    LayoutMode mode = LayoutMode::Standard16;
    std::vector<LeafSlot> leaves;
    std::uint64_t total_blocks = 0;

    std::uint64_t size_bytes() const { return total_blocks * block_size(mode); }
};

/// Depth-first, declaration order. Throws std::invalid_argument on leaves the
/// mode cannot hold.
LayoutPlan plan_layout(const Type& t, LayoutMode mode, const Module& m);

/// Blocks a single leaf of type `leaf` occupies.
unsigned blocks_per_leaf(const Type& leaf, LayoutMode mode);

std::uint64_t interleaved_size(const Type& t, LayoutMode mode, const Module& m);

struct Access {
    std::uint64_t offset = 0;
    unsigned width = 0;
};

/// Byte offset and width of a leaf's data chunk. Throws std::invalid_argument
/// when the path does not name a leaf.
Access translate_access(const LayoutPlan& plan, const std::vector<std::uint32_t>& path, unsigned part = 0);

/// Dmp8 guard word: top byte 0xFF, low 24 bits of the counter.
constexpr std::uint32_t guard_word(std::uint64_t counter)
{
    return 0xFF000000u | static_cast<std::uint32_t>(counter & 0xFFFFFFu);
}

/// Interleaved counterpart of `t`. Primitive leaves become block types;
/// named aggregates get a rewritten twin (`Name.z16` / `Name.z8`) which is
/// appended to `m` on first use.
Type interleaved_type(const Type& t, LayoutMode mode, Module& m);

/// Re-encodes an initializer (empty = zeroinit) of type `t` into interleaved
/// bytes. Counter fields are 0; Dmp8 guards carry the 0xFF top byte.
std::vector<std::uint8_t> encode_initializer(const Type& t, const std::vector<std::uint8_t>& init, LayoutMode mode,
                                             const Module& m);

nlohmann::json plan_to_json(const LayoutPlan& plan);
std::string plan_table(const LayoutPlan& plan);

}  // namespace memfresh::layout
