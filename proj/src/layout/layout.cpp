#include "memfresh/layout/layout.hpp"

#include <fmt/format.h>

#include <stdexcept>

namespace memfresh::layout {

std::string_view mode_name(LayoutMode m)
{
    return m == LayoutMode::Standard16 ? "standard16" : "dmp8";
}

LayoutMode mode_from_name(std::string_view name)
{
    if (name == "standard16") return LayoutMode::Standard16;
    if (name == "dmp8") return LayoutMode::Dmp8;
    throw std::invalid_argument(fmt::format("unknown layout mode '{}'", name));
}

unsigned block_size(LayoutMode m) { return m == LayoutMode::Standard16 ? 16 : 8; }
unsigned data_capacity(LayoutMode m) { return block_size(m) / 2; }
unsigned heap_expansion_factor(LayoutMode m) { return block_size(m); }

unsigned blocks_per_leaf(const Type& leaf, LayoutMode mode)
{
    if (!leaf.is_primitive()) {
        throw std::invalid_argument(fmt::format("{} is not a primitive leaf", leaf.str()));
    }
    const unsigned w = leaf.byte_width();
    if (w <= data_capacity(mode)) {
        return 1;
    }
    if (mode == LayoutMode::Dmp8 && w == 8) {
        return 2;
    }
    throw std::invalid_argument(fmt::format("{} does not fit {} blocks", leaf.str(), mode_name(mode)));
}

LayoutPlan plan_layout(const Type& t, LayoutMode mode, const Module& m)
{
    LayoutPlan plan{t, mode, {}, 0};
    for (auto& leaf : ir::leaves_of(t, m)) {
        const unsigned parts = blocks_per_leaf(leaf.type, mode);
        for (unsigned p = 0; p < parts; ++p) {
            plan.leaves.push_back(
                {leaf.path, leaf.type, plan.total_blocks++, parts == 1 ? leaf.type.byte_width() : 4u, p});
        }
    }
    return plan;
}

std::uint64_t interleaved_size(const Type& t, LayoutMode mode, const Module& m)
{
    switch (t.kind()) {
    case Type::Kind::Int:
    case Type::Kind::Addr: return std::uint64_t{blocks_per_leaf(t, mode)} * block_size(mode);
    case Type::Kind::Array: return t.count() * interleaved_size(t.element(), mode, m);
    case Type::Kind::Named: {
        const auto* def = m.find_aggregate(t.name());
        if (def == nullptr) {
            throw std::invalid_argument("unknown aggregate " + t.name());
        }
        std::uint64_t total = 0;
        for (const auto& f : def->fields) {
            total += interleaved_size(f, mode, m);
        }
        return total;
    }
    default: throw std::invalid_argument(fmt::format("cannot interleave {}", t.str()));
    }
}

Access translate_access(const LayoutPlan& plan, const std::vector<std::uint32_t>& path, unsigned part)
{
    for (const auto& slot : plan.leaves) {
        if (slot.path == path && slot.part == part) {
            return {slot.block_index * block_size(plan.mode), slot.data_width};
        }
    }
    std::string p;
    for (auto i : path) {
        p += fmt::format("{}{}", p.empty() ? "" : ".", i);
    }
    throw std::invalid_argument(fmt::format("path [{}] part {} is not a leaf of {}", p, part, plan.original.str()));
}

Type interleaved_type(const Type& t, LayoutMode mode, Module& m)
{
    const unsigned bs = block_size(mode);
    switch (t.kind()) {
    case Type::Kind::Int:
    case Type::Kind::Addr:
        if (blocks_per_leaf(t, mode) == 2) {
            return Type::array(Type::block(Type::i32(), bs), 2);
        }
        return Type::block(t, bs);
    case Type::Kind::Array: return Type::array(interleaved_type(t.element(), mode, m), t.count());
    case Type::Kind::Named: {
        const std::string twin = fmt::format("{}.z{}", t.name(), bs);
        if (m.find_aggregate(twin) != nullptr) {
            return Type::named(twin);
        }
        const auto* def = m.find_aggregate(t.name());
        if (def == nullptr) {
            throw std::invalid_argument("unknown aggregate " + t.name());
        }
        const auto fields = def->fields;  // `def` may dangle once aggregates grow
        ir::AggregateDef out{twin, {}};
        for (const auto& f : fields) {
            out.fields.push_back(interleaved_type(f, mode, m));
        }
        m.aggregates.push_back(std::move(out));
        return Type::named(twin);
    }
    default: throw std::invalid_argument(fmt::format("cannot interleave {}", t.str()));
    }
}

std::vector<std::uint8_t> encode_initializer(const Type& t, const std::vector<std::uint8_t>& init, LayoutMode mode,
                                             const Module& m)
{
    const auto plan = plan_layout(t, mode, m);
    const auto leaves = ir::leaves_of(t, m);
    const unsigned bs = block_size(mode);
    std::vector<std::uint8_t> out(plan.size_bytes(), 0);
    std::size_t slot = 0;
    for (const auto& leaf : leaves) {
        const unsigned parts = blocks_per_leaf(leaf.type, mode);
        for (unsigned p = 0; p < parts; ++p, ++slot) {
            const auto& s = plan.leaves[slot];
            const std::size_t dst = s.block_index * bs;
            if (!init.empty()) {
                for (unsigned k = 0; k < s.data_width; ++k) {
                    out[dst + k] = init[leaf.offset + p * 4 + k];
                }
            }
            if (mode == LayoutMode::Dmp8) {
                out[dst + 7] = 0xFF;
            }
        }
    }
    return out;
}

namespace {

std::string path_str(const std::vector<std::uint32_t>& path)
{
    std::string out;
    for (auto i : path) {
        out += fmt::format("[{}]", i);
    }
    return out.empty() ? "." : out;
}

}  // namespace

nlohmann::json plan_to_json(const LayoutPlan& plan)
{
    nlohmann::json leaves = nlohmann::json::array();
    for (const auto& s : plan.leaves) {
        leaves.push_back({{"path", s.path},
                          {"type", s.leaf_type.str()},
                          {"part", s.part},
                          {"block", s.block_index},
                          {"offset", s.block_index * block_size(plan.mode)},
                          {"width", s.data_width}});
    }
    return {{"type", plan.original.str()},
            {"mode", mode_name(plan.mode)},
            {"block_size", block_size(plan.mode)},
            {"total_blocks", plan.total_blocks},
            {"size", plan.size_bytes()},
            {"leaves", std::move(leaves)}};
}

std::string plan_table(const LayoutPlan& plan)
{
    std::string out = fmt::format("{} under {}: {} blocks, {} bytes\n", plan.original.str(), mode_name(plan.mode),
                                  plan.total_blocks, plan.size_bytes());
    out += fmt::format("{:<16} {:<6} {:>5} {:>7} {:>6}\n", "leaf", "type", "block", "offset", "width");
    for (const auto& s : plan.leaves) {
        std::string leaf = path_str(s.path);
        if (s.leaf_type.byte_width() > s.data_width) {
            leaf += s.part == 0 ? " lo" : " hi";
        }
        out += fmt::format("{:<16} {:<6} {:>5} {:>7} {:>6}\n", leaf, s.leaf_type.str(), s.block_index,
                           s.block_index * block_size(plan.mode), s.data_width);
    }
    return out;
}

}  // namespace memfresh::layout
