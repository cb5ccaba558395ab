#include "memfresh/ir/type.hpp"

#include <fmt/format.h>

#include <stdexcept>

namespace memfresh::ir {

struct Type::Node {
    Kind kind = Kind::Void;
    unsigned bits = 0;
    std::uint64_t count = 0;
    unsigned block_size = 0;
    std::string name;
    Type element;
};

// A null node is the void type.
Type::Type() = default;

Type::Type(std::shared_ptr<const Node> node) : node_(std::move(node)) {}

bool is_valid_int_width(unsigned bits)
{
    return bits == 8 || bits == 16 || bits == 32 || bits == 64;
}

Type Type::void_type() { return Type(); }

Type Type::integer(unsigned bits)
{
    if (!is_valid_int_width(bits)) {
        throw std::invalid_argument(fmt::format("unsupported integer width i{}", bits));
    }
    auto n = std::make_shared<Node>();
    n->kind = Kind::Int;
    n->bits = bits;
    return Type(std::move(n));
}

Type Type::address()
{
    auto n = std::make_shared<Node>();
    n->kind = Kind::Addr;
    n->bits = 64;
    return Type(std::move(n));
}

Type Type::array(Type element, std::uint64_t count)
{
    if (count == 0) {
        throw std::invalid_argument("array count must be at least 1");
    }
    if (element.is_void()) {
        throw std::invalid_argument("array of void");
    }
    auto n = std::make_shared<Node>();
    n->kind = Kind::Array;
    n->count = count;
    n->element = std::move(element);
    return Type(std::move(n));
}

Type Type::named(std::string name)
{
    auto n = std::make_shared<Node>();
    n->kind = Kind::Named;
    n->name = std::move(name);
    return Type(std::move(n));
}

Type Type::block(Type data, unsigned block_size)
{
    if (block_size != 8 && block_size != 16) {
        throw std::invalid_argument(fmt::format("unsupported block size {}", block_size));
    }
    if (!data.is_primitive() || data.byte_width() > block_size / 2) {
        throw std::invalid_argument(
            fmt::format("{} does not fit the data chunk of a {}-byte block", data.str(), block_size));
    }
    auto n = std::make_shared<Node>();
    n->kind = Kind::Block;
    n->block_size = block_size;
    n->element = std::move(data);
    return Type(std::move(n));
}

Type::Kind Type::kind() const { return node_ ? node_->kind : Kind::Void; }

unsigned Type::bits() const
{
    if (!is_primitive()) {
        throw std::logic_error("bits() on non-primitive type " + str());
    }
    return node_->bits;
}

const Type& Type::element() const
{
    if (!is_array() && !is_block()) {
        throw std::logic_error("element() on " + str());
    }
    return node_->element;
}

std::uint64_t Type::count() const
{
    if (!is_array()) {
        throw std::logic_error("count() on " + str());
    }
    return node_->count;
}

const std::string& Type::name() const
{
    if (!is_named()) {
        throw std::logic_error("name() on " + str());
    }
    return node_->name;
}

unsigned Type::block_size() const
{
    if (!is_block()) {
        throw std::logic_error("block_size() on " + str());
    }
    return node_->block_size;
}

std::string Type::str() const
{
    switch (kind()) {
    case Kind::Void: return "void";
    case Kind::Int: return fmt::format("i{}", node_->bits);
    case Kind::Addr: return "addr";
    case Kind::Array: return fmt::format("[{} x {}]", node_->count, node_->element.str());
    case Kind::Named: return node_->name;
    case Kind::Block: return fmt::format("blk{}<{}>", node_->block_size, node_->element.str());
    }
    return "?";
}

bool operator==(const Type& a, const Type& b)
{
    if (a.node_ == b.node_) {
        return true;
    }
    if (a.kind() != b.kind()) {
        return false;
    }
    switch (a.kind()) {
    case Type::Kind::Void:
    case Type::Kind::Addr: return true;
    case Type::Kind::Int: return a.node_->bits == b.node_->bits;
    case Type::Kind::Array: return a.node_->count == b.node_->count && a.node_->element == b.node_->element;
    case Type::Kind::Named: return a.node_->name == b.node_->name;
    case Type::Kind::Block:
        return a.node_->block_size == b.node_->block_size && a.node_->element == b.node_->element;
    }
    return false;
}

}  // namespace memfresh::ir
