#pragma once

#include <cstdint>
#include <memory>
#include <string>

namespace memfresh::ir {

/// Immutable type expression. Copies share the underlying node.
///
/// Besides the source-level types (integers, `addr`, arrays and named
/// aggregates) there is a `Block` kind that only appears in hardened modules:
/// `blk16<T>` / `blk8<T>` is one memory-encryption block holding a single data
/// chunk of primitive type T next to its freshness field.
class Type {
public:
    enum class Kind : std::uint8_t { Void, Int, Addr, Array, Named, Block };

    Type();

    static Type void_type();
    static Type integer(unsigned bits);
    static Type i8() { return integer(8); }
    static Type i16() { return integer(16); }
    static Type i32() { return integer(32); }
    static Type i64() { return integer(64); }
    static Type address();
    static Type array(Type element, std::uint64_t count);
    static Type named(std::string name);
    static Type block(Type data, unsigned block_size);

    Kind kind() const;
    bool is_void() const { return kind() == Kind::Void; }
    bool is_int() const { return kind() == Kind::Int; }
    bool is_addr() const { return kind() == Kind::Addr; }
    bool is_array() const { return kind() == Kind::Array; }
    bool is_named() const { return kind() == Kind::Named; }
    bool is_block() const { return kind() == Kind::Block; }
    // Integers and addresses: the values a register can hold.
    bool is_primitive() const { return is_int() || is_addr(); }

    unsigned bits() const;
    unsigned byte_width() const { return bits() / 8; }
    const Type& element() const;
    std::uint64_t count() const;
    const std::string& name() const;
    unsigned block_size() const;

    std::string str() const;

    friend bool operator==(const Type& a, const Type& b);
    friend bool operator!=(const Type& a, const Type& b) { return !(a == b); }

private:
    struct Node;
    explicit Type(std::shared_ptr<const Node> node);
    std::shared_ptr<const Node> node_;
};

bool is_valid_int_width(unsigned bits);

}  // namespace memfresh::ir
