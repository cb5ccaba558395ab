#pragma once

#include <array>
#include <cstdint>
#include <string>

namespace memfresh::vm {

using Block16 = std::array<std::uint8_t, 16>;
using Digest = std::array<std::uint8_t, 16>;

/// Deterministic memory-encryption model: a keyed BLAKE2b-128 over
/// (block address, plaintext). Only equality of digests is observable, which
/// is all a ciphertext-reading attacker gets from real deterministic
/// encryption.
class Cipher {
public:
    explicit Cipher(std::uint64_t key_seed);

    /// Throws std::invalid_argument unless `block_address` is 16-byte aligned.
    Digest encrypt_block(std::uint64_t block_address, const Block16& plaintext) const;

private:
    std::array<std::uint8_t, 32> key_{};
};

std::string to_hex(const std::uint8_t* data, std::size_t n);
template <std::size_t N>
std::string to_hex(const std::array<std::uint8_t, N>& a)
{
    return to_hex(a.data(), N);
}

}  // namespace memfresh::vm
