#include "memfresh/vm/cipher.hpp"

#include <sodium.h>

#include <stdexcept>

namespace memfresh::vm {

namespace {

void ensure_sodium()
{
    static const int rc = sodium_init();
    if (rc < 0) {
        throw std::runtime_error("libsodium failed to initialize");
    }
}

}  // namespace

Cipher::Cipher(std::uint64_t key_seed)
{
    ensure_sodium();
    std::array<std::uint8_t, 8> seed{};
    for (int i = 0; i < 8; ++i) {
        seed[i] = static_cast<std::uint8_t>(key_seed >> (8 * i));
    }
    static constexpr char kContext[] = "memfresh memory key";
    crypto_generichash_state st;
    crypto_generichash_init(&st, nullptr, 0, key_.size());
    crypto_generichash_update(&st, reinterpret_cast<const unsigned char*>(kContext), sizeof(kContext) - 1);
    crypto_generichash_update(&st, seed.data(), seed.size());
    crypto_generichash_final(&st, key_.data(), key_.size());
}

Digest Cipher::encrypt_block(std::uint64_t block_address, const Block16& plaintext) const
{
    if (block_address % 16 != 0) {
        throw std::invalid_argument("encrypt_block: address is not 16-byte aligned");
    }
    std::array<std::uint8_t, 24> msg{};
    for (int i = 0; i < 8; ++i) {
        msg[i] = static_cast<std::uint8_t>(block_address >> (8 * i));
    }
    std::copy(plaintext.begin(), plaintext.end(), msg.begin() + 8);
    Digest out{};
    crypto_generichash(out.data(), out.size(), msg.data(), msg.size(), key_.data(), key_.size());
    return out;
}

std::string to_hex(const std::uint8_t* data, std::size_t n)
{
    static constexpr char kDigits[] = "0123456789abcdef";
    std::string s(n * 2, '0');
    for (std::size_t i = 0; i < n; ++i) {
        s[2 * i] = kDigits[data[i] >> 4];
        s[2 * i + 1] = kDigits[data[i] & 0xF];
    }
    return s;
}

}  // namespace memfresh::vm
