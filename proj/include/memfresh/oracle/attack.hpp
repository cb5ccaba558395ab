#pragma once

#include "memfresh/vm/trace.hpp"

#include <nlohmann/json.hpp>

#include <map>
#include <optional>
#include <vector>

namespace memfresh::oracle {

struct AttackResult {
    std::vector<int> recovered;
    std::vector<int> ground_truth;
    double accuracy = 0.0;
};

nlohmann::ordered_json attack_to_json(const AttackResult& r);

/// Secret bits as the corpus programs consume them: bit i of the run is
/// bit (i mod 64) of `secrets`.
std::vector<int> secret_bits(std::uint64_t secrets, std::size_t n);

struct AttackOptions {
    // Iteration i is judged at observation i * stride + phase.
    std::size_t stride = 2;
    std::size_t phase = 1;
    // Drop every first store of a pair (cio dummy writes).
    bool filter_dummies = false;
};

/// Collision attack on a conditional swap: bit i = 1 iff the ciphertext of
/// addr_a's block changed at the observed store of iteration i. Throws
/// std::invalid_argument when no store touches either address.
AttackResult recover_ctswap_secret(const std::vector<vm::TraceEvent>& trace, std::uint64_t addr_a,
                                   std::uint64_t addr_b, const std::vector<int>& ground_truth,
                                   const AttackOptions& options = {});

using Dictionary = std::map<vm::Digest, std::uint64_t>;

/// Maps the block digest after each of the first `profile_stores` stores to
/// `address` onto the value written there.
Dictionary build_dictionary(const std::vector<vm::TraceEvent>& trace, std::uint64_t address,
                            std::size_t profile_stores);

/// Value per store to `address` after the first `skip` stores, or empty
/// when the digest is not in the dictionary. Throws std::invalid_argument when
/// no store touches `address`.
std::vector<std::optional<std::uint64_t>> dictionary_attack(const std::vector<vm::TraceEvent>& trace,
                                                            std::uint64_t address, const Dictionary& dict,
                                                            std::size_t skip = 0);

/// DMP attack: bit i = 1 iff the observed load of addr_a in iteration i
/// produced a prefetch candidate sourced from addr_a's word.
AttackResult recover_dmp_secret(const std::vector<vm::TraceEvent>& trace, std::uint64_t addr_a,
                                const std::vector<int>& ground_truth, const AttackOptions& options = {});

}  // namespace memfresh::oracle
