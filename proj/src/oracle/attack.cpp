#include "memfresh/oracle/attack.hpp"

#include <fmt/format.h>

#include <cstring>
#include <stdexcept>

namespace memfresh::oracle {

using vm::EventKind;
using vm::TraceEvent;

namespace {

bool touches(const TraceEvent& e, std::uint64_t block)
{
    for (unsigned d = 0; d < e.digest_count; ++d) {
        if (e.digests[d].block == block) return true;
    }
    return false;
}

const vm::BlockDigest& digest_for(const TraceEvent& e, std::uint64_t block)
{
    for (unsigned d = 0; d < e.digest_count; ++d) {
        if (e.digests[d].block == block) return e.digests[d];
    }
    throw std::logic_error("store does not touch block");
}

std::vector<const TraceEvent*> stores_to(const std::vector<TraceEvent>& trace, std::uint64_t addr)
{
    const std::uint64_t blk = addr & ~std::uint64_t{15};
    std::vector<const TraceEvent*> out;
    for (const auto& e : trace) {
        if (e.is_store() && !e.shadow && touches(e, blk)) out.push_back(&e);
    }
    return out;
}

void score(AttackResult& r)
{
    std::size_t hits = 0;
    for (std::size_t i = 0; i < r.ground_truth.size(); ++i) {
        if (i < r.recovered.size() && r.recovered[i] == r.ground_truth[i]) ++hits;
    }
    r.accuracy = r.ground_truth.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(r.ground_truth.size());
}

}  // namespace

std::vector<int> secret_bits(std::uint64_t secrets, std::size_t n)
{
    std::vector<int> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<int>((secrets >> (i & 63)) & 1);
    return out;
}

nlohmann::ordered_json attack_to_json(const AttackResult& r)
{
    std::string rec, gt;
    for (int b : r.recovered) rec += b ? '1' : '0';
    for (int b : r.ground_truth) gt += b ? '1' : '0';
    return {{"recovered", rec}, {"ground_truth", gt}, {"accuracy", r.accuracy}};
}

AttackResult recover_ctswap_secret(const std::vector<TraceEvent>& trace, std::uint64_t addr_a, std::uint64_t addr_b,
                                   const std::vector<int>& ground_truth, const AttackOptions& options)
{
    const std::uint64_t blk = addr_a & ~std::uint64_t{15};
    auto obs = stores_to(trace, addr_a);
    if (obs.empty()) {
        throw std::invalid_argument(fmt::format("no store touches {:#x}", addr_a));
    }
    if (stores_to(trace, addr_b).empty()) {
        throw std::invalid_argument(fmt::format("no store touches {:#x}", addr_b));
    }
    if (options.filter_dummies) {
        std::vector<const TraceEvent*> kept;
        for (std::size_t i = 1; i < obs.size(); i += 2) kept.push_back(obs[i]);
        obs = std::move(kept);
    }
    AttackResult r;
    r.ground_truth = ground_truth;
    for (std::size_t i = 0; i < ground_truth.size(); ++i) {
        const std::size_t j = i * options.stride + options.phase;
        if (j >= obs.size()) break;
        const auto& now = digest_for(*obs[j], blk).after;
        const auto& prev = j > 0 ? digest_for(*obs[j - 1], blk).after : digest_for(*obs[j], blk).before;
        r.recovered.push_back(now != prev ? 1 : 0);
    }
    score(r);
    return r;
}

Dictionary build_dictionary(const std::vector<TraceEvent>& trace, std::uint64_t address, std::size_t profile_stores)
{
    const std::uint64_t blk = address & ~std::uint64_t{15};
    Dictionary dict;
    std::size_t seen = 0;
    for (const auto* e : stores_to(trace, address)) {
        if (seen++ >= profile_stores) break;
        std::uint64_t v = 0;
        std::memcpy(&v, e->after.data(), std::min(8u, e->byte_count()));
        dict.emplace(digest_for(*e, blk).after, v);
    }
    return dict;
}

std::vector<std::optional<std::uint64_t>> dictionary_attack(const std::vector<TraceEvent>& trace,
                                                            std::uint64_t address, const Dictionary& dict,
                                                            std::size_t skip)
{
    const std::uint64_t blk = address & ~std::uint64_t{15};
    const auto obs = stores_to(trace, address);
    if (obs.empty()) {
        throw std::invalid_argument(fmt::format("no store touches {:#x}", address));
    }
    std::vector<std::optional<std::uint64_t>> out;
    for (std::size_t i = skip; i < obs.size(); ++i) {
        auto it = dict.find(digest_for(*obs[i], blk).after);
        out.push_back(it == dict.end() ? std::nullopt : std::optional<std::uint64_t>(it->second));
    }
    return out;
}

AttackResult recover_dmp_secret(const std::vector<TraceEvent>& trace, std::uint64_t addr_a,
                                const std::vector<int>& ground_truth, const AttackOptions& options)
{
    std::vector<const TraceEvent*> loads;
    std::map<std::uint64_t, bool> hit_at_step;
    for (const auto& e : trace) {
        if (e.kind == EventKind::Load && e.addr == addr_a) loads.push_back(&e);
        if (e.kind == EventKind::PrefetchCandidate && e.addr >= addr_a && e.addr < addr_a + 8) {
            hit_at_step[e.step] = true;
        }
    }
    if (loads.empty()) {
        throw std::invalid_argument(fmt::format("no load of {:#x} in the trace", addr_a));
    }
    AttackResult r;
    r.ground_truth = ground_truth;
    for (std::size_t i = 0; i < ground_truth.size(); ++i) {
        const std::size_t j = i * options.stride + options.phase;
        if (j >= loads.size()) break;
        r.recovered.push_back(hit_at_step.count(loads[j]->step) ? 1 : 0);
    }
    score(r);
    return r;
}

}  // namespace memfresh::oracle
