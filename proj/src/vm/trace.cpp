#include "memfresh/vm/trace.hpp"

#include "memfresh/vm/config.hpp"

#include <fmt/format.h>

#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace memfresh::vm {

namespace {

constexpr std::array<std::string_view, 6> kEventNames{"store", "store-silenced", "load", "alloc", "free",
                                                      "prefetch-candidate"};
constexpr std::array<std::string_view, 4> kRegionNames{"global", "stack", "heap", "shadow"};

std::string hex_addr(std::uint64_t a) { return fmt::format("{:#x}", a); }

std::uint64_t parse_addr(const nlohmann::json& j)
{
    const auto s = j.get<std::string>();
    std::size_t used = 0;
    const auto v = std::stoull(s, &used, 16);
    if (used != s.size()) {
        throw std::invalid_argument("bad address " + s);
    }
    return v;
}

std::vector<std::uint8_t> parse_hex(std::string_view s)
{
    if (s.size() % 2 != 0) {
        throw std::invalid_argument("odd-length hex string");
    }
    auto nib = [](char c) -> int {
        if (c >= '0' && c <= '9') return c - '0';
        if (c >= 'a' && c <= 'f') return c - 'a' + 10;
        if (c >= 'A' && c <= 'F') return c - 'A' + 10;
        throw std::invalid_argument("non-hex character");
    };
    std::vector<std::uint8_t> out(s.size() / 2);
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = static_cast<std::uint8_t>(nib(s[2 * i]) * 16 + nib(s[2 * i + 1]));
    }
    return out;
}

template <std::size_t N>
std::array<std::uint8_t, N> parse_fixed(const nlohmann::json& j)
{
    const auto v = parse_hex(j.get<std::string>());
    if (v.size() > N) {
        throw std::invalid_argument("hex field too long");
    }
    std::array<std::uint8_t, N> out{};
    std::copy(v.begin(), v.end(), out.begin());
    return out;
}

}  // namespace

std::string_view event_kind_name(EventKind k) { return kEventNames[static_cast<std::size_t>(k)]; }

EventKind event_kind_from_name(std::string_view s)
{
    for (std::size_t i = 0; i < kEventNames.size(); ++i) {
        if (kEventNames[i] == s) return static_cast<EventKind>(i);
    }
    throw std::invalid_argument(fmt::format("unknown event kind '{}'", s));
}

std::string_view region_kind_name(RegionKind k) { return kRegionNames[static_cast<std::size_t>(k)]; }

RegionKind region_kind_from_name(std::string_view s)
{
    for (std::size_t i = 0; i < kRegionNames.size(); ++i) {
        if (kRegionNames[i] == s) return static_cast<RegionKind>(i);
    }
    throw std::invalid_argument(fmt::format("unknown region kind '{}'", s));
}

std::optional<unsigned> TraceHeader::granularity() const
{
    if (!config.contains("silent_granularity") || !config["silent_granularity"].is_number()) {
        return std::nullopt;
    }
    return config["silent_granularity"].get<unsigned>();
}

bool TraceHeader::dmp_enabled() const
{
    return config.contains("dmp_enabled") && config["dmp_enabled"].get<bool>();
}

nlohmann::ordered_json header_to_json(const TraceHeader& h)
{
    nlohmann::ordered_json body;
    body["tool"] = kToolName;
    body["version"] = kToolVersion;
    body["seeds"] = {{"cipher_key", h.config.value("cipher_key_seed", std::uint64_t{0})},
                     {"counter", h.counter_seed}};
    body["entry"] = h.entry;
    body["args"] = h.args;
    body["config"] = h.config;
    body["config_hash"] = json_hash(h.config);
    return {{"header", std::move(body)}};
}

nlohmann::ordered_json event_to_json(const TraceEvent& e)
{
    nlohmann::ordered_json j;
    j["step"] = e.step;
    j["instr_id"] = e.instr_id;
    j["kind"] = event_kind_name(e.kind);
    j["addr"] = hex_addr(e.addr);
    j["width"] = e.width;
    const bool has_bytes = e.is_store() || e.kind == EventKind::Load;
    j["before"] = e.is_store() ? to_hex(e.before.data(), e.byte_count()) : "";
    j["after"] = has_bytes ? to_hex(e.after.data(), e.byte_count()) : "";
    auto digests = nlohmann::ordered_json::array();
    for (unsigned i = 0; i < e.digest_count; ++i) {
        nlohmann::ordered_json d;
        d["block"] = hex_addr(e.digests[i].block);
        d["before"] = to_hex(e.digests[i].before);
        d["after"] = to_hex(e.digests[i].after);
        digests.push_back(std::move(d));
    }
    j["digests"] = std::move(digests);
    if (e.chunk_count > 0) {
        j["chunks"] = {{"count", e.chunk_count}, {"suppressed", e.chunk_mask}};
    }
    if (e.shadow) {
        j["shadow"] = true;
    }
    switch (e.kind) {
    case EventKind::Alloc:
        j["region"] = region_kind_name(e.region);
        j["protected"] = e.protected_region;
        j["label"] = e.label;
        if (!e.init.empty()) {
            j["init"] = to_hex(e.init.data(), e.init.size());
        }
        break;
    case EventKind::PrefetchCandidate:
        j["candidate"] = hex_addr(e.candidate);
        j["source"] = hex_addr(e.addr);
        j["protected"] = e.protected_region;
        break;
    default: break;
    }
    return j;
}

TraceEvent event_from_json(const nlohmann::json& j)
{
    TraceEvent e;
    e.step = j.at("step").get<std::uint64_t>();
    e.instr_id = j.at("instr_id").get<std::uint32_t>();
    e.kind = event_kind_from_name(j.at("kind").get<std::string>());
    e.addr = parse_addr(j.at("addr"));
    e.width = j.at("width").get<std::uint64_t>();
    e.before = parse_fixed<16>(j.at("before"));
    e.after = parse_fixed<16>(j.at("after"));
    const auto& ds = j.at("digests");
    if (ds.size() > 2) {
        throw std::invalid_argument("more than two digests");
    }
    for (const auto& d : ds) {
        auto& out = e.digests[e.digest_count++];
        out.block = parse_addr(d.at("block"));
        out.before = parse_fixed<16>(d.at("before"));
        out.after = parse_fixed<16>(d.at("after"));
    }
    if (auto it = j.find("chunks"); it != j.end()) {
        e.chunk_count = it->at("count").get<std::uint8_t>();
        e.chunk_mask = it->at("suppressed").get<std::uint16_t>();
    }
    e.shadow = j.value("shadow", false);
    e.protected_region = j.value("protected", false);
    if (auto it = j.find("region"); it != j.end()) {
        e.region = region_kind_from_name(it->get<std::string>());
    }
    if (auto it = j.find("label"); it != j.end()) {
        e.label = it->get<std::string>();
    }
    if (auto it = j.find("init"); it != j.end()) {
        e.init = parse_hex(it->get<std::string>());
    }
    if (auto it = j.find("candidate"); it != j.end()) {
        e.candidate = parse_addr(*it);
    }
    return e;
}

TraceWriter::TraceWriter(std::ostream& out, const TraceHeader& header) : out_(out)
{
    out_ << header_to_json(header).dump() << '\n';
}

void TraceWriter::write(const TraceEvent& e) { out_ << event_to_json(e).dump() << '\n'; }

Trace read_trace(std::istream& in)
{
    Trace t;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) {
            continue;
        }
        try {
            const auto j = nlohmann::json::parse(line);
            if (j.contains("header")) {
                if (lineno != 1) {
                    throw std::invalid_argument("header must be the first line");
                }
                const auto& h = j["header"];
                t.header.config = h.at("config");
                t.header.counter_seed = h.at("seeds").at("counter").get<std::uint64_t>();
                t.header.entry = h.value("entry", "");
                t.header.args = h.value("args", std::vector<std::uint64_t>{});
                continue;
            }
            t.events.push_back(event_from_json(j));
        } catch (const std::exception& e) {
            throw std::runtime_error(fmt::format("trace line {}: {}", lineno, e.what()));
        }
    }
    return t;
}

Trace read_trace_file(const std::string& path)
{
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open trace " + path);
    }
    return read_trace(in);
}

}  // namespace memfresh::vm
