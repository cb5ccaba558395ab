#pragma once

#include "memfresh/vm/cipher.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace memfresh::vm {

enum class EventKind : std::uint8_t { Store, StoreSilenced, Load, Alloc, Free, PrefetchCandidate };

std::string_view event_kind_name(EventKind k);
EventKind event_kind_from_name(std::string_view s);

enum class RegionKind : std::uint8_t { Global, Stack, Heap, Shadow };

std::string_view region_kind_name(RegionKind k);
RegionKind region_kind_from_name(std::string_view s);

struct BlockDigest {
    std::uint64_t block = 0;
    Digest before{};
    Digest after{};
};

/// One memory event. Events produced by the same instruction share its step.
///  - store / store-silenced: `before`/`after` hold the `width` bytes at `addr`
///    before and after (for a silenced store they are equal); one digest
///    per touched 16-byte block; `chunk_count` > 0 when silent stores are
///    modeled, with bit k of `chunk_mask` set iff chunk k was suppressed.
///  - load: `after` holds the bytes read.
///  - alloc: `width` is the region size, `init` its initial bytes (empty means
///    all zero).
///  - prefetch-candidate: `addr` is the scanned 8-byte word, `candidate` its
///    value.
struct TraceEvent {
    std::uint64_t step = 0;
    std::uint32_t instr_id = 0;
    EventKind kind = EventKind::Store;
    std::uint64_t addr = 0;
    std::uint64_t width = 0;
    Block16 before{};
    Block16 after{};
    std::uint8_t digest_count = 0;
    std::array<BlockDigest, 2> digests{};
    std::uint16_t chunk_mask = 0;
    std::uint8_t chunk_count = 0;
    bool shadow = false;
    bool protected_region = false;
    std::uint64_t candidate = 0;
    RegionKind region = RegionKind::Heap;
    std::string label;
    std::vector<std::uint8_t> init;

    bool is_store() const { return kind == EventKind::Store || kind == EventKind::StoreSilenced; }
    unsigned byte_count() const { return static_cast<unsigned>(std::min<std::uint64_t>(width, 16)); }
};

/// Metadata written as the first line of a trace file.
struct TraceHeader {
    nlohmann::ordered_json config;  // config_to_json of the run
    std::uint64_t counter_seed = 0;
    std::string entry;
    std::vector<std::uint64_t> args;

    std::optional<unsigned> granularity() const;
    bool dmp_enabled() const;
};

using TraceSink = std::function<void(const TraceEvent&)>;

nlohmann::ordered_json header_to_json(const TraceHeader& h);
nlohmann::ordered_json event_to_json(const TraceEvent& e);
TraceEvent event_from_json(const nlohmann::json& j);

/// Streams events to `out`, one JSON object per line.
class TraceWriter {
public:
    TraceWriter(std::ostream& out, const TraceHeader& header);
    void write(const TraceEvent& e);

private:
    std::ostream& out_;
};

struct Trace {
    TraceHeader header;
    std::vector<TraceEvent> events;
};

/// Throws std::runtime_error naming the offending line on malformed input.
Trace read_trace(std::istream& in);
Trace read_trace_file(const std::string& path);

}  // namespace memfresh::vm
