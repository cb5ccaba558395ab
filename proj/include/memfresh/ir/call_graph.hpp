#pragma once

#include "memfresh/ir/module.hpp"

#include <set>
#include <string>
#include <vector>

namespace memfresh::ir {

struct CallSite {
    std::string caller;
    std::string callee;
    std::uint32_t instr_id = 0;
};

struct IndirectSite {
    std::string caller;
    std::uint32_t instr_id = 0;
};

/// Direct call sites are edges; calls through a register are listed
/// separately and never contribute edges.
struct CallGraph {
    std::vector<std::string> nodes;
    std::vector<CallSite> edges;
    std::vector<IndirectSite> indirect_sites;

    std::vector<std::string> callees(const std::string& caller) const;
};

CallGraph build_call_graph(const Module& m);

/// Functions reachable from `roots` over direct call edges, roots included.
std::set<std::string> call_closure(const CallGraph& g, const std::set<std::string>& roots);

/// Closure of the functions carrying `protect`.
std::set<std::string> protected_closure(const Module& m);

}  // namespace memfresh::ir
