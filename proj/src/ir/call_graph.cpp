#include "memfresh/ir/call_graph.hpp"

#include <algorithm>

namespace memfresh::ir {

std::vector<std::string> CallGraph::callees(const std::string& caller) const
{
    std::vector<std::string> out;
    for (const auto& e : edges) {
        if (e.caller == caller && std::find(out.begin(), out.end(), e.callee) == out.end()) {
            out.push_back(e.callee);
        }
    }
    return out;
}

CallGraph build_call_graph(const Module& m)
{
    CallGraph g;
    for (const auto& f : m.functions) {
        g.nodes.push_back(f.name);
    }
    for (const auto& f : m.functions) {
        for (const auto& b : f.blocks) {
            for (const auto& in : b.instrs) {
                if (in.op != Opcode::Call) {
                    continue;
                }
                if (in.is_indirect_call()) {
                    g.indirect_sites.push_back({f.name, in.id});
                } else if (m.find_function(in.callee) != nullptr) {
                    g.edges.push_back({f.name, in.callee, in.id});
                }
            }
        }
    }
    return g;
}

std::set<std::string> call_closure(const CallGraph& g, const std::set<std::string>& roots)
{
    std::set<std::string> seen;
    std::vector<std::string> work(roots.begin(), roots.end());
    while (!work.empty()) {
        auto f = std::move(work.back());
        work.pop_back();
        if (!seen.insert(f).second) {
            continue;
        }
        for (auto& c : g.callees(f)) {
            if (!seen.count(c)) {
                work.push_back(std::move(c));
            }
        }
    }
    return seen;
}

std::set<std::string> protected_closure(const Module& m)
{
    std::set<std::string> roots;
    for (const auto& f : m.functions) {
        if (f.protect) {
            roots.insert(f.name);
        }
    }
    return call_closure(build_call_graph(m), roots);
}

}  // namespace memfresh::ir
