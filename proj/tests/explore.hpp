#pragma once

// Bounded exhaustive interleaving explorer for sans-IO node state machines.
// Worlds are copyable snapshots exposing labeled actions; the explorer walks
// the action tree depth-first with fingerprint dedup. Used as the
// independent oracle for agreement safety at small scale.

#include <functional>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "spectrum/plugin.hpp"

namespace spectrum::testing {

struct ExploreMsg {
    NodeId src = 0;
    NodeId dst = 0;
    std::string payload;

    std::string label() const {
        return std::to_string(src) + ">" + std::to_string(dst) + ":" + payload;
    }
};

struct ExploreStats {
    size_t states = 0;
    size_t quiescent = 0;
    bool truncated = false;
};

// World requirements:
//   World(const World&)            deep copy
//   std::vector<std::string> enabled_actions() const
//   void apply(const std::string&)
//   std::string fingerprint() const
template <typename World>
ExploreStats explore(const World& init, int max_depth,
                     const std::function<void(const World&)>& invariant,
                     const std::function<void(const World&)>& on_quiescent,
                     size_t max_states = 400000) {
    ExploreStats stats;
    std::set<size_t> seen;
    std::hash<std::string> hasher;

    struct Frame {
        World world;
        std::vector<std::string> actions;
        size_t next = 0;
        Frame(World w, std::vector<std::string> a) : world(std::move(w)), actions(std::move(a)) {}
    };

    std::vector<std::unique_ptr<Frame>> stack;
    invariant(init);
    seen.insert(hasher(init.fingerprint()));
    stack.push_back(std::make_unique<Frame>(init, init.enabled_actions()));
    if (stack.back()->actions.empty()) {
        ++stats.quiescent;
        on_quiescent(init);
        return stats;
    }

    while (!stack.empty()) {
        Frame& top = *stack.back();
        if (top.next >= top.actions.size() ||
            static_cast<int>(stack.size()) > max_depth) {
            if (static_cast<int>(stack.size()) > max_depth) stats.truncated = true;
            stack.pop_back();
            continue;
        }
        if (stats.states >= max_states) {
            stats.truncated = true;
            break;
        }
        std::string action = top.actions[top.next++];
        World next = top.world;
        next.apply(action);
        size_t h = hasher(next.fingerprint());
        if (!seen.insert(h).second) continue;
        ++stats.states;
        invariant(next);
        auto actions = next.enabled_actions();
        if (actions.empty()) {
            ++stats.quiescent;
            on_quiescent(next);
            continue;
        }
        stack.push_back(std::make_unique<Frame>(std::move(next), std::move(actions)));
    }
    return stats;
}

// Deduplicate pending deliveries: identical (src,dst,payload) triples are
// interchangeable, so only the first index of each label becomes an action.
inline std::vector<std::string> delivery_actions(const std::vector<ExploreMsg>& pending,
                                                 const std::vector<bool>& crashed) {
    std::vector<std::string> out;
    std::set<std::string> dedup;
    for (size_t i = 0; i < pending.size(); ++i) {
        if (crashed[pending[i].dst]) continue;
        if (dedup.insert(pending[i].label()).second) out.push_back("m" + std::to_string(i));
    }
    return out;
}

}  // namespace spectrum::testing
