#pragma once

#include <algorithm>
#include <cassert>
#include <compare>
#include <cstdint>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "spectrum/wire.hpp"

// Shared vocabulary: commands with key-set commutativity, the conflict
// relation, command structures (C-structs) with commute-aware equivalence,
// quorum arithmetic and era/epoch identifiers.

namespace spectrum {

using NodeId = int;
using EraId = int;
using Slot = long long;

// Epochs order competing proposers for the same era's switch decision.
// Encoded as counter * N + node so that epochs from distinct nodes never
// collide and the owner is recoverable from the value.
using Epoch = long long;

inline NodeId epoch_owner(Epoch e, int n) { return static_cast<NodeId>(e % n); }
inline Epoch next_epoch_for(Epoch at_least, NodeId self, int n) {
    Epoch counter = at_least / n + 1;
    return counter * n + self;
}

enum class ProtocolKind { Monarchic = 0, Oligarchic = 1, Democratic = 2 };

inline const char* to_string(ProtocolKind k) {
    switch (k) {
        case ProtocolKind::Monarchic: return "MONARCHIC";
        case ProtocolKind::Oligarchic: return "OLIGARCHIC";
        case ProtocolKind::Democratic: return "DEMOCRATIC";
    }
    return "?";
}

inline bool parse_protocol_kind(std::string_view s, ProtocolKind& out) {
    if (s == "MONARCHIC") { out = ProtocolKind::Monarchic; return true; }
    if (s == "OLIGARCHIC") { out = ProtocolKind::Oligarchic; return true; }
    if (s == "DEMOCRATIC") { out = ProtocolKind::Democratic; return true; }
    return false;
}

// Any majority; two classic quorums always intersect.
inline int classic_quorum_size(int n) {
    assert(n >= 1);
    return n / 2 + 1;
}

// Enables two-delay decisions in the democratic family.
inline int fast_quorum_size(int n) {
    assert(n >= 1);
    return (3 * n + 3) / 4;
}

// Stable across client retransmissions of the same logical command.
struct CommandId {
    uint32_t client = 0;
    uint32_t seq = 0;

    auto operator<=>(const CommandId&) const = default;

    std::string text() const {
        return std::to_string(client) + "." + std::to_string(seq);
    }
    static CommandId parse(std::string_view s) {
        size_t dot = s.find('.');
        CommandId id;
        id.client = static_cast<uint32_t>(wire::to_int(s.substr(0, dot)));
        if (dot != std::string_view::npos)
            id.seq = static_cast<uint32_t>(wire::to_int(s.substr(dot + 1)));
        return id;
    }
};

// Reserved client ids. Real clients start at kFirstClientId.
constexpr uint32_t kTerminateClient = 0;
constexpr uint32_t kNoopClient = 1;
constexpr uint32_t kFirstClientId = 1000;

enum class CommandKind { Client, Terminate, Switch };

inline const char* to_string(CommandKind k) {
    switch (k) {
        case CommandKind::Client: return "Client";
        case CommandKind::Terminate: return "Terminate";
        case CommandKind::Switch: return "Switch";
    }
    return "?";
}

struct Command {
    CommandId id;
    CommandKind kind = CommandKind::Client;
    bool all_keys = false;              // Terminate conflicts with everything
    std::vector<std::string> keys;      // sorted, unique, no ',' '|' or spaces
    std::string payload;                // opaque bytes (Client only)
    ProtocolKind switch_target = ProtocolKind::Monarchic;  // Switch only

    bool is_noop() const { return kind == CommandKind::Client && id.client == kNoopClient; }

    static Command client(CommandId id, std::vector<std::string> keys, std::string payload = {}) {
        Command c;
        c.id = id;
        c.kind = CommandKind::Client;
        c.keys = std::move(keys);
        std::sort(c.keys.begin(), c.keys.end());
        c.keys.erase(std::unique(c.keys.begin(), c.keys.end()), c.keys.end());
        c.payload = std::move(payload);
        return c;
    }

    static Command terminate(EraId era) {
        Command c;
        c.id = {kTerminateClient, static_cast<uint32_t>(era)};
        c.kind = CommandKind::Terminate;
        c.all_keys = true;
        return c;
    }

    static Command switch_to(ProtocolKind target) {
        Command c;
        c.id = {0, 0};
        c.kind = CommandKind::Switch;
        c.switch_target = target;
        return c;
    }

    static Command noop(uint32_t seq) {
        Command c;
        c.id = {kNoopClient, seq};
        return c;
    }

    // Canonical text: `cmd_id|kind|sorted_keys_or_ALL|payload_hex`.
    // Switch targets travel in the payload field.
    std::string text() const {
        std::string out = id.text();
        out.push_back('|');
        out += to_string(kind);
        out.push_back('|');
        if (all_keys) {
            out += "ALL";
        } else {
            for (size_t i = 0; i < keys.size(); ++i) {
                if (i) out.push_back(',');
                out += keys[i];
            }
        }
        out.push_back('|');
        if (kind == CommandKind::Switch)
            out += wire::to_hex(to_string(switch_target));
        else
            out += wire::to_hex(payload);
        return out;
    }

    static Command parse(std::string_view s) {
        auto parts = wire::split(s, '|');
        Command c;
        if (parts.size() != 4) return c;
        c.id = CommandId::parse(parts[0]);
        if (parts[1] == "Terminate") c.kind = CommandKind::Terminate;
        else if (parts[1] == "Switch") c.kind = CommandKind::Switch;
        else c.kind = CommandKind::Client;
        if (parts[2] == "ALL") {
            c.all_keys = true;
        } else if (!parts[2].empty()) {
            for (auto k : wire::split(parts[2], ','))
                c.keys.emplace_back(k);
        }
        std::string bytes = wire::from_hex(parts[3]);
        if (c.kind == CommandKind::Switch)
            parse_protocol_kind(bytes, c.switch_target);
        else
            c.payload = std::move(bytes);
        return c;
    }
};

using CommandPtr = std::shared_ptr<const Command>;

// a ~ b iff their key sets intersect; ALL intersects every non-empty set
// (and ALL itself) but not the empty set.
inline bool conflicts(const Command& a, const Command& b) {
    if (a.all_keys && b.all_keys) return true;
    if (a.all_keys) return !b.keys.empty();
    if (b.all_keys) return !a.keys.empty();
    // both sorted: linear merge scan
    size_t i = 0, j = 0;
    while (i < a.keys.size() && j < b.keys.size()) {
        int c = a.keys[i].compare(b.keys[j]);
        if (c == 0) return true;
        if (c < 0) ++i; else ++j;
    }
    return false;
}

// Decided command structure. Append-only; equality is up to permutation of
// adjacent non-conflicting commands.
struct CStruct {
    std::vector<Command> seq;

    CStruct& append(Command c) {
        seq.push_back(std::move(c));
        return *this;
    }
};

// Equal multisets and, for every conflicting pair present in both, the same
// relative order. Equivalent to reachability by adjacent commuting swaps
// (cross-checked against a permutation search in the tests).
inline bool cstruct_equivalent(const CStruct& a, const CStruct& b) {
    if (a.seq.size() != b.seq.size()) return false;
    std::map<CommandId, size_t> pos_b;
    for (size_t i = 0; i < b.seq.size(); ++i) {
        if (!pos_b.emplace(b.seq[i].id, i).second) return false;  // dup id
    }
    std::vector<size_t> mapped(a.seq.size());
    for (size_t i = 0; i < a.seq.size(); ++i) {
        auto it = pos_b.find(a.seq[i].id);
        if (it == pos_b.end()) return false;
        mapped[i] = it->second;
    }
    for (size_t i = 0; i < a.seq.size(); ++i)
        for (size_t j = i + 1; j < a.seq.size(); ++j)
            if (mapped[i] > mapped[j] && conflicts(a.seq[i], a.seq[j]))
                return false;
    return true;
}

namespace detail {

// Constraint graph for prefix consistency. Two histories are prefixes of a
// common C-struct iff the union of their ordering obligations is acyclic:
// each history orders its own conflicting pairs, and every command it holds
// precedes any conflicting command it does not hold (appends come after).
//
// Conflicts decompose per key, so obligations are encoded as per-key chains
// plus one edge from each chain tail to the other history's later commands
// on that key. ALL commands join every key bucket plus a marker bucket that
// orders ALL commands against each other.
class PrefixGraph {
public:
    static constexpr std::string_view kAllMarker = "\x01";

    void add_history(const std::vector<const Command*>& h,
                     const std::vector<const Command*>& other) {
        std::set<CommandId> mine;
        for (auto* c : h) mine.insert(c->id);

        std::set<std::string_view> universe;  // real keys from both sides
        for (auto* c : h)
            for (const auto& k : c->keys) universe.insert(k);
        for (auto* c : other)
            for (const auto& k : c->keys) universe.insert(k);

        std::map<std::string_view, std::vector<const Command*>> h_buckets;
        std::map<std::string_view, std::vector<const Command*>> o_buckets;
        auto fill = [&](const std::vector<const Command*>& src, auto& buckets) {
            for (auto* c : src) {
                if (c->all_keys) {
                    buckets[kAllMarker].push_back(c);
                    for (auto k : universe) buckets[k].push_back(c);
                } else {
                    for (const auto& k : c->keys) buckets[std::string_view(k)].push_back(c);
                }
            }
        };
        fill(h, h_buckets);
        fill(other, o_buckets);

        for (auto& [k, chain] : h_buckets) {
            for (size_t i = 0; i + 1 < chain.size(); ++i)
                add_edge(chain[i]->id, chain[i + 1]->id);
            const Command* last = chain.back();
            auto it = o_buckets.find(k);
            if (it == o_buckets.end()) continue;
            for (auto* z : it->second)
                if (!mine.count(z->id)) add_edge(last->id, z->id);
        }
    }

    bool acyclic() {
        // iterative DFS three-color
        std::map<CommandId, int> color;
        for (auto& [n, _] : adj_) color[n] = 0;
        for (auto& [n, _] : adj_) {
            if (color[n] != 0) continue;
            std::vector<std::pair<CommandId, size_t>> stack{{n, 0}};
            color[n] = 1;
            while (!stack.empty()) {
                auto& [u, idx] = stack.back();
                auto& edges = adj_[u];
                if (idx < edges.size()) {
                    CommandId v = edges[idx++];
                    int& cv = color[v];
                    if (cv == 1) return false;
                    if (cv == 0) {
                        cv = 1;
                        stack.push_back({v, 0});
                    }
                } else {
                    color[u] = 2;
                    stack.pop_back();
                }
            }
        }
        return true;
    }

private:
    void add_edge(CommandId a, CommandId b) {
        if (a == b) return;
        adj_[a].push_back(b);
        adj_.try_emplace(b);
    }
    std::map<CommandId, std::vector<CommandId>> adj_;
};

}  // namespace detail

inline bool cstruct_prefix_consistent_ptrs(const std::vector<const Command*>& a,
                                           const std::vector<const Command*>& b) {
    detail::PrefixGraph g;
    g.add_history(a, b);
    g.add_history(b, a);
    return g.acyclic();
}

// True iff some C-struct extends both histories: restricted to conflicting
// pairs, neither history contradicts the other's relative order, including
// orders implied against commands only one of them has decided yet.
inline bool cstruct_prefix_consistent(const CStruct& a, const CStruct& b) {
    std::vector<const Command*> pa, pb;
    pa.reserve(a.seq.size());
    pb.reserve(b.seq.size());
    for (const auto& c : a.seq) pa.push_back(&c);
    for (const auto& c : b.seq) pb.push_back(&c);
    return cstruct_prefix_consistent_ptrs(pa, pb);
}

}  // namespace spectrum
