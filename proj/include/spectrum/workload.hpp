#pragma once

#include <map>
#include <string>
#include <vector>

#include "spectrum/core.hpp"
#include "spectrum/sim.hpp"

// Closed-loop workload: a fixed set of workers per node, each with one
// outstanding command, phases with a conflict percentage, conflicts through
// shared hot keys. Key and payload choices are a pure function of the seed,
// so the same seed always produces the same schedule.

namespace spectrum {

struct Phase {
    Time start = 0;
    int conflict_pct = 0;
};

struct WorkloadSpec {
    int clients_per_node = 50;
    std::vector<Phase> phases{{0, 0}};
    int key_universe = 64;
    int hot_keys = 1;  // hot keys per phase
    Time start_at = 0;
    Time stop_at = 0;  // no new commands after this
    Time think_time = 0;
    Time retransmit_floor = 1 * kSec;

    bool valid(std::string* why = nullptr) const {
        Time last = -1;
        for (const auto& p : phases) {
            if (p.conflict_pct < 0 || p.conflict_pct > 100) {
                if (why) *why = "conflict_pct out of [0,100]";
                return false;
            }
            if (p.start < last) {
                if (why) *why = "phases not time-ordered";
                return false;
            }
            last = p.start;
        }
        return !phases.empty();
    }

    int conflict_pct_at(Time t) const {
        int pct = phases.front().conflict_pct;
        for (const auto& p : phases)
            if (p.start <= t) pct = p.conflict_pct;
        return pct;
    }

    int phase_index_at(Time t) const {
        int idx = 0;
        for (size_t i = 0; i < phases.size(); ++i)
            if (phases[i].start <= t) idx = static_cast<int>(i);
        return idx;
    }
};

// Deterministic per-client command stream. The k-th command of a client has
// a fixed hot/private choice for a given conflict percentage.
class WorkloadPlan {
public:
    WorkloadPlan(WorkloadSpec spec, uint64_t seed, int nodes)
        : spec_(std::move(spec)), seed_(seed), nodes_(nodes) {}

    const WorkloadSpec& spec() const { return spec_; }

    static uint32_t client_id(NodeId node, int worker) {
        return kFirstClientId + static_cast<uint32_t>(node) * 1000 + static_cast<uint32_t>(worker);
    }
    static NodeId origin_of(uint32_t client) {
        return static_cast<NodeId>((client - kFirstClientId) / 1000);
    }

    Command command_for(NodeId node, int worker, uint32_t seq, Time now) const {
        uint32_t cid = client_id(node, worker);
        uint64_t draw = wire::mix64(seed_ ^ (static_cast<uint64_t>(cid) << 20) ^ seq);
        int pct = spec_.conflict_pct_at(now);
        std::vector<std::string> keys;
        if (static_cast<int>(draw % 100) < pct) {
            int phase = spec_.phase_index_at(now);
            uint64_t pick = wire::mix64(draw) % static_cast<uint64_t>(std::max(1, spec_.hot_keys));
            keys.push_back("hot" + std::to_string(phase) + "_" + std::to_string(pick));
        } else {
            keys.push_back("c" + std::to_string(cid));
        }
        char payload[4] = {static_cast<char>(draw >> 8), static_cast<char>(draw >> 16),
                           static_cast<char>(draw >> 24), static_cast<char>(draw >> 32)};
        return Command::client({cid, seq}, std::move(keys), std::string(payload, 4));
    }

    int nodes() const { return nodes_; }

private:
    WorkloadSpec spec_;
    uint64_t seed_;
    int nodes_;
};

// Per-command ledger: submissions (including retransmissions) and per-node
// decide times. Complete for every submitted cmd_id at run end.
struct CommandRecord {
    CommandId id;
    NodeId origin = 0;
    std::vector<Time> submits;
    std::map<NodeId, Time> decides;
    EraId era = 0;  // era of the first decide observed
    bool timed_out_at_end = false;

    Time first_submit() const { return submits.empty() ? -1 : submits.front(); }
    bool decided_at(NodeId n) const { return decides.count(n) > 0; }
    Time decide_latency_at_origin() const {
        auto it = decides.find(origin);
        return it == decides.end() ? -1 : it->second - first_submit();
    }
};

class HistoryLog {
public:
    void record_submit(CommandId id, NodeId origin, Time t) {
        auto& r = records_[id];
        r.id = id;
        r.origin = origin;
        r.submits.push_back(t);
    }

    void record_decide(CommandId id, NodeId node, EraId era, Time t) {
        auto it = records_.find(id);
        if (it == records_.end()) return;  // not a client command from this run
        auto& r = it->second;
        if (r.decides.empty()) r.era = era;
        r.decides.emplace(node, t);
    }

    void finalize() {
        for (auto& [id, r] : records_)
            if (!r.decided_at(r.origin)) r.timed_out_at_end = true;
    }

    const std::map<CommandId, CommandRecord>& records() const { return records_; }
    bool known(CommandId id) const { return records_.count(id) > 0; }

    std::string text() const {
        std::string out;
        for (const auto& [id, r] : records_) {
            out += id.text();
            out.push_back('|');
            out += std::to_string(r.origin);
            out.push_back('|');
            for (size_t i = 0; i < r.submits.size(); ++i) {
                if (i) out.push_back(',');
                out += std::to_string(r.submits[i]);
            }
            out.push_back('|');
            out += std::to_string(r.era);
            out.push_back('|');
            bool first = true;
            for (const auto& [node, t] : r.decides) {
                if (!first) out.push_back(',');
                first = false;
                out += std::to_string(node) + ":" + std::to_string(t);
            }
            out.push_back('\n');
        }
        return out;
    }

    static HistoryLog parse(std::string_view text) {
        HistoryLog log;
        for (auto line : wire::split(text, '\n')) {
            if (line.empty()) continue;
            auto f = wire::split(line, '|');
            if (f.size() != 5) continue;
            CommandRecord r;
            r.id = CommandId::parse(f[0]);
            r.origin = static_cast<NodeId>(wire::to_int(f[1]));
            for (auto s : wire::split(f[2], ','))
                if (!s.empty()) r.submits.push_back(wire::to_int(s));
            r.era = static_cast<EraId>(wire::to_int(f[3]));
            for (auto d : wire::split(f[4], ',')) {
                if (d.empty()) continue;
                size_t colon = d.find(':');
                r.decides.emplace(static_cast<NodeId>(wire::to_int(d.substr(0, colon))),
                                  wire::to_int(d.substr(colon + 1)));
            }
            log.records_[r.id] = std::move(r);
        }
        return log;
    }

private:
    std::map<CommandId, CommandRecord> records_;
};

}  // namespace spectrum
