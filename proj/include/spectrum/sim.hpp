#pragma once

#include <cassert>
#include <cstdint>
#include <functional>
#include <queue>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "spectrum/core.hpp"
#include "spectrum/wire.hpp"

// Discrete-event message-passing substrate with virtual time, per-link
// latency and deterministic jitter, crash injection, and a timeout-based
// eventual leader election service. One logical driver owns all state;
// handlers are sequential (state, event) -> (state, outgoing messages).

namespace spectrum {

using Time = long long;  // virtual microseconds
constexpr Time kMs = 1000;
constexpr Time kSec = 1000 * 1000;

struct LatencyMatrix {
    std::vector<std::vector<Time>> delay;  // µs; delay[i][j] > 0

    int size() const { return static_cast<int>(delay.size()); }

    Time max_delay() const {
        Time m = 0;
        for (const auto& row : delay)
            for (Time d : row) m = std::max(m, d);
        return m;
    }

    static LatencyMatrix uniform(int n, Time d, Time self = 1 * kMs) {
        LatencyMatrix m;
        m.delay.assign(n, std::vector<Time>(n, d));
        for (int i = 0; i < n; ++i) m.delay[i][i] = self;
        return m;
    }

    // Five sites shaped like a two-US / two-EU / one-Asia deployment:
    // 0 Virginia, 1 Ohio, 2 Ireland, 3 Frankfurt, 4 Mumbai.
    static LatencyMatrix wan5() {
        const Time ms = kMs;
        LatencyMatrix m = uniform(5, 0);
        auto set = [&](int a, int b, Time d) {
            m.delay[a][b] = d;
            m.delay[b][a] = d;
        };
        set(0, 1, 12 * ms);
        set(0, 2, 38 * ms);
        set(0, 3, 45 * ms);
        set(0, 4, 95 * ms);
        set(1, 2, 40 * ms);
        set(1, 3, 43 * ms);
        set(1, 4, 110 * ms);
        set(2, 3, 12 * ms);
        set(2, 4, 60 * ms);
        set(3, 4, 55 * ms);
        return m;
    }
};

enum class FaultKind { Crash, CrashOnDecide, ClearSuspect, CrashCoordinator };

struct FaultAction {
    Time at = 0;
    FaultKind kind = FaultKind::Crash;
    NodeId node = 0;
};

struct FaultScript {
    std::vector<FaultAction> actions;

    int crash_count() const {
        int c = 0;
        for (const auto& a : actions)
            if (a.kind == FaultKind::Crash || a.kind == FaultKind::CrashOnDecide) ++c;
        return c;
    }

    // Safety suites assume a correct majority: more than ⌊n/2⌋ member
    // crashes is a script error.
    bool within_budget(int n) const { return crash_count() <= n / 2; }
};

struct TraceEvent {
    Time t = 0;
    int node = -1;  // -1: harness-level event
    std::string kind;
    std::string details;

    std::string line() const {
        std::string out = std::to_string(t);
        out.push_back('|');
        out += std::to_string(node);
        out.push_back('|');
        out += kind;
        out.push_back('|');
        out += details;
        return out;
    }

    static TraceEvent parse(std::string_view line) {
        auto parts = wire::split_n(line, '|', 4);
        TraceEvent e;
        if (parts.size() < 4) return e;
        e.t = wire::to_int(parts[0]);
        e.node = static_cast<int>(wire::to_int(parts[1]));
        e.kind = std::string(parts[2]);
        e.details = std::string(parts[3]);
        return e;
    }
};

class TraceLog {
public:
    void emit(Time t, int node, std::string kind, std::string details) {
        events_.push_back({t, node, std::move(kind), std::move(details)});
    }
    const std::vector<TraceEvent>& events() const { return events_; }

    std::string text() const {
        std::string out;
        for (const auto& e : events_) {
            out += e.line();
            out.push_back('\n');
        }
        return out;
    }

private:
    std::vector<TraceEvent> events_;
};

struct SimConfig {
    LatencyMatrix latency;
    uint64_t seed = 1;
    int jitter_pct = 10;    // max jitter as % of base link delay
    bool fifo_links = false;
    Time service_time = 0;  // node occupancy per handled event
};

class Simnet;

// One per node; the driver invokes these sequentially.
struct SimHost {
    virtual ~SimHost() = default;
    virtual void handle_start() {}
    virtual void handle_message(NodeId src, std::string_view payload) = 0;
    virtual void handle_timer(std::string_view token) = 0;
};

class Simnet {
public:
    Simnet(SimConfig cfg, TraceLog& trace)
        : cfg_(std::move(cfg)),
          n_(cfg_.latency.size()),
          trace_(trace),
          crashed_(n_, false),
          busy_until_(n_, 0),
          last_link_delivery_(static_cast<size_t>(n_) * n_, 0) {}

    void attach(std::vector<SimHost*> hosts) {
        hosts_ = std::move(hosts);
        assert(static_cast<int>(hosts_.size()) == n_);
    }

    int size() const { return n_; }
    Time now() const { return now_; }
    bool crashed(NodeId node) const { return crashed_[node]; }
    const SimConfig& config() const { return cfg_; }
    Time max_link_delay() const { return cfg_.latency.max_delay(); }

    uint64_t sent_count() const { return sent_; }
    uint64_t delivered_count() const { return delivered_; }
    uint64_t dropped_count() const { return dropped_; }

    void enable_paranoid_checks() { paranoid_ = true; }

    // Scheduled once at most; envelopes to crashed destinations are dropped
    // silently at delivery time.
    void send(NodeId src, NodeId dst, std::string payload) {
        assert(!crashed_[src]);
        Time base = cfg_.latency.delay[src][dst];
        Time jitter = cfg_.jitter_pct > 0
                          ? static_cast<Time>(wire::mix64(cfg_.seed ^ (next_uid_ * 0x9e37fffffffc0001ULL)) %
                                              (base * cfg_.jitter_pct / 100 + 1))
                          : 0;
        Time at = now_ + base + jitter;
        if (cfg_.fifo_links) {
            Time& last = last_link_delivery_[static_cast<size_t>(src) * n_ + dst];
            at = std::max(at, last);
            last = at;
        }
        push(Kind::Message, at, src, dst, std::move(payload));
        ++sent_;
    }

    void set_timer(NodeId node, Time delay, std::string token) {
        assert(delay >= 0);
        push(Kind::Timer, now_ + delay, node, node, std::move(token));
    }

    // Harness-level event delivered to the control hook.
    void schedule_control(Time at, std::string payload) {
        push(Kind::Control, std::max(at, now_), -1, -1, std::move(payload));
    }
    void set_control_hook(std::function<void(std::string_view)> hook) {
        control_hook_ = std::move(hook);
    }

    void crash(NodeId node) {
        assert(!crashed_[node] && "crashing an already-crashed node is a script error");
        crashed_[node] = true;
        trace_.emit(now_, node, "crash", "");
    }

    // Returns false when the queue is exhausted (END).
    bool step() {
        while (!queue_.empty()) {
            Envelope e = queue_.top();
            queue_.pop();
            assert(e.deliver_at >= now_);
            if (e.kind == Kind::Control) {
                now_ = e.deliver_at;
                if (control_hook_) control_hook_(e.payload);
                return true;
            }
            if (crashed_[e.dst]) {
                ++dropped_;
                continue;
            }
            if (cfg_.service_time > 0 && busy_until_[e.dst] > e.deliver_at) {
                e.deliver_at = busy_until_[e.dst];
                queue_.push(std::move(e));
                continue;
            }
            now_ = e.deliver_at;
            busy_until_[e.dst] = now_ + cfg_.service_time;
            if (paranoid_) {
                bool fresh = delivered_uids_.insert(e.uid).second;
                assert(fresh && "duplicate delivery");
            }
            ++delivered_;
            if (e.kind == Kind::Message)
                hosts_[e.dst]->handle_message(e.src, e.payload);
            else
                hosts_[e.dst]->handle_timer(e.payload);
            return true;
        }
        return false;
    }

    void run_until(Time t) {
        while (!queue_.empty() && queue_.top().deliver_at <= t)
            if (!step()) break;
        now_ = std::max(now_, t);
    }

    void run_all(Time hard_stop) {
        while (!queue_.empty() && queue_.top().deliver_at <= hard_stop)
            if (!step()) break;
    }

    bool idle() const { return queue_.empty(); }
    Time next_event_at() const { return queue_.empty() ? -1 : queue_.top().deliver_at; }

private:
    enum class Kind { Message, Timer, Control };

    struct Envelope {
        Time deliver_at;
        uint64_t uid;
        Kind kind;
        NodeId src, dst;
        std::string payload;

        bool operator>(const Envelope& o) const {
            if (deliver_at != o.deliver_at) return deliver_at > o.deliver_at;
            return uid > o.uid;
        }
    };

    void push(Kind kind, Time at, NodeId src, NodeId dst, std::string payload) {
        queue_.push(Envelope{at, next_uid_++, kind, src, dst, std::move(payload)});
    }

    SimConfig cfg_;
    int n_;
    TraceLog& trace_;
    std::priority_queue<Envelope, std::vector<Envelope>, std::greater<>> queue_;
    std::vector<SimHost*> hosts_;
    std::vector<bool> crashed_;
    std::vector<Time> busy_until_;
    std::vector<Time> last_link_delivery_;
    std::function<void(std::string_view)> control_hook_;
    uint64_t next_uid_ = 1;
    Time now_ = 0;
    uint64_t sent_ = 0, delivered_ = 0, dropped_ = 0;
    bool paranoid_ = false;
    std::set<uint64_t> delivered_uids_;
};

// Timeout-based unreliable failure detector with eventual leader election:
// trusts the lowest-indexed unsuspected node. Heartbeat replies double as
// round-trip samples for the oracle's quorum latency estimates.
struct FdConfig {
    Time heartbeat_interval = 120 * kMs;
    Time suspicion_timeout = 480 * kMs;
};

class FailureDetector {
public:
    using SendFn = std::function<void(NodeId, std::string)>;

    FailureDetector(NodeId self, int n, FdConfig cfg)
        : self_(self), n_(n), cfg_(cfg), last_heard_(n, 0), suspected_(n, false),
          rtt_ring_(n) {}

    Time heartbeat_interval() const { return cfg_.heartbeat_interval; }

    void on_tick(Time now, const SendFn& send) {
        std::string hb = wire::join("hb", now);
        for (NodeId p = 0; p < n_; ++p)
            if (p != self_) send(p, hb);
        for (NodeId p = 0; p < n_; ++p) {
            if (p == self_) continue;
            bool suspect = now - last_heard_[p] > cfg_.suspicion_timeout;
            if (suspect != suspected_[p]) {
                suspected_[p] = suspect;
                view_changed_ = true;
            }
        }
    }

    void on_message(NodeId src, std::string_view body, Time now, const SendFn& send) {
        auto toks = wire::split(body);
        last_heard_[src] = now;
        if (suspected_[src]) {
            suspected_[src] = false;
            view_changed_ = true;
        }
        if (toks[0] == "hb" && toks.size() == 2) {
            send(src, wire::join("ack", toks[1]));
        } else if (toks[0] == "ack" && toks.size() == 2) {
            record_rtt(src, now - wire::to_int(toks[1]));
        }
    }

    void clear_suspicion(NodeId peer, Time now) {
        last_heard_[peer] = now;
        if (suspected_[peer]) {
            suspected_[peer] = false;
            view_changed_ = true;
        }
    }

    NodeId omega_leader() const {
        for (NodeId p = 0; p < n_; ++p)
            if (p == self_ || !suspected_[p]) return p;
        return self_;
    }

    bool suspected(NodeId peer) const { return peer != self_ && suspected_[peer]; }

    // max of the recent samples; 0 when nothing observed yet
    Time rtt_to(NodeId peer) const {
        if (peer == self_) return 0;
        Time m = 0;
        for (Time s : rtt_ring_[peer].samples) m = std::max(m, s);
        return m;
    }

    bool poll_view_changed() {
        bool v = view_changed_;
        view_changed_ = false;
        return v;
    }

private:
    struct Ring {
        std::vector<Time> samples;
        size_t next = 0;
    };

    void record_rtt(NodeId peer, Time rtt) {
        auto& r = rtt_ring_[peer];
        if (r.samples.size() < 8) {
            r.samples.push_back(rtt);
        } else {
            r.samples[r.next] = rtt;
            r.next = (r.next + 1) % 8;
        }
    }

    NodeId self_;
    int n_;
    FdConfig cfg_;
    std::vector<Time> last_heard_;
    std::vector<bool> suspected_;
    std::vector<Ring> rtt_ring_;
    bool view_changed_ = false;
};

}  // namespace spectrum
