#pragma once

// Shared harness for protocol-level tests: hosts one agreement instance per
// node over the simulator with the failure detector wired in, collecting
// learn/delivery sequences per node.

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "spectrum/plugin.hpp"
#include "spectrum/sim.hpp"

namespace spectrum::testing {

struct ProtoHost final : SimHost, NodeEnv, AgreementObserver {
    Simnet* net = nullptr;
    NodeId id = 0;
    uint64_t rng_state = 0;
    std::unique_ptr<FailureDetector> fd;
    std::unique_ptr<Agreement> agreement;
    Executor executor{1};
    TraceLog* log = nullptr;

    std::vector<Command> learn_seq;
    std::vector<Command> delivered;
    std::vector<Command> closed;

    // --- NodeEnv ---
    NodeId self() const override { return id; }
    int cluster_size() const override { return net->size(); }
    Time now() const override { return net->now(); }
    NodeId omega_leader() const override { return fd->omega_leader(); }
    uint64_t rng() override { return rng_state = wire::mix64(rng_state); }
    Time max_link_delay() const override { return net->max_link_delay(); }
    void send(NodeId dst, std::string msg) override { net->send(id, dst, std::move(msg)); }
    void set_timer(Time delay, std::string token) override {
        net->set_timer(id, delay, std::move(token));
    }
    void trace(const char* kind, std::string details) override {
        log->emit(net->now(), id, kind, std::move(details));
    }

    // --- AgreementObserver ---
    void on_learned(EraId, const Command& cmd) override {
        learn_seq.push_back(cmd);
        executor.append_for_execution(cmd);
        while (auto c = executor.get_next_deliverable()) delivered.push_back(*c);
    }
    void on_era_closed(EraId, const Command& cmd) override { closed.push_back(cmd); }

    // --- SimHost ---
    void handle_start() override {
        net->set_timer(id, 0, "fd");
        agreement->on_start();
    }
    void handle_message(NodeId src, std::string_view payload) override {
        if (payload.substr(0, 3) == "fd ") {
            fd->on_message(src, payload.substr(3), net->now(),
                           [this](NodeId dst, std::string m) { net->send(id, dst, "fd " + m); });
            notify_leadership();
        } else {
            agreement->on_message(src, payload);
        }
    }
    void handle_timer(std::string_view token) override {
        if (token == "fd") {
            fd->on_tick(net->now(),
                        [this](NodeId dst, std::string m) { net->send(id, dst, "fd " + m); });
            notify_leadership();
            net->set_timer(id, fd->heartbeat_interval(), "fd");
        } else {
            agreement->on_timer(token);
        }
    }
    void notify_leadership() {
        if (fd->poll_view_changed()) agreement->on_leadership(fd->omega_leader());
    }
};

struct ProtoCluster {
    TraceLog trace;
    Simnet net;
    std::vector<std::unique_ptr<ProtoHost>> hosts;

    using MakeFn = std::function<std::unique_ptr<Agreement>(EraId, NodeEnv&, AgreementObserver&)>;

    ProtoCluster(SimConfig cfg, MakeFn make, FdConfig fd_cfg = {}) : net(cfg, trace) {
        std::vector<SimHost*> ptrs;
        for (NodeId i = 0; i < net.size(); ++i) {
            auto h = std::make_unique<ProtoHost>();
            h->net = &net;
            h->id = i;
            h->log = &trace;
            h->rng_state = wire::mix64(cfg.seed ^ (0x5151ULL + i));
            h->fd = std::make_unique<FailureDetector>(i, net.size(), fd_cfg);
            h->agreement = make(1, *h, *h);
            hosts.push_back(std::move(h));
        }
        for (auto& h : hosts) ptrs.push_back(h.get());
        net.attach(ptrs);
        for (auto& h : hosts) h->handle_start();
    }

    ProposeResult propose(NodeId node, const Command& cmd) {
        return hosts[node]->agreement->propose(cmd);
    }

    void run_until(Time t) { net.run_until(t); }

    std::vector<CommandId> learned_ids(NodeId node) const {
        std::vector<CommandId> out;
        for (const auto& c : hosts[node]->learn_seq) out.push_back(c.id);
        return out;
    }

    bool node_learned(NodeId node, CommandId id) const {
        return hosts[node]->agreement->learned(id);
    }

    Time learn_time(NodeId node, CommandId id) const {
        for (const auto& e : trace.events())
            if (e.node == node && e.kind == "learn") {
                auto parts = wire::split_n(e.details, ' ', 3);
                if (Command::parse(parts[2]).id == id) return e.t;
            }
        return -1;
    }
};

inline SimConfig wan_config(uint64_t seed, int jitter_pct = 10) {
    SimConfig cfg;
    cfg.latency = LatencyMatrix::wan5();
    cfg.seed = seed;
    cfg.jitter_pct = jitter_pct;
    return cfg;
}

}  // namespace spectrum::testing
