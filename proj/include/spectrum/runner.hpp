#pragma once

#include <algorithm>
#include <deque>
#include <memory>
#include <string>
#include <vector>

#include "spectrum/node.hpp"
#include "spectrum/oracle.hpp"
#include "spectrum/scenario.hpp"
#include "spectrum/workload.hpp"

// Drives one scenario to completion: nodes over the simulator, closed-loop
// clients with retransmission, the switching oracle (measured or scripted),
// fault injection, and the stop-and-restart baseline with its external
// coordinator.

namespace spectrum {

struct RunResult {
    std::string name;
    uint64_t seed = 0;
    int nodes = 0;
    TraceLog trace;
    HistoryLog history;
    bool stalled = false;
    Time downtime = 0;
    Time end_time = 0;
    std::vector<bool> crashed;
    std::vector<std::pair<EraId, Time>> switches;  // first Decide observation per era
};

class Runner {
public:
    explicit Runner(Scenario sc)
        : sc_(std::move(sc)),
          plan_(sc_.workload, sc_.seed, sc_.nodes),
          net_(make_sim_config(sc_), result_.trace) {
        result_.name = sc_.name;
        result_.seed = sc_.seed;
        result_.nodes = sc_.nodes;
        if (sc_.oracle.mode == OracleConfig::Mode::Threshold)
            threshold_oracle_ = std::make_unique<ThresholdOracle>(sc_.oracle, sc_.nodes);
        if (sc_.oracle.mode == OracleConfig::Mode::Static)
            static_oracle_ = std::make_unique<StaticOracle>(sc_.oracle, sc_.workload);
    }

    RunResult run() {
        setup_nodes();
        setup_clients();
        schedule_controls();
        net_.set_control_hook([this](std::string_view c) { control(c); });
        net_.run_all(sc_.duration + sc_.grace);
        finish();
        return std::move(result_);
    }

private:
    static SimConfig make_sim_config(const Scenario& sc) {
        SimConfig cfg;
        cfg.latency = sc.matrix();
        cfg.seed = sc.seed;
        cfg.jitter_pct = sc.jitter_pct;
        cfg.fifo_links = sc.fifo;
        cfg.service_time = sc.service_time;
        return cfg;
    }

    struct Worker {
        uint32_t next_seq = 0;
        bool busy = false;
        Command current;
        Time first_submit = 0;
    };

    void setup_nodes() {
        for (NodeId i = 0; i < sc_.nodes; ++i) {
            NodeConfig nc;
            nc.initial_kind = sc_.initial;
            nc.fd = sc_.fd;
            nc.seed = sc_.seed;
            nc.bootstrap = sc_.mode == Scenario::Mode::Spectrum;
            nodes_.push_back(
                std::make_unique<SpectrumNode>(net_, result_.trace, i, nc, default_registry()));
            NodeId id = i;
            nodes_.back()->meta().set_decide_callback(
                [this, id](const Command& c, EraId era) { on_decide(id, c, era); });
            nodes_.back()->set_client_timer_handler(
                [this, id](std::string_view tok) { on_client_timer(id, tok); });
        }
        std::vector<SimHost*> hosts;
        for (auto& n : nodes_) hosts.push_back(n.get());
        net_.attach(hosts);
        for (auto& n : nodes_) n->handle_start();
    }

    void setup_clients() {
        workers_.assign(sc_.nodes, std::vector<Worker>(sc_.workload.clients_per_node));
        latency_ring_.assign(sc_.nodes, {});
        rejecting_.assign(sc_.nodes, false);
        for (NodeId i = 0; i < sc_.nodes; ++i)
            for (int w = 0; w < sc_.workload.clients_per_node; ++w) {
                Time at = sc_.workload.start_at + (w * 13 + i * 7) % 100 * kMs;
                net_.set_timer(i, at, "cl s " + std::to_string(w));
            }
    }

    void schedule_controls() {
        for (size_t f = 0; f < sc_.faults.actions.size(); ++f)
            net_.schedule_control(sc_.faults.actions[f].at, "fault " + std::to_string(f));
        for (size_t s = 0; s < sc_.switch_script.size(); ++s)
            net_.schedule_control(sc_.switch_script[s].first, "switch " + std::to_string(s));
        if (sc_.oracle.mode != OracleConfig::Mode::None)
            net_.schedule_control(sc_.oracle.period, "oracle");
        if (sc_.mode == Scenario::Mode::StopAndRestart) {
            net_.schedule_control(0, "ssr_boot");
            if (sc_.coordinator_crash_at >= 0)
                net_.schedule_control(sc_.coordinator_crash_at, "ssr_coord_crash");
        }
    }

    // --- client layer -----------------------------------------------------------

    void on_client_timer(NodeId node, std::string_view tok) {
        auto t = wire::split(tok);
        if (t[0] == "s") {
            submit_fresh(node, static_cast<int>(wire::to_int(t[1])));
        } else if (t[0] == "t") {
            check_timeout(node, static_cast<int>(wire::to_int(t[1])),
                          static_cast<uint32_t>(wire::to_int(t[2])));
        }
    }

    void submit_fresh(NodeId node, int w) {
        if (net_.now() > sc_.workload.stop_at) return;  // workload over; worker retires
        Worker& worker = workers_[node][w];
        if (worker.busy) return;
        worker.current = plan_.command_for(node, w, worker.next_seq++, net_.now());
        worker.busy = true;
        worker.first_submit = net_.now();
        submit(node, w, worker.current);
    }

    void submit(NodeId node, int w, const Command& cmd) {
        result_.history.record_submit(cmd.id, node, net_.now());
        submissions_.push_back({net_.now(), cmd.keys.empty() ? std::string() : cmd.keys[0],
                                cmd.id});
        if (rejecting_[node]) {
            result_.trace.emit(net_.now(), node, "reject", cmd.text());
        } else {
            result_.trace.emit(net_.now(), node,
                               result_.history.records().at(cmd.id).submits.size() > 1
                                   ? "retransmit"
                                   : "submit",
                               cmd.text());
            nodes_[node]->meta().universal_propose(cmd);
        }
        net_.set_timer(node, client_timeout(node),
                       "cl t " + std::to_string(w) + " " + std::to_string(cmd.id.seq));
    }

    void check_timeout(NodeId node, int w, uint32_t seq) {
        Worker& worker = workers_[node][w];
        if (!worker.busy || worker.current.id.seq != seq) return;
        submit(node, w, worker.current);  // same cmd_id: a retransmission
    }

    // 4x the p99 of recent decide latencies at this node, floored.
    Time client_timeout(NodeId node) {
        auto& ring = latency_ring_[node];
        Time t = sc_.workload.retransmit_floor;
        if (!ring.empty()) {
            std::vector<Time> v(ring.begin(), ring.end());
            size_t idx = v.size() * 99 / 100;
            std::nth_element(v.begin(), v.begin() + idx, v.end());
            t = std::max(t, 4 * v[idx]);
        }
        return t;
    }

    void on_decide(NodeId node, const Command& cmd, EraId era) {
        result_.history.record_decide(cmd.id, node, era, net_.now());
        NodeId origin = WorkloadPlan::origin_of(cmd.id.client);
        if (origin != node) return;
        int w = static_cast<int>((cmd.id.client - kFirstClientId) % 1000);
        Worker& worker = workers_[node][w];
        if (!worker.busy || !(worker.current.id == cmd.id)) return;
        worker.busy = false;
        Time latency = net_.now() - worker.first_submit;
        auto& ring = latency_ring_[node];
        ring.push_back(latency);
        if (ring.size() > 128) ring.pop_front();
        decided_samples_[node].emplace_back(net_.now(), latency);
        net_.set_timer(node, sc_.workload.think_time, "cl s " + std::to_string(w));
    }

    // --- oracle -----------------------------------------------------------------

    NodeId current_leader() const {
        for (NodeId i = 0; i < sc_.nodes; ++i)
            if (!net_.crashed(i) && nodes_[i]->failure_detector().omega_leader() == i) return i;
        return -1;
    }

    void oracle_tick() {
        net_.schedule_control(net_.now() + sc_.oracle.period, "oracle");
        NodeId leader = current_leader();
        if (leader < 0) return;
        MetaNode& meta = nodes_[leader]->meta();
        Agreement* active = meta.active_agreement();
        ProtocolKind current = active ? active->kind() : sc_.initial;
        std::optional<ProtocolKind> v;
        if (static_oracle_) {
            v = static_oracle_->on_tick(net_.now(), current);
        } else if (threshold_oracle_) {
            v = threshold_oracle_->on_tick(net_.now(), snapshot(), current);
        }
        if (!v) return;
        result_.trace.emit(net_.now(), leader, "oracle", to_string(*v));
        meta.era_propose(Command::switch_to(*v));
    }

    MetricsSnapshot snapshot() {
        MetricsSnapshot s;
        Time from = net_.now() - sc_.oracle.window;
        // contention: distinct commands in the window sharing a key
        while (!submissions_.empty() && submissions_.front().at < from)
            submissions_.pop_front();
        std::map<std::string_view, int> per_key;
        std::set<CommandId> distinct;
        for (const auto& sub : submissions_)
            if (distinct.insert(sub.id).second) ++per_key[sub.key];
        if (!distinct.empty()) {
            int conflicted = 0;
            std::set<CommandId> counted;
            for (const auto& sub : submissions_) {
                if (!counted.insert(sub.id).second) continue;
                if (per_key[sub.key] >= 2) ++conflicted;
            }
            s.contention = static_cast<double>(conflicted) / static_cast<double>(distinct.size());
        }
        for (NodeId i = 0; i < sc_.nodes; ++i) {
            auto& samples = decided_samples_[i];
            while (!samples.empty() && samples.front().first < from) samples.pop_front();
            if (samples.empty()) {
                s.p90_latency.push_back(-1);
            } else {
                std::vector<Time> v;
                for (auto& [_, lat] : samples) v.push_back(lat);
                size_t idx = v.size() * 9 / 10;
                if (idx >= v.size()) idx = v.size() - 1;
                std::nth_element(v.begin(), v.begin() + idx, v.end());
                s.p90_latency.push_back(v[idx]);
            }
            auto& fd = nodes_[i]->failure_detector();
            std::vector<Time> rtts;
            for (NodeId p = 0; p < sc_.nodes; ++p)
                if (p != i) rtts.push_back(fd.rtt_to(p));
            std::sort(rtts.begin(), rtts.end());
            int cq = classic_quorum_size(sc_.nodes) - 1;  // remote members
            int fq = fast_quorum_size(sc_.nodes) - 1;
            s.qrtt.push_back(cq > 0 ? rtts[cq - 1] : 0);
            s.fqrtt.push_back(fq > 0 ? rtts[fq - 1] : 0);
            NodeId leader = nodes_[i]->failure_detector().omega_leader();
            s.frtt.push_back(leader == i ? 0 : fd.rtt_to(leader));
        }
        return s;
    }

    // --- control events -----------------------------------------------------------

    void control(std::string_view c) {
        auto t = wire::split(c);
        if (t[0] == "fault") {
            apply_fault(sc_.faults.actions[wire::to_int(t[1])]);
        } else if (t[0] == "switch") {
            auto& [at, kind] = sc_.switch_script[wire::to_int(t[1])];
            (void)at;
            if (sc_.mode == Scenario::Mode::StopAndRestart) {
                ssr_stop(kind);
            } else {
                NodeId leader = current_leader();
                if (leader >= 0) {
                    result_.trace.emit(net_.now(), leader, "oracle",
                                       std::string(to_string(kind)) + " scripted");
                    nodes_[leader]->meta().era_propose(Command::switch_to(kind));
                }
            }
        } else if (t[0] == "oracle") {
            oracle_tick();
        } else if (t[0] == "ssr_boot") {
            for (auto& n : nodes_)
                n->meta().handle_meta_message(
                    0, wire::join("dec", 1, to_string(sc_.initial)));
        } else if (t[0] == "ssr_coord_crash") {
            coordinator_dead_ = true;
            result_.trace.emit(net_.now(), -1, "coordinator_crash", "");
        } else if (t[0] == "ssr_poll") {
            ssr_poll();
        }
    }

    void apply_fault(const FaultAction& a) {
        switch (a.kind) {
            case FaultKind::Crash:
                if (!net_.crashed(a.node)) net_.crash(a.node);
                break;
            case FaultKind::CrashOnDecide:
                nodes_[a.node]->arm_crash_on_meta_decide();
                break;
            case FaultKind::ClearSuspect:
                for (NodeId i = 0; i < sc_.nodes; ++i)
                    if (!net_.crashed(i)) nodes_[i]->clear_suspicion_of(a.node);
                break;
            case FaultKind::CrashCoordinator:
                coordinator_dead_ = true;
                break;
        }
    }

    // --- stop-and-restart baseline -------------------------------------------------

    void ssr_stop(ProtocolKind target) {
        ssr_target_ = target;
        ssr_stop_at_ = net_.now();
        for (NodeId i = 0; i < sc_.nodes; ++i) rejecting_[i] = true;
        result_.trace.emit(net_.now(), -1, "stop_accepting", to_string(target));
        net_.schedule_control(net_.now() + 250 * kMs, "ssr_poll");
    }

    void ssr_poll() {
        if (coordinator_dead_) {
            result_.trace.emit(net_.now(), -1, "stalled", "");
            return;  // nobody ever resumes: the baseline is not fault-tolerant
        }
        if (ssr_resumed_) return;
        if (!ssr_started_) {
            bool drained = true;
            for (NodeId i = 0; i < sc_.nodes && drained; ++i) {
                if (net_.crashed(i)) continue;
                Agreement* a = nodes_[i]->meta().agreement_for(1);
                Executor* e = nodes_[i]->meta().executor_for(1);
                if (!a || !e || !a->quiesced() || e->pool_size() != 0) drained = false;
            }
            if (drained) {
                if (ssr_settle_at_ < 0) {
                    // let in-flight decide broadcasts land before starting anew
                    ssr_settle_at_ = net_.now() + 2 * net_.max_link_delay() * 11 / 10;
                } else if (net_.now() >= ssr_settle_at_) {
                    ssr_started_ = true;
                    for (auto& n : nodes_) {
                        if (n->crashed()) continue;
                        n->meta().handle_meta_message(
                            0, wire::join("dec", 2, to_string(ssr_target_)));
                    }
                }
            } else {
                ssr_settle_at_ = -1;
            }
        } else {
            bool switched = true;
            for (NodeId i = 0; i < sc_.nodes; ++i)
                if (!net_.crashed(i) && nodes_[i]->meta().exec_id() != 2) switched = false;
            if (switched) {
                ssr_resumed_ = true;
                for (NodeId i = 0; i < sc_.nodes; ++i) rejecting_[i] = false;
                result_.downtime = net_.now() - ssr_stop_at_;
                result_.trace.emit(net_.now(), -1, "resume", "");
                return;
            }
        }
        net_.schedule_control(net_.now() + 250 * kMs, "ssr_poll");
    }

    // --- wrap-up ---------------------------------------------------------------------

    void finish() {
        result_.history.finalize();
        result_.end_time = net_.now();
        result_.crashed.assign(sc_.nodes, false);
        for (NodeId i = 0; i < sc_.nodes; ++i) result_.crashed[i] = net_.crashed(i);
        result_.stalled = sc_.mode == Scenario::Mode::StopAndRestart && !ssr_resumed_ &&
                          ssr_stop_at_ >= 0;
        std::map<EraId, Time> first_decided;
        for (const auto& e : result_.trace.events())
            if (e.kind == "era_decided") {
                EraId era = static_cast<EraId>(wire::to_int(wire::split(e.details)[0]));
                if (!first_decided.count(era)) first_decided[era] = e.t;
            }
        for (auto& [era, at] : first_decided) result_.switches.emplace_back(era, at);
    }

    struct Submission {
        Time at;
        std::string key;
        CommandId id;
    };

    Scenario sc_;
    WorkloadPlan plan_;
    RunResult result_;
    Simnet net_;
    std::vector<std::unique_ptr<SpectrumNode>> nodes_;
    std::vector<std::vector<Worker>> workers_;
    std::vector<std::deque<Time>> latency_ring_;
    std::vector<bool> rejecting_;
    std::deque<Submission> submissions_;
    std::map<NodeId, std::deque<std::pair<Time, Time>>> decided_samples_;
    std::unique_ptr<ThresholdOracle> threshold_oracle_;
    std::unique_ptr<StaticOracle> static_oracle_;

    ProtocolKind ssr_target_ = ProtocolKind::Monarchic;
    Time ssr_stop_at_ = -1;
    Time ssr_settle_at_ = -1;
    bool ssr_started_ = false;
    bool ssr_resumed_ = false;
    bool coordinator_dead_ = false;
};

inline RunResult run_scenario(Scenario sc) { return Runner(std::move(sc)).run(); }

}  // namespace spectrum
