#pragma once

#include <functional>
#include <string>

#include "spectrum/democratic.hpp"
#include "spectrum/meta.hpp"
#include "spectrum/monarchic.hpp"
#include "spectrum/oligarchic.hpp"
#include "spectrum/sim.hpp"

// One process: failure detector + meta-consensus + its protocol instances,
// wired to the simulator. Routes envelope payloads by prefix ("fd", "meta",
// "p <era>") and timer tokens the same way; client-worker timers ("cl ...")
// are handed to the harness.

namespace spectrum {

inline ProtocolRegistry default_registry() {
    ProtocolRegistry reg;
    reg.register_kind(ProtocolKind::Monarchic,
                      [](EraId era, NodeEnv& env, AgreementObserver& obs) {
                          return std::make_unique<MonarchicAgreement>(era, env, obs);
                      });
    reg.register_kind(ProtocolKind::Oligarchic,
                      [](EraId era, NodeEnv& env, AgreementObserver& obs) {
                          return std::make_unique<OligarchicAgreement>(era, env, obs);
                      });
    reg.register_kind(ProtocolKind::Democratic,
                      [](EraId era, NodeEnv& env, AgreementObserver& obs) {
                          return std::make_unique<DemocraticAgreement>(era, env, obs);
                      });
    return reg;
}

struct NodeConfig {
    ProtocolKind initial_kind = ProtocolKind::Monarchic;
    FdConfig fd;
    uint64_t seed = 1;
    bool bootstrap = true;  // off: the stop-and-restart baseline drives eras itself
};

class SpectrumNode final : public SimHost, public NodeEnv {
public:
    SpectrumNode(Simnet& net, TraceLog& trace, NodeId id, NodeConfig cfg,
                 ProtocolRegistry registry)
        : net_(&net),
          trace_(&trace),
          id_(id),
          cfg_(cfg),
          fd_(id, net.size(), cfg.fd),
          rng_state_(wire::mix64(cfg.seed ^ (0x9131ULL + static_cast<uint64_t>(id)))),
          meta_(*this, std::move(registry), cfg.initial_kind) {}

    MetaNode& meta() { return meta_; }
    FailureDetector& failure_detector() { return fd_; }
    bool crashed() const { return net_->crashed(id_); }

    void arm_crash_on_meta_decide() { armed_decide_crash_ = true; }
    void set_client_timer_handler(std::function<void(std::string_view)> fn) {
        client_handler_ = std::move(fn);
    }

    // --- NodeEnv ---
    NodeId self() const override { return id_; }
    int cluster_size() const override { return net_->size(); }
    Time now() const override { return net_->now(); }
    NodeId omega_leader() const override { return fd_.omega_leader(); }
    uint64_t rng() override { return rng_state_ = wire::mix64(rng_state_); }
    Time max_link_delay() const override { return net_->max_link_delay(); }
    void send(NodeId dst, std::string msg) override {
        if (crashed()) return;
        net_->send(id_, dst, std::move(msg));
    }
    void set_timer(Time delay, std::string token) override {
        if (crashed()) return;
        net_->set_timer(id_, delay, std::move(token));
    }
    void trace(const char* kind, std::string details) override {
        if (crashed()) return;
        trace_->emit(net_->now(), id_, kind, std::move(details));
    }
    bool crash_point(const char* tag) override {
        if (armed_decide_crash_ && std::string_view(tag) == "meta_decide" && !crashed()) {
            armed_decide_crash_ = false;
            net_->crash(id_);
            return true;
        }
        return false;
    }

    // --- SimHost ---
    void handle_start() override {
        net_->set_timer(id_, 0, "fd");
        if (cfg_.bootstrap) meta_.on_start();
    }

    void handle_message(NodeId src, std::string_view payload) override {
        if (payload.rfind("fd ", 0) == 0) {
            fd_.on_message(src, payload.substr(3), net_->now(), fd_sender());
            notify_leadership();
        } else if (payload.rfind("meta ", 0) == 0) {
            meta_.handle_meta_message(src, payload.substr(5));
        } else if (payload.rfind("p ", 0) == 0) {
            auto parts = wire::split_n(payload, ' ', 3);
            meta_.handle_protocol_message(static_cast<EraId>(wire::to_int(parts[1])), src,
                                          parts[2]);
        }
    }

    void handle_timer(std::string_view token) override {
        if (token == "fd") {
            fd_.on_tick(net_->now(), fd_sender());
            notify_leadership();
            net_->set_timer(id_, fd_.heartbeat_interval(), "fd");
        } else if (token.rfind("meta ", 0) == 0) {
            meta_.handle_meta_timer(token.substr(5));
        } else if (token.rfind("p ", 0) == 0) {
            auto parts = wire::split_n(token, ' ', 3);
            meta_.handle_protocol_timer(static_cast<EraId>(wire::to_int(parts[1])), parts[2]);
        } else if (token.rfind("cl ", 0) == 0) {
            if (client_handler_) client_handler_(token.substr(3));
        }
    }

    void clear_suspicion_of(NodeId peer) {
        fd_.clear_suspicion(peer, net_->now());
        notify_leadership();
    }

private:
    FailureDetector::SendFn fd_sender() {
        return [this](NodeId dst, std::string m) { send(dst, "fd " + m); };
    }
    void notify_leadership() {
        if (fd_.poll_view_changed()) meta_.on_leadership(fd_.omega_leader());
    }

    Simnet* net_;
    TraceLog* trace_;
    NodeId id_;
    NodeConfig cfg_;
    FailureDetector fd_;
    uint64_t rng_state_;
    MetaNode meta_;
    std::function<void(std::string_view)> client_handler_;
    bool armed_decide_crash_ = false;
};

}  // namespace spectrum
