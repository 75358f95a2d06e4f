#pragma once

#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>

#include "spectrum/core.hpp"
#include "spectrum/sim.hpp"

// The consensus plugin contract: paired Agreement and Execution components
// per era, plus the registry that instantiates protocol pairs. Learn is a
// callback out of the plugin; AppendForExecution is called by the layer
// above, which stays the single ordering authority between components.

namespace spectrum {

// Environment a protocol instance runs against. Backed by the simulator in
// normal runs and by direct drivers in the interleaving tests.
struct NodeEnv {
    virtual ~NodeEnv() = default;
    virtual NodeId self() const = 0;
    virtual int cluster_size() const = 0;
    virtual Time now() const = 0;
    virtual NodeId omega_leader() const = 0;
    virtual uint64_t rng() = 0;
    virtual Time max_link_delay() const = 0;
    virtual void send(NodeId dst, std::string msg) = 0;
    virtual void set_timer(Time delay, std::string token) = 0;
    virtual void trace(const char* kind, std::string details) = 0;
    // Instrumented fault injection; true means "you just crashed".
    virtual bool crash_point(const char* tag) { (void)tag; return false; }

    int classic_quorum() const { return classic_quorum_size(cluster_size()); }
    int fast_quorum() const { return fast_quorum_size(cluster_size()); }
    void broadcast(std::string msg) {
        for (NodeId p = 0; p < cluster_size(); ++p)
            if (p != self()) send(p, msg);
    }
};

// Prefixes outgoing messages and timer tokens so instances stay ignorant of
// the envelope routing scheme. Rebindable so instance trees can be cloned
// by the bounded interleaving checks.
class ScopedEnv final : public NodeEnv {
public:
    ScopedEnv(NodeEnv& base, std::string prefix) : base_(&base), prefix_(std::move(prefix)) {}

    void rebind_base(NodeEnv& base) { base_ = &base; }

    NodeId self() const override { return base_->self(); }
    int cluster_size() const override { return base_->cluster_size(); }
    Time now() const override { return base_->now(); }
    NodeId omega_leader() const override { return base_->omega_leader(); }
    uint64_t rng() override { return base_->rng(); }
    Time max_link_delay() const override { return base_->max_link_delay(); }
    void send(NodeId dst, std::string msg) override { base_->send(dst, prefix_ + msg); }
    void set_timer(Time delay, std::string token) override {
        base_->set_timer(delay, prefix_ + token);
    }
    void trace(const char* kind, std::string details) override {
        base_->trace(kind, std::move(details));
    }
    bool crash_point(const char* tag) override { return base_->crash_point(tag); }

private:
    NodeEnv* base_;
    std::string prefix_;
};

enum class ProposeResult { Accepted, EraClosed };

// Callbacks out of an agreement instance into the management layer.
struct AgreementObserver {
    virtual ~AgreementObserver() = default;
    virtual void on_learned(EraId era, const Command& cmd) = 0;
    // Asynchronous reject of a command routed to a terminated era.
    virtual void on_era_closed(EraId era, const Command& cmd) = 0;
};

// Agreement interface: Propose in, Learn out. Every learned command was
// proposed at some node, and learn order between conflicting commands is
// commute-equivalent across correct nodes.
class Agreement {
public:
    Agreement(EraId era, ProtocolKind kind, NodeEnv& env, AgreementObserver& observer)
        : era_(era), kind_(kind), env_ptr_(&env), observer_ptr_(&observer) {}
    virtual ~Agreement() = default;

    EraId era() const { return era_; }
    ProtocolKind kind() const { return kind_; }

    virtual ProposeResult propose(const Command& cmd) = 0;
    virtual void on_message(NodeId src, std::string_view body) = 0;
    virtual void on_timer(std::string_view token) = 0;
    virtual void on_leadership(NodeId leader) { (void)leader; }
    virtual void on_start() {}

    // Compact state digest for the bounded interleaving checks.
    virtual std::string fingerprint() const = 0;

    // True when this node has no unfinished ordering work of its own; the
    // stop-and-restart baseline polls this while draining an era.
    virtual bool quiesced() const { return true; }

    // Copy with fresh wiring; state machines hold plain values so the
    // default copy constructor of each concrete class does the work.
    virtual std::unique_ptr<Agreement> clone(NodeEnv& env, AgreementObserver& obs) const = 0;

    void rebind(NodeEnv& env, AgreementObserver& obs) {
        env_ptr_ = &env;
        observer_ptr_ = &obs;
    }

    bool learned(CommandId id) const { return learned_.count(id) > 0; }
    size_t learned_count() const { return learned_.size(); }

protected:
    NodeEnv& env() const { return *env_ptr_; }

    // Uniform dedup: at most one Learn per cmd_id per node per era.
    bool emit_learn(const Command& cmd, std::string_view ordinal) {
        if (!learned_.insert(cmd.id).second) return false;
        env().trace("learn", wire::join(era_, ordinal, cmd.text()));
        observer_ptr_->on_learned(era_, cmd);
        return true;
    }

    void emit_era_closed(const Command& cmd) {
        env().trace("era_closed", wire::join(era_, cmd.id.text()));
        observer_ptr_->on_era_closed(era_, cmd);
    }

private:
    EraId era_;
    ProtocolKind kind_;
    NodeEnv* env_ptr_;
    AgreementObserver* observer_ptr_;
    std::set<CommandId> learned_;
};

// Execution interface: a pool of learned-but-undelivered commands, emptied
// in an order that respects the learned order among conflicting commands
// (delivery in learn order is the strongest such order). Once a Terminate
// is returned, the era's executor never returns anything again.
class Executor {
public:
    explicit Executor(EraId era) : era_(era) {}

    EraId era() const { return era_; }
    bool terminated() const { return terminated_; }
    size_t pool_size() const { return pool_.size(); }

    void append_for_execution(const Command& cmd) {
        if (terminated_) return;  // late learns die with the era; clients retransmit
        if (!seen_.insert(cmd.id).second) return;
        pool_.push_back(cmd);
    }

    const Command* peek_next_deliverable() const {
        return pool_.empty() ? nullptr : &pool_.front();
    }

    std::optional<Command> get_next_deliverable() {
        if (pool_.empty()) return std::nullopt;
        Command c = std::move(pool_.front());
        pool_.pop_front();
        if (c.kind == CommandKind::Terminate) {
            terminated_ = true;
            pool_.clear();
        }
        return c;
    }

private:
    EraId era_;
    std::deque<Command> pool_;
    std::set<CommandId> seen_;
    bool terminated_ = false;
};

struct ProtocolPair {
    std::unique_ptr<ScopedEnv> env;
    std::unique_ptr<Agreement> agreement;
    std::unique_ptr<Executor> executor;
};

// Instantiates (agreement, executor) pairs for a given era at one node.
// Factories for the same kind produce compatible instances across nodes.
class ProtocolRegistry {
public:
    using Factory = std::function<std::unique_ptr<Agreement>(EraId, NodeEnv&, AgreementObserver&)>;

    void register_kind(ProtocolKind kind, Factory factory) {
        factories_[kind] = std::move(factory);
    }

    bool has(ProtocolKind kind) const { return factories_.count(kind) > 0; }

    ProtocolPair init_protocol(EraId era, ProtocolKind kind, NodeEnv& base_env,
                               AgreementObserver& observer) {
        auto it = factories_.find(kind);
        if (it == factories_.end())
            throw std::runtime_error(std::string("unknown protocol kind: ") + to_string(kind));
        if (!initialized_.insert(era).second)
            throw std::runtime_error("duplicate protocol init for era " + std::to_string(era));
        ProtocolPair pair;
        pair.env = std::make_unique<ScopedEnv>(base_env, "p " + std::to_string(era) + " ");
        pair.agreement = it->second(era, *pair.env, observer);
        pair.executor = std::make_unique<Executor>(era);
        return pair;
    }

private:
    std::map<ProtocolKind, Factory> factories_;
    std::set<EraId> initialized_;
};

}  // namespace spectrum
