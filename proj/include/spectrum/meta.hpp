#pragma once

#include <functional>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "spectrum/plugin.hpp"

// Era-switch coordination: a higher-level consensus layer decides Switch
// commands (one per era, epoch-ordered with recovery after leader crashes)
// and a management pump that routes client commands to the active era's
// agreement while delivering era by era, crossing a Terminate boundary to
// move execution into the next era. No state transfer between instances.

namespace spectrum {

class MetaNode final : public AgreementObserver {
public:
    using DecideFn = std::function<void(const Command&, EraId)>;

    MetaNode(NodeEnv& env, ProtocolRegistry registry, ProtocolKind initial_kind)
        : env_(&env),
          meta_env_(env, "meta "),
          registry_(std::move(registry)),
          initial_kind_(initial_kind) {}

    // Non-copyable wiring; clone() below produces a rebound deep copy for
    // the interleaving checks.
    MetaNode(const MetaNode&) = delete;
    MetaNode& operator=(const MetaNode&) = delete;

    void set_decide_callback(DecideFn fn) { decide_cb_ = std::move(fn); }

    void on_start() {
        env_->set_timer(watchdog_period(), "meta watch");
        env_->set_timer(watchdog_period(), "meta rebc");
        if (env_->self() == env_->omega_leader())
            era_propose(Command::switch_to(initial_kind_));
    }

    // --- client side ----------------------------------------------------------

    void universal_propose(const Command& cmd) {
        Agreement* active = active_agreement();
        if (!active) {
            boot_buffer_.emplace(cmd.id, cmd);
            return;
        }
        if (active->propose(cmd) == ProposeResult::EraClosed) {
            // terminate already learned here but the next era has not been
            // activated yet; hold until ChangeEra, retransmission backs this up
            closed_buffer_.emplace(cmd.id, cmd);
        }
    }

    // --- switch triggers --------------------------------------------------------

    // EraPropose. The pre-established epoch-0 fast path is only sound for
    // the initial leader that has seen no other epoch; any other proposer
    // first runs the prepare round of the recovery path, which makes two
    // transiently-coexisting leaders safe.
    void era_propose(const Command& switch_cmd) {
        EraId era = last_decided_ + 1;
        if (decided_.count(era) || accept_.live || recovery_.live) return;
        env_->trace("meta_propose", wire::join(era, to_string(switch_cmd.switch_target)));
        if (env_->self() == 0 && my_epoch_ < 0 && epoch_seen_ <= 0 && rnd(era) == 0) {
            era_accept_phase(switch_cmd, era, 0, false);
        } else {
            era_recovery(switch_cmd);
        }
    }

    // Recovery (also the safe proposal path): prepare at a fresh epoch,
    // adopt the highest accepted value if one exists, else push our own.
    void era_recovery(const Command& switch_cmd) {
        EraId era = last_decided_ + 1;
        if (decided_.count(era) || accept_.live || recovery_.live) return;
        Epoch epoch = next_epoch_for(std::max(epoch_seen_, my_epoch_), env_->self(),
                                     env_->cluster_size());
        my_epoch_ = epoch;
        recovery_ = Recovery{};
        recovery_.live = true;
        recovery_.cmd = switch_cmd;
        recovery_.era = era;
        recovery_.epoch = epoch;
        env_->trace("era_recovery", wire::join(era, epoch));
        handle_prepare(env_->self(), era, epoch);  // own promise and reply
        meta_env_.broadcast(wire::join("prep", era, epoch));
    }

    // --- message entry points (tokens after the "meta " prefix) ---------------

    void handle_meta_message(NodeId src, std::string_view body) {
        auto t = wire::split(body);
        if (t[0] == "eacc") {
            Command cmd = Command::switch_to(parse_kind(t[3]));
            handle_era_accept(src, static_cast<EraId>(wire::to_int(t[1])),
                              wire::to_int(t[2]), cmd);
        } else if (t[0] == "aacc") {
            handle_ack_accept(src, static_cast<EraId>(wire::to_int(t[1])),
                              wire::to_int(t[2]), t[4] == "A",
                              t.size() > 5 ? t[5] : std::string_view("-"));
        } else if (t[0] == "dec") {
            on_decide(static_cast<EraId>(wire::to_int(t[1])), parse_kind(t[2]));
        } else if (t[0] == "prep") {
            handle_prepare(src, static_cast<EraId>(wire::to_int(t[1])), wire::to_int(t[2]));
        } else if (t[0] == "aprep") {
            handle_ack_prepare(src, t);
        }
    }

    void handle_meta_timer(std::string_view token) {
        if (token == "watch") {
            watchdog();
            env_->set_timer(watchdog_period(), "meta watch");
        } else if (token == "rebc") {
            if (env_->omega_leader() == env_->self())
                for (const auto& [era, kind] : decided_)
                    meta_env_.broadcast(wire::join("dec", era, to_string(kind)));
            env_->set_timer(watchdog_period(), "meta rebc");
        }
    }

    void handle_protocol_message(EraId era, NodeId src, std::string_view body) {
        auto it = protocols_.find(era);
        if (it == protocols_.end()) {
            pending_proto_[era].emplace_back(src, std::string(body));
            return;
        }
        it->second.agreement->on_message(src, body);
    }

    void handle_protocol_timer(EraId era, std::string_view token) {
        auto it = protocols_.find(era);
        if (it != protocols_.end()) it->second.agreement->on_timer(token);
    }

    void on_leadership(NodeId leader) {
        for (auto& [era, pair] : protocols_) pair.agreement->on_leadership(leader);
        if (leader == env_->self()) watchdog();
    }

    // --- observer (Learn path, Alg. 4) -----------------------------------------

    void on_learned(EraId era, const Command& cmd) override {
        auto it = protocols_.find(era);
        if (it == protocols_.end()) return;  // cannot happen: learn implies instance
        it->second.executor->append_for_execution(cmd);
        pump();
    }

    void on_era_closed(EraId era, const Command& cmd) override {
        if (cmd.kind != CommandKind::Client) return;
        if (last_decided_ > era) {
            Agreement* active = active_agreement();
            if (active && active->propose(cmd) == ProposeResult::Accepted) return;
        }
        closed_buffer_.emplace(cmd.id, cmd);
    }

    // --- inspection -------------------------------------------------------------

    EraId last_decided() const { return last_decided_; }
    EraId exec_id() const { return exec_id_; }
    Epoch rnd(EraId era) const {
        auto it = rnd_.find(era);
        return it == rnd_.end() ? 0 : it->second;
    }
    const Command* vdec(EraId era) const {
        auto it = vdec_.find(era);
        return it == vdec_.end() ? nullptr : &it->second;
    }
    Epoch rdec(EraId era) const {
        auto it = rdec_.find(era);
        return it == rdec_.end() ? -1 : it->second;
    }
    bool has_decided(EraId era) const { return decided_.count(era) > 0; }
    bool switch_in_flight() const { return accept_.live || recovery_.live; }
    ProtocolKind decided_kind(EraId era) const { return decided_.at(era); }
    Agreement* agreement_for(EraId era) {
        auto it = protocols_.find(era);
        return it == protocols_.end() ? nullptr : it->second.agreement.get();
    }
    Executor* executor_for(EraId era) {
        auto it = protocols_.find(era);
        return it == protocols_.end() ? nullptr : it->second.executor.get();
    }
    Agreement* active_agreement() {
        auto it = protocols_.find(last_decided_);
        return it == protocols_.end() ? nullptr : it->second.agreement.get();
    }

    std::string fingerprint() const {
        std::string s = wire::join("meta", last_decided_, exec_id_, epoch_seen_, my_epoch_,
                                   accept_.live ? 1 : 0, recovery_.live ? 1 : 0,
                                   static_cast<long long>(accept_.acks.size()), accept_.epoch,
                                   recovery_.acks, recovery_.epoch,
                                   recovery_.best_rdec);
        for (const auto& [era, r] : rnd_) s += wire::join("", era, "r", r);
        for (const auto& [era, v] : vdec_) s += wire::join("", era, "v", to_string(v.switch_target));
        for (const auto& [era, r] : rdec_) s += wire::join("", era, "rd", r);
        for (const auto& [era, k] : decided_) s += wire::join("", era, "D", to_string(k));
        for (const auto& [era, pair] : protocols_) {
            s += wire::join("", era, "P");
            s += pair.agreement->fingerprint();
        }
        return s;
    }

    // Deep copy with fresh wiring (used by the bounded interleaving checks).
    std::unique_ptr<MetaNode> clone(NodeEnv& env) const {
        auto copy = std::make_unique<MetaNode>(env, registry_, initial_kind_);
        copy->rnd_ = rnd_;
        copy->vdec_ = vdec_;
        copy->rdec_ = rdec_;
        copy->decided_ = decided_;
        copy->last_decided_ = last_decided_;
        copy->exec_id_ = exec_id_;
        copy->epoch_seen_ = epoch_seen_;
        copy->my_epoch_ = my_epoch_;
        copy->accept_ = accept_;
        copy->recovery_ = recovery_;
        copy->boot_buffer_ = boot_buffer_;
        copy->closed_buffer_ = closed_buffer_;
        copy->decided_cmds_ = decided_cmds_;
        copy->pending_proto_ = pending_proto_;
        copy->decide_cb_ = decide_cb_;
        for (const auto& [era, pair] : protocols_) {
            ProtocolPair p;
            p.env = std::make_unique<ScopedEnv>(env, "p " + std::to_string(era) + " ");
            p.agreement = pair.agreement->clone(*p.env, *copy);
            p.executor = std::make_unique<Executor>(*pair.executor);
            copy->protocols_.emplace(era, std::move(p));
        }
        return copy;
    }

private:
    struct AcceptPhase {
        bool live = false;
        Command cmd;
        EraId era = 0;
        Epoch epoch = 0;
        std::set<NodeId> acks;
        bool from_recovery = false;
        bool has_deferred = false;
        Command deferred;
    };

    struct Recovery {
        bool live = false;
        Command cmd;
        EraId era = 0;
        Epoch epoch = 0;
        int acks = 0;
        bool have_value = false;
        Command best_vdec;
        Epoch best_rdec = -1;
    };

    Time watchdog_period() const { return 5 * env_->max_link_delay(); }

    static ProtocolKind parse_kind(std::string_view s) {
        ProtocolKind k = ProtocolKind::Monarchic;
        parse_protocol_kind(s, k);
        return k;
    }

    // EraAcceptPhase (Alg. 2 lines 5-11), completed in handle_ack_accept.
    void era_accept_phase(const Command& cmd, EraId era, Epoch epoch, bool from_recovery,
                          bool has_deferred = false, Command deferred = {}) {
        accept_ = AcceptPhase{};
        accept_.live = true;
        accept_.cmd = cmd;
        accept_.era = era;
        accept_.epoch = epoch;
        accept_.from_recovery = from_recovery;
        accept_.has_deferred = has_deferred;
        accept_.deferred = deferred;
        handle_era_accept(env_->self(), era, epoch, cmd);  // own vote
        meta_env_.broadcast(wire::join("eacc", era, epoch, to_string(cmd.switch_target)));
    }

    // EraAccept (Alg. 2 lines 12-20): Rnd[era] <= epoch admits the value.
    void handle_era_accept(NodeId src, EraId era, Epoch epoch, const Command& cmd) {
        epoch_seen_ = std::max(epoch_seen_, epoch);
        bool ack = rnd(era) <= epoch;
        if (ack) {
            vdec_[era] = cmd;
            rdec_[era] = epoch;
            rnd_[era] = epoch;
        }
        std::string decided_tag = decided_.count(era) ? to_string(decided_.at(era)) : "-";
        std::string reply = wire::join("aacc", era, epoch, to_string(cmd.switch_target),
                                       ack ? "A" : "N", decided_tag);
        if (src == env_->self())
            handle_ack_accept(src, era, epoch, ack, decided_tag);
        else
            meta_env_.send(src, reply);
    }

    void handle_ack_accept(NodeId src, EraId era, Epoch epoch, bool ack,
                           std::string_view decided_tag) {
        if (decided_tag != "-") on_decide(era, parse_kind(decided_tag));
        if (!accept_.live || accept_.era != era || accept_.epoch != epoch) return;
        if (!ack) {
            accept_.live = false;
            env_->trace("meta_nacked", wire::join(era, epoch));
            return;  // retried by the watchdog via recovery
        }
        accept_.acks.insert(src);
        if (static_cast<int>(accept_.acks.size()) < env_->classic_quorum()) return;
        AcceptPhase done = accept_;
        accept_.live = false;
        if (env_->crash_point("meta_decide")) return;  // fault-injection point
        meta_env_.broadcast(wire::join("dec", done.era, to_string(done.cmd.switch_target)));
        on_decide(done.era, done.cmd.switch_target);
        if (done.has_deferred && done.deferred.switch_target != done.cmd.switch_target)
            era_propose(done.deferred);
    }

    // Decide (Alg. 2 lines 21-26): write-once, then in-order era activation.
    void on_decide(EraId era, ProtocolKind kind) {
        if (!decided_.emplace(era, kind).second) return;
        env_->trace("era_decided", wire::join(era, to_string(kind)));
        if (recovery_.live && recovery_.era == era) recovery_.live = false;
        if (accept_.live && accept_.era == era) accept_.live = false;
        while (true) {
            auto it = decided_.find(last_decided_ + 1);
            if (it == decided_.end()) break;
            change_era(last_decided_ + 1, it->second);
        }
    }

    // ChangeEra (Alg. 2 lines 27-36).
    void change_era(EraId era, ProtocolKind kind) {
        Agreement* old = active_agreement();
        if (old) old->propose(Command::terminate(old->era()));
        ProtocolPair pair = registry_.init_protocol(era, kind, *env_, *this);
        Agreement* fresh = pair.agreement.get();
        protocols_.emplace(era, std::move(pair));
        last_decided_ = era;
        if (exec_id_ == 0) exec_id_ = era;  // bootstrap: execution starts here
        env_->trace("change_era", wire::join(era, to_string(kind)));
        fresh->on_start();
        auto pend = pending_proto_.find(era);
        if (pend != pending_proto_.end()) {
            for (auto& [src, body] : pend->second) fresh->on_message(src, body);
            pending_proto_.erase(pend);
        }
        std::map<CommandId, Command> replay;
        replay.swap(era == 1 ? boot_buffer_ : closed_buffer_);
        for (auto& [id, cmd] : replay) universal_propose(cmd);
        pump();
    }

    // Era recovery prepare handling (Alg. 3 lines 18-24): strict inequality.
    void handle_prepare(NodeId src, EraId era, Epoch epoch) {
        epoch_seen_ = std::max(epoch_seen_, epoch);
        bool ack = rnd(era) < epoch;
        if (ack) rnd_[era] = epoch;
        std::string vtag = vdec_.count(era) ? to_string(vdec_.at(era).switch_target) : "-";
        Epoch rd = rdec(era);
        std::string decided_tag = decided_.count(era) ? to_string(decided_.at(era)) : "-";
        if (src == env_->self()) {
            handle_ack_prepare_fields(src, era, epoch, ack, vtag, rd, decided_tag);
        } else {
            meta_env_.send(src, wire::join("aprep", era, epoch, ack ? "A" : "N", vtag, rd,
                                           decided_tag));
        }
    }

    void handle_ack_prepare(NodeId src, const std::vector<std::string_view>& t) {
        handle_ack_prepare_fields(src, static_cast<EraId>(wire::to_int(t[1])),
                                  wire::to_int(t[2]), t[3] == "A", t[4], wire::to_int(t[5]),
                                  t[6]);
    }

    void handle_ack_prepare_fields(NodeId src, EraId era, Epoch epoch, bool ack,
                                   std::string_view vtag, Epoch rd,
                                   std::string_view decided_tag) {
        (void)src;
        if (decided_tag != "-") on_decide(era, parse_kind(decided_tag));
        if (!recovery_.live || recovery_.era != era || recovery_.epoch != epoch) return;
        if (!ack) {
            recovery_.live = false;  // a higher epoch is active; watchdog retries
            return;
        }
        if (vtag != "-" && rd > recovery_.best_rdec) {
            recovery_.best_rdec = rd;
            recovery_.best_vdec = Command::switch_to(parse_kind(vtag));
            recovery_.have_value = true;
        }
        ++recovery_.acks;
        if (recovery_.acks < env_->classic_quorum()) return;
        Recovery done = recovery_;
        recovery_.live = false;
        if (done.have_value) {
            // somebody accepted a value for this era: force it through, then
            // revisit our own command for a later era
            era_accept_phase(done.best_vdec, era, done.epoch, true, true, done.cmd);
        } else {
            era_accept_phase(done.cmd, era, done.epoch, true);
        }
    }

    // Pending-switch watchdog: the omega leader finishes what a crashed
    // leader left behind, and bootstraps era 1 if node 0 never got it out.
    void watchdog() {
        if (env_->omega_leader() != env_->self()) return;
        if (accept_.live || recovery_.live) return;
        EraId era = last_decided_ + 1;
        if (decided_.count(era)) return;
        if (vdec_.count(era)) {
            era_recovery(vdec_.at(era));
        } else if (last_decided_ == 0 && env_->self() != 0) {
            era_recovery(Command::switch_to(initial_kind_));
        } else if (last_decided_ == 0 && env_->self() == 0 && !protocols_.count(1)) {
            era_propose(Command::switch_to(initial_kind_));
        }
    }

    // Universal execution pump (Alg. 4 lines 6-12): one era executes at a
    // time; Terminate hands execution to the next era's executor. Crossing
    // waits until ChangeEra has created that executor on this node.
    void pump() {
        while (true) {
            auto it = protocols_.find(exec_id_);
            if (it == protocols_.end()) break;
            Executor& ex = *it->second.executor;
            const Command* next = ex.peek_next_deliverable();
            if (!next) break;
            if (next->kind == CommandKind::Terminate) {
                if (!protocols_.count(exec_id_ + 1)) break;
                ex.get_next_deliverable();
                env_->trace("terminate_delivered", wire::join(exec_id_));
                exec_id_ += 1;
                continue;
            }
            Command c = *ex.get_next_deliverable();
            if (c.kind != CommandKind::Client || c.is_noop()) continue;
            if (!decided_cmds_.insert(c.id).second) continue;  // exactly once per node
            env_->trace("decide", wire::join(exec_id_, c.text()));
            if (decide_cb_) decide_cb_(c, exec_id_);
        }
    }

    NodeEnv* env_;
    ScopedEnv meta_env_;
    ProtocolRegistry registry_;
    ProtocolKind initial_kind_;
    DecideFn decide_cb_;

    std::map<EraId, Epoch> rnd_;
    std::map<EraId, Command> vdec_;
    std::map<EraId, Epoch> rdec_;
    std::map<EraId, ProtocolKind> decided_;
    EraId last_decided_ = 0;
    EraId exec_id_ = 0;
    Epoch epoch_seen_ = 0;
    Epoch my_epoch_ = -1;

    std::map<EraId, ProtocolPair> protocols_;
    std::map<EraId, std::vector<std::pair<NodeId, std::string>>> pending_proto_;

    AcceptPhase accept_;
    Recovery recovery_;
    std::map<CommandId, Command> boot_buffer_;
    std::map<CommandId, Command> closed_buffer_;
    std::set<CommandId> decided_cmds_;
};

}  // namespace spectrum
