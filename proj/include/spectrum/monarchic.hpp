#pragma once

#include <map>
#include <set>
#include <string>

#include "spectrum/plugin.hpp"

// Monarchic family: Multi-Paxos. A single leader (the omega output) assigns
// slots, gathers a classic quorum of accepts per slot and broadcasts the
// decision; other nodes forward. Decided slots are learned in slot order.
// A new leader re-runs the prepare phase for open slots only and fills gaps
// with noops.

namespace spectrum {

class MonarchicAgreement final : public Agreement {
public:
    MonarchicAgreement(EraId era, NodeEnv& env, AgreementObserver& obs)
        : Agreement(era, ProtocolKind::Monarchic, env, obs) {}

    void on_start() override {
        if (env().omega_leader() == env().self()) begin_prepare();
        env().set_timer(reforward_period(), "rfw");
    }

    ProposeResult propose(const Command& cmd) override {
        if (terminate_learned_) return ProposeResult::EraClosed;
        if (learned(cmd.id)) return ProposeResult::Accepted;
        pending_.emplace(cmd.id, Origin{cmd, env().self()});
        route(cmd);
        return ProposeResult::Accepted;
    }

    void on_message(NodeId src, std::string_view body) override {
        auto t = wire::split(body);
        if (t[0] == "fwd") {
            handle_forward(Command::parse(t[1]), src);
        } else if (t[0] == "prep") {
            handle_prepare(src, wire::to_int(t[1]), wire::to_int(t[2]));
        } else if (t[0] == "prep_ack") {
            handle_prepare_ack(src, body);
        } else if (t[0] == "nack") {
            handle_nack(wire::to_int(t[1]));
        } else if (t[0] == "acc") {
            handle_accept(src, wire::to_int(t[1]), wire::to_int(t[2]), Command::parse(t[3]));
        } else if (t[0] == "acc_ack") {
            handle_accept_ack(src, wire::to_int(t[1]), wire::to_int(t[2]));
        } else if (t[0] == "dec") {
            handle_decide(wire::to_int(t[1]), Command::parse(t[2]));
        } else if (t[0] == "closed") {
            Command cmd = Command::parse(t[1]);
            pending_.erase(cmd.id);
            if (!learned(cmd.id)) emit_era_closed(cmd);
        }
    }

    void on_timer(std::string_view token) override {
        if (token == "rfw") {
            std::vector<CommandId> mine;
            for (const auto& [id, origin] : pending_)
                if (origin.from == env().self() && !learned(id)) mine.push_back(id);
            for (CommandId id : mine) {
                auto it = pending_.find(id);
                if (it != pending_.end()) route(it->second.cmd);
            }
            env().set_timer(reforward_period(), "rfw");
        } else if (token == "rty") {
            if (env().omega_leader() == env().self() && !established_ && !preparing_)
                begin_prepare();
        }
    }

    void on_leadership(NodeId leader) override {
        if (leader == env().self()) {
            if (!established_ && !preparing_) begin_prepare();
        } else {
            established_ = false;
            for (auto& [id, origin] : pending_)
                if (origin.from == env().self() && !learned(id))
                    env().send(leader, wire::join("fwd", origin.cmd.text()));
        }
    }

    std::string fingerprint() const override {
        std::string s = wire::join("mon", promised_, my_ballot_, established_ ? 1 : 0,
                                   preparing_ ? 1 : 0, next_slot_, next_learn_, closed_slot_,
                                   terminate_learned_ ? 1 : 0,
                                   static_cast<long long>(prep_acks_.size()));
        for (const auto& [slot, e] : log_)
            s += wire::join("", slot, e.ballot, e.cmd.id.text(), e.decided ? 1 : 0);
        for (const auto& [id, origin] : pending_) s += wire::join("", "p", id.text(), origin.from);
        for (const auto& [id, slot] : assigned_) s += wire::join("", "a", id.text(), slot);
        for (const auto& [slot, acks] : acc_acks_)
            s += wire::join("", "q", slot, static_cast<long long>(acks.size()));
        return s;
    }

    std::unique_ptr<Agreement> clone(NodeEnv& env, AgreementObserver& obs) const override {
        auto copy = std::make_unique<MonarchicAgreement>(*this);
        copy->rebind(env, obs);
        return copy;
    }

    bool is_leader_established() const { return established_; }
    Slot decided_watermark() const { return next_learn_; }

    bool quiesced() const override {
        if (!pending_.empty()) return false;
        for (const auto& [slot, e] : log_)
            if (!e.decided) return false;
        return true;
    }

private:
    struct Entry {
        Epoch ballot = -1;
        Command cmd;
        bool decided = false;
    };
    struct Origin {
        Command cmd;
        NodeId from;
    };

    Time reforward_period() const { return 6 * env().max_link_delay(); }

    void route(const Command& cmd) {
        if (established_)
            handle_forward(cmd, env().self());
        else if (env().omega_leader() != env().self())
            env().send(env().omega_leader(), wire::join("fwd", cmd.text()));
        // else: prepare in flight; pending_ drains on establishment
    }

    // --- leader side --------------------------------------------------------

    void begin_prepare() {
        my_ballot_ = next_epoch_for(std::max(promised_, my_ballot_), env().self(),
                                    env().cluster_size());
        promised_ = my_ballot_;
        preparing_ = true;
        prep_acks_.clear();
        prep_entries_.clear();
        prep_max_slot_ = highest_slot();
        record_prepare_state(env().self());
        env().broadcast(wire::join("prep", my_ballot_, next_learn_));
        maybe_establish();
    }

    Slot highest_slot() const { return log_.empty() ? -1 : log_.rbegin()->first; }

    void record_prepare_state(NodeId from) { prep_acks_.insert(from); }

    void handle_prepare(NodeId src, Epoch ballot, Slot watermark) {
        if (ballot < promised_) {
            env().send(src, wire::join("nack", ballot));
            return;
        }
        promised_ = ballot;
        if (ballot != my_ballot_) established_ = false;
        int count = 0;
        std::string entries;
        for (const auto& [slot, e] : log_) {
            if (slot < watermark) continue;
            wire::append_token(entries, slot);
            wire::append_token(entries, e.ballot);
            wire::append_token(entries, e.decided ? 1 : 0);
            wire::append_token(entries, e.cmd.text());
            ++count;
        }
        std::string reply = wire::join("prep_ack", ballot, highest_slot(), count);
        if (!entries.empty()) reply += " " + entries;
        env().send(src, reply);
    }

    void handle_prepare_ack(NodeId src, std::string_view body) {
        auto t = wire::split(body);
        Epoch ballot = wire::to_int(t[1]);
        if (!preparing_ || ballot != my_ballot_) return;
        prep_max_slot_ = std::max(prep_max_slot_, static_cast<Slot>(wire::to_int(t[2])));
        int count = static_cast<int>(wire::to_int(t[3]));
        size_t idx = 4;
        for (int i = 0; i < count; ++i) {
            Slot slot = wire::to_int(t[idx]);
            Epoch acc_ballot = wire::to_int(t[idx + 1]);
            bool decided = t[idx + 2] == "1";
            Command cmd = Command::parse(t[idx + 3]);
            idx += 4;
            auto& best = prep_entries_[slot];
            if (decided) {
                best.decided = true;
                best.ballot = acc_ballot;
                best.cmd = cmd;
            } else if (!best.decided && acc_ballot > best.ballot) {
                best.ballot = acc_ballot;
                best.cmd = cmd;
            }
        }
        record_prepare_state(src);
        maybe_establish();
    }

    void maybe_establish() {
        if (!preparing_ || static_cast<int>(prep_acks_.size()) < env().classic_quorum())
            return;
        preparing_ = false;
        established_ = true;
        // fold own undecided state into the recovery picture
        for (const auto& [slot, e] : log_) {
            auto& best = prep_entries_[slot];
            if (e.decided) {
                best.decided = true;
                best.ballot = e.ballot;
                best.cmd = e.cmd;
            } else if (!best.decided && e.ballot > best.ballot) {
                best.ballot = e.ballot;
                best.cmd = e.cmd;
            }
        }
        Slot horizon = prep_max_slot_;
        for (const auto& [slot, e] : prep_entries_) horizon = std::max(horizon, slot);
        next_slot_ = horizon + 1;
        for (Slot s = next_learn_; s <= horizon; ++s) {
            auto it = prep_entries_.find(s);
            if (it != prep_entries_.end() && it->second.decided) {
                store_decided(s, it->second.cmd);
            } else if (it != prep_entries_.end() && it->second.ballot >= 0) {
                start_accept(s, it->second.cmd);
            } else {
                // hole left by a deposed leader: fill so learning can advance
                start_accept(s, Command::noop(static_cast<uint32_t>(s)));
            }
        }
        if (closed_slot_ < 0)
            for (const auto& [slot, e] : log_)
                if (e.cmd.kind == CommandKind::Terminate) closed_slot_ = slot;
        // drain buffered proposals in id order; assign() may mutate pending_
        std::vector<CommandId> buffered;
        for (const auto& [id, _] : pending_) buffered.push_back(id);
        for (CommandId id : buffered) {
            auto it = pending_.find(id);
            if (it != pending_.end() && !learned(id)) assign(it->second.cmd, it->second.from);
        }
        advance_learn();
    }

    void handle_forward(const Command& cmd, NodeId origin) {
        if (!established_) {
            pending_.emplace(cmd.id, Origin{cmd, origin});
            if (!preparing_ && env().omega_leader() != env().self() && origin == env().self())
                return;  // route() already forwarded
            return;
        }
        assign(cmd, origin);
    }

    void assign(const Command& cmd, NodeId origin) {
        if (assigned_.count(cmd.id) || learned(cmd.id)) return;
        if (closed_slot_ >= 0) {
            // Terminate already holds the final slot of this era
            if (origin == env().self())
                emit_era_closed(cmd);
            else
                env().send(origin, wire::join("closed", cmd.text()));
            pending_.erase(cmd.id);
            return;
        }
        Slot s = next_slot_++;
        assigned_[cmd.id] = s;
        if (cmd.kind == CommandKind::Terminate) closed_slot_ = s;
        start_accept(s, cmd);
    }

    void start_accept(Slot s, const Command& cmd) {
        log_[s] = Entry{my_ballot_, cmd, log_.count(s) ? log_[s].decided : false};
        acc_acks_[s] = {env().self()};
        env().broadcast(wire::join("acc", my_ballot_, s, cmd.text()));
        check_quorum(s);
    }

    void handle_accept_ack(NodeId src, Epoch ballot, Slot s) {
        if (ballot != my_ballot_ || !established_) return;
        auto it = log_.find(s);
        if (it == log_.end() || it->second.decided) return;
        acc_acks_[s].insert(src);
        check_quorum(s);
    }

    void check_quorum(Slot s) {
        auto it = log_.find(s);
        if (it == log_.end() || it->second.decided) return;
        if (static_cast<int>(acc_acks_[s].size()) < env().classic_quorum()) return;
        env().broadcast(wire::join("dec", s, it->second.cmd.text()));
        store_decided(s, it->second.cmd);
        advance_learn();
    }

    // --- acceptor side ------------------------------------------------------

    void handle_accept(NodeId src, Epoch ballot, Slot s, Command cmd) {
        if (ballot < promised_) {
            env().send(src, wire::join("nack", ballot));
            return;
        }
        promised_ = ballot;
        if (ballot != my_ballot_) established_ = false;
        auto& e = log_[s];
        if (!e.decided) {
            e.ballot = ballot;
            e.cmd = std::move(cmd);
        }
        env().send(src, wire::join("acc_ack", ballot, s));
    }

    void handle_nack(Epoch ballot) {
        if (ballot != my_ballot_) return;
        established_ = false;
        preparing_ = false;
        if (env().omega_leader() == env().self())
            env().set_timer(env().max_link_delay() * (1 + env().rng() % 4), "rty");
    }

    void handle_decide(Slot s, Command cmd) {
        store_decided(s, std::move(cmd));
        advance_learn();
    }

    void store_decided(Slot s, Command cmd) {
        auto& e = log_[s];
        e.cmd = std::move(cmd);
        e.decided = true;
        if (e.cmd.kind == CommandKind::Terminate && closed_slot_ < 0) closed_slot_ = s;
    }

    void advance_learn() {
        while (!terminate_learned_) {
            auto it = log_.find(next_learn_);
            if (it == log_.end() || !it->second.decided) break;
            const Command& cmd = it->second.cmd;
            ++next_learn_;
            if (cmd.is_noop()) continue;
            pending_.erase(cmd.id);
            emit_learn(cmd, "s" + std::to_string(it->first));
            if (cmd.kind == CommandKind::Terminate) terminate_learned_ = true;
        }
    }

    // acceptor state
    Epoch promised_ = -1;
    std::map<Slot, Entry> log_;
    Slot next_learn_ = 0;

    // leader state
    Epoch my_ballot_ = -1;
    bool established_ = false;
    bool preparing_ = false;
    std::set<NodeId> prep_acks_;
    std::map<Slot, Entry> prep_entries_;
    Slot prep_max_slot_ = -1;
    Slot next_slot_ = 0;
    std::map<CommandId, Slot> assigned_;
    std::map<Slot, std::set<NodeId>> acc_acks_;
    Slot closed_slot_ = -1;

    std::map<CommandId, Origin> pending_;
    bool terminate_learned_ = false;
};

}  // namespace spectrum
