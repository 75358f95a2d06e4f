#pragma once

#include <deque>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "spectrum/plugin.hpp"

// Oligarchic family: ownership-based multi-leader ordering. A node that owns
// every key of a command orders it on per-key sequence logs and replicates
// to a classic quorum in one round trip. Missing ownership triggers an
// epoch-based acquisition against a quorum, with randomized exponential
// backoff on rejection; sustained cross-acquisition conflict livelocks by
// design. A Terminate command forces one node to acquire ownership of all
// keys, totally ordering it after everything already ordered.

namespace spectrum {

class OligarchicAgreement final : public Agreement {
public:
    OligarchicAgreement(EraId era, NodeEnv& env, AgreementObserver& obs)
        : Agreement(era, ProtocolKind::Oligarchic, env, obs) {}

    ProposeResult propose(const Command& cmd) override {
        if (terminate_learned_) return ProposeResult::EraClosed;
        if (known_cmds_.count(cmd.id)) return ProposeResult::Accepted;
        known_cmds_.insert(cmd.id);
        queue_.push_back(cmd);
        process_queue();
        return ProposeResult::Accepted;
    }

    void on_message(NodeId src, std::string_view body) override {
        auto t = wire::split(body);
        if (t[0] == "acq") handle_acquire(src, t);
        else if (t[0] == "acqa") handle_acquire_reply(src, t);
        else if (t[0] == "acc") handle_accept(src, t);
        else if (t[0] == "acca") handle_accept_ack(src, t);
        else if (t[0] == "accn") handle_accept_nack(t);
        else if (t[0] == "stb") handle_stable(t);
    }

    void on_timer(std::string_view token) override {
        if (token == "bk") {
            backoff_armed_ = false;
            process_queue();
        }
    }

    std::string fingerprint() const override {
        std::string s = "oli";
        wire::append_token(s, global_promised_);
        wire::append_token(s, owned_all_);
        for (const auto& [k, ks] : keys_) {
            wire::append_token(s, k);
            wire::append_token(s, ks.promised);
            wire::append_token(s, ks.satisfied_prefix);
            for (const auto& [seq, e] : ks.log) {
                wire::append_token(s, seq);
                wire::append_token(s, e.epoch);
                wire::append_token(s, e.stable ? 1 : 0);
                wire::append_token(s, e.cmd.id.text());
            }
        }
        for (const auto& c : queue_) wire::append_token(s, c.id.text());
        return s;
    }

    std::unique_ptr<Agreement> clone(NodeEnv& env2, AgreementObserver& obs2) const override {
        auto copy = std::make_unique<OligarchicAgreement>(*this);
        copy->rebind(env2, obs2);
        return copy;
    }

    bool owns(const std::string& key) const { return owned_.count(key) > 0; }

    bool quiesced() const override {
        return queue_.empty() && tallies_.empty() && pending_.empty() && acq_.req_id < 0;
    }

private:
    struct SlotEntry {
        Epoch epoch = -1;
        Command cmd;
        bool has_cmd = false;
        bool stable = false;
    };

    struct KeyState {
        Epoch promised = -1;
        std::map<long long, SlotEntry> log;  // seq ≥ 1
        long long next_seq = 1;              // meaningful at the owner
        long long satisfied_prefix = 0;      // stable and learned (or noop) up to here
    };

    struct Acquisition {
        long long req_id = -1;
        Epoch epoch = -1;
        bool all = false;
        std::vector<std::string> keys;
        std::set<NodeId> grants;
        bool done = false;
        // merged remote state per key
        std::map<std::string, std::map<long long, SlotEntry>> remote;
        std::map<std::string, long long> high;
    };

    struct OrderTally {
        std::vector<std::pair<std::string, long long>> slots;
        Epoch tag = -1;
        std::set<NodeId> acks;
        Command cmd;
        bool done = false;
    };

    Epoch key_floor(const std::string& k) const {
        auto it = keys_.find(k);
        Epoch p = it == keys_.end() ? -1 : it->second.promised;
        return std::max(p, global_promised_);
    }

    // --- proposer side --------------------------------------------------------

    void process_queue() {
        bool progress = true;
        while (progress && !queue_.empty()) {
            progress = false;
            Command cmd = queue_.front();
            // completed elsewhere, stable already, or re-accepted by repair
            if (learned(cmd.id) || pending_.count(cmd.id) || tally_in_flight(cmd.id)) {
                queue_.pop_front();
                progress = true;
                continue;
            }
            if (cmd.kind == CommandKind::Terminate ? owned_all_ >= 0 : owns_all_keys(cmd)) {
                queue_.pop_front();
                order(cmd);
                progress = true;
            }
        }
        if (!queue_.empty() && acq_.req_id < 0 && !backoff_armed_) start_acquisition();
    }

    bool owns_all_keys(const Command& cmd) const {
        for (const auto& k : cmd.keys)
            if (!owned_.count(k)) return false;
        return true;
    }

    void start_acquisition() {
        const Command& cmd = queue_.front();
        acq_ = Acquisition{};
        acq_.req_id = next_req_id_++;
        acq_.all = cmd.kind == CommandKind::Terminate || cmd.all_keys;
        Epoch floor = global_promised_;
        if (acq_.all) {
            for (const auto& [k, ks] : keys_) floor = std::max(floor, ks.promised);
        } else {
            for (const auto& k : cmd.keys)
                if (!owned_.count(k)) {
                    acq_.keys.push_back(k);
                    floor = std::max(floor, key_floor(k));
                }
        }
        acq_.epoch = next_epoch_for(std::max(floor, last_epoch_), env().self(),
                                    env().cluster_size());
        last_epoch_ = acq_.epoch;
        std::string msg = wire::join("acq", acq_.req_id, acq_.epoch, acq_.all ? 1 : 0);
        if (acq_.all) {
            wire::append_token(msg, static_cast<long long>(keys_.size()));
            for (const auto& [k, ks] : keys_) {
                wire::append_token(msg, k);
                wire::append_token(msg, ks.satisfied_prefix);
            }
        } else {
            wire::append_token(msg, static_cast<long long>(acq_.keys.size()));
            for (const auto& k : acq_.keys) {
                wire::append_token(msg, k);
                wire::append_token(msg, keys_.count(k) ? keys_[k].satisfied_prefix : 0);
            }
        }
        env().trace("acquire", wire::join(acq_.req_id, acq_.epoch, acq_.all ? "*" : ""));
        // self-grant runs through the same admission rule
        if (admit_acquisition(acq_.epoch, acq_.all, acq_.keys)) {
            acq_.grants.insert(env().self());
        } else {
            abort_acquisition();
            return;
        }
        env().broadcast(msg);
        maybe_finish_acquisition();
    }

    bool admit_acquisition(Epoch ep, bool all, const std::vector<std::string>& keys) {
        if (all) {
            if (ep <= global_promised_) return false;
            for (const auto& [k, ks] : keys_)
                if (ep <= ks.promised) return false;
            global_promised_ = ep;
            return true;
        }
        for (const auto& k : keys)
            if (ep <= key_floor(k)) return false;
        for (const auto& k : keys) keys_[k].promised = ep;
        return true;
    }

    void handle_acquire(NodeId src, const std::vector<std::string_view>& t) {
        long long req = wire::to_int(t[1]);
        Epoch ep = wire::to_int(t[2]);
        bool all = t[3] == "1";
        int count = static_cast<int>(wire::to_int(t[4]));
        std::map<std::string, long long> wm;
        for (int i = 0; i < count; ++i)
            wm[std::string(t[5 + 2 * i])] = wire::to_int(t[6 + 2 * i]);

        std::vector<std::string> keys;
        for (auto& [k, _] : wm) keys.push_back(k);
        if (!admit_acquisition(ep, all, keys)) {
            env().send(src, wire::join("acqa", req, 0, 0));
            return;
        }
        // report per-key state above the requester's stable watermark;
        // in all-mode cover every key this node knows
        std::vector<std::string> report = keys;
        if (all)
            for (const auto& [k, _] : keys_)
                if (!wm.count(k)) report.push_back(k);
        std::string msg = wire::join("acqa", req, 1, static_cast<long long>(report.size()));
        for (const auto& k : report) {
            long long from = wm.count(k) ? wm[k] : 0;
            auto it = keys_.find(k);
            wire::append_token(msg, k);
            if (it == keys_.end()) {
                wire::append_token(msg, 0);
                wire::append_token(msg, 0);
                continue;
            }
            long long high = it->second.log.empty() ? 0 : it->second.log.rbegin()->first;
            wire::append_token(msg, high);
            long long ecount = 0;
            std::string entries;
            for (const auto& [seq, e] : it->second.log) {
                if (seq <= from || !e.has_cmd) continue;
                wire::append_token(entries, seq);
                wire::append_token(entries, e.epoch);
                wire::append_token(entries, e.stable ? 1 : 0);
                wire::append_token(entries, e.cmd.text());
                ++ecount;
            }
            wire::append_token(msg, ecount);
            if (!entries.empty()) msg += " " + entries;
        }
        env().send(src, msg);
    }

    void handle_acquire_reply(NodeId src, const std::vector<std::string_view>& t) {
        long long req = wire::to_int(t[1]);
        if (acq_.req_id != req || acq_.done) return;
        bool ok = t[2] == "1";
        if (!ok) {
            abort_acquisition();
            return;
        }
        int kcount = static_cast<int>(wire::to_int(t[3]));
        size_t idx = 4;
        for (int i = 0; i < kcount; ++i) {
            std::string key(t[idx]);
            long long high = wire::to_int(t[idx + 1]);
            long long ecount = wire::to_int(t[idx + 2]);
            idx += 3;
            auto& h = acq_.high[key];
            h = std::max(h, high);
            for (long long e = 0; e < ecount; ++e) {
                long long seq = wire::to_int(t[idx]);
                Epoch ep = wire::to_int(t[idx + 1]);
                bool stable = t[idx + 2] == "1";
                Command cmd = Command::parse(t[idx + 3]);
                idx += 4;
                auto& slot = acq_.remote[key][seq];
                if (stable) {
                    slot = SlotEntry{ep, cmd, true, true};
                } else if (!slot.stable && ep > slot.epoch) {
                    slot = SlotEntry{ep, cmd, true, false};
                }
            }
        }
        acq_.grants.insert(src);
        maybe_finish_acquisition();
    }

    void maybe_finish_acquisition() {
        if (acq_.req_id < 0 || acq_.done) return;
        if (static_cast<int>(acq_.grants.size()) < env().classic_quorum()) return;
        acq_.done = true;
        backoff_attempt_ = 0;

        // take ownership
        std::set<std::string> affected;
        if (acq_.all) {
            owned_all_ = acq_.epoch;
            for (auto& [k, _] : keys_) affected.insert(k);
            for (auto& [k, _] : acq_.remote) affected.insert(k);
            for (const auto& k : affected) owned_[k] = acq_.epoch;
            env().trace("own", wire::join("*", acq_.epoch));
        } else {
            for (const auto& k : acq_.keys) {
                owned_[k] = acq_.epoch;
                affected.insert(k);
                env().trace("own", wire::join(k, acq_.epoch));
            }
        }

        // fold remote state in, repair holes, continue numbering after the
        // highest sequence any grantor has seen
        for (const auto& k : affected) {
            KeyState& ks = keys_[k];
            long long high = acq_.high.count(k) ? acq_.high[k] : 0;
            if (!ks.log.empty()) high = std::max(high, ks.log.rbegin()->first);
            auto rem_it = acq_.remote.find(k);
            for (long long s = ks.satisfied_prefix + 1; s <= high; ++s) {
                SlotEntry* remote = nullptr;
                if (rem_it != acq_.remote.end()) {
                    auto sit = rem_it->second.find(s);
                    if (sit != rem_it->second.end()) remote = &sit->second;
                }
                SlotEntry& local = ks.log[s];
                if (local.stable) continue;
                if (remote && remote->stable) {
                    store_stable(k, s, remote->cmd);
                } else if (remote && (!local.has_cmd || remote->epoch >= local.epoch)) {
                    re_accept(k, s, remote->cmd);
                } else if (local.has_cmd) {
                    re_accept(k, s, local.cmd);
                } else {
                    re_accept(k, s, Command::noop(static_cast<uint32_t>(s)));
                }
            }
            ks.next_seq = std::max(ks.next_seq, high + 1);
        }
        acq_ = Acquisition{};
        process_queue();
        pump_learns();
    }

    void abort_acquisition() {
        acq_ = Acquisition{};
        arm_backoff();
    }

    void arm_backoff() {
        if (backoff_armed_) return;
        backoff_armed_ = true;
        Time base = 2 * env().max_link_delay();
        Time cap_mult = 1LL << std::min(backoff_attempt_, 4);
        ++backoff_attempt_;
        Time d = base * cap_mult;
        d += static_cast<Time>(env().rng() % static_cast<uint64_t>(d));  // up to 2x
        d = std::min(d, 16 * base);
        env().set_timer(d, "bk");
    }

    // single-slot re-accept during repair collapses into the normal path
    void re_accept(const std::string& k, long long seq, const Command& cmd) {
        OrderTally tally;
        tally.slots = {{k, seq}};
        tally.tag = owned_[k];
        tally.cmd = cmd;
        send_accept(tally);
    }

    void order(const Command& cmd) {
        OrderTally tally;
        tally.cmd = cmd;
        Epoch tag = -1;
        if (cmd.kind == CommandKind::Terminate) {
            for (auto& [k, ks] : keys_) {
                tally.slots.emplace_back(k, ks.next_seq++);
                tag = std::max(tag, owned_[k]);
            }
            tag = std::max(tag, owned_all_);
        } else {
            for (const auto& k : cmd.keys) {
                tally.slots.emplace_back(k, keys_[k].next_seq++);
                tag = std::max(tag, owned_[k]);
            }
        }
        tally.tag = tag;
        send_accept(tally);
    }

    void send_accept(OrderTally tally) {
        std::string msg = wire::join("acc", tally.tag,
                                     static_cast<long long>(tally.slots.size()));
        for (auto& [k, seq] : tally.slots) {
            wire::append_token(msg, k);
            wire::append_token(msg, seq);
            wire::append_token(msg, owned_.count(k) ? owned_[k] : owned_all_);
        }
        wire::append_token(msg, tally.cmd.text());
        // self-accept
        for (auto& [k, seq] : tally.slots) {
            SlotEntry& e = keys_[k].log[seq];
            if (!e.stable) e = SlotEntry{owned_[k], tally.cmd, true, false};
        }
        tally.acks.insert(env().self());
        tallies_[tally_key(tally)] = tally;
        env().broadcast(msg);
        check_order_quorum(tally_key(tally));
    }

    static std::string tally_key(const OrderTally& t) {
        return t.cmd.id.text() + "@" + std::to_string(t.tag) + ":" +
               (t.slots.empty() ? std::string("-") : t.slots.front().first);
    }

    void handle_accept(NodeId src, const std::vector<std::string_view>& t) {
        Epoch tag = wire::to_int(t[1]);
        int count = static_cast<int>(wire::to_int(t[2]));
        std::vector<std::pair<std::string, long long>> slots;
        bool ok = true;
        size_t idx = 3;
        std::vector<Epoch> eps;
        for (int i = 0; i < count; ++i) {
            std::string k(t[idx]);
            long long seq = wire::to_int(t[idx + 1]);
            Epoch ep = wire::to_int(t[idx + 2]);
            idx += 3;
            if (ep < key_floor(k)) ok = false;
            slots.emplace_back(k, seq);
            eps.push_back(ep);
        }
        Command cmd = Command::parse(t.back());
        if (!ok) {
            env().send(src, wire::join("accn", cmd.id.text(), tag));
            return;
        }
        for (int i = 0; i < count; ++i) {
            auto& [k, seq] = slots[i];
            KeyState& ks = keys_[k];
            ks.promised = std::max(ks.promised, eps[i]);
            SlotEntry& e = ks.log[seq];
            if (!e.stable) e = SlotEntry{eps[i], cmd, true, false};
        }
        env().send(src, wire::join("acca", cmd.id.text(), tag));
    }

    void handle_accept_ack(NodeId src, const std::vector<std::string_view>& t) {
        for (auto& [key, tally] : tallies_) {
            if (tally.done || tally.cmd.id.text() != t[1] ||
                tally.tag != wire::to_int(t[2]))
                continue;
            tally.acks.insert(src);
            check_order_quorum(key);
            return;
        }
    }

    void check_order_quorum(const std::string& key) {
        auto it = tallies_.find(key);
        if (it == tallies_.end()) return;
        OrderTally& tally = it->second;
        if (tally.done || static_cast<int>(tally.acks.size()) < env().classic_quorum())
            return;
        tally.done = true;
        std::string msg = wire::join("stb", static_cast<long long>(tally.slots.size()));
        for (auto& [k, seq] : tally.slots) {
            wire::append_token(msg, k);
            wire::append_token(msg, seq);
        }
        wire::append_token(msg, tally.cmd.text());
        env().broadcast(msg);
        apply_stable(tally.slots, tally.cmd);
        tallies_.erase(it);
    }

    void apply_stable(const std::vector<std::pair<std::string, long long>>& slots,
                      const Command& cmd) {
        for (auto& [k, seq] : slots) store_stable(k, seq, cmd);
        if (slots.empty() && !cmd.is_noop() && !learned(cmd.id))
            pending_.emplace(cmd.id, Pending{cmd, {}});
        pump_learns();
    }

    void handle_accept_nack(const std::vector<std::string_view>& t) {
        std::string id(t[1]);
        Epoch tag = wire::to_int(t[2]);
        for (auto it = tallies_.begin(); it != tallies_.end(); ++it) {
            OrderTally& tally = it->second;
            if (tally.done || tally.cmd.id.text() != id || tally.tag != tag) continue;
            // ownership lost: requeue unless it completed through repair
            Command cmd = tally.cmd;
            for (auto& [k, _] : tally.slots) owned_.erase(k);
            if (cmd.kind == CommandKind::Terminate || cmd.all_keys) owned_all_ = -1;
            tallies_.erase(it);
            if (!cmd.is_noop() && !learned(cmd.id) && !queued(cmd.id) &&
                !pending_.count(cmd.id))
                queue_.push_back(cmd);
            arm_backoff();
            return;
        }
    }

    bool queued(CommandId id) const {
        for (const auto& c : queue_)
            if (c.id == id) return true;
        return false;
    }

    bool tally_in_flight(CommandId id) const {
        for (const auto& [_, t] : tallies_)
            if (!t.done && t.cmd.id == id) return true;
        return false;
    }

    // --- stability and learning ------------------------------------------------

    void handle_stable(const std::vector<std::string_view>& t) {
        int count = static_cast<int>(wire::to_int(t[1]));
        Command cmd = Command::parse(t.back());
        std::vector<std::pair<std::string, long long>> slots;
        size_t idx = 2;
        for (int i = 0; i < count; ++i) {
            slots.emplace_back(std::string(t[idx]), wire::to_int(t[idx + 1]));
            idx += 2;
        }
        apply_stable(slots, cmd);
    }

    struct Pending {
        Command cmd;
        std::vector<std::pair<std::string, long long>> slots;
    };

    void store_stable(const std::string& k, long long seq, const Command& cmd) {
        KeyState& ks = keys_[k];
        SlotEntry& e = ks.log[seq];
        e.cmd = cmd;
        e.has_cmd = true;
        e.stable = true;
        if (!cmd.is_noop() && !learned(cmd.id)) {
            auto [it, fresh] = pending_.emplace(cmd.id, Pending{cmd, {}});
            it->second.slots.emplace_back(k, seq);
        }
    }

    bool slot_satisfied(const KeyState& ks, long long seq) const {
        auto it = ks.log.find(seq);
        if (it == ks.log.end() || !it->second.stable) return false;
        return it->second.cmd.is_noop() || learned(it->second.cmd.id);
    }

    void advance_prefixes() {
        for (auto& [k, ks] : keys_)
            while (slot_satisfied(ks, ks.satisfied_prefix + 1)) ++ks.satisfied_prefix;
    }

    void pump_learns() {
        bool progress = true;
        while (progress) {
            progress = false;
            advance_prefixes();
            std::vector<CommandId> ready;
            for (auto& [id, p] : pending_) {
                if (learned(id)) {
                    ready.push_back(id);  // cleanup only
                    continue;
                }
                bool ok = true;
                for (auto& [k, seq] : p.slots) {
                    const KeyState& ks = keys_.at(k);
                    if (ks.satisfied_prefix < seq - 1 ||
                        (ks.log.count(seq) && !ks.log.at(seq).stable)) {
                        ok = false;
                        break;
                    }
                }
                if (ok) ready.push_back(id);
            }
            for (CommandId id : ready) {
                auto it = pending_.find(id);
                if (it == pending_.end()) continue;
                Command cmd = it->second.cmd;
                std::string ordinal;
                for (auto& [k, seq] : it->second.slots)
                    ordinal += k + ":" + std::to_string(seq) + ",";
                if (ordinal.empty()) ordinal = "-";
                pending_.erase(it);
                if (!learned(cmd.id)) {
                    if (cmd.kind == CommandKind::Terminate) terminate_learned_ = true;
                    emit_learn(cmd, ordinal);
                    progress = true;
                }
            }
        }
    }

    std::map<std::string, KeyState> keys_;
    std::map<std::string, Epoch> owned_;
    Epoch owned_all_ = -1;
    Epoch global_promised_ = -1;
    Epoch last_epoch_ = -1;

    std::deque<Command> queue_;
    std::set<CommandId> known_cmds_;
    Acquisition acq_;
    long long next_req_id_ = 0;
    std::map<std::string, OrderTally> tallies_;
    std::map<CommandId, Pending> pending_;

    int backoff_attempt_ = 0;
    bool backoff_armed_ = false;
    bool terminate_learned_ = false;
};

}  // namespace spectrum
