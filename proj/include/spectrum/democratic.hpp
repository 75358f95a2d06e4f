#pragma once

#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "spectrum/plugin.hpp"

// Democratic family: a leaderless dependency-graph protocol. A proposer
// preaccepts to a fast quorum with its local dependency estimate; if all
// replies agree a command commits after two message delays, otherwise one
// accept round on a classic quorum fixes the union of the dependencies.
// Execution linearizes the committed graph, breaking strongly connected
// components by cmd_id.
//
// Dependencies are per-replica instance watermarks over conflicting
// commands, so zero-conflict workloads carry empty dependencies and always
// take the fast path.

namespace spectrum {

class DemocraticAgreement final : public Agreement {
public:
    DemocraticAgreement(EraId era, NodeEnv& env, AgreementObserver& obs)
        : Agreement(era, ProtocolKind::Democratic, env, obs) {
        int n = env.cluster_size();
        all_wm_.assign(n, -1);
        any_wm_.assign(n, -1);
        delivered_prefix_.assign(n, -1);
    }

    void on_start() override { env().set_timer(recovery_scan_period(), "rec"); }

    ProposeResult propose(const Command& cmd) override {
        if (terminate_delivered_) return ProposeResult::EraClosed;
        if (known_cmds_.count(cmd.id)) return ProposeResult::Accepted;
        NodeId self = env().self();
        long long n = own_next_++;
        Inst& inst = insts_[{self, n}];
        inst.cmd = cmd;
        inst.has_cmd = true;
        inst.deps = compute_deps(cmd);
        inst.phase = Phase::PreAccepted;
        inst.started_at = env().now();
        inst.pa_first_reply = true;
        register_instance(cmd, self, n);
        std::string msg = wire::join("pa", self, n);
        append_deps(msg, inst.deps);
        wire::append_token(msg, cmd.text());
        env().broadcast(msg);
        maybe_fast_commit(self, n);  // degenerate single-node clusters
        return ProposeResult::Accepted;
    }

    void on_message(NodeId src, std::string_view body) override {
        auto t = wire::split(body);
        NodeId r = static_cast<NodeId>(wire::to_int(t[1]));
        long long n = wire::to_int(t[2]);
        if (t[0] == "pa") {
            handle_preaccept(src, r, n, parse_deps(t, 3), Command::parse(t.back()));
        } else if (t[0] == "paa") {
            handle_preaccept_ack(r, n, parse_deps(t, 3));
        } else if (t[0] == "acc") {
            handle_accept(src, r, n, wire::to_int(t[3]), parse_deps(t, 4),
                          Command::parse(t.back()));
        } else if (t[0] == "acca") {
            handle_accept_ack(src, r, n, wire::to_int(t[3]));
        } else if (t[0] == "cmt") {
            handle_commit(r, n, parse_deps(t, 3), Command::parse(t.back()));
        } else if (t[0] == "prep") {
            handle_prepare(src, r, n, wire::to_int(t[3]));
        } else if (t[0] == "prepa") {
            handle_prepare_ack(src, r, n, body);
        } else if (t[0] == "nack") {
            handle_nack(r, n, wire::to_int(t[3]));
        }
    }

    void on_timer(std::string_view token) override {
        if (token == "rec") {
            recovery_scan();
            env().set_timer(recovery_scan_period(), "rec");
        }
    }

    std::string fingerprint() const override {
        std::string s = "dem";
        for (const auto& [key, inst] : insts_) {
            wire::append_token(s, key.first);
            wire::append_token(s, key.second);
            wire::append_token(s, static_cast<int>(inst.phase));
            wire::append_token(s, inst.promised);
            wire::append_token(s, inst.accepted_ballot);
            wire::append_token(s, inst.my_ballot);
            wire::append_token(s, inst.delivered ? 1 : 0);
            wire::append_token(s, inst.pa_acks);
            wire::append_token(s, inst.pa_identical ? 1 : 0);
            wire::append_token(s, static_cast<long long>(inst.acc_acks.size()));
            wire::append_token(s, inst.prep_acks);
            wire::append_token(s, inst.has_cmd ? inst.cmd.id.text() : "-");
            for (long long d : inst.deps) wire::append_token(s, d);
            for (long long d : inst.pa_union) wire::append_token(s, d);
        }
        return s;
    }

    std::unique_ptr<Agreement> clone(NodeEnv& env2, AgreementObserver& obs2) const override {
        auto copy = std::make_unique<DemocraticAgreement>(*this);
        copy->rebind(env2, obs2);
        return copy;
    }

    bool quiesced() const override {
        for (const auto& [key, inst] : insts_)
            if (inst.has_cmd && (inst.phase != Phase::Committed || !inst.delivered))
                return false;
        return true;
    }

    // committed dependency vector of an instance, for the edge-agreement checks
    const std::vector<long long>* committed_deps(NodeId r, long long n) const {
        auto it = insts_.find({r, n});
        if (it == insts_.end() || it->second.phase != Phase::Committed) return nullptr;
        return &it->second.deps;
    }

private:
    enum class Phase { None = 0, PreAccepted = 1, Accepted = 2, Committed = 3 };

    struct Inst {
        Command cmd;
        bool has_cmd = false;
        std::vector<long long> deps;
        Phase phase = Phase::None;
        Epoch promised = -1;        // highest ballot seen; 0 is the default round
        Epoch accepted_ballot = -1;
        bool delivered = false;
        Time started_at = 0;

        // proposer-side tallies (default-ballot round)
        int pa_acks = 1;
        bool pa_first_reply = false;
        bool pa_identical = true;
        std::vector<long long> pa_reply;
        std::vector<long long> pa_union;
        std::set<NodeId> acc_acks;

        // recovery
        Epoch my_ballot = -1;
        int prep_acks = 0;
        std::vector<std::pair<NodeId, std::string>> prep_replies;
    };

    Time recovery_scan_period() const { return 4 * env().max_link_delay(); }
    Time recovery_timeout() const {
        return 10 * env().max_link_delay() + env().self() * env().max_link_delay();
    }

    static void append_deps(std::string& msg, const std::vector<long long>& deps) {
        for (long long d : deps) wire::append_token(msg, d);
    }
    std::vector<long long> parse_deps(const std::vector<std::string_view>& t, size_t from) const {
        std::vector<long long> deps(env().cluster_size(), -1);
        for (size_t i = 0; i < deps.size(); ++i) deps[i] = wire::to_int(t[from + i]);
        return deps;
    }

    // --- dependency bookkeeping ---------------------------------------------

    std::vector<long long> compute_deps(const Command& cmd) const {
        int n = env().cluster_size();
        std::vector<long long> deps(n, -1);
        if (cmd.all_keys) {
            for (int r = 0; r < n; ++r) deps[r] = any_wm_[r];
            return deps;
        }
        for (const auto& k : cmd.keys) {
            auto it = key_wm_.find(k);
            if (it == key_wm_.end()) continue;
            for (int r = 0; r < n; ++r) deps[r] = std::max(deps[r], it->second[r]);
        }
        if (!cmd.keys.empty())
            for (int r = 0; r < n; ++r) deps[r] = std::max(deps[r], all_wm_[r]);
        return deps;
    }

    void register_instance(const Command& cmd, NodeId r, long long n) {
        known_cmds_.insert(cmd.id);
        if (cmd.all_keys) {
            all_wm_[r] = std::max(all_wm_[r], n);
            any_wm_[r] = std::max(any_wm_[r], n);
            return;
        }
        for (const auto& k : cmd.keys) {
            auto& wm = key_wm_[k];
            if (wm.empty()) wm.assign(env().cluster_size(), -1);
            wm[r] = std::max(wm[r], n);
        }
        if (!cmd.keys.empty()) any_wm_[r] = std::max(any_wm_[r], n);
    }

    static void merge_deps(std::vector<long long>& into, const std::vector<long long>& from) {
        for (size_t i = 0; i < into.size(); ++i) into[i] = std::max(into[i], from[i]);
    }

    // --- default-ballot round -----------------------------------------------

    void handle_preaccept(NodeId src, NodeId r, long long n, std::vector<long long> deps,
                          Command cmd) {
        Inst& inst = insts_[{r, n}];
        if (inst.phase == Phase::None) {
            merge_deps(deps, compute_deps(cmd));
            inst.cmd = cmd;
            inst.has_cmd = true;
            inst.deps = std::move(deps);
            inst.phase = Phase::PreAccepted;
            inst.started_at = env().now();
            register_instance(cmd, r, n);
        }
        if (inst.promised > 0) return;  // a recovery round owns this instance now
        if (inst.phase != Phase::PreAccepted) return;
        std::string msg = wire::join("paa", r, n);
        append_deps(msg, inst.deps);
        env().send(src, msg);
    }

    void handle_preaccept_ack(NodeId r, long long n, std::vector<long long> deps) {
        auto it = insts_.find({r, n});
        if (it == insts_.end()) return;
        Inst& inst = it->second;
        if (inst.phase != Phase::PreAccepted || r != env().self() || inst.my_ballot >= 0)
            return;
        if (inst.pa_first_reply) {
            inst.pa_reply = deps;
            inst.pa_union = inst.deps;
            inst.pa_first_reply = false;
        } else if (deps != inst.pa_reply) {
            inst.pa_identical = false;
        }
        merge_deps(inst.pa_union, deps);
        ++inst.pa_acks;
        maybe_fast_commit(r, n);
    }

    void maybe_fast_commit(NodeId r, long long n) {
        Inst& inst = insts_[{r, n}];
        if (inst.phase != Phase::PreAccepted || r != env().self()) return;
        if (inst.pa_acks < env().fast_quorum()) return;
        if (inst.pa_identical) {
            // two message delays end to end
            env().trace("commit", wire::join("fast", r, n));
            std::vector<long long> final_deps =
                inst.pa_first_reply ? inst.deps : inst.pa_reply;
            broadcast_commit(r, n, final_deps, inst.cmd);
            commit(r, n, final_deps, inst.cmd);
        } else {
            env().trace("commit", wire::join("slow", r, n));
            inst.phase = Phase::Accepted;
            inst.accepted_ballot = 0;
            inst.deps = inst.pa_union;
            inst.acc_acks = {env().self()};
            std::string msg = wire::join("acc", r, n, 0);
            append_deps(msg, inst.deps);
            wire::append_token(msg, inst.cmd.text());
            env().broadcast(msg);
        }
    }

    void handle_accept(NodeId src, NodeId r, long long n, Epoch ballot,
                       std::vector<long long> deps, Command cmd) {
        Inst& inst = insts_[{r, n}];
        if (inst.phase == Phase::Committed) return;
        if (ballot < inst.promised) {
            env().send(src, wire::join("nack", r, n, ballot));
            return;
        }
        bool fresh = inst.phase == Phase::None;
        inst.promised = ballot;
        inst.cmd = std::move(cmd);
        inst.has_cmd = true;
        inst.deps = std::move(deps);
        inst.phase = Phase::Accepted;
        inst.accepted_ballot = ballot;
        if (inst.started_at == 0) inst.started_at = env().now();
        if (fresh) register_instance(inst.cmd, r, n);
        env().send(src, wire::join("acca", r, n, ballot));
    }

    void handle_accept_ack(NodeId src, NodeId r, long long n, Epoch ballot) {
        auto it = insts_.find({r, n});
        if (it == insts_.end()) return;
        Inst& inst = it->second;
        if (inst.phase != Phase::Accepted || inst.accepted_ballot != ballot) return;
        bool mine = (ballot == 0 && r == env().self()) || ballot == inst.my_ballot;
        if (!mine) return;
        inst.acc_acks.insert(src);
        if (static_cast<int>(inst.acc_acks.size()) < env().classic_quorum()) return;
        broadcast_commit(r, n, inst.deps, inst.cmd);
        commit(r, n, inst.deps, inst.cmd);
    }

    void broadcast_commit(NodeId r, long long n, const std::vector<long long>& deps,
                          const Command& cmd) {
        std::string msg = wire::join("cmt", r, n);
        append_deps(msg, deps);
        wire::append_token(msg, cmd.text());
        env().broadcast(msg);
    }

    void handle_commit(NodeId r, long long n, std::vector<long long> deps, Command cmd) {
        commit(r, n, std::move(deps), std::move(cmd));
    }

    void commit(NodeId r, long long n, std::vector<long long> deps, Command cmd) {
        Inst& inst = insts_[{r, n}];
        if (inst.phase == Phase::Committed) return;
        bool fresh = inst.phase == Phase::None;
        inst.cmd = std::move(cmd);
        inst.has_cmd = true;
        inst.deps = std::move(deps);
        inst.phase = Phase::Committed;
        if (fresh) register_instance(inst.cmd, r, n);
        execute_pass();
    }

    // --- recovery -------------------------------------------------------------

    void recovery_scan() {
        std::vector<std::pair<NodeId, long long>> stuck;
        for (auto& [key, inst] : insts_) {
            if (inst.phase == Phase::PreAccepted || inst.phase == Phase::Accepted) {
                if (env().now() - inst.started_at > recovery_timeout() && inst.has_cmd)
                    stuck.push_back(key);
            }
        }
        for (auto& key : stuck) start_recovery(key.first, key.second);
    }

    void start_recovery(NodeId r, long long n) {
        Inst& inst = insts_[{r, n}];
        inst.my_ballot = next_epoch_for(std::max<Epoch>(inst.promised, 0), env().self(),
                                        env().cluster_size());
        inst.promised = inst.my_ballot;
        inst.prep_acks = 1;  // self
        inst.prep_replies.clear();
        inst.prep_replies.emplace_back(env().self(), own_prepare_state(inst));
        inst.started_at = env().now();
        env().trace("dem_recover", wire::join(r, n, inst.my_ballot));
        env().broadcast(wire::join("prep", r, n, inst.my_ballot));
        maybe_finish_prepare(r, n);
    }

    std::string own_prepare_state(const Inst& inst) const {
        std::string s = wire::join(static_cast<int>(inst.phase), inst.accepted_ballot);
        append_deps(s, inst.deps.empty()
                           ? std::vector<long long>(env().cluster_size(), -1)
                           : inst.deps);
        wire::append_token(s, inst.has_cmd ? inst.cmd.text() : "0.0|Client||");
        return s;
    }

    void handle_prepare(NodeId src, NodeId r, long long n, Epoch ballot) {
        Inst& inst = insts_[{r, n}];
        if (ballot <= inst.promised) {
            env().send(src, wire::join("nack", r, n, ballot));
            return;
        }
        inst.promised = ballot;
        env().send(src, wire::join("prepa", r, n, ballot) + " " + own_prepare_state(inst));
    }

    void handle_prepare_ack(NodeId src, NodeId r, long long n, std::string_view body) {
        auto toks = wire::split(body);
        Epoch ballot = wire::to_int(toks[3]);
        auto it = insts_.find({r, n});
        if (it == insts_.end()) return;
        Inst& inst = it->second;
        if (inst.my_ballot != ballot || inst.phase == Phase::Committed) return;
        std::string state;
        for (size_t i = 4; i < toks.size(); ++i) wire::append_token(state, toks[i]);
        inst.prep_replies.emplace_back(src, state);
        ++inst.prep_acks;
        maybe_finish_prepare(r, n);
    }

    void maybe_finish_prepare(NodeId r, long long n) {
        Inst& inst = insts_[{r, n}];
        if (inst.my_ballot < 0 || inst.prep_acks < env().classic_quorum()) return;
        if (inst.phase == Phase::Committed) return;

        struct Reply {
            NodeId from;
            Phase phase;
            Epoch acc_ballot;
            std::vector<long long> deps;
            Command cmd;
            bool has_cmd;
        };
        std::vector<Reply> replies;
        for (auto& [from, state] : inst.prep_replies) {
            auto t = wire::split(state);
            Reply rep;
            rep.from = from;
            rep.phase = static_cast<Phase>(wire::to_int(t[0]));
            rep.acc_ballot = wire::to_int(t[1]);
            rep.deps = parse_deps(t, 2);
            rep.cmd = Command::parse(t.back());
            rep.has_cmd = rep.phase != Phase::None;
            replies.push_back(std::move(rep));
        }
        Epoch ballot = inst.my_ballot;
        inst.my_ballot = -1;
        inst.prep_replies.clear();

        // committed anywhere wins outright
        for (auto& rep : replies)
            if (rep.phase == Phase::Committed) {
                broadcast_commit(r, n, rep.deps, rep.cmd);
                commit(r, n, rep.deps, rep.cmd);
                return;
            }
        // otherwise the highest accepted ballot
        const Reply* best = nullptr;
        for (auto& rep : replies)
            if (rep.phase == Phase::Accepted &&
                (!best || rep.acc_ballot > best->acc_ballot))
                best = &rep;
        if (best) {
            force_accept(r, n, ballot, best->deps, best->cmd);
            return;
        }
        // default-ballot preaccepts only: a fast-path commit may exist when
        // enough identical dependency vectors survive; the threshold is the
        // guaranteed overlap between any fast quorum and any classic quorum
        int threshold = env().fast_quorum() + env().classic_quorum() - env().cluster_size();
        std::map<std::vector<long long>, int> groups;
        const Command* cmd = nullptr;
        std::vector<long long> uni(env().cluster_size(), -1);
        for (auto& rep : replies) {
            if (rep.phase != Phase::PreAccepted) continue;
            cmd = &rep.cmd;
            ++groups[rep.deps];
            merge_deps(uni, rep.deps);
        }
        if (!cmd) return;  // nobody holds the command; nothing forced this round
        for (auto& [deps, count] : groups)
            if (count >= threshold) {
                force_accept(r, n, ballot, deps, *cmd);
                return;
            }
        force_accept(r, n, ballot, uni, *cmd);
    }

    void force_accept(NodeId r, long long n, Epoch ballot,
                      const std::vector<long long>& deps, const Command& cmd) {
        Inst& inst = insts_[{r, n}];
        inst.cmd = cmd;
        inst.has_cmd = true;
        inst.deps = deps;
        inst.phase = Phase::Accepted;
        inst.accepted_ballot = ballot;
        inst.my_ballot = ballot;
        inst.acc_acks = {env().self()};
        std::string msg = wire::join("acc", r, n, ballot);
        append_deps(msg, deps);
        wire::append_token(msg, cmd.text());
        env().broadcast(msg);
    }

    void handle_nack(NodeId r, long long n, Epoch ballot) {
        auto it = insts_.find({r, n});
        if (it == insts_.end()) return;
        Inst& inst = it->second;
        if (ballot != inst.my_ballot && !(ballot == 0 && r == env().self())) return;
        // back off; the periodic scan retries with a higher ballot
        inst.my_ballot = -1;
        inst.started_at = env().now() + (env().rng() % recovery_timeout());
    }

    // --- execution ------------------------------------------------------------

    void execute_pass() {
        // subgraph of committed, undelivered instances in deterministic order
        std::vector<std::pair<NodeId, long long>> order;
        std::map<std::pair<NodeId, long long>, int> index;
        for (auto& [key, inst] : insts_)
            if (inst.phase == Phase::Committed && !inst.delivered) {
                index[key] = static_cast<int>(order.size());
                order.push_back(key);
            }
        if (order.empty()) return;

        int m = static_cast<int>(order.size());
        std::vector<std::vector<int>> edges(m);
        std::vector<bool> blocked(m, false);
        for (int i = 0; i < m; ++i) {
            const Inst& inst = insts_[order[i]];
            for (NodeId r = 0; r < env().cluster_size(); ++r) {
                for (long long j = inst.deps[r]; j > delivered_prefix_[r]; --j) {
                    auto dep_it = insts_.find({r, j});
                    if (dep_it == insts_.end() || dep_it->second.phase != Phase::Committed) {
                        blocked[i] = true;
                        continue;
                    }
                    if (dep_it->second.delivered) continue;
                    edges[i].push_back(index[{r, j}]);
                }
            }
        }

        // iterative Tarjan; SCCs pop in dependency-first order
        std::vector<int> idx(m, -1), low(m, 0), comp(m, -1);
        std::vector<bool> on_stack(m, false);
        std::vector<int> stack;
        std::vector<std::vector<int>> sccs;
        int counter = 0;
        for (int root = 0; root < m; ++root) {
            if (idx[root] != -1) continue;
            std::vector<std::pair<int, size_t>> call{{root, 0}};
            idx[root] = low[root] = counter++;
            stack.push_back(root);
            on_stack[root] = true;
            while (!call.empty()) {
                auto& [u, ei] = call.back();
                if (ei < edges[u].size()) {
                    int v = edges[u][ei++];
                    if (idx[v] == -1) {
                        idx[v] = low[v] = counter++;
                        stack.push_back(v);
                        on_stack[v] = true;
                        call.push_back({v, 0});
                    } else if (on_stack[v]) {
                        low[u] = std::min(low[u], idx[v]);
                    }
                } else {
                    if (low[u] == idx[u]) {
                        std::vector<int> scc;
                        while (true) {
                            int v = stack.back();
                            stack.pop_back();
                            on_stack[v] = false;
                            comp[v] = static_cast<int>(sccs.size());
                            scc.push_back(v);
                            if (v == u) break;
                        }
                        sccs.push_back(std::move(scc));
                    }
                    call.pop_back();
                    if (!call.empty()) low[call.back().first] = std::min(low[call.back().first], low[u]);
                }
            }
        }

        std::vector<bool> scc_ready(sccs.size(), false);
        bool delivered_any = false;
        for (size_t s = 0; s < sccs.size(); ++s) {
            bool ready = true;
            for (int v : sccs[s]) {
                if (blocked[v]) ready = false;
                for (int w : edges[v])
                    if (comp[w] != static_cast<int>(s) && !scc_ready[comp[w]]) ready = false;
            }
            scc_ready[s] = ready;
            if (!ready) continue;
            // deterministic order inside a component: smallest cmd_id first
            std::vector<int> members = sccs[s];
            std::sort(members.begin(), members.end(), [&](int a, int b) {
                return insts_[order[a]].cmd.id < insts_[order[b]].cmd.id;
            });
            for (int v : members) {
                Inst& inst = insts_[order[v]];
                inst.delivered = true;
                delivered_any = true;
                if (inst.cmd.kind == CommandKind::Terminate) terminate_delivered_ = true;
                emit_learn(inst.cmd, "r" + std::to_string(order[v].first) + "." +
                                          std::to_string(order[v].second));
            }
        }
        if (delivered_any) advance_delivered_prefix();
    }

    void advance_delivered_prefix() {
        for (NodeId r = 0; r < env().cluster_size(); ++r) {
            long long j = delivered_prefix_[r];
            while (true) {
                auto it = insts_.find({r, j + 1});
                if (it == insts_.end() || !it->second.delivered) break;
                ++j;
            }
            delivered_prefix_[r] = j;
        }
    }

    std::map<std::pair<NodeId, long long>, Inst> insts_;
    long long own_next_ = 0;
    std::map<std::string, std::vector<long long>> key_wm_;
    std::vector<long long> all_wm_;  // instances carrying ALL
    std::vector<long long> any_wm_;  // instances carrying any non-empty key set
    std::vector<long long> delivered_prefix_;
    std::set<CommandId> known_cmds_;
    bool terminate_delivered_ = false;
};

}  // namespace spectrum
