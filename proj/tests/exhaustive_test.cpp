// Bounded exhaustive interleaving checks at three nodes: the independent
// oracle for switch agreement (with recovery), monarchic slot agreement and
// democratic dependency-edge agreement.

#include <gtest/gtest.h>

#include "explore.hpp"
#include "spectrum/democratic.hpp"
#include "spectrum/meta.hpp"
#include "spectrum/monarchic.hpp"
#include "spectrum/node.hpp"

using namespace spectrum;
using spectrum::testing::delivery_actions;
using spectrum::testing::explore;
using spectrum::testing::ExploreMsg;
using spectrum::testing::ExploreStats;

namespace {

// ---------------------------------------------------------------------------
// Meta-consensus world: era 1 pre-decided, node 0 proposes the era-2 switch.
// ---------------------------------------------------------------------------

struct MetaWorld {
    struct Env final : NodeEnv {
        MetaWorld* w = nullptr;
        NodeId id = 0;
        uint64_t rng_c = 0;

        NodeId self() const override { return id; }
        int cluster_size() const override { return 3; }
        Time now() const override { return w->clock; }
        NodeId omega_leader() const override { return w->omega_for(id); }
        uint64_t rng() override { return wire::mix64(++rng_c ^ (id * 7919ULL)); }
        Time max_link_delay() const override { return 100 * kMs; }
        void send(NodeId dst, std::string msg) override {
            if (w->crashed[id]) return;
            if (msg.rfind("meta ", 0) != 0) return;  // era protocols out of scope here
            if (w->crashed[dst]) return;
            w->pending.push_back({id, dst, std::move(msg)});
        }
        void set_timer(Time, std::string) override {}
        void trace(const char*, std::string) override {}
        bool crash_point(const char* tag) override {
            if (w->armed_decide_crash == id && std::string_view(tag) == "meta_decide" &&
                !w->crashed[id] && w->crash_budget > 0) {
                w->do_crash(id);
                return true;
            }
            return false;
        }
    };

    // configuration
    bool adversarial_leader = false;
    bool allow_plain_crash = true;
    NodeId armed_decide_crash = -1;
    ProtocolKind target = ProtocolKind::Oligarchic;

    // state
    int crash_budget = 1;
    std::vector<ExploreMsg> pending;
    std::vector<bool> crashed{false, false, false};
    std::vector<int> watch_budget{2, 2, 2};
    Time clock = 0;
    std::vector<std::unique_ptr<Env>> envs;
    std::vector<std::unique_ptr<MetaNode>> nodes;

    MetaWorld() {
        for (NodeId i = 0; i < 3; ++i) {
            envs.push_back(std::make_unique<Env>());
            envs.back()->w = this;
            envs.back()->id = i;
            nodes.push_back(std::make_unique<MetaNode>(*envs.back(), default_registry(),
                                                       ProtocolKind::Monarchic));
            nodes.back()->handle_meta_message(0, "dec 1 MONARCHIC");
        }
    }

    void start() { nodes[0]->era_propose(Command::switch_to(target)); }

    MetaWorld(const MetaWorld& o)
        : adversarial_leader(o.adversarial_leader),
          allow_plain_crash(o.allow_plain_crash),
          armed_decide_crash(o.armed_decide_crash),
          target(o.target),
          crash_budget(o.crash_budget),
          pending(o.pending),
          crashed(o.crashed),
          watch_budget(o.watch_budget),
          clock(o.clock) {
        for (NodeId i = 0; i < 3; ++i) {
            envs.push_back(std::make_unique<Env>());
            envs.back()->w = this;
            envs.back()->id = i;
            envs.back()->rng_c = o.envs[i]->rng_c;
            nodes.push_back(o.nodes[i]->clone(*envs.back()));
        }
    }

    NodeId omega_for(NodeId observer) const {
        if (adversarial_leader && !crashed[observer]) return observer;
        for (NodeId p = 0; p < 3; ++p)
            if (!crashed[p]) return p;
        return observer;
    }

    void do_crash(NodeId k) {
        crashed[k] = true;
        --crash_budget;
        std::vector<ExploreMsg> keep;
        for (auto& m : pending)
            if (m.dst != k) keep.push_back(m);
        pending.swap(keep);
    }

    bool watch_enabled(NodeId k) const {
        if (crashed[k] || watch_budget[k] <= 0) return false;
        if (omega_for(k) != k) return false;
        const MetaNode& n = *nodes[k];
        if (n.switch_in_flight()) return false;
        EraId era = n.last_decided() + 1;
        if (n.has_decided(era)) return false;
        return n.vdec(era) != nullptr;
    }

    std::vector<std::string> enabled_actions() const {
        auto out = delivery_actions(pending, crashed);
        if (allow_plain_crash && crash_budget > 0 && armed_decide_crash < 0)
            for (NodeId k = 0; k < 3; ++k)
                if (!crashed[k]) out.push_back("c" + std::to_string(k));
        for (NodeId k = 0; k < 3; ++k)
            if (watch_enabled(k)) out.push_back("w" + std::to_string(k));
        return out;
    }

    void apply(const std::string& a) {
        if (a[0] == 'm') {
            size_t i = std::stoul(a.substr(1));
            ExploreMsg m = pending[i];
            pending.erase(pending.begin() + i);
            if (!crashed[m.dst]) nodes[m.dst]->handle_meta_message(m.src, m.payload.substr(5));
        } else if (a[0] == 'c') {
            do_crash(a[1] - '0');
        } else if (a[0] == 'w') {
            NodeId k = a[1] - '0';
            --watch_budget[k];
            nodes[k]->handle_meta_timer("watch");
        }
    }

    std::string fingerprint() const {
        std::vector<std::string> labels;
        for (auto& m : pending) labels.push_back(m.label());
        std::sort(labels.begin(), labels.end());
        std::string s;
        for (NodeId k = 0; k < 3; ++k) {
            s += crashed[k] ? "X" : "_";
            s += std::to_string(watch_budget[k]);
            s += nodes[k]->fingerprint();
            s += ";";
        }
        for (auto& l : labels) s += l + "|";
        return s;
    }
};

void assert_switch_agreement(const MetaWorld& w) {
    bool have = false;
    ProtocolKind kind = ProtocolKind::Monarchic;
    for (NodeId k = 0; k < 3; ++k) {
        if (!w.nodes[k]->has_decided(2)) continue;
        ProtocolKind d = w.nodes[k]->decided_kind(2);
        if (have) {
            ASSERT_EQ(d, kind) << "two nodes decided different switches for era 2";
        } else {
            have = true;
            kind = d;
        }
    }
}

TEST(ExhaustiveMeta, SwitchAgreementAndRecoveryCompletes) {
    MetaWorld init;
    init.start();
    size_t completed = 0;
    auto stats = explore<MetaWorld>(
        init, 48, [](const MetaWorld& w) { assert_switch_agreement(w); },
        [&](const MetaWorld& w) {
            // quiescent: every correct node finished the pending switch
            for (NodeId k = 0; k < 3; ++k) {
                if (w.crashed[k]) continue;
                ASSERT_TRUE(w.nodes[k]->has_decided(2)) << "node " << k << " never decided";
                ASSERT_EQ(w.nodes[k]->decided_kind(2), ProtocolKind::Oligarchic);
                ASSERT_EQ(w.nodes[k]->last_decided(), 2);
            }
            ++completed;
        });
    EXPECT_FALSE(stats.truncated);
    EXPECT_GT(stats.states, 100u);
    EXPECT_GT(completed, 0u);
}

TEST(ExhaustiveMeta, LeaderCrashRightBeforeDecideBroadcast) {
    MetaWorld init;
    init.armed_decide_crash = 0;
    init.allow_plain_crash = false;
    init.start();
    size_t crashed_runs = 0;
    auto stats = explore<MetaWorld>(
        init, 48, [](const MetaWorld& w) { assert_switch_agreement(w); },
        [&](const MetaWorld& w) {
            for (NodeId k = 1; k < 3; ++k) {
                if (w.crashed[k]) continue;
                ASSERT_TRUE(w.nodes[k]->has_decided(2)) << "node " << k;
                ASSERT_EQ(w.nodes[k]->decided_kind(2), ProtocolKind::Oligarchic);
            }
            if (w.crashed[0]) ++crashed_runs;
        });
    EXPECT_FALSE(stats.truncated);
    EXPECT_GT(crashed_runs, 0u);
}

// Two nodes transiently believing they lead: every interleaving of the
// competing recoveries decides exactly one value.
TEST(ExhaustiveMeta, ConcurrentRecoverersAreSafe) {
    MetaWorld init;
    init.adversarial_leader = true;
    init.allow_plain_crash = true;
    init.start();
    auto stats = explore<MetaWorld>(
        init, 40, [](const MetaWorld& w) { assert_switch_agreement(w); },
        [](const MetaWorld&) {}, 150000);
    EXPECT_GT(stats.states, 5000u);
}

// ---------------------------------------------------------------------------
// Protocol worlds: one agreement instance per node, raw message transport.
// ---------------------------------------------------------------------------

struct LearnCollector final : AgreementObserver {
    std::vector<CommandId> learned;
    void on_learned(EraId, const Command& cmd) override { learned.push_back(cmd.id); }
    void on_era_closed(EraId, const Command&) override {}
};

template <typename Proto>
struct ProtoWorld {
    struct Env final : NodeEnv {
        ProtoWorld* w = nullptr;
        NodeId id = 0;
        uint64_t rng_c = 0;

        NodeId self() const override { return id; }
        int cluster_size() const override { return 3; }
        Time now() const override { return w->clock; }
        NodeId omega_leader() const override { return w->omega(); }
        uint64_t rng() override { return wire::mix64(++rng_c ^ (id * 1013ULL)); }
        Time max_link_delay() const override { return 100 * kMs; }
        void send(NodeId dst, std::string msg) override {
            if (w->crashed[id] || w->crashed[dst]) return;
            w->pending.push_back({id, dst, std::move(msg)});
        }
        void set_timer(Time, std::string token) override {
            w->timer_tokens[id].insert(std::string(token));
        }
        void trace(const char*, std::string) override {}
    };

    int crash_budget = 0;
    int timer_budget_per_node = 2;
    std::vector<ExploreMsg> pending;
    std::vector<bool> crashed{false, false, false};
    std::vector<std::set<std::string>> timer_tokens{3};
    std::vector<int> timer_budget{0, 0, 0};
    std::vector<int> lead_view{0, 0, 0};
    Time clock = 0;
    std::vector<std::unique_ptr<Env>> envs;
    std::vector<std::unique_ptr<LearnCollector>> collectors;
    std::vector<std::unique_ptr<Agreement>> nodes;

    ProtoWorld() {
        for (NodeId i = 0; i < 3; ++i) {
            envs.push_back(std::make_unique<Env>());
            envs.back()->w = this;
            envs.back()->id = i;
            collectors.push_back(std::make_unique<LearnCollector>());
            nodes.push_back(std::make_unique<Proto>(1, *envs.back(), *collectors.back()));
            timer_budget[i] = timer_budget_per_node;
        }
        for (auto& n : nodes) n->on_start();
    }

    ProtoWorld(const ProtoWorld& o)
        : crash_budget(o.crash_budget),
          timer_budget_per_node(o.timer_budget_per_node),
          pending(o.pending),
          crashed(o.crashed),
          timer_tokens(o.timer_tokens),
          timer_budget(o.timer_budget),
          lead_view(o.lead_view),
          clock(o.clock) {
        for (NodeId i = 0; i < 3; ++i) {
            envs.push_back(std::make_unique<Env>());
            envs.back()->w = this;
            envs.back()->id = i;
            envs.back()->rng_c = o.envs[i]->rng_c;
            collectors.push_back(std::make_unique<LearnCollector>(*o.collectors[i]));
            nodes.push_back(o.nodes[i]->clone(*envs.back(), *collectors.back()));
        }
    }

    NodeId omega() const {
        for (NodeId p = 0; p < 3; ++p)
            if (!crashed[p]) return p;
        return 0;
    }

    void do_crash(NodeId k) {
        crashed[k] = true;
        --crash_budget;
        std::vector<ExploreMsg> keep;
        for (auto& m : pending)
            if (m.dst != k && m.src != k) keep.push_back(m);
        // messages already sent by a crashed node stay deliverable
        keep.clear();
        for (auto& m : pending)
            if (m.dst != k) keep.push_back(m);
        pending.swap(keep);
    }

    std::vector<std::string> enabled_actions() const {
        auto out = delivery_actions(pending, crashed);
        if (crash_budget > 0)
            for (NodeId k = 0; k < 3; ++k)
                if (!crashed[k]) out.push_back("c" + std::to_string(k));
        for (NodeId k = 0; k < 3; ++k) {
            if (crashed[k]) continue;
            if (lead_view[k] != omega()) out.push_back("l" + std::to_string(k));
            if (timer_budget[k] > 0)
                for (const auto& tok : timer_tokens[k])
                    out.push_back("t" + std::to_string(k) + ":" + tok);
        }
        return out;
    }

    void apply(const std::string& a) {
        if (a[0] == 'm') {
            size_t i = std::stoul(a.substr(1));
            ExploreMsg m = pending[i];
            pending.erase(pending.begin() + i);
            if (!crashed[m.dst]) nodes[m.dst]->on_message(m.src, m.payload);
        } else if (a[0] == 'c') {
            do_crash(a[1] - '0');
        } else if (a[0] == 'l') {
            NodeId k = a[1] - '0';
            lead_view[k] = omega();
            nodes[k]->on_leadership(lead_view[k]);
        } else if (a[0] == 't') {
            NodeId k = a[1] - '0';
            std::string tok = a.substr(3);
            --timer_budget[k];
            clock += 10 * kSec;  // push past any protocol timeout
            timer_tokens[k].erase(tok);
            nodes[k]->on_timer(tok);
        }
    }

    std::string fingerprint() const {
        std::vector<std::string> labels;
        for (auto& m : pending) labels.push_back(m.label());
        std::sort(labels.begin(), labels.end());
        std::string s;
        for (NodeId k = 0; k < 3; ++k) {
            s += crashed[k] ? "X" : "_";
            s += std::to_string(timer_budget[k]) + std::to_string(lead_view[k]);
            s += nodes[k]->fingerprint();
            for (auto id : collectors[k]->learned) s += id.text() + ",";
            for (auto& tok : timer_tokens[k]) s += tok + "'";
            s += ";";
        }
        for (auto& l : labels) s += l + "|";
        return s;
    }
};

// Monarchic: learn sequences are slot-ordered, so agreement means every
// pair of learn sequences is prefix-identical.
void assert_monarchic_prefix(const ProtoWorld<MonarchicAgreement>& w) {
    for (NodeId i = 0; i < 3; ++i)
        for (NodeId j = i + 1; j < 3; ++j) {
            const auto& a = w.collectors[i]->learned;
            const auto& b = w.collectors[j]->learned;
            size_t n = std::min(a.size(), b.size());
            for (size_t k = 0; k < n; ++k)
                ASSERT_EQ(a[k], b[k]) << "slot disagreement between " << i << " and " << j;
        }
}

TEST(ExhaustiveMonarchic, SlotAgreementNoCrash) {
    ProtoWorld<MonarchicAgreement> init;
    init.timer_budget = {0, 0, 0};  // no timers needed without faults
    init.nodes[0]->propose(Command::client({1000, 1}, {"x"}));
    init.nodes[1]->propose(Command::client({1001, 1}, {"x"}));
    size_t done = 0;
    auto stats = explore<ProtoWorld<MonarchicAgreement>>(
        init, 44, [](const auto& w) { assert_monarchic_prefix(w); },
        [&](const auto& w) {
            for (NodeId k = 0; k < 3; ++k)
                ASSERT_EQ(w.collectors[k]->learned.size(), 2u) << "node " << k;
            ++done;
        },
        600000);
    EXPECT_FALSE(stats.truncated);
    EXPECT_GT(done, 0u);
}

TEST(ExhaustiveMonarchic, SlotAgreementWithLeaderCrash) {
    ProtoWorld<MonarchicAgreement> init;
    init.crash_budget = 1;
    init.timer_budget = {1, 1, 1};
    init.nodes[0]->propose(Command::client({1000, 1}, {"x"}));
    init.nodes[1]->propose(Command::client({1001, 1}, {"x"}));
    auto stats = explore<ProtoWorld<MonarchicAgreement>>(
        init, 30, [](const auto& w) { assert_monarchic_prefix(w); }, [](const auto&) {},
        500000);
    EXPECT_GT(stats.states, 10000u);
}

// Democratic: both conflicting commands commit with identical dependency
// vectors everywhere and execution orders the pair the same way.
void assert_democratic_edges(const ProtoWorld<DemocraticAgreement>& w) {
    for (NodeId r = 0; r < 2; ++r) {
        const std::vector<long long>* ref = nullptr;
        for (NodeId k = 0; k < 3; ++k) {
            auto* dem = static_cast<DemocraticAgreement*>(w.nodes[k].get());
            const auto* deps = dem->committed_deps(r, 0);
            if (!deps) continue;
            if (ref)
                ASSERT_EQ(*deps, *ref) << "instance (" << r << ",0) committed differently";
            else
                ref = deps;
        }
    }
    // learned order of the conflicting pair must agree
    int dir = 0;
    for (NodeId k = 0; k < 3; ++k) {
        const auto& l = w.collectors[k]->learned;
        if (l.size() < 2) continue;
        int d = l[0] == CommandId{1000, 1} ? 1 : -1;
        if (dir == 0) dir = d;
        ASSERT_EQ(d, dir) << "conflicting pair executed in different orders";
    }
}

TEST(ExhaustiveDemocratic, ConflictingPairEdgeAgreement) {
    ProtoWorld<DemocraticAgreement> init;
    init.timer_budget = {0, 0, 0};
    init.nodes[0]->propose(Command::client({1000, 1}, {"hot"}));
    init.nodes[1]->propose(Command::client({1001, 1}, {"hot"}));
    size_t done = 0;
    bool saw_slow = false;
    auto stats = explore<ProtoWorld<DemocraticAgreement>>(
        init, 40, [](const auto& w) { assert_democratic_edges(w); },
        [&](const auto& w) {
            for (NodeId k = 0; k < 3; ++k)
                ASSERT_EQ(w.collectors[k]->learned.size(), 2u) << "node " << k;
            auto* dem = static_cast<DemocraticAgreement*>(w.nodes[0].get());
            const auto* da = dem->committed_deps(0, 0);
            const auto* db = dem->committed_deps(1, 0);
            ASSERT_TRUE(da && db);
            // at least one direction of the conflict edge exists
            ASSERT_TRUE((*da)[1] >= 0 || (*db)[0] >= 0);
            if ((*da)[1] >= 0 && (*db)[0] >= 0) saw_slow = true;
            ++done;
        },
        600000);
    EXPECT_FALSE(stats.truncated);
    EXPECT_GT(done, 0u);
    EXPECT_TRUE(saw_slow);  // some interleaving forces the slow path
}

TEST(ExhaustiveDemocratic, ProposerCrashStillAgrees) {
    ProtoWorld<DemocraticAgreement> init;
    init.crash_budget = 1;
    init.timer_budget = {2, 2, 2};
    init.nodes[0]->propose(Command::client({1000, 1}, {"hot"}));
    init.nodes[1]->propose(Command::client({1001, 1}, {"hot"}));
    auto stats = explore<ProtoWorld<DemocraticAgreement>>(
        init, 26, [](const auto& w) { assert_democratic_edges(w); }, [](const auto&) {},
        400000);
    EXPECT_GT(stats.states, 10000u);
}

}  // namespace
