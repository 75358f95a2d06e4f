#include "spectrum/democratic.hpp"

#include <gtest/gtest.h>

#include <random>

#include "support.hpp"

using namespace spectrum;
using spectrum::testing::ProtoCluster;
using spectrum::testing::wan_config;

namespace {

ProtoCluster::MakeFn make_democratic() {
    return [](EraId era, NodeEnv& env, AgreementObserver& obs) {
        return std::make_unique<DemocraticAgreement>(era, env, obs);
    };
}

Command kcmd(uint32_t client, uint32_t seq, std::vector<std::string> keys) {
    return Command::client({client, seq}, std::move(keys));
}

int count_commits(const TraceLog& log, const std::string& which) {
    int n = 0;
    for (const auto& e : log.events())
        if (e.kind == "commit" && e.details.substr(0, which.size()) == which) ++n;
    return n;
}

TEST(Democratic, FastPathWithoutConflicts) {
    ProtoCluster c(wan_config(21), make_democratic());
    for (uint32_t i = 0; i < 10; ++i)
        c.propose(static_cast<NodeId>(i % 5), kcmd(1000 + i % 5, i, {"k" + std::to_string(i)}));
    c.run_until(3 * kSec);
    EXPECT_EQ(count_commits(c.trace, "fast"), 10);
    EXPECT_EQ(count_commits(c.trace, "slow"), 0);
    for (NodeId i = 0; i < 5; ++i) EXPECT_EQ(c.hosts[i]->learn_seq.size(), 10u) << i;
}

TEST(Democratic, UncontendedDepsAreEmpty) {
    ProtoCluster c(wan_config(22), make_democratic());
    Command a = kcmd(1000, 1, {"x"});
    c.propose(0, a);
    c.run_until(2 * kSec);
    auto* inst = static_cast<DemocraticAgreement*>(c.hosts[0]->agreement.get());
    const auto* deps = inst->committed_deps(0, 0);
    ASSERT_NE(deps, nullptr);
    for (long long d : *deps) EXPECT_EQ(d, -1);
}

TEST(Democratic, ConcurrentConflictsAgreeOnEdge) {
    for (uint64_t seed = 30; seed < 40; ++seed) {
        ProtoCluster c(wan_config(seed), make_democratic());
        c.run_until(500 * kMs);
        Command a = kcmd(1000, 1, {"hot"});
        Command b = kcmd(1001, 1, {"hot"});
        c.propose(0, a);
        c.propose(3, b);
        c.run_until(5 * kSec);
        // at least one of the two sees the conflict; both nodes commit the
        // same relative order
        std::vector<int> pos_a(5, -1), pos_b(5, -1);
        for (NodeId i = 0; i < 5; ++i) {
            const auto& seq = c.hosts[i]->learn_seq;
            ASSERT_EQ(seq.size(), 2u) << "seed " << seed << " node " << i;
            for (size_t p = 0; p < seq.size(); ++p) {
                if (seq[p].id == a.id) pos_a[i] = static_cast<int>(p);
                if (seq[p].id == b.id) pos_b[i] = static_cast<int>(p);
            }
        }
        bool a_first = pos_a[0] < pos_b[0];
        for (NodeId i = 1; i < 5; ++i)
            EXPECT_EQ(pos_a[i] < pos_b[i], a_first) << "seed " << seed << " node " << i;
    }
}

TEST(Democratic, TerminateDependsOnEverything) {
    ProtoCluster c(wan_config(23), make_democratic());
    for (uint32_t i = 0; i < 8; ++i)
        c.propose(static_cast<NodeId>(i % 5), kcmd(1000 + i % 5, i, {"k" + std::to_string(i % 3)}));
    c.run_until(2 * kSec);
    Command t = Command::terminate(1);
    for (NodeId i = 0; i < 5; ++i) c.propose(i, t);
    c.run_until(5 * kSec);
    for (NodeId i = 0; i < 5; ++i) {
        const auto& seq = c.hosts[i]->learn_seq;
        ASSERT_EQ(seq.size(), 9u) << i;
        EXPECT_EQ(seq.back().kind, CommandKind::Terminate) << i;
    }
    EXPECT_EQ(c.propose(2, kcmd(1002, 99, {"z"})), ProposeResult::EraClosed);
}

TEST(Democratic, ProposerCrashRecoveredByPeers) {
    ProtoCluster c(wan_config(24), make_democratic());
    c.run_until(200 * kMs);
    Command a = kcmd(1002, 1, {"x"});
    c.propose(2, a);
    // crash the proposer before any ack can reach it
    c.net.schedule_control(c.net.now() + 1, "crash");
    c.net.set_control_hook([&](std::string_view) { c.net.crash(2); });
    c.run_until(20 * kSec);
    for (NodeId i = 0; i < 5; ++i) {
        if (i == 2) continue;
        EXPECT_TRUE(c.node_learned(i, a.id)) << "node " << i;
    }
}

TEST(Democratic, ChaosLearnSequencesPrefixConsistent) {
    for (uint64_t seed = 50; seed < 58; ++seed) {
        ProtoCluster c(wan_config(seed), make_democratic());
        std::mt19937_64 rng(seed);
        bool with_crash = seed % 2 == 1;
        NodeId victim = static_cast<NodeId>(1 + seed % 4);
        for (int round = 0; round < 40; ++round) {
            NodeId at = static_cast<NodeId>(rng() % 5);
            if (with_crash && at == victim && round >= 20) at = (victim + 1) % 5;
            std::vector<std::string> keys{"k" + std::to_string(rng() % 3)};
            c.propose(at, kcmd(1000 + at, static_cast<uint32_t>(round), keys));
            c.run_until(c.net.now() + rng() % (60 * kMs));
            if (with_crash && round == 20) {
                c.net.schedule_control(c.net.now() + 1, "x");
                c.net.set_control_hook([&](std::string_view) {
                    if (!c.net.crashed(victim)) c.net.crash(victim);
                });
            }
        }
        c.run_until(c.net.now() + 30 * kSec);
        for (NodeId i = 0; i < 5; ++i) {
            if (c.net.crashed(i)) continue;
            for (NodeId j = i + 1; j < 5; ++j) {
                if (c.net.crashed(j)) continue;
                CStruct a, b;
                a.seq = c.hosts[i]->learn_seq;
                b.seq = c.hosts[j]->learn_seq;
                EXPECT_TRUE(cstruct_prefix_consistent(a, b))
                    << "seed " << seed << " nodes " << i << "/" << j;
            }
        }
    }
}

}  // namespace
