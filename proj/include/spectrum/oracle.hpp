#pragma once

#include <algorithm>
#include <optional>
#include <vector>

#include "spectrum/core.hpp"
#include "spectrum/sim.hpp"
#include "spectrum/workload.hpp"

// Metrics-driven switching policy: per-node p90 latency windows, a
// system-wide contention window, quorum latency estimates, and two choosers
// combined by a mode vote. A scripted variant reproduces the static oracle
// used for the figure scenarios: it watches the injected workload phases
// instead of measurements.

namespace spectrum {

struct OracleConfig {
    enum class Mode { None, Static, Threshold };
    Mode mode = Mode::None;
    Time window = 10 * kSec;
    Time cooldown = 20 * kSec;
    Time observe_delay = 35 * kSec;
    Time period = 1 * kSec;
};

struct MetricsSnapshot {
    double contention = -1;              // [0,1]; <0 when no samples yet
    std::vector<Time> p90_latency;       // per node; -1 without samples
    std::vector<Time> qrtt, fqrtt, frtt; // per node, observed round trips
};

// Contention bands: [0,10) multi-leader, [10,50) quorum-voting, [50,100]
// single leader.
inline ProtocolKind choose_best_by_contention(double contention_pct) {
    if (contention_pct < 10.0) return ProtocolKind::Oligarchic;
    if (contention_pct < 50.0) return ProtocolKind::Democratic;
    return ProtocolKind::Monarchic;
}

// Latency bands relative to this node's quorum round trips; ties fold into
// the middle branch.
inline ProtocolKind choose_best_by_latency(Time latency, Time qrtt, Time fqrtt, Time frtt) {
    if (latency < fqrtt) return ProtocolKind::Oligarchic;
    if (latency <= qrtt + frtt) return ProtocolKind::Democratic;
    return ProtocolKind::Monarchic;
}

// Mode over per-node choices; ties prefer the family earliest in
// {OLIGARCHIC, DEMOCRATIC, MONARCHIC}.
inline ProtocolKind kind_mode(const std::vector<ProtocolKind>& votes) {
    int counts[3] = {0, 0, 0};
    for (ProtocolKind v : votes) ++counts[static_cast<int>(v)];
    int best = static_cast<int>(ProtocolKind::Oligarchic);
    for (int k : {static_cast<int>(ProtocolKind::Oligarchic),
                  static_cast<int>(ProtocolKind::Democratic),
                  static_cast<int>(ProtocolKind::Monarchic)})
        if (counts[k] > counts[best]) best = k;
    return static_cast<ProtocolKind>(best);
}

inline int contention_band(double pct) {
    if (pct < 10.0) return 0;
    if (pct < 50.0) return 1;
    return 2;
}

// Measurement-driven policy. Pure in the snapshot: the same snapshot always
// produces the same answer; trigger timing adds the observation delay and a
// cooldown between proposals.
class ThresholdOracle {
public:
    explicit ThresholdOracle(OracleConfig cfg, int nodes) : cfg_(cfg), nodes_(nodes) {}

    std::optional<ProtocolKind> on_tick(Time now, const MetricsSnapshot& snap,
                                        ProtocolKind current) {
        if (snap.contention >= 0) {
            int band = contention_band(snap.contention * 100.0);
            if (last_band_ < 0) last_band_ = band;
            if (band != last_band_ && !pending_contention_) {
                pending_contention_ = true;
                pending_since_ = now;
            }
        }
        if (!pending_contention_) {
            // latency-only trigger: sustained disagreement with the current kind
            ProtocolKind v = latency_vote(snap, current);
            if (v != current) {
                if (!pending_latency_) {
                    pending_latency_ = true;
                    pending_since_ = now;
                }
            } else {
                pending_latency_ = false;
            }
        }
        if (!pending_contention_ && !pending_latency_) return std::nullopt;
        if (now - pending_since_ < cfg_.observe_delay) return std::nullopt;
        if (last_trigger_ >= 0 && now - last_trigger_ < cfg_.cooldown) return std::nullopt;

        bool contention_driven = pending_contention_;  // prioritized
        pending_contention_ = pending_latency_ = false;
        ProtocolKind v;
        if (contention_driven) {
            if (snap.contention < 0) return std::nullopt;
            last_band_ = contention_band(snap.contention * 100.0);
            std::vector<ProtocolKind> votes(
                nodes_, choose_best_by_contention(snap.contention * 100.0));
            v = kind_mode(votes);
        } else {
            v = latency_vote(snap, current);
        }
        if (v == current) return std::nullopt;
        last_trigger_ = now;
        return v;
    }

private:
    ProtocolKind latency_vote(const MetricsSnapshot& snap, ProtocolKind current) const {
        std::vector<ProtocolKind> votes;
        for (int i = 0; i < nodes_; ++i) {
            if (i >= static_cast<int>(snap.p90_latency.size()) || snap.p90_latency[i] < 0) {
                votes.push_back(current);  // no samples: no change
                continue;
            }
            votes.push_back(choose_best_by_latency(snap.p90_latency[i], snap.qrtt[i],
                                                   snap.fqrtt[i], snap.frtt[i]));
        }
        return kind_mode(votes);
    }

    OracleConfig cfg_;
    int nodes_;
    int last_band_ = -1;
    bool pending_contention_ = false;
    bool pending_latency_ = false;
    Time pending_since_ = 0;
    Time last_trigger_ = -1;
};

// Scripted thresholds: watches the injected phase schedule and proposes the
// protocol for each phase's conflict percentage after the observation delay.
class StaticOracle {
public:
    StaticOracle(OracleConfig cfg, const WorkloadSpec& spec) : cfg_(cfg), spec_(spec) {}

    std::optional<ProtocolKind> on_tick(Time now, ProtocolKind current) {
        int idx = spec_.phase_index_at(now);
        if (idx != observed_phase_) {
            observed_phase_ = idx;
            phase_seen_at_ = spec_.phases[idx].start;
        }
        if (acted_phase_ == idx) return std::nullopt;
        if (now - phase_seen_at_ < cfg_.observe_delay) return std::nullopt;
        acted_phase_ = idx;
        ProtocolKind v = choose_best_by_contention(spec_.phases[idx].conflict_pct);
        if (v == current) return std::nullopt;
        return v;
    }

private:
    OracleConfig cfg_;
    WorkloadSpec spec_;
    int observed_phase_ = 0;
    int acted_phase_ = 0;
    Time phase_seen_at_ = 0;
};

}  // namespace spectrum
