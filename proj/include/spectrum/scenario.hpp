#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "spectrum/oracle.hpp"
#include "spectrum/sim.hpp"
#include "spectrum/workload.hpp"

// Scenario files: line-oriented `key value...` text describing the cluster,
// workload phases, oracle policy, scripted switches and fault script.

namespace spectrum {

struct Scenario {
    enum class Mode { Spectrum, StopAndRestart };

    std::string name = "scenario";
    int nodes = 5;
    uint64_t seed = 1;
    Time duration = 60 * kSec;
    Time grace = 15 * kSec;
    std::string latency_name = "wan5";
    Time uniform_delay = 50 * kMs;
    int jitter_pct = 10;
    bool fifo = false;
    Time service_time = 0;
    FdConfig fd;
    ProtocolKind initial = ProtocolKind::Monarchic;
    WorkloadSpec workload;
    OracleConfig oracle;
    std::vector<std::pair<Time, ProtocolKind>> switch_script;
    FaultScript faults;
    Mode mode = Mode::Spectrum;
    Time coordinator_crash_at = -1;

    LatencyMatrix matrix() const {
        if (latency_name == "wan5") return LatencyMatrix::wan5();
        return LatencyMatrix::uniform(nodes, uniform_delay);
    }

    void validate() const {
        if (nodes < 3) throw std::runtime_error("scenario: need at least 3 nodes");
        if (latency_name == "wan5" && nodes != 5)
            throw std::runtime_error("scenario: wan5 matrix is 5 nodes");
        std::string why;
        if (!workload.valid(&why)) throw std::runtime_error("scenario: " + why);
        if (!faults.within_budget(nodes))
            throw std::runtime_error("scenario: fault script exceeds the crash budget");
        for (const auto& a : faults.actions)
            if (a.node < 0 || a.node >= nodes)
                throw std::runtime_error("scenario: fault on unknown node");
    }

    static ProtocolKind parse_kind_or_throw(std::string_view s) {
        ProtocolKind k;
        if (!parse_protocol_kind(s, k))
            throw std::runtime_error("scenario: unknown protocol kind " + std::string(s));
        return k;
    }

    static Scenario parse(std::string_view text) {
        Scenario sc;
        sc.workload.phases.clear();
        bool stop_set = false;
        for (auto raw : wire::split(text, '\n')) {
            std::string_view line = raw;
            if (auto pos = line.find('#'); pos != std::string_view::npos)
                line = line.substr(0, pos);
            while (!line.empty() && (line.back() == ' ' || line.back() == '\r'))
                line.remove_suffix(1);
            if (line.empty()) continue;
            auto t = wire::split(line, ' ');
            std::string_view key = t[0];
            auto arg = [&](size_t i) -> std::string_view {
                if (i >= t.size()) throw std::runtime_error("scenario: missing arg for " +
                                                            std::string(key));
                return t[i];
            };
            if (key == "name") sc.name = std::string(arg(1));
            else if (key == "nodes") sc.nodes = static_cast<int>(wire::to_int(arg(1)));
            else if (key == "seed") sc.seed = static_cast<uint64_t>(wire::to_int(arg(1)));
            else if (key == "duration_ms") sc.duration = wire::to_int(arg(1)) * kMs;
            else if (key == "grace_ms") sc.grace = wire::to_int(arg(1)) * kMs;
            else if (key == "latency") sc.latency_name = std::string(arg(1));
            else if (key == "uniform_delay_ms") sc.uniform_delay = wire::to_int(arg(1)) * kMs;
            else if (key == "jitter_pct") sc.jitter_pct = static_cast<int>(wire::to_int(arg(1)));
            else if (key == "fifo") sc.fifo = arg(1) == "1";
            else if (key == "service_time_us") sc.service_time = wire::to_int(arg(1));
            else if (key == "suspicion_ms") sc.fd.suspicion_timeout = wire::to_int(arg(1)) * kMs;
            else if (key == "heartbeat_ms") sc.fd.heartbeat_interval = wire::to_int(arg(1)) * kMs;
            else if (key == "initial") sc.initial = parse_kind_or_throw(arg(1));
            else if (key == "clients_per_node")
                sc.workload.clients_per_node = static_cast<int>(wire::to_int(arg(1)));
            else if (key == "key_universe")
                sc.workload.key_universe = static_cast<int>(wire::to_int(arg(1)));
            else if (key == "hot_keys")
                sc.workload.hot_keys = static_cast<int>(wire::to_int(arg(1)));
            else if (key == "phase")
                sc.workload.phases.push_back(
                    {wire::to_int(arg(1)) * kMs, static_cast<int>(wire::to_int(arg(2)))});
            else if (key == "workload_start_ms")
                sc.workload.start_at = wire::to_int(arg(1)) * kMs;
            else if (key == "workload_stop_ms") {
                sc.workload.stop_at = wire::to_int(arg(1)) * kMs;
                stop_set = true;
            } else if (key == "think_ms")
                sc.workload.think_time = wire::to_int(arg(1)) * kMs;
            else if (key == "retransmit_floor_ms")
                sc.workload.retransmit_floor = wire::to_int(arg(1)) * kMs;
            else if (key == "oracle") {
                std::string_view m = arg(1);
                if (m == "none") sc.oracle.mode = OracleConfig::Mode::None;
                else if (m == "static") sc.oracle.mode = OracleConfig::Mode::Static;
                else if (m == "threshold") sc.oracle.mode = OracleConfig::Mode::Threshold;
                else throw std::runtime_error("scenario: unknown oracle mode");
            } else if (key == "oracle_window_ms")
                sc.oracle.window = wire::to_int(arg(1)) * kMs;
            else if (key == "oracle_cooldown_ms")
                sc.oracle.cooldown = wire::to_int(arg(1)) * kMs;
            else if (key == "oracle_delay_ms")
                sc.oracle.observe_delay = wire::to_int(arg(1)) * kMs;
            else if (key == "oracle_period_ms")
                sc.oracle.period = wire::to_int(arg(1)) * kMs;
            else if (key == "switch_at")
                sc.switch_script.emplace_back(wire::to_int(arg(1)) * kMs,
                                              parse_kind_or_throw(arg(2)));
            else if (key == "fault") {
                FaultAction a;
                std::string_view what = arg(1);
                a.at = wire::to_int(arg(2)) * kMs;
                a.node = static_cast<NodeId>(wire::to_int(arg(3)));
                if (what == "crash") a.kind = FaultKind::Crash;
                else if (what == "crash_on_decide") a.kind = FaultKind::CrashOnDecide;
                else if (what == "fd_clear") a.kind = FaultKind::ClearSuspect;
                else throw std::runtime_error("scenario: unknown fault kind");
                sc.faults.actions.push_back(a);
            } else if (key == "mode") {
                std::string_view m = arg(1);
                if (m == "spectrum") sc.mode = Mode::Spectrum;
                else if (m == "stop_and_restart") sc.mode = Mode::StopAndRestart;
                else throw std::runtime_error("scenario: unknown mode");
            } else if (key == "coordinator_crash_ms")
                sc.coordinator_crash_at = wire::to_int(arg(1)) * kMs;
            else
                throw std::runtime_error("scenario: unknown key " + std::string(key));
        }
        if (sc.workload.phases.empty()) sc.workload.phases.push_back({0, 0});
        if (!stop_set) sc.workload.stop_at = sc.duration;
        sc.validate();
        return sc;
    }
};

}  // namespace spectrum
