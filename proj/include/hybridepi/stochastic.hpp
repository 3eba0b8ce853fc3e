#pragma once

// Per-node stochastic simulation of three-scope worm spreading over a ring of
// subnets, plus synthetic telescope logs derived from a run.

#include <algorithm>
#include <array>
#include <iterator>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <ostream>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "format.hpp"
#include "model.hpp"
#include "probe_event.hpp"
#include "rng.hpp"

namespace hybridepi {

/// Explicit subnet ring. Subnet i's neighbourhood is a subset of the ten
/// subnets i-1 ... i-10 (mod num_subnets).
struct SimTopology {
    int num_subnets = 0;
    int nodes_per_subnet = 0;
    std::vector<std::vector<int>> relevant_neighbour_ids;
    std::uint64_t rng_seed = 0;

    std::uint32_t total_nodes() const {
        return static_cast<std::uint32_t>(num_subnets) * static_cast<std::uint32_t>(nodes_per_subnet);
    }
    int subnet_of_node(std::uint32_t node) const { return static_cast<int>(node / nodes_per_subnet); }
    std::uint32_t first_node(int subnet) const {
        return static_cast<std::uint32_t>(subnet) * static_cast<std::uint32_t>(nodes_per_subnet);
    }

    double mean_neighbourhood_size() const {
        std::size_t total = 0;
        for (const auto& ids : relevant_neighbour_ids) total += ids.size();
        return num_subnets > 0 ? static_cast<double>(total) / num_subnets : 0.0;
    }

    /// Mean-field view of this topology.
    Topology mean_field() const {
        return Topology{static_cast<double>(num_subnets), static_cast<double>(nodes_per_subnet),
                        mean_neighbourhood_size()};
    }
};

inline SimTopology build_topology(int num_subnets, int nodes_per_subnet, int relevant_adjacent,
                                  std::uint64_t seed) {
    constexpr int K = ProbeSpace::neighbourhood_subnets;
    if (num_subnets <= K) throw invalid_parameters("need more than 10 subnets");
    if (nodes_per_subnet < 1) throw invalid_parameters("nodes_per_subnet must be at least 1");
    if (relevant_adjacent < 0 || relevant_adjacent > K)
        throw invalid_parameters("relevant_adjacent must lie in [0, 10]");
    if (static_cast<std::uint64_t>(num_subnets) * static_cast<std::uint64_t>(nodes_per_subnet) >
        0xffffffffULL)
        throw invalid_parameters("population too large");

    SimTopology topo;
    topo.num_subnets = num_subnets;
    topo.nodes_per_subnet = nodes_per_subnet;
    topo.rng_seed = seed;
    topo.relevant_neighbour_ids.resize(static_cast<std::size_t>(num_subnets));

    Rng rng(seed);
    std::array<int, K> offsets{};
    for (int i = 0; i < num_subnets; ++i) {
        std::iota(offsets.begin(), offsets.end(), 1);
        // partial Fisher-Yates over the ten predecessor offsets
        for (int k = 0; k < relevant_adjacent; ++k) {
            std::uniform_int_distribution<int> pick(k, K - 1);
            std::swap(offsets[k], offsets[pick(rng)]);
        }
        auto& ids = topo.relevant_neighbour_ids[static_cast<std::size_t>(i)];
        ids.reserve(static_cast<std::size_t>(relevant_adjacent));
        for (int k = 0; k < relevant_adjacent; ++k)
            ids.push_back(((i - offsets[k]) % num_subnets + num_subnets) % num_subnets);
        std::sort(ids.begin(), ids.end());
    }
    return topo;
}

enum class NodeStatus : std::uint8_t { susceptible = 0, infected = 1, recovered = 2 };

struct InfectionRecord {
    long step = 0; // first step at which the node is infected
    std::uint32_t node = 0;
    Mechanism mechanism = Mechanism::global;
};

struct MicroState {
    long t = 0;
    std::vector<NodeStatus> node_status;
    std::vector<int> per_subnet_infected;
    std::vector<InfectionRecord> infection_log; // excludes seeded nodes

    std::vector<std::uint32_t> infected;   // current infected nodes in a stable order
    std::vector<long> infected_at;         // -1 if never infected
    std::vector<long> recovered_at;        // -1 if not recovered
    std::vector<std::uint32_t> susceptible_pool;
    std::vector<std::uint32_t> pool_index; // position in susceptible_pool

    long susceptible_count() const { return static_cast<long>(susceptible_pool.size()); }
    long infected_count() const { return static_cast<long>(infected.size()); }
    long recovered_count() const {
        return static_cast<long>(node_status.size()) - susceptible_count() - infected_count();
    }

    MacroState counts() const {
        return MacroState{t, static_cast<double>(susceptible_count()), static_cast<double>(infected_count()),
                          static_cast<double>(recovered_count())};
    }
};

inline MicroState make_state(const SimTopology& topo) {
    const std::uint32_t n = topo.total_nodes();
    MicroState s;
    s.node_status.assign(n, NodeStatus::susceptible);
    s.per_subnet_infected.assign(static_cast<std::size_t>(topo.num_subnets), 0);
    s.infected_at.assign(n, -1);
    s.recovered_at.assign(n, -1);
    s.susceptible_pool.resize(n);
    std::iota(s.susceptible_pool.begin(), s.susceptible_pool.end(), 0U);
    s.pool_index = s.susceptible_pool;
    return s;
}

namespace detail {

inline void remove_from_pool(MicroState& s, std::uint32_t node) {
    const std::uint32_t pos = s.pool_index[node];
    const std::uint32_t last = s.susceptible_pool.back();
    s.susceptible_pool[pos] = last;
    s.pool_index[last] = pos;
    s.susceptible_pool.pop_back();
}

inline void mark_infected(MicroState& s, const SimTopology& topo, std::uint32_t node, long step) {
    remove_from_pool(s, node);
    s.node_status[node] = NodeStatus::infected;
    s.infected_at[node] = step;
    ++s.per_subnet_infected[static_cast<std::size_t>(topo.subnet_of_node(node))];
}

struct NoObserver {
    void operator()(long, std::uint32_t, Mechanism) const {}
};

} // namespace detail

/// Infects the given susceptible nodes at the current step without logging a mechanism.
inline void seed_nodes(MicroState& s, const SimTopology& topo, std::span<const std::uint32_t> nodes) {
    for (std::uint32_t node : nodes) {
        if (node >= s.node_status.size()) throw invalid_parameters("seed node out of range");
        if (s.node_status[node] != NodeStatus::susceptible) continue;
        detail::mark_infected(s, topo, node, s.t);
        s.infected.push_back(node);
    }
}

/// Infects `count` distinct susceptible nodes chosen uniformly at random.
inline void seed_random(MicroState& s, const SimTopology& topo, long count, Rng& rng) {
    if (count < 0 || count > s.susceptible_count())
        throw invalid_parameters("initial_infected exceeds the susceptible population");
    std::vector<std::uint32_t> pool = s.susceptible_pool;
    std::vector<std::uint32_t> chosen;
    chosen.reserve(static_cast<std::size_t>(count));
    for (long k = 0; k < count; ++k) {
        std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(k), pool.size() - 1);
        std::swap(pool[static_cast<std::size_t>(k)], pool[pick(rng)]);
        chosen.push_back(pool[static_cast<std::size_t>(k)]);
    }
    seed_nodes(s, topo, chosen);
}

/// Advances the state by one window.
///
/// Each node infected at the start of the step picks one scope with
/// probabilities (alpha_g, alpha_l, alpha_n) and infects every susceptible
/// node in that scope independently with the scope's beta. Global victims
/// are drawn as Binomial(S, beta_g) distinct nodes from the whole susceptible
/// pool. Infections are applied after all draws, then each node that was
/// infected before the step recovers with probability gamma.
///
/// `observer(t, node, mechanism)` is called once per infected node with the
/// scope it used during window t.
template <class Observer = detail::NoObserver>
void sim_step(MicroState& s, const ModelParams& params, const SimTopology& topo, Rng& rng,
              Observer&& observer = {}) {
    if (s.infected.empty()) {
        ++s.t;
        return;
    }
    const long next_t = s.t + 1;
    const std::size_t pool_size = s.susceptible_pool.size();

    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::binomial_distribution<long> global_hits(static_cast<long>(pool_size), params.beta_g);
    std::bernoulli_distribution local_hit(params.beta_l);
    std::bernoulli_distribution neigh_hit(params.beta_n);

    std::vector<std::pair<std::uint32_t, Mechanism>> pending;
    std::vector<std::size_t> picked;

    const auto try_scope = [&](int subnet, std::bernoulli_distribution& hit, Mechanism m) {
        const std::uint32_t first = topo.first_node(subnet);
        for (std::uint32_t node = first; node < first + static_cast<std::uint32_t>(topo.nodes_per_subnet); ++node)
            if (s.node_status[node] == NodeStatus::susceptible && hit(rng)) pending.emplace_back(node, m);
    };

    for (std::uint32_t source : s.infected) {
        const double u = unit(rng);
        Mechanism m;
        if (u < params.alpha_g) m = Mechanism::global;
        else if (u < params.alpha_g + params.alpha_l) m = Mechanism::local;
        else m = Mechanism::neighbourhood;
        observer(s.t, source, m);

        const int subnet = topo.subnet_of_node(source);
        switch (m) {
            case Mechanism::local:
                if (params.beta_l > 0.0) try_scope(subnet, local_hit, m);
                break;
            case Mechanism::neighbourhood:
                if (params.beta_n > 0.0)
                    for (int nb : topo.relevant_neighbour_ids[static_cast<std::size_t>(subnet)])
                        try_scope(nb, neigh_hit, m);
                break;
            case Mechanism::global: {
                if (pool_size == 0 || params.beta_g <= 0.0) break;
                const auto hits = static_cast<std::size_t>(global_hits(rng));
                if (hits == 0) break;
                if (hits * 2 > pool_size) {
                    std::vector<std::uint32_t> victims;
                    std::sample(s.susceptible_pool.begin(), s.susceptible_pool.end(), std::back_inserter(victims),
                                static_cast<std::ptrdiff_t>(hits), rng);
                    for (auto v : victims) pending.emplace_back(v, m);
                    break;
                }
                picked.clear();
                std::uniform_int_distribution<std::size_t> pick(0, pool_size - 1);
                while (picked.size() < hits) {
                    const std::size_t idx = pick(rng);
                    if (std::find(picked.begin(), picked.end(), idx) != picked.end()) continue;
                    picked.push_back(idx);
                    pending.emplace_back(s.susceptible_pool[idx], m);
                }
                break;
            }
        }
    }

    std::vector<std::uint32_t> fresh;
    for (const auto& [node, m] : pending) {
        if (s.node_status[node] != NodeStatus::susceptible) continue;
        detail::mark_infected(s, topo, node, next_t);
        s.infection_log.push_back(InfectionRecord{next_t, node, m});
        fresh.push_back(node);
    }

    std::bernoulli_distribution recovers(params.gamma);
    std::size_t kept = 0;
    for (std::uint32_t node : s.infected) {
        if (recovers(rng)) {
            s.node_status[node] = NodeStatus::recovered;
            s.recovered_at[node] = next_t;
            --s.per_subnet_infected[static_cast<std::size_t>(topo.subnet_of_node(node))];
        } else {
            s.infected[kept++] = node;
        }
    }
    s.infected.resize(kept);
    s.infected.insert(s.infected.end(), fresh.begin(), fresh.end());
    s.t = next_t;
}

/// Recounts everything derivable from node_status; used by tests and debug runs.
inline bool consistent(const MicroState& s, const SimTopology& topo) {
    std::vector<int> per_subnet(static_cast<std::size_t>(topo.num_subnets), 0);
    long sus = 0, inf = 0;
    for (std::uint32_t node = 0; node < s.node_status.size(); ++node) {
        switch (s.node_status[node]) {
            case NodeStatus::susceptible: ++sus; break;
            case NodeStatus::infected:
                ++inf;
                ++per_subnet[static_cast<std::size_t>(topo.subnet_of_node(node))];
                break;
            case NodeStatus::recovered: break;
        }
    }
    return per_subnet == s.per_subnet_infected && sus == s.susceptible_count() && inf == s.infected_count();
}

struct OutbreakMetrics {
    long final_size = 0;    // R at termination
    long size_at_100 = 0;   // I + R at step 100
    long survival_time = 0; // last step with I > 0
    double speed = 0.0;     // final_size / survival_time
};

/// Metrics of a trajectory that ends either with I = 0 or at the step limit.
inline OutbreakMetrics outbreak_metrics(const Trajectory& traj) {
    OutbreakMetrics m;
    if (traj.empty()) return m;
    const MacroState& last = traj.back();
    m.final_size = std::lround(last.R);
    const MacroState& at100 = traj.size() > 100 ? traj[100] : last;
    m.size_at_100 = std::lround(at100.I + at100.R);
    for (const auto& s : traj)
        if (s.I > 0.0) m.survival_time = s.t;
    // a run that dies out within its first window still spread over one window
    m.speed = static_cast<double>(m.final_size) / static_cast<double>(std::max(m.survival_time, 1L));
    return m;
}

struct SimResult {
    OutbreakMetrics metrics;
    Trajectory trajectory;
    MicroState final_state;
};

struct RunConfig {
    long initial_infected = 2;
    long max_steps = 100000;
    std::uint64_t seed = 1;
};

template <class Observer = detail::NoObserver>
SimResult run_sim(const ModelParams& params, const SimTopology& topo, const RunConfig& cfg,
                  Observer&& observer = {}) {
    params.validate();
    if (cfg.max_steps < 0) throw invalid_parameters("max_steps must be non-negative");
    if (cfg.initial_infected < 0 || static_cast<std::uint64_t>(cfg.initial_infected) > topo.total_nodes())
        throw invalid_parameters("initial_infected exceeds the population");

    Rng rng(cfg.seed);
    SimResult res;
    MicroState& s = res.final_state;
    s = make_state(topo);
    seed_random(s, topo, cfg.initial_infected, rng);
    res.trajectory.push_back(s.counts());
    while (!s.infected.empty() && s.t < cfg.max_steps) {
        sim_step(s, params, topo, rng, observer);
        res.trajectory.push_back(s.counts());
    }
    res.metrics = outbreak_metrics(res.trajectory);
    return res;
}

inline SimResult run_sim(const ModelParams& params, const SimTopology& topo, long initial_infected,
                         long max_steps, std::uint64_t seed) {
    return run_sim(params, topo, RunConfig{initial_infected, max_steps, seed});
}

/// Synthetic telescope placement. The monitored block is disjoint from every
/// relevant subnet, so only global probes can reach it.
struct TelescopeConfig {
    double monitor_fraction = 1.0 / 256.0;
    std::int64_t epoch_start = 1227225600; // 2008-11-21 00:00:00 UTC
    std::int64_t window_seconds = 600;
    std::uint32_t base_prefix = 0x0A0000; // subnet 0 is 10.0.0.0/24
    std::uint64_t seed = 1;
};

/// Address of a simulated node: subnet i maps to /24 prefix base_prefix + i, hosts from .1.
inline std::uint32_t node_address(const SimTopology& topo, std::uint32_t node, std::uint32_t base_prefix) {
    const auto subnet = static_cast<std::uint32_t>(topo.subnet_of_node(node));
    const auto host = node % static_cast<std::uint32_t>(topo.nodes_per_subnet) + 1U;
    return ((base_prefix + subnet) << 8) | host;
}

struct SyntheticLog {
    std::vector<ProbeEvent> events; // sorted by (timestamp, source)
    SimResult truth;
};

/// Runs the simulator and records the probes that land in the telescope.
/// An infected node sends lambda probes per window (floor(lambda) plus one
/// more with probability frac(lambda)) in the scope it picked for that window.
inline SyntheticLog generate_telescope_log(const ModelParams& params, const SimTopology& topo, const RunConfig& run,
                                           const TelescopeConfig& tel) {
    if (!(tel.monitor_fraction > 0.0 && tel.monitor_fraction <= 1.0))
        throw invalid_parameters("monitor_fraction must lie in (0, 1]");
    if (tel.window_seconds <= 0) throw invalid_parameters("window_seconds must be positive");
    if (topo.nodes_per_subnet > 254) throw invalid_parameters("at most 254 nodes fit in a /24");
    if (static_cast<std::uint64_t>(tel.base_prefix) + static_cast<std::uint64_t>(topo.num_subnets) > (1ULL << 24))
        throw invalid_parameters("subnets do not fit in the IPv4 space above base_prefix");

    // separate stream so the epidemic itself is identical with and without logging
    Rng tel_rng(splitmix64(tel.seed));
    const double whole = std::floor(params.lambda);
    const double frac = params.lambda - whole;
    std::bernoulli_distribution extra(frac);
    std::binomial_distribution<long> seen(static_cast<long>(whole) + 1, tel.monitor_fraction);
    std::binomial_distribution<long> seen_whole(static_cast<long>(whole), tel.monitor_fraction);
    std::uniform_int_distribution<std::int64_t> offset(0, tel.window_seconds - 1);

    SyntheticLog log;
    auto observer = [&](long t, std::uint32_t node, Mechanism m) {
        if (m != Mechanism::global) return;
        const long hits = extra(tel_rng) ? seen(tel_rng) : seen_whole(tel_rng);
        const std::uint32_t addr = node_address(topo, node, tel.base_prefix);
        for (long k = 0; k < hits; ++k)
            log.events.push_back(ProbeEvent{tel.epoch_start + t * tel.window_seconds + offset(tel_rng), addr});
    };
    log.truth = run_sim(params, topo, run, observer);
    std::sort(log.events.begin(), log.events.end());
    return log;
}

/// Writes `alpha_g,alpha_l,alpha_n,final_size,size_at_100,survival_time,speed,seed` rows.
inline void write_metrics_header(std::ostream& out) {
    out << "alpha_g,alpha_l,alpha_n,final_size,size_at_100,survival_time,speed,seed\n";
}

inline void write_metrics_row(std::ostream& out, const ModelParams& p, const OutbreakMetrics& m, std::uint64_t seed) {
    out << format_double(p.alpha_g) << ',' << format_double(p.alpha_l) << ',' << format_double(p.alpha_n) << ','
        << m.final_size << ',' << m.size_at_100 << ',' << m.survival_time << ',' << format_double(m.speed) << ','
        << seed << '\n';
}

} // namespace hybridepi
