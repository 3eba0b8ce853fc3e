#pragma once

// Mixing-probability sweeps over the stochastic engine, and recovery-time
// what-if runs over the mean-field engine.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <iterator>
#include <mutex>
#include <ostream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "format.hpp"
#include "model.hpp"
#include "rng.hpp"
#include "stochastic.hpp"

namespace hybridepi {

enum class MechanismPair { global_local, global_neighbourhood, local_neighbourhood };

inline const char* to_string(MechanismPair p) {
    switch (p) {
        case MechanismPair::global_local: return "global-local";
        case MechanismPair::global_neighbourhood: return "global-neighbourhood";
        case MechanismPair::local_neighbourhood: return "local-neighbourhood";
    }
    return "?";
}

struct GridPoint {
    double alpha_g = 0.0;
    double alpha_l = 0.0;
    double alpha_n = 0.0;

    bool interior() const { return alpha_g > 0.0 && alpha_l > 0.0 && alpha_n > 0.0; }
};

struct TopologySpec {
    int num_subnets = 10000;
    int nodes_per_subnet = 5;
    int relevant_adjacent = 4;
    std::uint64_t seed = 1;

    static TopologySpec desk() { return TopologySpec{}; }
    static TopologySpec paper() { return TopologySpec{100000, 5, 4, 1}; }

    SimTopology build() const { return build_topology(num_subnets, nodes_per_subnet, relevant_adjacent, seed); }
};

struct SweepConfig {
    double resolution = 0.05;
    int runs = 20;
    TopologySpec topology;
    ModelParams base = conficker_2008();
    std::uint64_t seed = 1;
    long max_steps = 100000;
    long initial_infected = 2;
    unsigned jobs = 0; // 0: one per hardware thread

    void validate() const {
        if (!(resolution > 0.0 && resolution <= 1.0)) throw invalid_parameters("resolution must lie in (0, 1]");
        const double cells = 1.0 / resolution;
        if (std::abs(cells - std::round(cells)) > 1e-9)
            throw invalid_parameters("resolution must divide 1 evenly");
        if (runs < 1) throw invalid_parameters("runs must be at least 1");
        if (max_steps < 0) throw invalid_parameters("max_steps must be non-negative");
    }
};

inline int grid_cells(double resolution) { return static_cast<int>(std::lround(1.0 / resolution)); }

/// Points along one edge of the simplex; the third probability is zero.
inline std::vector<GridPoint> grid_two(MechanismPair pair, double resolution) {
    const int cells = grid_cells(resolution);
    std::vector<GridPoint> pts;
    for (int i = 0; i <= cells; ++i) {
        const double a = static_cast<double>(i) / cells;
        const double b = static_cast<double>(cells - i) / cells;
        switch (pair) {
            case MechanismPair::global_local: pts.push_back(GridPoint{a, b, 0.0}); break;
            case MechanismPair::global_neighbourhood: pts.push_back(GridPoint{a, 0.0, b}); break;
            case MechanismPair::local_neighbourhood: pts.push_back(GridPoint{0.0, a, b}); break;
        }
    }
    return pts;
}

/// Every (alpha_g, alpha_l) on the grid with alpha_n = 1 - alpha_g - alpha_l >= 0.
inline std::vector<GridPoint> grid_three(double resolution) {
    const int cells = grid_cells(resolution);
    std::vector<GridPoint> pts;
    for (int g = 0; g <= cells; ++g)
        for (int l = 0; g + l <= cells; ++l)
            pts.push_back(GridPoint{static_cast<double>(g) / cells, static_cast<double>(l) / cells,
                                    static_cast<double>(cells - g - l) / cells});
    return pts;
}

struct Summary {
    double mean = 0.0;
    double sd = 0.0; // sample standard deviation, 0 for a single run
};

inline Summary summarize(const std::vector<double>& xs) {
    Summary s;
    if (xs.empty()) return s;
    double sum = 0.0;
    for (double x : xs) sum += x;
    s.mean = sum / static_cast<double>(xs.size());
    if (xs.size() > 1) {
        double ss = 0.0;
        for (double x : xs) ss += (x - s.mean) * (x - s.mean);
        s.sd = std::sqrt(ss / static_cast<double>(xs.size() - 1));
    }
    return s;
}

struct PointResult {
    GridPoint point;
    std::vector<OutbreakMetrics> runs; // in run order
    Summary final_size;
    Summary size_at_100;
    Summary survival_time;
    Summary speed;
};

struct SweepResult {
    long population = 0;
    std::vector<PointResult> points; // in grid order
};

inline ModelParams with_mixing(ModelParams p, const GridPoint& g) {
    p.alpha_g = g.alpha_g;
    p.alpha_l = g.alpha_l;
    p.alpha_n = g.alpha_n;
    return p;
}

namespace detail {

/// Runs fn(i) for i in [0, count) on a pool of `jobs` threads. Rethrows the first failure.
template <class Fn>
void parallel_for(std::size_t count, unsigned jobs, Fn&& fn) {
    if (jobs == 0) jobs = std::max(1U, std::thread::hardware_concurrency());
    jobs = static_cast<unsigned>(std::min<std::size_t>(jobs, std::max<std::size_t>(count, 1)));
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&] {
        for (std::size_t i = next++; i < count; i = next++) {
            try {
                fn(i);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
            }
        }
    };
    if (jobs <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(jobs);
        for (unsigned j = 0; j < jobs; ++j) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (failure) std::rethrow_exception(failure);
}

inline PointResult summarize_point(const GridPoint& g, std::vector<OutbreakMetrics> runs) {
    PointResult r;
    r.point = g;
    std::vector<double> fs, s100, surv, speed;
    for (const auto& m : runs) {
        fs.push_back(static_cast<double>(m.final_size));
        s100.push_back(static_cast<double>(m.size_at_100));
        surv.push_back(static_cast<double>(m.survival_time));
        speed.push_back(m.speed);
    }
    r.final_size = summarize(fs);
    r.size_at_100 = summarize(s100);
    r.survival_time = summarize(surv);
    r.speed = summarize(speed);
    r.runs = std::move(runs);
    return r;
}

} // namespace detail

/// Runs `config.runs` simulations at every grid point. Run k of point i uses
/// seed derive_seed(config.seed, i, k); output order is grid order regardless
/// of scheduling.
inline SweepResult run_grid(const std::vector<GridPoint>& grid, const SweepConfig& config) {
    config.validate();
    const SimTopology topo = config.topology.build();
    for (const auto& g : grid) with_mixing(config.base, g).validate();

    const std::size_t runs = static_cast<std::size_t>(config.runs);
    std::vector<OutbreakMetrics> metrics(grid.size() * runs);
    detail::parallel_for(metrics.size(), config.jobs, [&](std::size_t job) {
        const std::size_t point = job / runs;
        const std::size_t run = job % runs;
        const RunConfig rc{config.initial_infected, config.max_steps, derive_seed(config.seed, point, run)};
        metrics[job] = run_sim(with_mixing(config.base, grid[point]), topo, rc).metrics;
    });

    SweepResult result;
    result.population = static_cast<long>(topo.total_nodes());
    for (std::size_t i = 0; i < grid.size(); ++i)
        result.points.push_back(detail::summarize_point(
            grid[i], std::vector<OutbreakMetrics>(metrics.begin() + static_cast<std::ptrdiff_t>(i * runs),
                                                  metrics.begin() + static_cast<std::ptrdiff_t>((i + 1) * runs))));
    return result;
}

inline SweepResult sweep_two(MechanismPair pair, const SweepConfig& config) {
    config.validate();
    return run_grid(grid_two(pair, config.resolution), config);
}

inline SweepResult sweep_three(const SweepConfig& config) {
    config.validate();
    return run_grid(grid_three(config.resolution), config);
}

inline void write_sweep_csv(std::ostream& out, const SweepResult& res) {
    out << "alpha_g,alpha_l,alpha_n,mean_final,sd_final,mean_size100,sd_size100,mean_survival,sd_survival,"
           "mean_speed,sd_speed\n";
    for (const auto& p : res.points) {
        const double row[] = {p.point.alpha_g,     p.point.alpha_l,    p.point.alpha_n,       p.final_size.mean,
                              p.final_size.sd,     p.size_at_100.mean, p.size_at_100.sd,      p.survival_time.mean,
                              p.survival_time.sd,  p.speed.mean,       p.speed.sd};
        for (std::size_t i = 0; i < std::size(row); ++i) out << (i ? "," : "") << format_double(row[i]);
        out << '\n';
    }
}

// ---------------------------------------------------------------------------
// Mean-field experiments

/// Windows from 4:00 to 16:00.
inline constexpr long kDaytimeHorizon = 72;

inline constexpr double kWindowMinutes = 10.0;

inline double gamma_for_tau(double tau_minutes) {
    if (!(tau_minutes >= kWindowMinutes) || !std::isfinite(tau_minutes))
        throw invalid_parameters("recovery time must be at least one window (10 minutes)");
    return kWindowMinutes / tau_minutes;
}

struct WhatIfRow {
    double tau_minutes = 0.0;
    MacroState at_horizon;
};

/// State at the horizon for each recovery time, all other parameters fixed.
inline std::vector<WhatIfRow> whatif_recovery(const ModelParams& params, const Topology& topo, const MacroState& init,
                                              const std::vector<double>& taus, long horizon = kDaytimeHorizon) {
    std::vector<WhatIfRow> rows;
    rows.reserve(taus.size());
    for (double tau : taus) {
        ModelParams p = params;
        p.gamma = gamma_for_tau(tau);
        rows.push_back(WhatIfRow{tau, run_meanfield(p, topo, init, horizon).back()});
    }
    return rows;
}

inline void write_whatif_csv(std::ostream& out, const std::vector<WhatIfRow>& rows) {
    out << "tau_minutes,S,I,R\n";
    for (const auto& r : rows)
        out << format_double(r.tau_minutes) << ',' << format_double(r.at_horizon.S) << ','
            << format_double(r.at_horizon.I) << ',' << format_double(r.at_horizon.R) << '\n';
}

/// Mean-field curve from the given initial state.
inline Trajectory predict_outbreak(const ModelParams& params, const Topology& topo, const MacroState& init,
                                   long steps = kDaytimeHorizon) {
    return run_meanfield(params, topo, init, steps);
}

} // namespace hybridepi
