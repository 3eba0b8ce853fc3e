#pragma once

// Mean-field hybrid SIR recurrence over a metapopulation of subnets, and the
// algebra linking effective infection rates, mixing probabilities and the
// probing frequency.

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace hybridepi {

/// Raised when a parameter set or state violates its invariants.
class invalid_parameters : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Raised when all effective rates are zero, so mixing probabilities are undefined.
class degenerate_rates : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Number of addresses covered by each probing scope.
struct ProbeSpace {
    static constexpr double local = 256.0;
    static constexpr double neighbourhood = 2560.0;
    static constexpr double global = 1073741824.0; // 2^30, the worm's generator never reaches 2^32
    static constexpr int neighbourhood_subnets = 10;
};

enum class Mechanism : std::uint8_t { global = 0, local = 1, neighbourhood = 2 };

inline const char* to_string(Mechanism m) {
    switch (m) {
        case Mechanism::global: return "global";
        case Mechanism::local: return "local";
        case Mechanism::neighbourhood: return "neighbourhood";
    }
    return "?";
}

/// Epidemic parameters. Every rate is per 10-minute window.
struct ModelParams {
    double alpha_g = 0.0;
    double alpha_l = 0.0;
    double alpha_n = 0.0;
    double beta_g = 0.0;
    double beta_l = 0.0;
    double beta_n = 0.0;
    double gamma = 0.0;
    double lambda = 0.0;

    double b_g() const { return alpha_g * beta_g; }
    double b_l() const { return alpha_l * beta_l; }
    double b_n() const { return alpha_n * beta_n; }

    /// Recovery time in minutes, tau = window / gamma.
    double tau_minutes() const { return gamma > 0.0 ? 10.0 / gamma : INFINITY; }

    void validate() const {
        auto unit = [](double v, const char* name) {
            if (!(v >= 0.0 && v <= 1.0))
                throw invalid_parameters(std::string(name) + " must lie in [0, 1]");
        };
        unit(alpha_g, "alpha_g");
        unit(alpha_l, "alpha_l");
        unit(alpha_n, "alpha_n");
        unit(beta_g, "beta_g");
        unit(beta_l, "beta_l");
        unit(beta_n, "beta_n");
        unit(gamma, "gamma");
        if (!(lambda >= 0.0) || !std::isfinite(lambda))
            throw invalid_parameters("lambda must be finite and non-negative");
        if (std::abs(alpha_g + alpha_l + alpha_n - 1.0) > 1e-9)
            throw invalid_parameters("mixing probabilities must sum to 1");
    }
};

/// Values inferred from the telescope data on the first outbreak day of 2008.
inline ModelParams conficker_2008() {
    ModelParams p;
    p.alpha_g = 0.891;
    p.alpha_l = 0.053;
    p.alpha_n = 0.056;
    p.beta_g = 7.7e-8;
    p.beta_l = 0.32;
    p.beta_n = 0.032;
    p.gamma = 0.064;
    p.lambda = 82.5;
    return p;
}

/// Metapopulation geometry as seen by the mean-field recurrence.
struct Topology {
    double num_subnets = 1.0;       // N
    double nodes_per_subnet = 1.0;  // n_N, may be fractional
    double relevant_neighbours = 0.0; // N^+, mean relevant subnets among the 10 neighbours

    void validate() const {
        if (!(num_subnets >= 1.0))
            throw invalid_parameters("topology needs at least one subnet");
        if (!(nodes_per_subnet > 0.0))
            throw invalid_parameters("nodes_per_subnet must be positive");
        if (!(relevant_neighbours >= 0.0 && relevant_neighbours <= ProbeSpace::neighbourhood_subnets))
            throw invalid_parameters("relevant_neighbours must lie in [0, 10]");
    }
};

/// Observed population in the outbreak-day data: n = 430135 nodes in N = 92267 subnets.
inline Topology conficker_2008_topology() {
    return Topology{92267.0, 430135.0 / 92267.0, 4.3};
}

struct MacroState {
    long t = 0;
    double S = 0.0;
    double I = 0.0;
    double R = 0.0;

    double total() const { return S + I + R; }

    void validate() const {
        if (!(S >= 0.0 && I >= 0.0 && R >= 0.0) || !std::isfinite(S + I + R))
            throw invalid_parameters("S, I and R must be finite and non-negative");
    }
};

/// State at 4:00 on the outbreak day.
inline MacroState conficker_2008_initial() { return MacroState{0, 423899.0, 3945.0, 2291.0}; }

using Trajectory = std::vector<MacroState>;

struct EffectiveRates {
    double b_l = 0.0;
    double b_n = 0.0;
    double b_g = 0.0;

    void validate() const {
        for (double b : {b_l, b_n, b_g})
            if (!(b >= 0.0 && b <= 1.0))
                throw invalid_parameters("effective rates must lie in [0, 1]");
    }
};

struct EscapeProbabilities {
    double global = 1.0;
    double local = 1.0;
    double neighbourhood = 1.0;

    double combined() const { return global * local * neighbourhood; }
};

/// (1 - b)^x evaluated as exp(x log1p(-b)); exact for x = 0 and b = 1.
inline double escape_power(double b, double x) {
    if (x == 0.0 || b == 0.0) return 1.0;
    if (b >= 1.0) return 0.0;
    return std::exp(x * std::log1p(-b));
}

/// Mean infected nodes per subnet.
inline double infected_per_subnet(const MacroState& s, const Topology& topo) {
    return s.I / topo.num_subnets;
}

/// Mean infected nodes within a susceptible node's neighbourhood.
inline double infected_in_neighbourhood(const MacroState& s, const Topology& topo) {
    return infected_per_subnet(s, topo) * topo.relevant_neighbours;
}

inline EscapeProbabilities escape_probabilities(const ModelParams& params, const MacroState& state,
                                                const Topology& topo) {
    params.validate();
    state.validate();
    topo.validate();
    EscapeProbabilities p;
    p.global = escape_power(params.b_g(), state.I);
    p.local = escape_power(params.b_l(), infected_per_subnet(state, topo));
    p.neighbourhood = escape_power(params.b_n(), infected_in_neighbourhood(state, topo));
    return p;
}

inline MacroState meanfield_step(const ModelParams& params, const MacroState& state, const Topology& topo) {
    const double P = escape_probabilities(params, state, topo).combined();
    const double infections = state.S * (1.0 - P);
    const double recoveries = params.gamma * state.I;
    MacroState next;
    next.t = state.t + 1;
    next.S = state.S - infections;
    next.I = state.I + infections - recoveries;
    next.R = state.R + recoveries;
    return next;
}

inline Trajectory run_meanfield(const ModelParams& params, const Topology& topo, const MacroState& init,
                                long steps) {
    if (steps < 0) throw invalid_parameters("steps must be non-negative");
    params.validate();
    topo.validate();
    init.validate();
    Trajectory traj;
    traj.reserve(static_cast<std::size_t>(steps) + 1);
    traj.push_back(init);
    for (long k = 0; k < steps; ++k) traj.push_back(meanfield_step(params, traj.back(), topo));
    return traj;
}

struct Mixing {
    double lambda = 0.0;
    double alpha_g = 0.0;
    double alpha_l = 0.0;
    double alpha_n = 0.0;
};

/// Solves b_x = alpha_x * lambda / space_x together with sum(alpha) = 1.
inline Mixing rates_to_mixing(const EffectiveRates& rates) {
    rates.validate();
    const double local = ProbeSpace::local * rates.b_l;
    const double neigh = ProbeSpace::neighbourhood * rates.b_n;
    const double global = ProbeSpace::global * rates.b_g;
    const double lambda = local + neigh + global;
    if (!(lambda > 0.0)) throw degenerate_rates("all effective rates are zero; mixing is undefined");
    Mixing m;
    m.lambda = lambda;
    m.alpha_l = local / lambda;
    m.alpha_n = neigh / lambda;
    m.alpha_g = global / lambda;
    return m;
}

/// Inverse of rates_to_mixing: b_x = alpha_x * lambda / space_x.
inline EffectiveRates mixing_to_rates(const Mixing& m) {
    return EffectiveRates{m.alpha_l * m.lambda / ProbeSpace::local,
                          m.alpha_n * m.lambda / ProbeSpace::neighbourhood,
                          m.alpha_g * m.lambda / ProbeSpace::global};
}

struct InfectionRates {
    double beta_l = 0.0;
    double beta_n = 0.0;
    double beta_g = 0.0;
};

namespace detail {
inline double split_rate(double b, double alpha, const char* name) {
    if (alpha < 0.0 || b < 0.0) throw invalid_parameters(std::string(name) + ": negative input");
    if (alpha == 0.0) {
        if (b == 0.0) return 0.0;
        throw invalid_parameters(std::string(name) + ": nonzero effective rate with zero mixing probability");
    }
    const double beta = b / alpha;
    if (beta > 1.0) throw invalid_parameters(std::string(name) + ": infection rate exceeds 1");
    return beta;
}
} // namespace detail

inline InfectionRates mixing_to_infection_rates(const EffectiveRates& rates, const Mixing& m) {
    return InfectionRates{detail::split_rate(rates.b_l, m.alpha_l, "beta_l"),
                          detail::split_rate(rates.b_n, m.alpha_n, "beta_n"),
                          detail::split_rate(rates.b_g, m.alpha_g, "beta_g")};
}

/// Writes `t,S,I,R` rows at 17 significant digits.
inline void write_trajectory_csv(std::ostream& out, const Trajectory& traj) {
    const auto old_flags = out.flags();
    const auto old_prec = out.precision();
    out << "t,S,I,R\n" << std::setprecision(17);
    for (const auto& s : traj) out << s.t << ',' << s.S << ',' << s.I << ',' << s.R << '\n';
    out.flags(old_flags);
    out.precision(old_prec);
}

} // namespace hybridepi
