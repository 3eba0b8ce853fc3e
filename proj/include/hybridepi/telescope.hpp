#pragma once

// Telescope probe logs to model parameters: parse and denoise events,
// reconstruct infection intervals per source, count S/I/R per window,
// attribute each new infection to a spreading scope and invert the
// escape probabilities into effective rates.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "model.hpp"
#include "probe_event.hpp"

namespace hybridepi {

/// Raised when the input data cannot support an estimate.
class data_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Event log I/O

/// Accepts dotted-quad ("10.0.3.7") or unsigned decimal ("167773959").
inline std::optional<std::uint32_t> parse_address(std::string_view text) {
    if (text.empty()) return std::nullopt;
    if (text.find('.') == std::string_view::npos) {
        std::uint64_t v = 0;
        auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
        if (ec != std::errc{} || ptr != text.data() + text.size() || v > 0xffffffffULL) return std::nullopt;
        return static_cast<std::uint32_t>(v);
    }
    std::uint32_t addr = 0;
    int parts = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const std::size_t dot = std::min(text.find('.', pos), text.size());
        const std::string_view part = text.substr(pos, dot - pos);
        unsigned octet = 0;
        auto [ptr, ec] = std::from_chars(part.data(), part.data() + part.size(), octet);
        if (part.empty() || ec != std::errc{} || ptr != part.data() + part.size() || octet > 255) return std::nullopt;
        addr = (addr << 8) | octet;
        ++parts;
        pos = dot + 1;
        if (dot == text.size()) break;
    }
    if (parts != 4) return std::nullopt;
    return addr;
}

inline std::string format_address(std::uint32_t addr) {
    return std::to_string(addr >> 24) + '.' + std::to_string((addr >> 16) & 0xff) + '.' +
           std::to_string((addr >> 8) & 0xff) + '.' + std::to_string(addr & 0xff);
}

struct ParseReport {
    std::vector<ProbeEvent> events; // sorted by (timestamp, source)
    std::size_t malformed = 0;
};

namespace detail {
inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}
} // namespace detail

/// Reads a `timestamp,source_addr` CSV. A header line is optional; blank
/// lines are ignored; any other row that does not parse is counted and skipped.
inline ParseReport parse_events(std::istream& in) {
    if (!in) throw std::runtime_error("event stream is not readable");
    ParseReport report;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        const std::string_view row = detail::trim(line);
        if (row.empty()) continue;
        if (first) {
            first = false;
            if (row == "timestamp,source_addr") continue;
        }
        const auto comma = row.find(',');
        if (comma == std::string_view::npos) {
            ++report.malformed;
            continue;
        }
        const std::string_view ts_text = detail::trim(row.substr(0, comma));
        const std::string_view addr_text = detail::trim(row.substr(comma + 1));
        std::int64_t ts = 0;
        auto [ptr, ec] = std::from_chars(ts_text.data(), ts_text.data() + ts_text.size(), ts);
        const auto addr = parse_address(addr_text);
        if (ts_text.empty() || ec != std::errc{} || ptr != ts_text.data() + ts_text.size() || !addr) {
            ++report.malformed;
            continue;
        }
        report.events.push_back(ProbeEvent{ts, *addr});
    }
    if (in.bad()) throw std::runtime_error("error while reading event stream");
    std::sort(report.events.begin(), report.events.end());
    return report;
}

inline void write_events(std::ostream& out, const std::vector<ProbeEvent>& events) {
    out << "timestamp,source_addr\n";
    for (const auto& e : events) out << e.timestamp << ',' << e.source_addr << '\n';
}

/// Drops every event whose source also appears in any baseline log.
inline std::vector<ProbeEvent> filter_background(const std::vector<ProbeEvent>& outbreak,
                                                 const std::vector<std::vector<ProbeEvent>>& baselines) {
    std::unordered_set<std::uint32_t> noisy;
    for (const auto& base : baselines)
        for (const auto& e : base) noisy.insert(e.source_addr);
    std::vector<ProbeEvent> kept;
    kept.reserve(outbreak.size());
    std::copy_if(outbreak.begin(), outbreak.end(), std::back_inserter(kept),
                 [&](const ProbeEvent& e) { return !noisy.contains(e.source_addr); });
    return kept;
}

// ---------------------------------------------------------------------------
// Step one: node status

/// A source is infected from its first probe and recovered after its last.
struct NodeTimeline {
    std::uint32_t source_addr = 0;
    std::int64_t first_seen = 0;
    std::int64_t last_seen = 0;
};

/// One timeline per distinct source, ordered by address.
inline std::vector<NodeTimeline> build_timelines(const std::vector<ProbeEvent>& events) {
    std::unordered_map<std::uint32_t, NodeTimeline> by_source;
    by_source.reserve(events.size() / 4 + 1);
    for (const auto& e : events) {
        auto [it, inserted] = by_source.try_emplace(e.source_addr, NodeTimeline{e.source_addr, e.timestamp, e.timestamp});
        if (!inserted) {
            it->second.first_seen = std::min(it->second.first_seen, e.timestamp);
            it->second.last_seen = std::max(it->second.last_seen, e.timestamp);
        }
    }
    std::vector<NodeTimeline> out;
    out.reserve(by_source.size());
    for (const auto& [addr, tl] : by_source) out.push_back(tl);
    std::sort(out.begin(), out.end(),
              [](const NodeTimeline& a, const NodeTimeline& b) { return a.source_addr < b.source_addr; });
    return out;
}

// ---------------------------------------------------------------------------
// Window series

struct WindowCounts {
    long S = 0;
    long I = 0;
    long R = 0;
    // transitions from this window to the next
    long dI_l = 0;
    long dI_n = 0;
    long dI_g = 0;
    long dR = 0;
    double I_N = 0.0;    // I / N
    double I_plus = 0.0; // I_N * N^+

    long new_infections() const { return dI_l + dI_n + dI_g; }
};

struct WindowSeries {
    std::int64_t origin = 0;
    std::int64_t window_seconds = 600;
    long total_nodes = 0;             // n
    double num_subnets = 0.0;         // N
    double relevant_neighbours = 0.0; // N^+
    std::vector<WindowCounts> windows;

    Topology topology() const {
        return Topology{num_subnets, num_subnets > 0 ? static_cast<double>(total_nodes) / num_subnets : 1.0,
                        relevant_neighbours};
    }
};

struct WindowOptions {
    std::int64_t window_seconds = 600;
    std::optional<std::int64_t> origin;       // default: start of the first event's window
    std::optional<double> num_subnets;         // default: distinct /24 prefixes observed
    std::optional<double> relevant_neighbours; // default: measured from observed prefixes
};

/// Mean number of observed /24 prefixes among the ten prefixes above each observed prefix.
inline double measure_relevant_neighbours(const std::vector<NodeTimeline>& timelines) {
    std::vector<std::uint32_t> prefixes;
    prefixes.reserve(timelines.size());
    for (const auto& tl : timelines) prefixes.push_back(subnet_of(tl.source_addr));
    std::sort(prefixes.begin(), prefixes.end());
    prefixes.erase(std::unique(prefixes.begin(), prefixes.end()), prefixes.end());
    if (prefixes.empty()) return 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < prefixes.size(); ++i)
        for (std::size_t j = i + 1; j < prefixes.size() && prefixes[j] - prefixes[i] <= 10; ++j) ++pairs;
    return static_cast<double>(pairs) / static_cast<double>(prefixes.size());
}

inline std::size_t count_subnets(const std::vector<NodeTimeline>& timelines) {
    std::unordered_set<std::uint32_t> prefixes;
    for (const auto& tl : timelines) prefixes.insert(subnet_of(tl.source_addr));
    return prefixes.size();
}

namespace detail {
inline std::int64_t floor_div(std::int64_t a, std::int64_t b) {
    std::int64_t q = a / b;
    if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
    return q;
}

inline std::int64_t resolve_origin(const std::vector<NodeTimeline>& timelines, const WindowOptions& opt) {
    if (opt.origin) return *opt.origin;
    if (timelines.empty()) return 0;
    std::int64_t first = std::numeric_limits<std::int64_t>::max();
    for (const auto& tl : timelines) first = std::min(first, tl.first_seen);
    return floor_div(first, opt.window_seconds) * opt.window_seconds;
}
} // namespace detail

/// Window index of a timestamp under the series' origin.
inline long window_of(const WindowSeries& series, std::int64_t timestamp) {
    return static_cast<long>(detail::floor_div(timestamp - series.origin, series.window_seconds));
}

/// S/I/R per window plus recoveries dR(t) = R(t+1) - R(t). New-infection
/// counts are left at zero; attribute_infections fills them in.
inline WindowSeries build_window_series(const std::vector<NodeTimeline>& timelines, const WindowOptions& opt = {}) {
    if (opt.window_seconds <= 0) throw std::invalid_argument("window length must be positive");
    WindowSeries series;
    series.window_seconds = opt.window_seconds;
    series.origin = detail::resolve_origin(timelines, opt);
    series.total_nodes = static_cast<long>(timelines.size());
    series.num_subnets = opt.num_subnets.value_or(static_cast<double>(count_subnets(timelines)));
    series.relevant_neighbours = opt.relevant_neighbours.value_or(measure_relevant_neighbours(timelines));

    long last_window = -1;
    for (const auto& tl : timelines) {
        if (window_of(series, tl.first_seen) < 0)
            throw data_error("event precedes the series origin");
        last_window = std::max(last_window, window_of(series, tl.last_seen));
    }
    // one extra window so that every node has recovered in the final one
    const std::size_t count = static_cast<std::size_t>(last_window + 2);
    std::vector<long> starts(count + 1, 0), ends(count + 1, 0);
    for (const auto& tl : timelines) {
        ++starts[static_cast<std::size_t>(window_of(series, tl.first_seen))];
        ++ends[static_cast<std::size_t>(window_of(series, tl.last_seen))];
    }
    series.windows.resize(timelines.empty() ? 0 : count);
    long started = 0, ended = 0;
    for (std::size_t t = 0; t < series.windows.size(); ++t) {
        started += starts[t];
        auto& w = series.windows[t];
        w.S = series.total_nodes - started;
        w.R = ended;
        w.I = started - ended;
        w.dR = ends[t];
        ended += ends[t];
        w.I_N = series.num_subnets > 0 ? static_cast<double>(w.I) / series.num_subnets : 0.0;
        w.I_plus = w.I_N * series.relevant_neighbours;
    }
    return series;
}

// ---------------------------------------------------------------------------
// Step two: attribution

/// Maps addresses to /24 subnets. A subnet's neighbourhood probes reach it
/// from the ten subnets directly above it, since each infected subnet probes
/// the ten prefixes below its own. No wrap-around at either end of the space.
struct SubnetMap {
    std::uint32_t subnet(std::uint32_t addr) const { return subnet_of(addr); }

    template <class F>
    void for_each_covering_subnet(std::uint32_t s, F&& f) const {
        for (std::uint32_t k = 1; k <= static_cast<std::uint32_t>(ProbeSpace::neighbourhood_subnets); ++k) {
            if (s + k > 0xffffffU) break;
            f(s + k);
        }
    }
};

struct Attribution {
    std::vector<Mechanism> mechanism; // per timeline; only meaningful for attributed nodes
    std::vector<bool> attributed;     // false for nodes already infected in window 0
};

/// Assigns each new infection to local, neighbourhood or global spreading
/// from the other nodes' status in the window before it first appears, and
/// stores the per-window counts into `series`.
inline Attribution attribute_infections(const std::vector<NodeTimeline>& timelines, WindowSeries& series,
                                        const SubnetMap& map = {}) {
    struct Interval {
        long first;
        long last;
        std::size_t index;
    };
    std::unordered_map<std::uint32_t, std::vector<Interval>> by_subnet;
    for (std::size_t i = 0; i < timelines.size(); ++i)
        by_subnet[map.subnet(timelines[i].source_addr)].push_back(
            Interval{window_of(series, timelines[i].first_seen), window_of(series, timelines[i].last_seen), i});

    const auto infected_in = [&](std::uint32_t subnet, long t, std::size_t except) {
        const auto it = by_subnet.find(subnet);
        if (it == by_subnet.end()) return false;
        return std::any_of(it->second.begin(), it->second.end(), [&](const Interval& iv) {
            return iv.index != except && iv.first <= t && t <= iv.last;
        });
    };

    for (auto& w : series.windows) w.dI_l = w.dI_n = w.dI_g = 0;

    Attribution out;
    out.mechanism.assign(timelines.size(), Mechanism::global);
    out.attributed.assign(timelines.size(), false);
    for (std::size_t i = 0; i < timelines.size(); ++i) {
        const long first = window_of(series, timelines[i].first_seen);
        if (first <= 0) continue;
        const long before = first - 1;
        const std::uint32_t subnet = map.subnet(timelines[i].source_addr);
        Mechanism m = Mechanism::global;
        if (infected_in(subnet, before, i)) {
            m = Mechanism::local;
        } else {
            bool near = false;
            map.for_each_covering_subnet(subnet, [&](std::uint32_t s) { near = near || infected_in(s, before, i); });
            if (near) m = Mechanism::neighbourhood;
        }
        out.mechanism[i] = m;
        out.attributed[i] = true;
        auto& w = series.windows[static_cast<std::size_t>(before)];
        switch (m) {
            case Mechanism::local: ++w.dI_l; break;
            case Mechanism::neighbourhood: ++w.dI_n; break;
            case Mechanism::global: ++w.dI_g; break;
        }
    }
    return out;
}

/// Timelines, window counts and attribution in one pass.
inline WindowSeries build_series(const std::vector<NodeTimeline>& timelines, const WindowOptions& opt = {},
                                 const SubnetMap& map = {}) {
    WindowSeries series = build_window_series(timelines, opt);
    attribute_infections(timelines, series, map);
    return series;
}

// ---------------------------------------------------------------------------
// Step three: rates

enum class WindowIssue { none, no_infected, no_susceptible, saturated };

inline const char* to_string(WindowIssue w) {
    switch (w) {
        case WindowIssue::none: return "usable";
        case WindowIssue::no_infected: return "no infected nodes";
        case WindowIssue::no_susceptible: return "no susceptible nodes";
        case WindowIssue::saturated: return "new infections reach S";
    }
    return "?";
}

struct WindowRates {
    long window = 0;
    WindowIssue issue = WindowIssue::none;
    EscapeProbabilities escape;
    EffectiveRates rates;
    double gamma = 0.0;

    bool usable() const { return issue == WindowIssue::none; }
};

/// Inverts (1 - b)^x = P for b given the observed escape probability.
inline double invert_escape(double P, double exposure) {
    if (P >= 1.0) return 0.0;
    if (!(exposure > 0.0)) return 0.0;
    return -std::expm1(std::log(P) / exposure);
}

inline WindowRates estimate_window_rate(const WindowSeries& series, std::size_t t) {
    const WindowCounts& w = series.windows.at(t);
    WindowRates r;
    r.window = static_cast<long>(t);
    if (w.I <= 0) {
        r.issue = WindowIssue::no_infected;
        return r;
    }
    if (w.S <= 0) {
        r.issue = WindowIssue::no_susceptible;
        return r;
    }
    if (w.dI_l >= w.S || w.dI_n >= w.S || w.dI_g >= w.S) {
        r.issue = WindowIssue::saturated;
        return r;
    }
    const double S = static_cast<double>(w.S);
    r.escape.local = 1.0 - static_cast<double>(w.dI_l) / S;
    r.escape.neighbourhood = 1.0 - static_cast<double>(w.dI_n) / S;
    r.escape.global = 1.0 - static_cast<double>(w.dI_g) / S;
    r.rates.b_l = invert_escape(r.escape.local, w.I_N);
    r.rates.b_n = invert_escape(r.escape.neighbourhood, w.I_plus);
    r.rates.b_g = invert_escape(r.escape.global, static_cast<double>(w.I));
    r.gamma = static_cast<double>(w.dR) / static_cast<double>(w.I);
    return r;
}

inline std::vector<WindowRates> estimate_window_rates(const WindowSeries& series) {
    std::vector<WindowRates> out;
    out.reserve(series.windows.size());
    for (std::size_t t = 0; t < series.windows.size(); ++t) out.push_back(estimate_window_rate(series, t));
    return out;
}

struct InferenceDiagnostics {
    long windows_in_range = 0;
    long usable_windows = 0;
    std::map<std::string, long> unusable_by_reason;
    long attributed_infections = 0;
    double within_reach_fraction = 0.0;  // local + neighbourhood share of all new infections
    double local_within_reach = 0.0;     // local share of the within-reach infections
    long total_nodes = 0;
    double num_subnets = 0.0;
    double relevant_neighbours = 0.0;
};

struct InferenceResult {
    ModelParams params;
    EffectiveRates mean_rates;
    std::vector<WindowRates> per_window;
    long range_begin = 0; // first window averaged
    long range_end = 0;   // one past the last window averaged
    std::int64_t window_seconds = 600;
    InferenceDiagnostics diagnostics;

    double tau_minutes() const {
        return params.gamma > 0.0 ? static_cast<double>(window_seconds) / 60.0 / params.gamma : INFINITY;
    }
};

/// Averages the usable windows in [begin, end) with equal weight and solves
/// for mixing probabilities, probing frequency and per-scope infection rates.
inline InferenceResult infer_params(const WindowSeries& series, long begin, long end) {
    if (begin < 0 || end < begin) throw std::invalid_argument("invalid averaging range");
    InferenceResult res;
    res.range_begin = begin;
    res.range_end = end;
    res.window_seconds = series.window_seconds;
    res.per_window = estimate_window_rates(series);

    auto& d = res.diagnostics;
    d.total_nodes = series.total_nodes;
    d.num_subnets = series.num_subnets;
    d.relevant_neighbours = series.relevant_neighbours;
    long local = 0, neigh = 0, global = 0;
    for (const auto& w : series.windows) {
        local += w.dI_l;
        neigh += w.dI_n;
        global += w.dI_g;
    }
    d.attributed_infections = local + neigh + global;
    if (d.attributed_infections > 0)
        d.within_reach_fraction = static_cast<double>(local + neigh) / static_cast<double>(d.attributed_infections);
    if (local + neigh > 0) d.local_within_reach = static_cast<double>(local) / static_cast<double>(local + neigh);

    double sum_l = 0.0, sum_n = 0.0, sum_g = 0.0, sum_gamma = 0.0;
    const long last = std::min<long>(end, static_cast<long>(res.per_window.size()));
    for (long t = begin; t < end; ++t) {
        ++d.windows_in_range;
        if (t >= last) {
            ++d.unusable_by_reason["outside series"];
            continue;
        }
        const auto& w = res.per_window[static_cast<std::size_t>(t)];
        if (!w.usable()) {
            ++d.unusable_by_reason[to_string(w.issue)];
            continue;
        }
        ++d.usable_windows;
        sum_l += w.rates.b_l;
        sum_n += w.rates.b_n;
        sum_g += w.rates.b_g;
        sum_gamma += w.gamma;
    }
    if (d.usable_windows == 0) throw data_error("no usable windows in the averaging range");

    const double k = static_cast<double>(d.usable_windows);
    res.mean_rates = EffectiveRates{sum_l / k, sum_n / k, sum_g / k};
    const Mixing mix = rates_to_mixing(res.mean_rates);
    InfectionRates beta;
    try {
        beta = mixing_to_infection_rates(res.mean_rates, mix);
    } catch (const invalid_parameters& e) {
        throw data_error(std::string("estimated rates are inconsistent with the probe spaces: ") + e.what());
    }

    res.params.alpha_g = mix.alpha_g;
    res.params.alpha_l = mix.alpha_l;
    res.params.alpha_n = mix.alpha_n;
    res.params.beta_g = beta.beta_g;
    res.params.beta_l = beta.beta_l;
    res.params.beta_n = beta.beta_n;
    res.params.gamma = sum_gamma / k;
    res.params.lambda = mix.lambda;
    return res;
}

/// Flat `key=value` file with alpha_g, alpha_l, alpha_n, beta_g, beta_l, beta_n, gamma, lambda, tau_minutes.
inline void write_inference(std::ostream& out, const InferenceResult& res) {
    const auto old_prec = out.precision(17);
    const auto& p = res.params;
    out << "alpha_g=" << p.alpha_g << '\n'
        << "alpha_l=" << p.alpha_l << '\n'
        << "alpha_n=" << p.alpha_n << '\n'
        << "beta_g=" << p.beta_g << '\n'
        << "beta_l=" << p.beta_l << '\n'
        << "beta_n=" << p.beta_n << '\n'
        << "gamma=" << p.gamma << '\n'
        << "lambda=" << p.lambda << '\n'
        << "tau_minutes=" << res.tau_minutes() << '\n';
    out.precision(old_prec);
}

inline void write_diagnostics(std::ostream& out, const InferenceResult& res) {
    const auto& d = res.diagnostics;
    out << "windows_in_range=" << d.windows_in_range << '\n'
        << "usable_windows=" << d.usable_windows << '\n';
    for (const auto& [reason, count] : d.unusable_by_reason) out << "unusable[" << reason << "]=" << count << '\n';
    out << "total_nodes=" << d.total_nodes << '\n'
        << "num_subnets=" << d.num_subnets << '\n'
        << "relevant_neighbours=" << d.relevant_neighbours << '\n'
        << "attributed_infections=" << d.attributed_infections << '\n'
        << "within_reach_fraction=" << d.within_reach_fraction << '\n'
        << "local_within_reach=" << d.local_within_reach << '\n';
}

} // namespace hybridepi
