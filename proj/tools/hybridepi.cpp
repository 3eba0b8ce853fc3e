// hybridepi: inference, prediction, simulation and sweeps for hybrid worm epidemics.
//
// Every value-bearing flag maps to a config key (`--beta-l` <-> `beta_l`).
// Precedence: flag, then --config file, then the --preset.
// Exit codes: 0 success, 1 usage error, 2 data error.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <random>
#include <sstream>

#include "hybridepi/config.hpp"
#include "hybridepi/experiments.hpp"
#include "hybridepi/stochastic.hpp"
#include "hybridepi/telescope.hpp"

using namespace hybridepi;

namespace {

constexpr int kUsageError = 1;
constexpr int kDataError = 2;

/// Thrown for unreadable or unwritable files.
struct io_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct KeyedFlag {
    std::string key;
    std::string value;
    CLI::Option* option = nullptr;
};

/// One subcommand with its keyed flags and run hook.
struct Command {
    CLI::App* app = nullptr;
    std::vector<std::unique_ptr<KeyedFlag>> flags;
    std::string config_path;
    std::string preset_name = "conficker-2008";
    std::function<void(Command&, const KeyValues&)> run;

    void flag(const std::string& key, const std::string& help) {
        auto f = std::make_unique<KeyedFlag>();
        f->key = key;
        std::string name = "--" + key;
        std::replace(name.begin(), name.end(), '_', '-');
        f->option = app->add_option(name, f->value, help);
        flags.push_back(std::move(f));
    }

    void params_flags() {
        app->add_option("--preset", preset_name, "Parameter preset")->capture_default_str();
        flag("alpha_g", "Probability of global probing");
        flag("alpha_l", "Probability of local probing");
        flag("alpha_n", "Probability of neighbourhood probing");
        flag("beta_g", "Global infection rate");
        flag("beta_l", "Local infection rate");
        flag("beta_n", "Neighbourhood infection rate");
        flag("gamma", "Recovery probability per window");
        flag("lambda", "Probes per window");
        flag("tau_minutes", "Recovery time in minutes; sets gamma when gamma is not given");
    }

    void sim_topology_flags() {
        flag("num_subnets", "Subnets in the ring (default 10000)");
        flag("nodes_per_subnet", "Nodes per subnet (default 5)");
        flag("relevant_adjacent", "Relevant subnets among the 10 predecessors (default 4)");
        flag("topology_seed", "Seed for the neighbour sets (default 1)");
    }

    void mf_topology_flags() {
        flag("num_subnets", "Relevant subnets N (default 92267)");
        flag("nodes_per_subnet", "Relevant nodes per subnet (default 430135/92267)");
        flag("relevant_neighbours", "Relevant neighbour subnets N+ (default 4.3)");
    }

    void seed_flags() {
        flag("seed", "Master seed; random and printed to stderr when absent");
        flag("jobs", "Worker threads (default: available cores)");
    }

    void config_flag() { app->add_option("--config", config_path, "key=value config file")->check(CLI::ExistingFile); }

    KeyValues resolve() const {
        KeyValues kv;
        std::set<std::string> allowed;
        for (const auto& f : flags) allowed.insert(f->key);
        if (!config_path.empty()) {
            kv = load_key_values(config_path);
            reject_unknown(kv, allowed, config_path);
        }
        for (const auto& f : flags)
            if (f->option->count() > 0) kv[f->key] = f->value;
        return kv;
    }
};

double get_double(const KeyValues& kv, const std::string& key, double fallback) {
    const auto it = kv.find(key);
    return it == kv.end() ? fallback : to_double(key, it->second);
}

long get_long(const KeyValues& kv, const std::string& key, long fallback) {
    const auto it = kv.find(key);
    return it == kv.end() ? fallback : to_long(key, it->second);
}

std::uint64_t get_seed(const KeyValues& kv) {
    if (const auto it = kv.find("seed"); it != kv.end()) {
        std::uint64_t v = 0;
        const auto& s = it->second;
        auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (s.empty() || ec != std::errc{} || ptr != s.data() + s.size())
            throw config_error("key 'seed': not an unsigned integer: " + s);
        return v;
    }
    std::random_device rd;
    const std::uint64_t v = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
    std::cerr << "seed=" << v << '\n';
    return v;
}

unsigned get_jobs(const KeyValues& kv) {
    const long j = get_long(kv, "jobs", 0);
    if (j < 0) throw config_error("jobs must be non-negative");
    return static_cast<unsigned>(j);
}

ModelParams get_params(const Command& cmd, const KeyValues& kv) {
    ModelParams p = preset(cmd.preset_name);
    apply_params(kv, p);
    p.validate();
    return p;
}

int to_int(const std::string& key, long v) {
    if (v < 0 || v > std::numeric_limits<int>::max()) throw config_error("key '" + key + "' out of range");
    return static_cast<int>(v);
}

TopologySpec get_sim_topology(const KeyValues& kv) {
    TopologySpec spec = TopologySpec::desk();
    spec.num_subnets = to_int("num_subnets", get_long(kv, "num_subnets", spec.num_subnets));
    spec.nodes_per_subnet = to_int("nodes_per_subnet", get_long(kv, "nodes_per_subnet", spec.nodes_per_subnet));
    spec.relevant_adjacent = to_int("relevant_adjacent", get_long(kv, "relevant_adjacent", spec.relevant_adjacent));
    spec.seed = static_cast<std::uint64_t>(get_long(kv, "topology_seed", 1));
    return spec;
}

Topology get_mf_topology(const KeyValues& kv) {
    const Topology d = conficker_2008_topology();
    Topology t{get_double(kv, "num_subnets", d.num_subnets), get_double(kv, "nodes_per_subnet", d.nodes_per_subnet),
               get_double(kv, "relevant_neighbours", d.relevant_neighbours)};
    t.validate();
    return t;
}

MacroState get_initial(const KeyValues& kv) {
    const MacroState d = conficker_2008_initial();
    MacroState s{0, get_double(kv, "S0", d.S), get_double(kv, "I0", d.I), get_double(kv, "R0", d.R)};
    s.validate();
    return s;
}

/// Writes through `fn` to a file, or to stdout for "" or "-".
void with_output(const std::string& path, const std::function<void(std::ostream&)>& fn) {
    if (path.empty() || path == "-") {
        fn(std::cout);
        std::cout.flush();
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot write " + path);
    fn(out);
    if (!out) throw io_error("error writing " + path);
}

ParseReport read_events(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open " + path);
    ParseReport r = parse_events(in);
    if (r.malformed > 0) std::cerr << path << ": skipped " << r.malformed << " malformed rows\n";
    return r;
}

/// "HH:MM" (time of day on the origin's UTC day) or a window index.
long parse_window_point(const std::string& text, std::int64_t origin, std::int64_t window_seconds) {
    if (const auto colon = text.find(':'); colon != std::string::npos) {
        const long hh = to_long("time", text.substr(0, colon));
        const long mm = to_long("time", text.substr(colon + 1));
        if (hh < 0 || hh > 24 || mm < 0 || mm > 59) throw config_error("bad time of day: " + text);
        const std::int64_t day = detail::floor_div(origin, 86400) * 86400;
        const std::int64_t at = day + hh * 3600 + mm * 60;
        return static_cast<long>(detail::floor_div(at - origin, window_seconds));
    }
    const long w = to_long("window", text);
    if (w < 0) throw config_error("window index must be non-negative");
    return w;
}

std::vector<double> parse_list(const std::string& key, const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(to_double(key, item));
    if (out.empty()) throw config_error("key '" + key + "': empty list");
    return out;
}

MechanismPair parse_pair(const std::string& text) {
    for (auto p : {MechanismPair::global_local, MechanismPair::global_neighbourhood, MechanismPair::local_neighbourhood})
        if (text == to_string(p)) return p;
    throw config_error("unknown pair '" + text + "'");
}

SweepConfig get_sweep(const Command& cmd, const KeyValues& kv) {
    SweepConfig c;
    c.base = get_params(cmd, kv);
    c.topology = get_sim_topology(kv);
    c.resolution = get_double(kv, "resolution", c.resolution);
    c.runs = to_int("runs", get_long(kv, "runs", c.runs));
    c.max_steps = get_long(kv, "max_steps", c.max_steps);
    c.initial_infected = get_long(kv, "initial_infected", c.initial_infected);
    c.jobs = get_jobs(kv);
    c.seed = get_seed(kv);
    return c;
}

// ---------------------------------------------------------------------------

void setup_infer(Command& cmd, std::string& log, std::vector<std::string>& baselines, std::string& out,
                 std::string& diag) {
    cmd.app->add_option("--log", log, "Outbreak event log (timestamp,source_addr)")->required();
    cmd.app->add_option("--baseline", baselines, "Baseline log whose sources are background (repeatable)");
    cmd.app->add_option("--out", out, "Parameter file (default stdout)");
    cmd.app->add_option("--diagnostics", diag, "Diagnostics report (default stderr)");
    cmd.flag("window", "Window length in seconds (default 600)");
    cmd.flag("origin", "Unix time of window 0 (default: UTC midnight of the first event)");
    cmd.flag("begin", "First averaged window, HH:MM or index (default 04:00)");
    cmd.flag("end", "End of the averaging range, exclusive, HH:MM or index (default 16:00)");
    cmd.flag("num_subnets", "Override N, the relevant subnet count");
    cmd.flag("relevant_neighbours", "Override N+, the relevant neighbour count");
}

void run_infer(const KeyValues& kv, const std::string& log, const std::vector<std::string>& baseline_paths,
               const std::string& out, const std::string& diag) {
    std::vector<ProbeEvent> events = read_events(log).events;
    std::vector<std::vector<ProbeEvent>> baselines;
    for (const auto& p : baseline_paths) baselines.push_back(read_events(p).events);
    events = filter_background(events, baselines);

    WindowOptions opt;
    opt.window_seconds = get_long(kv, "window", 600);
    if (opt.window_seconds <= 0) throw config_error("window must be positive");
    if (kv.contains("origin")) opt.origin = get_long(kv, "origin", 0);
    else opt.origin = events.empty() ? 0 : detail::floor_div(events.front().timestamp, 86400) * 86400;
    if (kv.contains("num_subnets")) opt.num_subnets = get_double(kv, "num_subnets", 0);
    if (kv.contains("relevant_neighbours")) opt.relevant_neighbours = get_double(kv, "relevant_neighbours", 0);

    const auto at = [&](const char* key, const char* fallback) {
        const auto it = kv.find(key);
        return parse_window_point(it == kv.end() ? fallback : it->second, *opt.origin, opt.window_seconds);
    };
    const long begin = at("begin", "04:00");
    const long end = at("end", "16:00");
    if (end <= begin) throw config_error("averaging range is empty");

    const WindowSeries series = build_series(build_timelines(events), opt);
    const InferenceResult res = infer_params(series, begin, end);
    with_output(out, [&](std::ostream& o) { write_inference(o, res); });
    if (diag.empty()) write_diagnostics(std::cerr, res);
    else with_output(diag, [&](std::ostream& o) { write_diagnostics(o, res); });
}

void run_predict(const Command& cmd, const KeyValues& kv, const std::string& out) {
    const ModelParams p = get_params(cmd, kv);
    const long steps = get_long(kv, "steps", kDaytimeHorizon);
    const Trajectory traj = predict_outbreak(p, get_mf_topology(kv), get_initial(kv), steps);
    with_output(out, [&](std::ostream& o) { write_trajectory_csv(o, traj); });
}

void run_simulate(const Command& cmd, const KeyValues& kv, const std::string& out, const std::string& traj_path) {
    const ModelParams p = get_params(cmd, kv);
    const SimTopology topo = get_sim_topology(kv).build();
    const long runs = get_long(kv, "runs", 1);
    if (runs < 1) throw config_error("runs must be at least 1");
    const long init = get_long(kv, "initial_infected", 2);
    const long max_steps = get_long(kv, "max_steps", 100000);
    const unsigned jobs = get_jobs(kv);
    const std::uint64_t seed = get_seed(kv);

    std::vector<std::uint64_t> seeds(static_cast<std::size_t>(runs));
    for (std::size_t k = 0; k < seeds.size(); ++k) seeds[k] = derive_seed(seed, 0, k);
    std::vector<SimResult> results(seeds.size());
    detail::parallel_for(seeds.size(), jobs, [&](std::size_t k) {
        results[k] = run_sim(p, topo, RunConfig{init, max_steps, seeds[k]});
        if (k > 0 || traj_path.empty()) results[k].trajectory.clear();
        results[k].final_state = MicroState{};
    });
    with_output(out, [&](std::ostream& o) {
        write_metrics_header(o);
        for (std::size_t k = 0; k < results.size(); ++k) write_metrics_row(o, p, results[k].metrics, seeds[k]);
    });
    if (!traj_path.empty())
        with_output(traj_path, [&](std::ostream& o) { write_trajectory_csv(o, results.front().trajectory); });
}

void run_sweep2(const Command& cmd, const KeyValues& kv, const std::string& out) {
    const auto it = kv.find("pair");
    const MechanismPair pair = parse_pair(it == kv.end() ? "global-local" : it->second);
    const SweepResult res = sweep_two(pair, get_sweep(cmd, kv));
    with_output(out, [&](std::ostream& o) { write_sweep_csv(o, res); });
}

void run_sweep3(const Command& cmd, const KeyValues& kv, const std::string& out) {
    const SweepResult res = sweep_three(get_sweep(cmd, kv));
    with_output(out, [&](std::ostream& o) { write_sweep_csv(o, res); });
}

void run_whatif(const Command& cmd, const KeyValues& kv, const std::string& out) {
    const ModelParams p = get_params(cmd, kv);
    const auto it = kv.find("taus");
    const std::vector<double> taus = parse_list("taus", it == kv.end() ? "156.25,140,120,100,80,60" : it->second);
    const long horizon = get_long(kv, "steps", kDaytimeHorizon);
    const auto rows = whatif_recovery(p, get_mf_topology(kv), get_initial(kv), taus, horizon);
    with_output(out, [&](std::ostream& o) { write_whatif_csv(o, rows); });
}

void run_genlog(const Command& cmd, const KeyValues& kv, const std::string& out, const std::string& truth) {
    const ModelParams p = get_params(cmd, kv);
    const SimTopology topo = get_sim_topology(kv).build();
    RunConfig rc;
    rc.initial_infected = get_long(kv, "initial_infected", 2);
    rc.max_steps = get_long(kv, "steps", 288);
    TelescopeConfig tel;
    tel.monitor_fraction = get_double(kv, "monitor_fraction", tel.monitor_fraction);
    tel.epoch_start = get_long(kv, "epoch", tel.epoch_start);
    const std::uint64_t seed = get_seed(kv);
    rc.seed = derive_seed(seed, 0, 0);
    tel.seed = derive_seed(seed, 1, 0);
    const SyntheticLog log = generate_telescope_log(p, topo, rc, tel);
    with_output(out, [&](std::ostream& o) { write_events(o, log.events); });
    if (!truth.empty()) with_output(truth, [&](std::ostream& o) { write_trajectory_csv(o, log.truth.trajectory); });
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Hybrid worm epidemic model: inference, prediction and simulation"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Help for every subcommand");

    std::vector<std::unique_ptr<Command>> commands;
    const auto add = [&](const char* name, const char* help) -> Command& {
        commands.push_back(std::make_unique<Command>());
        Command& c = *commands.back();
        c.app = app.add_subcommand(name, help);
        c.config_flag();
        return c;
    };

    std::string out, diag, log, traj, truth;
    std::vector<std::string> baselines;

    Command& infer = add("infer", "Estimate model parameters from a telescope log");
    setup_infer(infer, log, baselines, out, diag);
    infer.run = [&](Command&, const KeyValues& kv) { run_infer(kv, log, baselines, out, diag); };

    Command& predict = add("predict", "Mean-field trajectory as t,S,I,R CSV");
    predict.params_flags();
    predict.mf_topology_flags();
    predict.flag("S0", "Initial susceptible count (default 423899)");
    predict.flag("I0", "Initial infected count (default 3945)");
    predict.flag("R0", "Initial recovered count (default 2291)");
    predict.flag("steps", "Windows to run (default 72)");
    predict.app->add_option("--out", out, "Output CSV (default stdout)");
    predict.run = [&](Command& c, const KeyValues& kv) { run_predict(c, kv, out); };

    Command& simulate = add("simulate", "Stochastic runs, one metrics row per run");
    simulate.params_flags();
    simulate.sim_topology_flags();
    simulate.seed_flags();
    simulate.flag("runs", "Number of runs (default 1)");
    simulate.flag("initial_infected", "Initially infected nodes (default 2)");
    simulate.flag("max_steps", "Step limit per run (default 100000)");
    simulate.app->add_option("--out", out, "Metrics CSV (default stdout)");
    simulate.app->add_option("--trajectory", traj, "t,S,I,R CSV of the first run");
    simulate.run = [&](Command& c, const KeyValues& kv) { run_simulate(c, kv, out, traj); };

    const auto sweep_flags = [&](Command& c) {
        c.params_flags();
        c.sim_topology_flags();
        c.seed_flags();
        c.flag("resolution", "Grid step (default 0.05)");
        c.flag("runs", "Runs per grid point (default 20)");
        c.flag("initial_infected", "Initially infected nodes (default 2)");
        c.flag("max_steps", "Step limit per run (default 100000)");
        c.app->add_option("--out", out, "Sweep CSV (default stdout)");
    };
    Command& sweep2 = add("sweep2", "Sweep one edge of the mixing simplex");
    sweep_flags(sweep2);
    sweep2.flag("pair", "global-local, global-neighbourhood or local-neighbourhood (default global-local)");
    sweep2.run = [&](Command& c, const KeyValues& kv) { run_sweep2(c, kv, out); };

    Command& sweep3 = add("sweep3", "Sweep the whole mixing simplex");
    sweep_flags(sweep3);
    sweep3.run = [&](Command& c, const KeyValues& kv) { run_sweep3(c, kv, out); };

    Command& whatif = add("whatif-tau", "Mean-field state at the horizon for several recovery times");
    whatif.params_flags();
    whatif.mf_topology_flags();
    whatif.flag("S0", "Initial susceptible count (default 423899)");
    whatif.flag("I0", "Initial infected count (default 3945)");
    whatif.flag("R0", "Initial recovered count (default 2291)");
    whatif.flag("steps", "Horizon in windows (default 72)");
    whatif.flag("taus", "Comma-separated recovery times in minutes (default 156.25,140,120,100,80,60)");
    whatif.app->add_option("--out", out, "Output CSV (default stdout)");
    whatif.run = [&](Command& c, const KeyValues& kv) { run_whatif(c, kv, out); };

    Command& genlog = add("gen-log", "Simulate an outbreak and write the telescope's view of it");
    genlog.params_flags();
    genlog.sim_topology_flags();
    genlog.flag("seed", "Master seed; random and printed to stderr when absent");
    genlog.flag("initial_infected", "Initially infected nodes (default 2)");
    genlog.flag("steps", "Step limit (default 288)");
    genlog.flag("monitor_fraction", "Share of global probes that hit the telescope (default 1/256)");
    genlog.flag("epoch", "Unix time of step 0 (default 1227225600)");
    genlog.app->add_option("--out", out, "Event CSV (default stdout)");
    genlog.app->add_option("--truth", truth, "Ground-truth t,S,I,R CSV");
    genlog.run = [&](Command& c, const KeyValues& kv) { run_genlog(c, kv, out, truth); };

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kUsageError;
    }

    for (auto& c : commands) {
        if (!c->app->parsed()) continue;
        try {
            c->run(*c, c->resolve());
            return 0;
        } catch (const config_error& e) {
            std::cerr << "error: " << e.what() << '\n';
            return kUsageError;
        } catch (const invalid_parameters& e) {
            std::cerr << "error: " << e.what() << '\n';
            return kUsageError;
        } catch (const std::exception& e) {
            std::cerr << "error: " << e.what() << '\n';
            return kDataError;
        }
    }
    return kUsageError;
}
