// rank-bbm: command-line front end for simulations, PDE solves and experiments.
//
// Exit status: 0 success, 1 usage or validation error, 2 runtime failure.

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "rank_bbm/rank_bbm.hpp"

namespace {

using namespace rank_bbm;
namespace fs = std::filesystem;

struct Overrides {
    std::string config;
    std::string preset;
    std::optional<double> horizon;
    std::optional<std::size_t> n;
    std::optional<std::size_t> replicas;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::vector<std::string> set;
};

ConfigLayer override_layer(Command cmd, const Overrides& o) {
    ConfigLayer layer{{}, "command line"};
    auto& m = layer.values;
    for (const auto& kv : o.set) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ParseError("--set expects key=value, got '" + kv + "'");
        std::string key = kv.substr(0, eq);
        while (!key.empty() && key.back() == ' ') key.pop_back();
        const std::string value = kv.substr(eq + 1);
        try {
            m[key] = parse_config_value(value);
        } catch (const ParseError&) {
            // Bare words are accepted as strings on the command line.
            if (value.find_first_of("[]\"") != std::string::npos) throw;
            m[key] = ConfigValue::of(value);
        }
    }
    if (!o.preset.empty()) m["psi"] = ConfigValue::of(o.preset);
    if (o.horizon) {
        if (cmd == Command::hydro) m["t_list"] = ConfigValue::numbers({*o.horizon});
        else m["horizon"] = ConfigValue::of(*o.horizon);
    }
    if (o.n) {
        if (cmd == Command::hydro || cmd == Command::velocity)
            m["n_list"] = ConfigValue::numbers({static_cast<double>(*o.n)});
        else m["n"] = ConfigValue::of(static_cast<double>(*o.n));
    }
    if (o.replicas) m["replicas"] = ConfigValue::of(static_cast<double>(*o.replicas));
    if (o.seed) m["seed"] = ConfigValue::of(static_cast<double>(*o.seed));
    if (!o.out.empty()) m["out"] = ConfigValue::of(o.out);
    return layer;
}

RunConfig load(Command cmd, const Overrides& o) {
    std::vector<ConfigLayer> layers;
    if (!o.config.empty()) layers.push_back({parse_config_file(o.config), o.config});
    layers.push_back(override_layer(cmd, o));
    return resolve_config(cmd, layers);
}

void run_simulate(const RunConfig& rc) {
    const std::size_t replicas = rc.integer("replicas");
    std::vector<SimulationResult> results(replicas);
    parallel_for(replicas, [&](std::size_t r) {
        results[r] = simulate(config_engine(rc, r));
        const fs::path dir = rc.out_dir() / ("replica-" + std::to_string(r));
        write_snapshots_csv(dir / "snapshots.csv", results[r].snapshots);
        if (rc.flag("record_events")) write_events_csv(dir / "events.csv", results[r].events);
        // Only the final snapshot is summarised.
        if (results[r].snapshots.size() > 1)
            results[r].snapshots.erase(results[r].snapshots.begin(), results[r].snapshots.end() - 1);
        results[r].events.clear();
    });
    std::printf("%8s %10s %12s %12s %12s\n", "replica", "t", "events", "min x", "max x");
    for (std::size_t r = 0; r < replicas; ++r) {
        const auto& s = results[r].snapshots;
        double t = std::numeric_limits<double>::quiet_NaN(), lo = t, hi = t;
        if (!s.empty() && !s.back().positions.empty()) {
            const auto [mn, mx] = std::minmax_element(s.back().positions.begin(), s.back().positions.end());
            t = s.back().t;
            lo = *mn;
            hi = *mx;
        }
        std::printf("%8zu %10g %12llu %12.6f %12.6f\n", r, t, static_cast<unsigned long long>(results[r].event_count), lo,
                    hi);
    }
}

void run_pde(const RunConfig& rc) {
    const PdeSolution sol = solve(config_pde(rc));
    const double every = rc.number("csv_dt");
    std::vector<std::size_t> rows;
    for (std::size_t k = 0; k < sol.times.size(); ++k) {
        const double q = sol.times[k] / every;
        if (std::abs(q - std::round(q)) < 1e-9 || k + 1 == sol.times.size()) rows.push_back(k);
    }
    write_pde_csv(rc.out_dir() / "pde.csv", sol, rows);
    const auto w = rc.numbers("window");
    const double level = rc.number("level");
    try {
        const SpeedFit fit = estimate_spreading_speed(sol, level, w[0], w[1]);
        std::printf("front speed (level %g, t in [%g, %g]): %.6f  (samples %zu, max residual %.3g)\n", level, w[0], w[1],
                    fit.speed, fit.samples, fit.max_residual);
    } catch (const LevelNotAttained& e) {
        std::printf("front speed: not available (%s)\n", e.what());
    }
    std::printf("grid %zu nodes, dx %g, dt %g, rows written %zu\n", sol.grid.size(), sol.dx, sol.dt, rows.size());
}

void run_wave(const RunConfig& rc) {
    const ReactionG g = g_from_psi(config_psi(rc));
    const WaveClassification cls = classify(g);
    std::printf("classification: %s  G'(0) = %.6g  G'(1) = %.6g", to_string(cls.kind), cls.g_prime_0, cls.g_prime_1);
    if (cls.minimal_speed) std::printf("  minimal speed = %.6f", *cls.minimal_speed);
    if (cls.u_star) std::printf("  u* = %.10f", *cls.u_star);
    std::printf("\n");
    ShootOptions opt;
    opt.dz = rc.number("dz");
    const WaveProfile p = shoot_profile(g, rc.number("c"), rc.number("z_span"), opt);
    write_wave_csv(rc.out_dir() / "wave.csv", p);
    std::printf("profile: c = %g, %zu points on [%.3f, %.3f], residual %.3g\n", p.c, p.z.size(), p.z.front(), p.z.back(),
                p.residual);
}

void run_hydro(const RunConfig& rc) {
    const auto rows = run_hydro_convergence(config_hydro(rc));
    write_hydro_csv(rc.out_dir() / "hydro.csv", rows);
    std::printf("estimator: sup_x |F_N(x) - U(x,t)| (exact), mean over replicas, seed %llu\n",
                static_cast<unsigned long long>(rc.integer("seed")));
    std::printf("%8s %8s %12s %12s %9s\n", "n", "t", "ks_mean", "ks_stderr", "replicas");
    for (const auto& r : rows) std::printf("%8zu %8g %12.6f %12.6f %9zu\n", r.n, r.t, r.ks_mean, r.ks_stderr, r.replicas);
}

void run_velocity(const RunConfig& rc) {
    const VelocitySweep s = run_velocity_sweep(config_velocity(rc));
    write_velocity_csv(rc.out_dir() / "velocity.csv", s);
    std::printf("estimator: least-squares slopes of min/max position, seed %llu\n",
                static_cast<unsigned long long>(rc.integer("seed")));
    std::printf("%8s %10s %10s %10s %10s %10s\n", "n", "v_hat", "3se", "v_min", "v_max", "window");
    for (const auto& r : s.rows)
        std::printf("%8zu %10.5f %10.5f %10.5f %10.5f %5g:%g\n", r.n, r.v_hat, r.ci_half_width, r.v_min, r.v_max, r.t0,
                    r.t1);
    if (s.rows.size() >= 2) std::printf("slope of v_hat against 1/(ln N)^2: %.4f\n", s.regression.speed);
}

void run_split(const RunConfig& rc) {
    const SplitResult res = run_split_cloud(config_split(rc));
    write_split_csv(rc.out_dir() / "split.csv", res);
    std::printf("right fraction: %.4f +- %.4f (stderr, %zu replicas, seed %llu)\n", res.mean, res.stderr_,
                res.replicas.size(), static_cast<unsigned long long>(rc.integer("seed")));
}

void run_dominate(const RunConfig& rc) {
    const DominationReport rep = run_domination_check(config_domination(rc));
    write_domination_csv(rc.out_dir() / "domination.csv", rep);
    std::printf("%8s %12s %12s %12s %8s\n", "t", "pop_mean", "pop_stderr", "expected", "z");
    for (const auto& r : rep.rows)
        std::printf("%8g %12.3f %12.3f %12.3f %8.3f\n", r.t, r.pop_mean, r.pop_stderr, r.pop_expected,
                    r.pop_stderr > 0.0 ? (r.pop_mean - r.pop_expected) / r.pop_stderr : 0.0);
    std::printf("tail-count violations: %llu, blue-count errors: %llu\n",
                static_cast<unsigned long long>(rep.subset_violations),
                static_cast<unsigned long long>(rep.blue_count_errors));
}

void dispatch(const RunConfig& rc) {
    switch (rc.command) {
    case Command::simulate: run_simulate(rc); break;
    case Command::pde: run_pde(rc); break;
    case Command::wave: run_wave(rc); break;
    case Command::hydro: run_hydro(rc); break;
    case Command::velocity: run_velocity(rc); break;
    case Command::split: run_split(rc); break;
    case Command::dominate: run_dominate(rc); break;
    }
}

const char* describe(Command c) {
    switch (c) {
    case Command::simulate: return "Simulate the particle system and write snapshots and event logs";
    case Command::pde: return "Solve the limiting reaction-diffusion equation and report the front speed";
    case Command::wave: return "Classify the reaction term and compute a travelling-wave profile";
    case Command::hydro: return "Particle-vs-PDE Kolmogorov-Smirnov distances across N";
    case Command::velocity: return "Front velocity sweep across N";
    case Command::split: return "Fraction of particles in the right cloud for split selection";
    case Command::dominate: return "Coloured-BBM domination and population growth check";
    }
    return "";
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Rank-based branching-selection particle systems and their hydrodynamic limits", "rank-bbm"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "rank-bbm 1.0");

    Overrides o;
    std::optional<Command> chosen;
    for (const auto& [cmd, name] : command_names()) {
        CLI::App* sub = app.add_subcommand(name, describe(cmd));
        sub->add_option("-c,--config", o.config, "Configuration file")->check(CLI::ExistingFile);
        sub->add_option("--preset", o.preset, "Selection preset (fisher, uniform, allen-cahn(t), cubic(a), split-cloud)");
        sub->add_option("--T", o.horizon, "Horizon (comparison time for hydro)");
        sub->add_option("--n", o.n, "Particle count (a single-entry n_list for hydro/velocity)");
        sub->add_option("--replicas", o.replicas, "Replica count");
        sub->add_option("--seed", o.seed, "Master seed");
        sub->add_option("--out", o.out, "Output directory");
        sub->add_option("--set", o.set, "Override any config field: key=value");
        sub->callback([&chosen, c = cmd] { chosen = c; });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        const RunConfig rc = load(*chosen, o);
        write_manifest(rc, rc.out_dir());
        dispatch(rc);
        std::printf("outputs in %s\n", rc.out_dir().string().c_str());
    } catch (const ParseError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const InvalidConfig& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "runtime error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
