#pragma once

/// @file experiments.hpp
/// @brief Replica-parallel experiments: hydrodynamic convergence, velocity sweep, split cloud and
/// BBM domination, plus their aggregate tables.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "rank_bbm/errors.hpp"
#include "rank_bbm/particle_engine.hpp"
#include "rank_bbm/pde_solver.hpp"
#include "rank_bbm/rng.hpp"
#include "rank_bbm/selection.hpp"

namespace rank_bbm {

// ---------------------------------------------------------------------------------------------
// Replica scheduling

/// Worker cap: RANK_BBM_THREADS if set and positive, else the hardware concurrency.
inline std::size_t thread_cap() {
    if (const char* env = std::getenv("RANK_BBM_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && v > 0) return static_cast<std::size_t>(v);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs body(k) for k in [0, count) on up to thread_cap() threads. Results must be written to
/// per-k slots; the first exception (by index) is rethrown after all workers finish.
template <typename Body>
void parallel_for(std::size_t count, Body&& body) {
    const std::size_t workers = std::min(thread_cap(), count);
    if (workers <= 1) {
        for (std::size_t k = 0; k < count; ++k) body(k);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(count);
    {
        std::vector<std::jthread> pool;
        pool.reserve(workers);
        for (std::size_t w = 0; w < workers; ++w)
            pool.emplace_back([&] {
                for (std::size_t k = next++; k < count; k = next++) {
                    try {
                        body(k);
                    } catch (...) {
                        errors[k] = std::current_exception();
                    }
                }
            });
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

/// Seed of replica `replica` of the group `group` (e.g. a particle count) under `master`.
inline std::uint64_t replica_seed(std::uint64_t master, std::uint64_t group, std::uint64_t replica) {
    return derive_seed(derive_seed(master, group), replica);
}

struct MeanStderr {
    double mean = 0.0;
    double stderr_ = 0.0;
};

inline MeanStderr mean_stderr(std::span<const double> xs) {
    MeanStderr out;
    if (xs.empty()) return out;
    const auto n = static_cast<double>(xs.size());
    out.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
    if (xs.size() < 2) return out;
    double ss = 0.0;
    for (double x : xs) ss += (x - out.mean) * (x - out.mean);
    out.stderr_ = std::sqrt(ss / (n - 1.0) / n);
    return out;
}

// ---------------------------------------------------------------------------------------------
// Empirical tail CDF and KS distance

/// F_N(x) = #{i : X_i >= x} / N, stored at the sorted sample points.
struct EcdfSnapshot {
    double t = 0.0;
    std::vector<double> xs; ///< sorted positions
    std::vector<double> f;  ///< F_N(xs[k])

    static EcdfSnapshot from_positions(double t, std::vector<double> positions) {
        EcdfSnapshot s;
        s.t = t;
        std::sort(positions.begin(), positions.end());
        s.xs = std::move(positions);
        const auto n = static_cast<double>(s.xs.size());
        s.f.resize(s.xs.size());
        for (std::size_t k = 0; k < s.xs.size(); ++k) {
            const auto first = std::lower_bound(s.xs.begin(), s.xs.end(), s.xs[k]);
            s.f[k] = static_cast<double>(s.xs.end() - first) / n;
        }
        return s;
    }

    /// F_N(x) for any x.
    [[nodiscard]] double tail(double x) const {
        const auto first = std::lower_bound(xs.begin(), xs.end(), x);
        return static_cast<double>(xs.end() - first) / static_cast<double>(xs.size());
    }

    /// lim_{y -> x+} F_N(y) = #{X_i > x} / N.
    [[nodiscard]] double tail_after(double x) const {
        const auto first = std::upper_bound(xs.begin(), xs.end(), x);
        return static_cast<double>(xs.end() - first) / static_cast<double>(xs.size());
    }
};

/// sup_x |F_N(x) - U(x)| for the piecewise-linear PDE row U (constant outside the grid).
///
/// F_N is a left-continuous step function and U is linear between grid nodes, so the supremum is
/// attained at a particle position or a grid node, from one side or the other.
inline double ks_distance(const EcdfSnapshot& ecdf, const PdeSolution& sol, std::size_t row) {
    const auto& u = sol.u[row];
    double worst = 0.0;
    const auto visit = [&](double x) {
        const double ux = sol.interpolate(u, x);
        worst = std::max({worst, std::abs(ecdf.tail(x) - ux), std::abs(ecdf.tail_after(x) - ux)});
    };
    for (double x : ecdf.xs) visit(x);
    for (double x : sol.grid) visit(x);
    // Beyond the grid U is constant: compare with F_N's limits at +-infinity.
    worst = std::max({worst, std::abs(1.0 - u.front()), std::abs(u.back())});
    return worst;
}

// ---------------------------------------------------------------------------------------------
// Hydrodynamic convergence

struct HydroConfig {
    SelectionPsi psi = presets::fisher();
    BranchingRate rate = BranchingRate::constant(1.0);
    InitialCondition init = InitialCondition::quantiles(Density::uniform(-1.0, 0.0));
    std::vector<std::size_t> n_list{250, 1000, 4000};
    std::vector<double> t_list{1.0};
    std::size_t replicas = 20;
    std::uint64_t seed = 1;
    double dx = 0.01;
};

struct ConvergenceRow {
    std::size_t n = 0;
    double t = 0.0;
    double ks_mean = 0.0;
    double ks_stderr = 0.0;
    std::size_t replicas = 0;
    std::vector<double> ks; ///< per replica
};

/// The PDE oracle shared by all replicas: U_0 = tail of the initial condition.
inline PdeSolution hydro_oracle(const HydroConfig& c) {
    if (c.t_list.empty()) throw InvalidConfig("hydro needs at least one comparison time");
    std::vector<double> times = c.t_list;
    std::sort(times.begin(), times.end());
    const double t_max = times.back();
    double lo = 0.0;
    double hi = 0.0;
    switch (c.init.kind) {
    case InitialCondition::Kind::quantile_of: std::tie(lo, hi) = c.init.rho.support(); break;
    case InitialCondition::Kind::point_mass: lo = hi = c.init.x0; break;
    case InitialCondition::Kind::explicit_positions: {
        const auto [mn, mx] = std::minmax_element(c.init.positions.begin(), c.init.positions.end());
        lo = *mn;
        hi = *mx;
        break;
    }
    }
    const double spread = 12.0 + 2.0 * c.rate.r_max() * t_max + 6.0 * std::sqrt(t_max);
    PdeConfig p;
    p.reaction = g_from_psi(c.psi);
    p.rate = c.rate;
    p.x_lo = lo - spread;
    p.x_hi = hi + spread;
    p.dx = c.dx;
    p.horizon = t_max;
    p.output_times = times;
    const InitialCondition init = c.init;
    p.init = [init](double x) { return init.tail(x); };
    return solve(p);
}

inline std::vector<ConvergenceRow> run_hydro_convergence(const HydroConfig& c) {
    if (c.n_list.empty() || c.replicas == 0) throw InvalidConfig("hydro needs n_list and replicas >= 1");
    std::vector<double> times = c.t_list;
    std::sort(times.begin(), times.end());
    const PdeSolution oracle = hydro_oracle(c);

    std::vector<ConvergenceRow> rows;
    for (std::size_t n : c.n_list) {
        std::vector<std::vector<double>> ks(c.replicas, std::vector<double>(times.size()));
        parallel_for(c.replicas, [&](std::size_t r) {
            EngineConfig e;
            e.n = n;
            e.selection = c.psi;
            e.rate = c.rate;
            e.horizon = times.back();
            e.init = c.init;
            e.seed = replica_seed(c.seed, n, r);
            e.snapshot_times = times;
            const SimulationResult res = simulate(e);
            for (std::size_t k = 0; k < times.size(); ++k)
                ks[r][k] = ks_distance(EcdfSnapshot::from_positions(times[k], res.snapshots[k].positions), oracle,
                                       oracle.time_index(times[k]));
        });
        for (std::size_t k = 0; k < times.size(); ++k) {
            ConvergenceRow row;
            row.n = n;
            row.t = times[k];
            row.replicas = c.replicas;
            for (std::size_t r = 0; r < c.replicas; ++r) row.ks.push_back(ks[r][k]);
            const auto ms = mean_stderr(row.ks);
            row.ks_mean = ms.mean;
            row.ks_stderr = ms.stderr_;
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

// ---------------------------------------------------------------------------------------------
// Velocity sweep

/// 2.5 on [0, 0.4], zero elsewhere.
inline SelectionPsi velocity_default_psi() {
    return SelectionPsi({{0.0, 0.4, Polynomial{2.5}}, {0.4, 1.0, Polynomial{0.0}}}, "2.5*1[0,0.4]");
}

struct VelocityConfig {
    SelectionPsi psi = velocity_default_psi();
    BranchingRate rate = BranchingRate::constant(1.0);
    InitialCondition init = InitialCondition::point_mass(0.0);
    std::vector<std::size_t> n_list{64, 256, 1024, 4096};
    double horizon = 40.0;
    std::optional<double> window_start; ///< defaults to horizon * 3/8
    std::optional<double> window_end;   ///< defaults to horizon
    double snapshot_dt = 0.25;
    std::size_t replicas = 8;
    std::uint64_t seed = 1;

    [[nodiscard]] double t0() const { return window_start.value_or(horizon * 3.0 / 8.0); }
    [[nodiscard]] double t1() const { return window_end.value_or(horizon); }
};

struct SpeedEstimate {
    std::size_t n = 0;
    double v_hat = 0.0;     ///< mean of (v_min + v_max) / 2 over replicas
    double v_hat_se = 0.0;
    double v_min = 0.0;     ///< mean slope of the leftmost particle
    double v_min_se = 0.0;
    double v_max = 0.0;     ///< mean slope of the rightmost particle
    double v_max_se = 0.0;
    double diff_mean = 0.0; ///< mean of v_max - v_min (paired)
    double diff_se = 0.0;
    double ci_half_width = 0.0; ///< 3 * v_hat_se
    double t0 = 0.0;
    double t1 = 0.0;
    std::size_t replicas = 0;
};

struct VelocitySweep {
    std::vector<SpeedEstimate> rows;
    SpeedFit regression; ///< v_hat against 1 / (ln N)^2
};

/// psi vanishes on [1-p, 1] for some p > 0, psi(0) > 0, and r == 1.
inline void check_velocity_assumptions(const SelectionPsi& psi, const BranchingRate& rate) {
    if (!(psi.zero_tail_fraction() > 0.0)) throw AssumptionViolation("psi must vanish on [1-p, 1] for some p > 0");
    if (!(psi.at_zero() > 0.0)) throw AssumptionViolation("psi must be positive near 0");
    if (!rate.is_constant(1.0)) throw AssumptionViolation("velocity sweep needs r == 1");
}

inline VelocitySweep run_velocity_sweep(const VelocityConfig& c) {
    check_velocity_assumptions(c.psi, c.rate);
    const double t0 = c.t0();
    const double t1 = c.t1();
    if (!(t0 >= 0.0 && t1 > t0 && t1 <= c.horizon)) throw InvalidConfig("fit window must satisfy 0 <= t0 < t1 <= horizon");
    if (!(c.snapshot_dt > 0.0)) throw InvalidConfig("snapshot_dt must be > 0");
    if (c.replicas < 2) throw InvalidConfig("velocity sweep needs >= 2 replicas for error bars");

    std::vector<double> times;
    for (std::size_t k = 0;; ++k) {
        const double t = t0 + static_cast<double>(k) * c.snapshot_dt;
        if (t > t1 + 1e-9) break;
        times.push_back(std::min(t, t1));
    }
    if (times.size() < 3) throw InvalidConfig("fit window holds fewer than 3 snapshots");

    VelocitySweep sweep;
    for (std::size_t n : c.n_list) {
        std::vector<double> smin(c.replicas), smax(c.replicas);
        parallel_for(c.replicas, [&](std::size_t r) {
            EngineConfig e;
            e.n = n;
            e.selection = c.psi;
            e.rate = c.rate;
            e.horizon = c.horizon;
            e.init = c.init;
            e.seed = replica_seed(c.seed, n, r);
            e.snapshot_times = times;
            const SimulationResult res = simulate(e);
            std::vector<double> lo, hi;
            for (const auto& s : res.snapshots) {
                const auto [mn, mx] = std::minmax_element(s.positions.begin(), s.positions.end());
                lo.push_back(*mn);
                hi.push_back(*mx);
            }
            smin[r] = least_squares_line(times, lo).speed;
            smax[r] = least_squares_line(times, hi).speed;
        });
        SpeedEstimate est;
        est.n = n;
        est.t0 = t0;
        est.t1 = t1;
        est.replicas = c.replicas;
        std::vector<double> mid(c.replicas), diff(c.replicas);
        for (std::size_t r = 0; r < c.replicas; ++r) {
            mid[r] = 0.5 * (smin[r] + smax[r]);
            diff[r] = smax[r] - smin[r];
        }
        const auto m = mean_stderr(mid), lo = mean_stderr(smin), hi = mean_stderr(smax), d = mean_stderr(diff);
        est.v_hat = m.mean;
        est.v_hat_se = m.stderr_;
        est.v_min = lo.mean;
        est.v_min_se = lo.stderr_;
        est.v_max = hi.mean;
        est.v_max_se = hi.stderr_;
        est.diff_mean = d.mean;
        est.diff_se = d.stderr_;
        est.ci_half_width = 3.0 * m.stderr_;
        sweep.rows.push_back(est);
    }
    if (sweep.rows.size() >= 2) {
        std::vector<double> xs, ys;
        for (const auto& r : sweep.rows) {
            const double l = std::log(static_cast<double>(r.n));
            xs.push_back(1.0 / (l * l));
            ys.push_back(r.v_hat);
        }
        sweep.regression = least_squares_line(xs, ys);
    }
    return sweep;
}

// ---------------------------------------------------------------------------------------------
// Split cloud

struct SplitConfig {
    SelectionPsi psi = presets::split_cloud();
    InitialCondition init = InitialCondition::quantiles(Density::uniform(-1.0, 0.0));
    std::size_t n = 2000;
    double horizon = 15.0;
    std::size_t replicas = 10;
    std::uint64_t seed = 1;
    double min_gap = 5.0;
};

struct GapSplit {
    double right_fraction = 0.0;
    double left_fraction = 0.0;
    double gap = 0.0;
    double gap_at = 0.0; ///< midpoint of the gap
};

/// Splits at the largest spacing between consecutive order statistics in the middle half of the ranks.
inline GapSplit split_at_largest_gap(std::vector<double> xs, double min_gap) {
    if (xs.size() < 4) throw InvalidConfig("gap classifier needs at least 4 particles");
    std::sort(xs.begin(), xs.end());
    const std::size_t n = xs.size();
    const std::size_t first = n / 4;
    const std::size_t last = (3 * n) / 4; // gaps (k, k+1) for k in [first, last)
    std::size_t best = first;
    for (std::size_t k = first; k < last && k + 1 < n; ++k)
        if (xs[k + 1] - xs[k] > xs[best + 1] - xs[best]) best = k;
    GapSplit s;
    s.gap = xs[best + 1] - xs[best];
    if (!(s.gap >= min_gap))
        throw NoGapFound("largest middle-half gap is " + std::to_string(s.gap) + " < " + std::to_string(min_gap));
    const std::size_t right = n - best - 1;
    s.right_fraction = static_cast<double>(right) / static_cast<double>(n);
    s.left_fraction = static_cast<double>(n - right) / static_cast<double>(n);
    s.gap_at = 0.5 * (xs[best] + xs[best + 1]);
    return s;
}

struct SplitResult {
    std::vector<GapSplit> replicas;
    double mean = 0.0;
    double stderr_ = 0.0;
};

inline SplitResult run_split_cloud(const SplitConfig& c) {
    if (c.replicas == 0) throw InvalidConfig("split needs replicas >= 1");
    std::vector<GapSplit> splits(c.replicas);
    parallel_for(c.replicas, [&](std::size_t r) {
        EngineConfig e;
        e.n = c.n;
        e.selection = c.psi;
        e.horizon = c.horizon;
        e.init = c.init;
        e.seed = replica_seed(c.seed, c.n, r);
        e.snapshot_times = {c.horizon};
        splits[r] = split_at_largest_gap(simulate(e).snapshots.back().positions, c.min_gap);
    });
    SplitResult out;
    std::vector<double> f;
    for (const auto& s : splits) f.push_back(s.right_fraction);
    const auto ms = mean_stderr(f);
    out.replicas = std::move(splits);
    out.mean = ms.mean;
    out.stderr_ = ms.stderr_;
    return out;
}

// ---------------------------------------------------------------------------------------------
// Domination by the coloured BBM

struct DominationConfig {
    SelectionPsi psi = presets::fisher();
    BranchingRate rate = BranchingRate::constant(1.0);
    InitialCondition init = InitialCondition::quantiles(Density::uniform(-1.0, 0.0));
    std::size_t n = 500;
    double horizon = 1.0;
    std::vector<double> sample_times; ///< defaults to {horizon}
    std::size_t replicas = 100;
    std::uint64_t seed = 1;
    std::size_t population_cap = kColouredPopulationCap;
};

struct DominationRow {
    double t = 0.0;
    double pop_mean = 0.0;
    double pop_stderr = 0.0;
    double pop_expected = 0.0; ///< N exp(int_0^t r)
    std::size_t replicas = 0;
};

struct DominationReport {
    std::vector<DominationRow> rows;
    std::uint64_t subset_violations = 0;
    std::uint64_t blue_count_errors = 0; ///< sampled times where the blue population differs from N
};

inline DominationReport run_domination_check(const DominationConfig& c) {
    if (c.replicas == 0) throw InvalidConfig("dominate needs replicas >= 1");
    std::vector<double> times = c.sample_times.empty() ? std::vector<double>{c.horizon} : c.sample_times;
    std::sort(times.begin(), times.end());
    std::vector<ColouredBbmResult> runs(c.replicas);
    parallel_for(c.replicas, [&](std::size_t r) {
        EngineConfig e;
        e.n = c.n;
        e.selection = c.psi;
        e.rate = c.rate;
        e.horizon = c.horizon;
        e.init = c.init;
        e.seed = replica_seed(c.seed, c.n, r);
        e.snapshot_times = times;
        runs[r] = simulate_coloured_bbm(e, c.population_cap);
        // Keep only what the report needs.
        runs[r].total.clear();
        runs[r].total.shrink_to_fit();
    });
    DominationReport rep;
    for (std::size_t k = 0; k < times.size(); ++k) {
        std::vector<double> pop;
        for (const auto& run : runs) {
            pop.push_back(static_cast<double>(run.population[k]));
            if (run.blue[k].size() != c.n) ++rep.blue_count_errors;
        }
        const auto ms = mean_stderr(pop);
        rep.rows.push_back({times[k], ms.mean, ms.stderr_,
                            static_cast<double>(c.n) * std::exp(c.rate.integral(0.0, times[k])), c.replicas});
    }
    for (const auto& run : runs) rep.subset_violations += run.subset_violations;
    return rep;
}

} // namespace rank_bbm
