#pragma once

/// @file io.hpp
/// @brief CSV writers for simulation and experiment outputs.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "rank_bbm/errors.hpp"
#include "rank_bbm/experiments.hpp"
#include "rank_bbm/particle_engine.hpp"
#include "rank_bbm/pde_solver.hpp"
#include "rank_bbm/wave_analysis.hpp"

namespace rank_bbm {

/// Shortest representation that reads back to the same double.
inline std::string format_double(double x) {
    char buf[32];
    for (int prec = 15; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, x);
        if (std::strtod(buf, nullptr) == x) break;
    }
    return buf;
}

namespace detail {

inline std::ofstream open_csv(const std::filesystem::path& path, const char* header) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << header << '\n';
    return out;
}

} // namespace detail

/// t,particle_index,x  (one row per particle per snapshot, slot order)
inline void write_snapshots_csv(const std::filesystem::path& path, const std::vector<Snapshot>& snaps) {
    auto out = detail::open_csv(path, "t,particle_index,x");
    for (const auto& s : snaps)
        for (std::size_t k = 0; k < s.positions.size(); ++k)
            out << format_double(s.t) << ',' << k << ',' << format_double(s.positions[k]) << '\n';
}

/// m,t_m,i,j  (m is 1-based)
inline void write_events_csv(const std::filesystem::path& path, const std::vector<EventRecord>& events) {
    auto out = detail::open_csv(path, "m,t_m,i,j");
    for (std::size_t m = 0; m < events.size(); ++m)
        out << m + 1 << ',' << format_double(events[m].t) << ',' << events[m].i << ',' << events[m].j << '\n';
}

/// t,x,u for the rows whose indices are listed.
inline void write_pde_csv(const std::filesystem::path& path, const PdeSolution& sol, const std::vector<std::size_t>& rows) {
    auto out = detail::open_csv(path, "t,x,u");
    for (std::size_t k : rows)
        for (std::size_t i = 0; i < sol.grid.size(); ++i)
            out << format_double(sol.times[k]) << ',' << format_double(sol.grid[i]) << ',' << format_double(sol.u[k][i])
                << '\n';
}

inline void write_wave_csv(const std::filesystem::path& path, const WaveProfile& p) {
    auto out = detail::open_csv(path, "z,w");
    for (std::size_t k = 0; k < p.z.size(); ++k) out << format_double(p.z[k]) << ',' << format_double(p.w[k]) << '\n';
}

inline void write_hydro_csv(const std::filesystem::path& path, const std::vector<ConvergenceRow>& rows) {
    auto out = detail::open_csv(path, "n,t,ks_mean,ks_stderr,replicas");
    for (const auto& r : rows)
        out << r.n << ',' << format_double(r.t) << ',' << format_double(r.ks_mean) << ',' << format_double(r.ks_stderr)
            << ',' << r.replicas << '\n';
}

/// ci is the 3-sigma half width of v_hat; window is written as "t0:t1".
inline void write_velocity_csv(const std::filesystem::path& path, const VelocitySweep& sweep) {
    auto out = detail::open_csv(path, "n,v_min,v_max,ci,window");
    for (const auto& r : sweep.rows)
        out << r.n << ',' << format_double(r.v_min) << ',' << format_double(r.v_max) << ','
            << format_double(r.ci_half_width) << ',' << format_double(r.t0) << ':' << format_double(r.t1) << '\n';
}

inline void write_split_csv(const std::filesystem::path& path, const SplitResult& res) {
    auto out = detail::open_csv(path, "replica,right_fraction");
    for (std::size_t k = 0; k < res.replicas.size(); ++k)
        out << k << ',' << format_double(res.replicas[k].right_fraction) << '\n';
}

inline void write_domination_csv(const std::filesystem::path& path, const DominationReport& rep) {
    auto out = detail::open_csv(path, "t,pop_mean,pop_expected");
    for (const auto& r : rep.rows)
        out << format_double(r.t) << ',' << format_double(r.pop_mean) << ',' << format_double(r.pop_expected) << '\n';
}

} // namespace rank_bbm
