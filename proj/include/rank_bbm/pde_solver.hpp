#pragma once

/// @file pde_solver.hpp
/// @brief Finite-difference solver for U_t = 1/2 U_xx + r(t) G(U) in tail-CDF form, with level tracking.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "rank_bbm/errors.hpp"
#include "rank_bbm/selection.hpp"

namespace rank_bbm {

/// Reaction G(U) = U: the tail-CDF form of the branching Brownian motion density equation u_t = 1/2 u_xx + r u.
struct PureBranching {};

using Reaction = std::variant<ReactionG, PureBranching>;

enum class Scheme {
    explicit_euler,
    /// Crank-Nicolson diffusion with explicit reaction.
    semi_implicit,
};

inline constexpr double kExplicitSafety = 0.9;

/// U_0 = 1 left of x0, 0 right of it, and 1/2 on the atom.
inline std::function<double(double)> step_profile(double x0) {
    return [x0](double x) { return std::abs(x - x0) < 1e-12 ? 0.5 : (x < x0 ? 1.0 : 0.0); };
}

struct PdeConfig {
    Reaction reaction = g_from_psi(presets::fisher());
    BranchingRate rate = BranchingRate::constant(1.0);
    double x_lo = -10.0;
    double x_hi = 45.0;
    double dx = 0.02;
    /// 0 selects the largest step allowed by the stability bounds.
    double dt = 0.0;
    double horizon = 1.0;
    std::function<double(double)> init = step_profile(0.0);
    double bc_left = 1.0;
    double bc_right = 0.0;
    Scheme scheme = Scheme::explicit_euler;
    /// Sorted times at which rows are stored; empty means {horizon}.
    std::vector<double> output_times;
    /// Abort when the solution at guard_margin from a boundary differs from the boundary value by more than guard_tol.
    bool boundary_guard = true;
    double guard_margin = 5.0;
    double guard_tol = 0.02;
};

struct PdeSolution {
    std::vector<double> times;
    std::vector<double> grid;
    std::vector<std::vector<double>> u;
    double dx = 0.0;
    double dt = 0.0;

    [[nodiscard]] std::size_t time_index(double t) const {
        for (std::size_t k = 0; k < times.size(); ++k)
            if (std::abs(times[k] - t) <= 1e-9 * std::max(1.0, std::abs(t))) return k;
        throw InvalidConfig("time " + std::to_string(t) + " is not a sampled time");
    }

    [[nodiscard]] const std::vector<double>& row(double t) const { return u[time_index(t)]; }

    /// Linear interpolation of row k at x; constant extension outside the grid.
    [[nodiscard]] double value_at(std::size_t k, double x) const { return interpolate(u[k], x); }

    [[nodiscard]] double interpolate(const std::vector<double>& r, double x) const {
        if (x <= grid.front()) return r.front();
        if (x >= grid.back()) return r.back();
        const double s = (x - grid.front()) / dx;
        const auto i = std::min(static_cast<std::size_t>(s), grid.size() - 2);
        const double w = s - static_cast<double>(i);
        return (1.0 - w) * r[i] + w * r[i + 1];
    }
};

namespace detail {

inline double reaction_lipschitz(const Reaction& reaction) {
    if (const auto* g = std::get_if<ReactionG>(&reaction)) return g->lipschitz();
    return 1.0;
}

/// Largest stable step for the configuration, or the validated user step.
inline double choose_dt(const PdeConfig& c) {
    const double lip = detail::reaction_lipschitz(c.reaction) * c.rate.r_max();
    const double dx2 = c.dx * c.dx;
    if (c.scheme == Scheme::explicit_euler) {
        // Diffusion CFL for 1/2 U_xx: dt <= dx^2; the discrete maximum principle additionally needs
        // 1 - dt/dx^2 - dt Lip >= 0.
        double bound = kExplicitSafety * dx2;
        if (lip > 0.0) bound = std::min({bound, 0.5 / lip, 1.0 / (1.0 / dx2 + lip)});
        if (c.dt == 0.0) return bound;
        if (c.dt > bound * (1.0 + 1e-12))
            throw StabilityViolation("dt = " + std::to_string(c.dt) + " exceeds the explicit bound " +
                                     std::to_string(bound));
        return c.dt;
    }
    const double bound = lip > 0.0 ? 0.5 / lip : std::numeric_limits<double>::infinity();
    if (c.dt == 0.0) return std::min(bound, 10.0 * dx2);
    if (c.dt > bound * (1.0 + 1e-12))
        throw StabilityViolation("dt * Lip(G) exceeds 0.5 (dt = " + std::to_string(c.dt) + ")");
    return c.dt;
}

/// Solves the tridiagonal system a_i x_{i-1} + b_i x_i + c_i x_{i+1} = d_i with constant a, b, c (Thomas).
inline void thomas_constant(double a, double b, double c, std::vector<double>& d, std::vector<double>& work) {
    const std::size_t n = d.size();
    work.resize(n);
    work[0] = c / b;
    d[0] /= b;
    for (std::size_t i = 1; i < n; ++i) {
        const double m = b - a * work[i - 1];
        work[i] = c / m;
        d[i] = (d[i] - a * d[i - 1]) / m;
    }
    for (std::size_t i = n - 1; i-- > 0;) d[i] -= work[i] * d[i + 1];
}

} // namespace detail

/// Second-order central differences in space; explicit Euler (default) or Crank-Nicolson diffusion with
/// explicit reaction. Dirichlet boundaries at (bc_left, bc_right), scaled by exp(int r) in pure-branching mode.
inline PdeSolution solve(const PdeConfig& c) {
    if (!(c.x_hi > c.x_lo)) throw InvalidConfig("need x_lo < x_hi");
    if (!(c.dx > 0.0)) throw InvalidConfig("need dx > 0");
    if (!(c.horizon > 0.0)) throw InvalidConfig("need horizon > 0");
    if (c.dt < 0.0) throw InvalidConfig("need dt >= 0");
    c.rate.validate_horizon(c.horizon);
    const bool pure = std::holds_alternative<PureBranching>(c.reaction);
    const ReactionG* g = std::get_if<ReactionG>(&c.reaction);

    const double span = c.x_hi - c.x_lo;
    const auto cells = static_cast<std::size_t>(std::llround(span / c.dx));
    if (cells < 2 || std::abs(static_cast<double>(cells) * c.dx - span) > 1e-9 * span)
        throw InvalidConfig("domain length must be a multiple of dx");
    const double dt = detail::choose_dt(c);

    std::vector<double> out_times = c.output_times.empty() ? std::vector<double>{c.horizon} : c.output_times;
    if (!std::is_sorted(out_times.begin(), out_times.end()) || out_times.front() < 0.0 ||
        out_times.back() > c.horizon * (1.0 + 1e-12))
        throw InvalidConfig("output_times must be sorted within [0, horizon]");

    PdeSolution sol;
    sol.dx = c.dx;
    sol.dt = dt;
    sol.grid.resize(cells + 1);
    for (std::size_t i = 0; i <= cells; ++i) sol.grid[i] = c.x_lo + static_cast<double>(i) * c.dx;

    std::vector<double> u(cells + 1);
    for (std::size_t i = 0; i <= cells; ++i) {
        u[i] = c.init(sol.grid[i]);
        if (!(u[i] >= -1e-12 && u[i] <= 1.0 + 1e-12)) throw InvalidConfig("initial profile must take values in [0,1]");
        if (i > 0 && u[i] > u[i - 1] + 1e-12) throw InvalidConfig("initial profile must be nonincreasing in x");
    }
    u.front() = c.bc_left;
    u.back() = c.bc_right;

    const auto boundary_scale = [&](double t) { return pure ? std::exp(c.rate.integral(0.0, t)) : 1.0; };

    const auto guard = [&](double t) {
        if (!c.boundary_guard || pure) return;
        const double left = sol.interpolate(u, c.x_lo + c.guard_margin);
        const double right = sol.interpolate(u, c.x_hi - c.guard_margin);
        if (std::abs(left - c.bc_left) > c.guard_tol || std::abs(right - c.bc_right) > c.guard_tol)
            throw DomainTooSmall("front within " + std::to_string(c.guard_margin) + " of the boundary at t = " +
                                 std::to_string(t));
    };

    std::vector<double> next(u.size());
    std::vector<double> work;
    const double dx2 = c.dx * c.dx;
    double t = 0.0;

    for (double target : out_times) {
        const double gap = target - t;
        const auto steps = gap <= 0.0 ? std::size_t{0}
                                      : static_cast<std::size_t>(std::ceil(gap / dt - 1e-9));
        const double h = steps ? gap / static_cast<double>(steps) : 0.0;
        for (std::size_t s = 0; s < steps; ++s) {
            const double r = c.rate(t);
            const double hr = h * r;
            double lo = std::numeric_limits<double>::infinity();
            double hi = -lo;
            if (c.scheme == Scheme::explicit_euler) {
                const double lam = h / (2.0 * dx2);
                for (std::size_t i = 1; i < cells; ++i) {
                    const double react = pure ? u[i] : (*g)(u[i]);
                    const double v = u[i] + lam * (u[i + 1] - 2.0 * u[i] + u[i - 1]) + hr * react;
                    next[i] = v;
                    lo = std::min(lo, v);
                    hi = std::max(hi, v);
                }
            } else {
                const double beta = h / (4.0 * dx2);
                const double t1 = t + h;
                const double bl = c.bc_left * boundary_scale(t1);
                const double br = c.bc_right * boundary_scale(t1);
                std::vector<double> rhs(cells - 1);
                for (std::size_t i = 1; i < cells; ++i) {
                    const double react = pure ? u[i] : (*g)(u[i]);
                    rhs[i - 1] = u[i] + beta * (u[i + 1] - 2.0 * u[i] + u[i - 1]) + hr * react;
                }
                rhs.front() += beta * bl;
                rhs.back() += beta * br;
                detail::thomas_constant(-beta, 1.0 + 2.0 * beta, -beta, rhs, work);
                for (std::size_t i = 1; i < cells; ++i) {
                    next[i] = rhs[i - 1];
                    lo = std::min(lo, next[i]);
                    hi = std::max(hi, next[i]);
                }
            }
            t += h;
            const double scale = boundary_scale(t);
            next.front() = c.bc_left * scale;
            next.back() = c.bc_right * scale;
            std::swap(u, next);
            if (pure) {
                if (!std::isfinite(lo) || !std::isfinite(hi)) throw BlowUp("non-finite value");
            } else {
                if (std::max(std::abs(lo), std::abs(hi)) > 10.0 || !std::isfinite(lo) || !std::isfinite(hi))
                    throw BlowUp("|U| > 10 at t = " + std::to_string(t));
                if (lo < -1e-9 || hi > 1.0 + 1e-9)
                    throw RangeViolation("U left [0,1] at t = " + std::to_string(t) + " (min " + std::to_string(lo) +
                                         ", max " + std::to_string(hi) + ")");
            }
        }
        t = target;
        guard(t);
        sol.times.push_back(target);
        sol.u.push_back(u);
    }
    return sol;
}

/// Rightmost down-crossing sup{x : U(x,t) >= level} among crossings right of x_min, linearly interpolated.
inline double level_position(const PdeSolution& sol, double t, double level,
                             double x_min = -std::numeric_limits<double>::infinity()) {
    const auto& row = sol.row(t);
    for (std::size_t i = row.size() - 1; i-- > 0;) {
        if (sol.grid[i + 1] <= x_min) break;
        if (row[i] >= level && row[i + 1] < level) {
            const double w = (row[i] - level) / (row[i] - row[i + 1]);
            return sol.grid[i] + w * sol.dx;
        }
    }
    throw LevelNotAttained("level " + std::to_string(level) + " not crossed at t = " + std::to_string(t));
}

/// Leftmost down-crossing of `level`.
inline double leftmost_level_position(const PdeSolution& sol, double t, double level) {
    const auto& row = sol.row(t);
    for (std::size_t i = 0; i + 1 < row.size(); ++i) {
        if (row[i] >= level && row[i + 1] < level) {
            const double w = (row[i] - level) / (row[i] - row[i + 1]);
            return sol.grid[i] + w * sol.dx;
        }
    }
    throw LevelNotAttained("level " + std::to_string(level) + " not crossed at t = " + std::to_string(t));
}

struct SpeedFit {
    double speed = 0.0;
    double intercept = 0.0;
    double max_residual = 0.0;
    std::size_t samples = 0;
};

/// Ordinary least squares line through (t, y); needs at least two points.
inline SpeedFit least_squares_line(std::span<const double> ts, std::span<const double> ys) {
    const auto n = static_cast<double>(ts.size());
    double st = 0.0;
    double sy = 0.0;
    for (std::size_t k = 0; k < ts.size(); ++k) {
        st += ts[k];
        sy += ys[k];
    }
    const double mt = st / n;
    const double my = sy / n;
    double stt = 0.0;
    double sty = 0.0;
    for (std::size_t k = 0; k < ts.size(); ++k) {
        stt += (ts[k] - mt) * (ts[k] - mt);
        sty += (ts[k] - mt) * (ys[k] - my);
    }
    SpeedFit fit;
    fit.speed = sty / stt;
    fit.intercept = my - fit.speed * mt;
    fit.samples = ts.size();
    for (std::size_t k = 0; k < ts.size(); ++k)
        fit.max_residual = std::max(fit.max_residual, std::abs(ys[k] - (fit.intercept + fit.speed * ts[k])));
    return fit;
}

/// Least-squares slope of the level-`level` position over sampled times in [t0, t1] (at least 10 samples).
inline SpeedFit estimate_spreading_speed(const PdeSolution& sol, double level, double t0, double t1,
                                         double x_min = -std::numeric_limits<double>::infinity()) {
    std::vector<double> ts;
    std::vector<double> xs;
    for (double t : sol.times) {
        if (t < t0 - 1e-12 || t > t1 + 1e-12) continue;
        ts.push_back(t);
        xs.push_back(level_position(sol, t, level, x_min));
    }
    if (ts.size() < 10) throw InvalidConfig("speed window needs >= 10 sampled times, got " + std::to_string(ts.size()));
    return least_squares_line(ts, xs);
}

struct Plateau {
    double value = 0.0; ///< U at the midpoint of the 0.98 / 0.02 level positions
    double lo = 0.0;    ///< min of U over the middle third of the domain
    double hi = 0.0;    ///< max of U over the middle third of the domain
    double x_left = 0.0;
    double x_right = 0.0;
};

inline constexpr double kPlateauUpperLevel = 0.98;
inline constexpr double kPlateauLowerLevel = 0.02;

/// Value between the left (0.98) and right (0.02) fronts, plus the range of U over the middle third of the domain.
inline Plateau plateau_value(const PdeSolution& sol, double t) {
    const std::size_t k = sol.time_index(t);
    const auto& row = sol.u[k];
    Plateau p;
    try {
        p.x_left = leftmost_level_position(sol, t, kPlateauUpperLevel);
    } catch (const LevelNotAttained&) {
        p.x_left = sol.grid.front();
    }
    try {
        p.x_right = level_position(sol, t, kPlateauLowerLevel);
    } catch (const LevelNotAttained&) {
        p.x_right = sol.grid.back();
    }
    p.value = sol.value_at(k, 0.5 * (p.x_left + p.x_right));
    const double third = (sol.grid.back() - sol.grid.front()) / 3.0;
    p.lo = std::numeric_limits<double>::infinity();
    p.hi = -p.lo;
    for (std::size_t i = 0; i < row.size(); ++i) {
        if (sol.grid[i] < sol.grid.front() + third || sol.grid[i] > sol.grid.back() - third) continue;
        p.lo = std::min(p.lo, row[i]);
        p.hi = std::max(p.hi, row[i]);
    }
    return p;
}

} // namespace rank_bbm
