#pragma once

/// @file wave_analysis.hpp
/// @brief Travelling-wave classification and profiles for U_t = 1/2 U_xx + G(U).
///
/// A wave U(x,t) = w(x - ct) solves 1/2 w'' + c w' + G(w) = 0. Profiles are computed by
/// shooting from the upper equilibrium (1, or the interior stable zero u*) along the
/// one-dimensional unstable manifold, which makes the method free of matching parameters.

#include <algorithm>
#include <array>
#include <boost/numeric/odeint.hpp>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "rank_bbm/errors.hpp"
#include "rank_bbm/selection.hpp"

namespace rank_bbm {

struct WaveClassification {
    enum class Kind { monostable_to_one, monostable_to_ustar, bistable_no_wave, degenerate };

    Kind kind = Kind::degenerate;
    std::optional<double> minimal_speed; ///< sqrt(2 G'(0)) for the monostable kinds
    std::optional<double> u_star;        ///< interior stable zero for monostable_to_ustar
    double g_prime_0 = 0.0;
    double g_prime_1 = 0.0;
    /// G'(0) > 0 and G'(1) > 0: no monotone wave joins 1 to 0.
    bool endpoints_unstable = false;
    /// max G' attained at 0, so sqrt(2 G'(0)) is the linear (KPP) speed.
    bool kpp = false;
    std::vector<double> interior_zeros;
};

inline const char* to_string(WaveClassification::Kind k) {
    switch (k) {
    case WaveClassification::Kind::monostable_to_one: return "monostable-to-1";
    case WaveClassification::Kind::monostable_to_ustar: return "monostable-to-u*";
    case WaveClassification::Kind::bistable_no_wave: return "bistable-no-wave";
    case WaveClassification::Kind::degenerate: return "degenerate";
    }
    return "?";
}

/// Sign-structure classification of G on [0,1].
///
/// Throws Degenerate when an isolated interior zero has multiplicity >= 2. A G that vanishes on a whole
/// interval (e.g. psi uniform) is reported as kind degenerate.
inline WaveClassification classify(const ReactionG& g) {
    WaveClassification out;
    out.g_prime_0 = g.d0();
    out.g_prime_1 = g.d1();
    out.endpoints_unstable = g.d0() > 0.0 && g.d1() > 0.0;
    out.interior_zeros = g.interior_zeros();
    const auto [dmn, dmx] = g.pieces().derivative().range(2000);
    (void)dmn;
    out.kpp = dmx <= g.d0() + 1e-12;
    if (g.vanishes_on_interval()) return out;

    for (double z : out.interior_zeros)
        if (std::abs(g.derivative(z)) < 1e-8)
            throw Degenerate("zero of multiplicity >= 2 at u = " + std::to_string(z));

    const auto positive_on = [&](double a, double b) {
        constexpr int kSamples = 512;
        for (int i = 1; i < kSamples; ++i) {
            const double u = a + (b - a) * static_cast<double>(i) / kSamples;
            if (!(g(u) > 0.0)) return false;
        }
        return true;
    };

    if (out.interior_zeros.empty() && g.d0() > 0.0 && positive_on(0.0, 1.0)) {
        out.kind = WaveClassification::Kind::monostable_to_one;
        out.minimal_speed = std::sqrt(2.0 * g.d0());
        return out;
    }
    if (out.interior_zeros.size() == 1 && g.d0() > 0.0) {
        const double z = out.interior_zeros.front();
        if (positive_on(0.0, z) && g.derivative(z) < 0.0) {
            out.kind = WaveClassification::Kind::monostable_to_ustar;
            out.u_star = z;
            out.minimal_speed = std::sqrt(2.0 * g.d0());
            return out;
        }
    }
    if (out.endpoints_unstable) out.kind = WaveClassification::Kind::bistable_no_wave;
    return out;
}

struct WaveProfile {
    double c = 0.0;
    double top = 1.0; ///< upper equilibrium the profile leaves from
    std::vector<double> z;
    std::vector<double> w;
    double residual = 0.0;
};

struct ShootOptions {
    double dz = 0.005;
    double perturbation = 1e-6;
    double abs_tol = 1e-13;
    double rel_tol = 1e-13;
    double accept_level = 1e-4;
};

/// max |1/2 w'' + c w' + G(w)| over interior nodes, with central differences on the uniform grid.
inline double profile_residual(const ReactionG& g, double c, const std::vector<double>& w, double dz) {
    double res = 0.0;
    for (std::size_t k = 1; k + 1 < w.size(); ++k) {
        const double d2 = (w[k + 1] - 2.0 * w[k] + w[k - 1]) / (dz * dz);
        const double d1 = (w[k + 1] - w[k - 1]) / (2.0 * dz);
        res = std::max(res, std::abs(0.5 * d2 + c * d1 + g(w[k])));
    }
    return res;
}

/// Shoots 1/2 w'' + c w' + G(w) = 0 from the upper equilibrium and accepts a monotone decay below 1e-4.
///
/// The returned grid is shifted so that w(0) = top / 2. Throws NoConnection when the trajectory leaves
/// [-0.05, 1.05], stops being monotone, dips below 0 or fails to decay within z_span.
inline WaveProfile shoot_profile(const ReactionG& g, double c, double z_span, const ShootOptions& opt = {}) {
    namespace odeint = boost::numeric::odeint;
    const WaveClassification cls = classify(g);
    double top = 1.0;
    if (cls.kind == WaveClassification::Kind::monostable_to_ustar)
        top = *cls.u_star;
    else if (cls.kind != WaveClassification::Kind::monostable_to_one)
        throw NoConnection(std::string("no monotone wave for a ") + to_string(cls.kind) + " reaction");

    const double slope = g.derivative(top);
    if (!(slope < 0.0)) throw NoConnection("upper equilibrium is not a saddle");
    const double mu = -c + std::sqrt(c * c - 2.0 * slope);
    if (!(mu > 0.0)) throw NoConnection("no unstable direction at the upper equilibrium");

    using State = std::array<double, 2>;
    const auto rhs = [&](const State& y, State& dy, double) {
        dy[0] = y[1];
        dy[1] = -2.0 * (c * y[1] + g(y[0]));
    };
    auto stepper = odeint::make_controlled<odeint::runge_kutta_dopri5<State>>(opt.abs_tol, opt.rel_tol);

    State y{top - opt.perturbation, -opt.perturbation * mu};
    double z = 0.0;
    double h = opt.dz / 4.0;
    WaveProfile prof;
    prof.c = c;
    prof.top = top;
    prof.z.push_back(0.0);
    prof.w.push_back(y[0]);

    std::optional<std::size_t> accepted;
    const double tail_level = opt.accept_level * 1e-3;
    for (std::size_t k = 1;; ++k) {
        const double target = static_cast<double>(k) * opt.dz;
        if (target > z_span + 1e-12) break;
        while (z < target) {
            double step = std::min(h, target - z);
            const double before = step;
            if (stepper.try_step(rhs, y, z, step) == odeint::success) {
                if (before == h) h = step; // keep the controller's suggestion unless we clipped
            } else {
                h = step;
            }
            if (target - z < 1e-14) z = target;
        }
        if (y[0] < -0.05 || y[0] > 1.05) throw NoConnection("trajectory left [-0.05, 1.05]");
        if (y[0] < 0.0) throw NoConnection("profile undershoots 0 (speed below the minimal speed?)");
        if (y[1] > 0.0) throw NoConnection("profile is not monotone");
        if (!accepted) {
            prof.z.push_back(target);
            prof.w.push_back(y[0]);
            if (y[0] < opt.accept_level) accepted = prof.w.size();
        } else if (y[0] < tail_level) {
            break;
        }
    }
    if (!accepted) throw NoConnection("profile did not decay below 1e-4 within z_span");

    // Recentre so the half level sits at z = 0.
    const double half = 0.5 * top;
    for (std::size_t k = 0; k + 1 < prof.w.size(); ++k) {
        if (prof.w[k] >= half && prof.w[k + 1] < half) {
            const double zc = prof.z[k] + (prof.w[k] - half) / (prof.w[k] - prof.w[k + 1]) * opt.dz;
            for (double& zz : prof.z) zz -= zc;
            break;
        }
    }
    prof.residual = profile_residual(g, c, prof.w, opt.dz);
    return prof;
}

/// Linear interpolation of a profile; 'top' to the left and exponential-free 0 to the right.
inline double profile_value(const WaveProfile& p, double z) {
    if (z <= p.z.front()) return p.w.front();
    if (z >= p.z.back()) return p.w.back();
    const double dz = p.z[1] - p.z[0];
    const double s = (z - p.z.front()) / dz;
    const auto i = std::min(static_cast<std::size_t>(s), p.z.size() - 2);
    const double wgt = s - static_cast<double>(i);
    return (1.0 - wgt) * p.w[i] + wgt * p.w[i + 1];
}

} // namespace rank_bbm
