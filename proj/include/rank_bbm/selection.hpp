#pragma once

/// @file selection.hpp
/// @brief Selection densities psi, reaction terms G, branching rates and the psi <-> G correspondence.
///
/// A selection density psi on [0,1] gives the probability that the particle of rank
/// quantile x is the one removed at a branching event. Its dual reaction term is
///
///     G(U) = U - int_{1-U}^{1} psi(s) ds,        psi(x) = 1 - G'(1 - x),
///
/// and both are stored as exact piecewise polynomials.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "rank_bbm/errors.hpp"
#include "rank_bbm/polynomial.hpp"

namespace rank_bbm {

inline constexpr double kNormalizationTol = 1e-12;
inline constexpr double kPositivityTol = 1e-12;

/// Selection density psi >= 0 on [0,1] with unit mass and its exact cumulative Psi.
class SelectionPsi {
public:
    using Piece = PiecewisePolynomial::Piece;

    /// Validates tiling of [0,1], psi >= 0 (grid plus per-piece extrema) and Psi(1) = 1.
    explicit SelectionPsi(std::vector<Piece> pieces, std::string label = "custom") : label_(std::move(label)) {
        if (pieces.empty()) throw InvalidPsi("no pieces");
        if (std::abs(pieces.front().lo) > 1e-12 || std::abs(pieces.back().hi - 1.0) > 1e-12)
            throw InvalidPsi("pieces must tile [0,1]");
        pieces.front().lo = 0.0;
        pieces.back().hi = 1.0;
        try {
            psi_ = PiecewisePolynomial(std::move(pieces));
        } catch (const std::invalid_argument& e) {
            throw InvalidPsi(e.what());
        }
        const auto [mn, mx] = psi_.range();
        (void)mx;
        if (mn < -kPositivityTol) throw InvalidPsi("psi takes negative value " + std::to_string(mn));

        double acc = 0.0;
        for (const auto& p : psi_.pieces()) {
            Polynomial a = p.poly.antiderivative();
            offset_.push_back(acc - a(p.lo));
            acc += a(p.hi) - a(p.lo);
            antideriv_.push_back(std::move(a));
        }
        if (std::abs(acc - 1.0) > kNormalizationTol) {
            char buf[64];
            std::snprintf(buf, sizeof buf, "%.17g", acc);
            throw InvalidPsi(std::string("normalization: integral of psi is ") + buf + ", expected 1");
        }
    }

    [[nodiscard]] double operator()(double x) const noexcept { return psi_(x); }

    /// Psi(x) = int_0^x psi, with x clamped to [0,1].
    [[nodiscard]] double cumulative(double x) const noexcept {
        if (x <= 0.0) return 0.0;
        if (x >= 1.0) x = 1.0;
        const std::size_t k = psi_.piece_index(x);
        return offset_[k] + antideriv_[k](x);
    }

    [[nodiscard]] const PiecewisePolynomial& density() const noexcept { return psi_; }
    [[nodiscard]] const Polynomial& piece_antiderivative(std::size_t k) const { return antideriv_[k]; }
    [[nodiscard]] double piece_offset(std::size_t k) const { return offset_[k]; }
    [[nodiscard]] const std::string& label() const noexcept { return label_; }

    [[nodiscard]] double at_zero() const noexcept { return psi_.pieces().front().poly(0.0); }
    [[nodiscard]] double at_one() const noexcept { return psi_.pieces().back().poly(1.0); }

    /// Largest p such that psi vanishes identically on [1-p, 1] (0 when psi(1-) != 0).
    [[nodiscard]] double zero_tail_fraction() const noexcept {
        const auto pieces = psi_.pieces();
        double lo = 1.0;
        for (auto it = pieces.rbegin(); it != pieces.rend(); ++it) {
            if (!it->poly.is_zero(1e-14)) break;
            lo = it->lo;
        }
        return 1.0 - lo;
    }

    /// sup psi over [a, b].
    [[nodiscard]] double sup_on(double a, double b) const { return psi_.sup_on(a, b); }

private:
    PiecewisePolynomial psi_;
    std::vector<Polynomial> antideriv_;
    std::vector<double> offset_;
    std::string label_;
};

/// Reaction term G on [0,1] with G(0) = G(1) = 0.
class ReactionG {
public:
    explicit ReactionG(PiecewisePolynomial g) : g_(std::move(g)) {
        if (std::abs(g_.lo()) > 1e-12 || std::abs(g_.hi() - 1.0) > 1e-12)
            throw InvalidReaction("G must be defined on [0,1]");
        if (std::abs(g_(0.0)) > 1e-12) throw InvalidReaction("G(0) != 0");
        if (std::abs(g_.pieces().back().poly(1.0)) > 1e-12) throw InvalidReaction("G(1) != 0");
        dg_ = g_.derivative();
        d0_ = g_.pieces().front().poly.derivative()(0.0);
        d1_ = g_.pieces().back().poly.derivative()(1.0);
        for (const auto& p : g_.pieces()) {
            if (p.poly.is_zero(1e-13)) {
                vanishes_on_interval_ = true;
                continue;
            }
            for (double r : real_roots(p.poly, p.lo, p.hi)) zeros_.push_back(r);
        }
        std::sort(zeros_.begin(), zeros_.end());
        std::vector<double> uniq;
        for (double z : zeros_)
            if (uniq.empty() || z - uniq.back() > 1e-10) uniq.push_back(z);
        zeros_ = std::move(uniq);
        const auto [dmn, dmx] = dg_.range(2000);
        lipschitz_ = std::max(std::abs(dmn), std::abs(dmx));
    }

    static ReactionG from_polynomial(Polynomial g) {
        return ReactionG(PiecewisePolynomial({{0.0, 1.0, std::move(g)}}));
    }

    [[nodiscard]] double operator()(double u) const noexcept { return g_(u); }
    [[nodiscard]] double derivative(double u) const noexcept { return dg_(u); }

    /// G'(0).
    [[nodiscard]] double d0() const noexcept { return d0_; }
    /// G'(1).
    [[nodiscard]] double d1() const noexcept { return d1_; }

    /// Sorted isolated roots of G in [0,1], endpoints included.
    [[nodiscard]] const std::vector<double>& zeros() const noexcept { return zeros_; }

    [[nodiscard]] std::vector<double> interior_zeros(double margin = 1e-9) const {
        std::vector<double> z;
        for (double r : zeros_)
            if (r > margin && r < 1.0 - margin) z.push_back(r);
        return z;
    }

    /// True when some piece of G is identically zero (a continuum of zeros).
    [[nodiscard]] bool vanishes_on_interval() const noexcept { return vanishes_on_interval_; }

    /// max |G'| on [0,1].
    [[nodiscard]] double lipschitz() const noexcept { return lipschitz_; }

    [[nodiscard]] const PiecewisePolynomial& pieces() const noexcept { return g_; }

private:
    PiecewisePolynomial g_;
    PiecewisePolynomial dg_;
    double d0_ = 0.0;
    double d1_ = 0.0;
    double lipschitz_ = 0.0;
    bool vanishes_on_interval_ = false;
    std::vector<double> zeros_;
};

/// Time-dependent branching rate r(t) >= 0 with a finite bound r_max used for thinning.
class BranchingRate {
public:
    enum class Kind { constant, piecewise_polynomial, sinusoidal };

    BranchingRate() : BranchingRate(constant(1.0)) {}

    static BranchingRate constant(double r) {
        if (!(r >= 0.0) || !std::isfinite(r)) throw InvalidRate("constant rate must be finite and >= 0");
        BranchingRate b(Kind::constant);
        b.base_ = r;
        b.r_max_ = r;
        return b;
    }

    /// r(t) = base + amplitude * sin(omega t + phase); requires base >= |amplitude|.
    static BranchingRate sinusoidal(double base, double amplitude, double omega = 1.0, double phase = 0.0) {
        if (base < std::abs(amplitude)) throw InvalidRate("sinusoidal rate goes negative: base < |amplitude|");
        if (omega == 0.0) throw InvalidRate("sinusoidal rate needs omega != 0");
        BranchingRate b(Kind::sinusoidal);
        b.base_ = base;
        b.amplitude_ = amplitude;
        b.omega_ = omega;
        b.phase_ = phase;
        b.r_max_ = base + std::abs(amplitude);
        return b;
    }

    /// Piecewise polynomial in t; the caller states r_max, which is checked on the domain.
    static BranchingRate piecewise(PiecewisePolynomial r, double r_max) {
        BranchingRate b(Kind::piecewise_polynomial);
        const auto [mn, mx] = r.range();
        if (mn < -1e-12) throw InvalidRate("piecewise rate takes negative values");
        if (mx > r_max * (1.0 + 1e-12)) throw InvalidRate("piecewise rate exceeds the stated r_max");
        const auto pieces = r.pieces();
        for (std::size_t k = 1; k < pieces.size(); ++k) {
            const double left = pieces[k - 1].poly(pieces[k].lo);
            const double right = pieces[k].poly(pieces[k].lo);
            if (std::abs(left - right) > 1e-9) throw InvalidRate("piecewise rate is discontinuous");
        }
        b.pw_ = std::move(r);
        b.r_max_ = r_max;
        return b;
    }

    [[nodiscard]] Kind kind() const noexcept { return kind_; }
    [[nodiscard]] double r_max() const noexcept { return r_max_; }

    [[nodiscard]] bool is_constant(double v) const noexcept { return kind_ == Kind::constant && base_ == v; }

    [[nodiscard]] double operator()(double t) const noexcept {
        switch (kind_) {
        case Kind::constant: return base_;
        case Kind::sinusoidal: return base_ + amplitude_ * std::sin(omega_ * t + phase_);
        case Kind::piecewise_polynomial: return pw_(std::clamp(t, pw_.lo(), pw_.hi()));
        }
        return 0.0;
    }

    /// int_{t0}^{t1} r(s) ds.
    [[nodiscard]] double integral(double t0, double t1) const {
        switch (kind_) {
        case Kind::constant: return base_ * (t1 - t0);
        case Kind::sinusoidal:
            return base_ * (t1 - t0) -
                   amplitude_ / omega_ * (std::cos(omega_ * t1 + phase_) - std::cos(omega_ * t0 + phase_));
        case Kind::piecewise_polynomial: {
            double acc = 0.0;
            for (const auto& p : pw_.pieces()) {
                const double a = std::max(t0, p.lo);
                const double b = std::min(t1, p.hi);
                if (a >= b) continue;
                const Polynomial anti = p.poly.antiderivative();
                acc += anti(b) - anti(a);
            }
            return acc;
        }
        }
        return 0.0;
    }

    /// Checks the rate is defined on [0, horizon] for piecewise rates.
    void validate_horizon(double horizon) const {
        if (kind_ == Kind::piecewise_polynomial && (pw_.lo() > 0.0 || pw_.hi() < horizon))
            throw InvalidRate("piecewise rate does not cover [0, horizon]");
    }

    [[nodiscard]] double base() const noexcept { return base_; }
    [[nodiscard]] double amplitude() const noexcept { return amplitude_; }
    [[nodiscard]] double omega() const noexcept { return omega_; }
    [[nodiscard]] double phase() const noexcept { return phase_; }
    [[nodiscard]] const PiecewisePolynomial& piecewise_function() const noexcept { return pw_; }

private:
    explicit BranchingRate(Kind k) : kind_(k) {}

    Kind kind_;
    double base_ = 0.0;
    double amplitude_ = 0.0;
    double omega_ = 1.0;
    double phase_ = 0.0;
    double r_max_ = 0.0;
    PiecewisePolynomial pw_;
};

/// G(U) = U - (1 - Psi(1 - U)), exact piece by piece.
inline ReactionG g_from_psi(const SelectionPsi& psi) {
    const auto pieces = psi.density().pieces();
    std::vector<PiecewisePolynomial::Piece> g;
    g.reserve(pieces.size());
    for (std::size_t k = pieces.size(); k-- > 0;) {
        const auto& p = pieces[k];
        // Psi(x) = offset_k + A_k(x) on this piece; substitute x = 1 - U.
        Polynomial poly = Polynomial({psi.piece_offset(k) - 1.0, 1.0}) +
                          psi.piece_antiderivative(k).compose_affine(1.0, -1.0);
        g.push_back({1.0 - p.hi, 1.0 - p.lo, std::move(poly)});
    }
    g.front().lo = 0.0;
    g.back().hi = 1.0;
    return ReactionG(PiecewisePolynomial(std::move(g)));
}

/// psi(x) = 1 - G'(1 - x). Requires G' <= 1 on [0,1].
inline SelectionPsi psi_from_g(const ReactionG& g, std::string label = "from-G") {
    const auto [dmn, dmx] = g.pieces().derivative().range();
    (void)dmn;
    if (dmx > 1.0 + kPositivityTol)
        throw InvalidReaction("G' exceeds 1 (max " + std::to_string(dmx) + "); psi would be negative");
    const auto pieces = g.pieces().pieces();
    std::vector<SelectionPsi::Piece> out;
    out.reserve(pieces.size());
    for (std::size_t k = pieces.size(); k-- > 0;) {
        const auto& p = pieces[k];
        Polynomial poly = Polynomial::constant(1.0) - p.poly.derivative().compose_affine(1.0, -1.0);
        out.push_back({1.0 - p.hi, 1.0 - p.lo, std::move(poly)});
    }
    out.front().lo = 0.0;
    out.back().hi = 1.0;
    try {
        return SelectionPsi(std::move(out), std::move(label));
    } catch (const InvalidPsi& e) {
        throw InvalidReaction(std::string("psi from G failed validation: ") + e.what());
    }
}

/// Entry k (0-based) is Psi((k+1)/n) - Psi(k/n): the probability of removing the (k+1)-th leftmost particle.
inline std::vector<double> rank_kill_probs(const SelectionPsi& psi, std::size_t n) {
    if (n == 0) throw InvalidConfig("rank_kill_probs needs n >= 1");
    std::vector<double> probs(n);
    const double inv = 1.0 / static_cast<double>(n);
    double prev = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const double cur = (k + 1 == n) ? psi.cumulative(1.0) : psi.cumulative(static_cast<double>(k + 1) * inv);
        probs[k] = std::max(0.0, cur - prev);
        prev = cur;
    }
    return probs;
}

/// Samples 1-based kill ranks by binary search on the cumulative of rank_kill_probs.
///
/// Ranks with zero probability are never returned: the cumulative is flat across them
/// and the final positive-probability rank is pinned to exactly 1.
class KillRankSampler {
public:
    KillRankSampler() = default;
    explicit KillRankSampler(std::vector<double> probs) {
        cum_.resize(probs.size());
        double acc = 0.0;
        std::size_t last_positive = 0;
        for (std::size_t k = 0; k < probs.size(); ++k) {
            acc += probs[k];
            cum_[k] = acc;
            if (probs[k] > 0.0) last_positive = k;
        }
        for (std::size_t k = last_positive; k < cum_.size(); ++k) cum_[k] = 1.0;
    }
    KillRankSampler(const SelectionPsi& psi, std::size_t n) : KillRankSampler(rank_kill_probs(psi, n)) {}

    /// u in [0,1) -> rank in [1, n].
    [[nodiscard]] std::size_t rank_for(double u) const noexcept {
        const auto it = std::upper_bound(cum_.begin(), cum_.end(), u);
        return static_cast<std::size_t>(std::min<std::ptrdiff_t>(it - cum_.begin(), cum_.size() - 1)) + 1;
    }

    [[nodiscard]] std::size_t size() const noexcept { return cum_.size(); }

private:
    std::vector<double> cum_;
};

/// Interior alpha in (0,1) with alpha = int_{1-alpha}^1 psi, i.e. the first interior zero of G.
///
/// Returns std::nullopt when G has no sign change in (0,1); that classifies psi
/// (e.g. Fisher) and is not an error.
inline std::optional<double> alpha_fixed_point(const SelectionPsi& psi) {
    const auto fixed = [&](double a) { return a - (1.0 - psi.cumulative(1.0 - a)); };
    constexpr int kGrid = 4096;
    constexpr double kZero = 1e-12;
    double prev_x = 0.0;
    double prev_f = 0.0;
    bool have_prev = false;
    for (int i = 1; i < kGrid; ++i) {
        const double x = static_cast<double>(i) / kGrid;
        const double f = fixed(x);
        if (std::abs(f) <= kZero) continue;
        if (have_prev && ((f < 0.0) != (prev_f < 0.0))) {
            double lo = prev_x;
            double hi = x;
            double flo = prev_f;
            while (hi - lo > 1e-15) {
                const double mid = 0.5 * (lo + hi);
                if (mid <= lo || mid >= hi) break;
                const double fm = fixed(mid);
                if (fm == 0.0) return mid;
                if ((fm < 0.0) == (flo < 0.0)) {
                    lo = mid;
                    flo = fm;
                } else {
                    hi = mid;
                }
            }
            return 0.5 * (lo + hi);
        }
        prev_x = x;
        prev_f = f;
        have_prev = true;
    }
    return std::nullopt;
}

namespace presets {

inline constexpr double kDefaultTheta = 0.3;
inline constexpr double kDefaultA = 0.5;

/// psi(x) = 2 - 2x; G(U) = U(1 - U).
inline SelectionPsi fisher() { return SelectionPsi({{0.0, 1.0, Polynomial{2.0, -2.0}}}, "fisher"); }

inline SelectionPsi uniform() { return SelectionPsi({{0.0, 1.0, Polynomial{1.0}}}, "uniform"); }

/// psi(x) = (2 - theta)(1 - 2x) + 3x^2; G(U) = U(1-U)(U-theta).
inline SelectionPsi allen_cahn(double theta = kDefaultTheta) {
    if (!(theta > 0.0 && theta < 1.0)) throw InvalidPsi("allen-cahn needs theta in (0,1)");
    return SelectionPsi({{0.0, 1.0, Polynomial{2.0 - theta, -2.0 * (2.0 - theta), 3.0}}},
                        "allen-cahn(" + std::to_string(theta) + ")");
}

/// psi(x) = (2 + a) - (2 + 4a)x + 3a x^2; G(U) = U(1-U)(1 + aU).
inline SelectionPsi cubic(double a = kDefaultA) {
    if (!(a >= 0.0 && a <= 1.0)) throw InvalidPsi("cubic needs a in [0,1]");
    return SelectionPsi({{0.0, 1.0, Polynomial{2.0 + a, -(2.0 + 4.0 * a), 3.0 * a}}},
                        "cubic(" + std::to_string(a) + ")");
}

/// Normalizer of (x - 0.8)(0.3 - x) on [0.3, 0.8]: 6 / 0.5^3.
inline constexpr double kSplitCloudK = 6.0 / (0.5 * 0.5 * 0.5);
static_assert(kSplitCloudK == 48.0);

/// psi(x) = max{0, 48 (x - 0.8)(0.3 - x)}.
inline SelectionPsi split_cloud() {
    // 48 (x - 0.8)(0.3 - x) = 48 (-x^2 + 1.1 x - 0.24)
    const Polynomial bump = kSplitCloudK * Polynomial{-0.24, 1.1, -1.0};
    return SelectionPsi({{0.0, 0.3, Polynomial{}}, {0.3, 0.8, bump}, {0.8, 1.0, Polynomial{}}}, "split-cloud");
}

} // namespace presets

/// Resolves "fisher", "uniform", "split-cloud", "allen-cahn", "allen-cahn(0.2)", "cubic", "cubic(0.7)".
inline SelectionPsi preset(std::string_view name) {
    std::string_view base = name;
    std::optional<double> param;
    if (const auto open = name.find('('); open != std::string_view::npos) {
        const auto close = name.rfind(')');
        if (close == std::string_view::npos || close < open) throw UnknownPreset(std::string(name));
        base = name.substr(0, open);
        const std::string arg(name.substr(open + 1, close - open - 1));
        try {
            std::size_t used = 0;
            param = std::stod(arg, &used);
            if (used != arg.size()) throw UnknownPreset(std::string(name));
        } catch (const std::logic_error&) {
            throw UnknownPreset(std::string(name));
        }
    }
    if (base == "fisher" && !param) return presets::fisher();
    if (base == "uniform" && !param) return presets::uniform();
    if (base == "split-cloud" && !param) return presets::split_cloud();
    if (base == "allen-cahn") return presets::allen_cahn(param.value_or(presets::kDefaultTheta));
    if (base == "cubic") return presets::cubic(param.value_or(presets::kDefaultA));
    throw UnknownPreset(std::string(name));
}

/// One `piece lo hi c0 c1 ...` line per piece, coefficients printed round-trip exact.
inline std::string to_text(const SelectionPsi& psi) {
    std::string out;
    char buf[40];
    for (const auto& p : psi.density().pieces()) {
        out += "piece";
        std::snprintf(buf, sizeof buf, " %.17g", p.lo);
        out += buf;
        std::snprintf(buf, sizeof buf, " %.17g", p.hi);
        out += buf;
        if (p.poly.coeffs().empty()) out += " 0";
        for (double c : p.poly.coeffs()) {
            std::snprintf(buf, sizeof buf, " %.17g", c);
            out += buf;
        }
        out += '\n';
    }
    return out;
}

/// Inverse of to_text; blank lines and `#` comments are ignored.
inline SelectionPsi psi_from_text(std::string_view text, std::string label = "custom") {
    std::vector<SelectionPsi::Piece> pieces;
    std::istringstream in{std::string(text)};
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        std::istringstream ls(line);
        std::string tag;
        if (!(ls >> tag)) continue;
        if (tag != "piece") throw InvalidPsi("line " + std::to_string(lineno) + ": expected 'piece'");
        double lo = 0.0;
        double hi = 0.0;
        if (!(ls >> lo >> hi)) throw InvalidPsi("line " + std::to_string(lineno) + ": missing interval");
        std::vector<double> coeffs;
        for (double c; ls >> c;) coeffs.push_back(c);
        if (!ls.eof()) throw InvalidPsi("line " + std::to_string(lineno) + ": bad coefficient");
        if (coeffs.empty()) throw InvalidPsi("line " + std::to_string(lineno) + ": no coefficients");
        pieces.push_back({lo, hi, Polynomial(std::move(coeffs))});
    }
    return SelectionPsi(std::move(pieces), std::move(label));
}

} // namespace rank_bbm
