#pragma once

/// @file polynomial.hpp
/// @brief Dense real polynomials in the monomial basis and piecewise polynomials on an interval.
///
/// These are the exact algebraic backbone of the selection kernel: selection densities,
/// their cumulatives and the reaction terms are all represented this way so that
/// integration, differentiation and composition with x -> 1 - x never introduce
/// quadrature error.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <limits>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

namespace rank_bbm {

/// p(x) = c[0] + c[1] x + ... + c[d] x^d.
class Polynomial {
public:
    Polynomial() = default;
    Polynomial(std::initializer_list<double> coeffs) : c_(coeffs) { trim(); }
    explicit Polynomial(std::vector<double> coeffs) : c_(std::move(coeffs)) { trim(); }

    static Polynomial constant(double v) { return Polynomial({v}); }

    [[nodiscard]] const std::vector<double>& coeffs() const noexcept { return c_; }

    /// Degree of the trimmed polynomial; the zero polynomial reports 0.
    [[nodiscard]] std::size_t degree() const noexcept { return c_.empty() ? 0 : c_.size() - 1; }

    [[nodiscard]] bool is_zero(double tol = 0.0) const noexcept {
        return std::all_of(c_.begin(), c_.end(), [tol](double v) { return std::abs(v) <= tol; });
    }

    [[nodiscard]] double coeff(std::size_t k) const noexcept { return k < c_.size() ? c_[k] : 0.0; }

    [[nodiscard]] double operator()(double x) const noexcept {
        double acc = 0.0;
        for (auto it = c_.rbegin(); it != c_.rend(); ++it) acc = acc * x + *it;
        return acc;
    }

    [[nodiscard]] Polynomial derivative() const {
        if (c_.size() <= 1) return {};
        std::vector<double> d(c_.size() - 1);
        for (std::size_t k = 1; k < c_.size(); ++k) d[k - 1] = static_cast<double>(k) * c_[k];
        return Polynomial(std::move(d));
    }

    /// Antiderivative with zero constant term.
    [[nodiscard]] Polynomial antiderivative() const {
        std::vector<double> a(c_.size() + 1, 0.0);
        for (std::size_t k = 0; k < c_.size(); ++k) a[k + 1] = c_[k] / static_cast<double>(k + 1);
        return Polynomial(std::move(a));
    }

    /// q(x) = p(shift + scale * x).
    [[nodiscard]] Polynomial compose_affine(double shift, double scale) const {
        // Horner in the polynomial ring: q = (...((c_d) * L + c_{d-1}) * L + ...) with L = shift + scale x.
        Polynomial acc;
        const Polynomial lin({shift, scale});
        for (auto it = c_.rbegin(); it != c_.rend(); ++it) acc = acc * lin + Polynomial::constant(*it);
        return acc;
    }

    friend bool operator==(const Polynomial&, const Polynomial&) = default;

    [[nodiscard]] double max_abs_coeff() const noexcept {
        double m = 0.0;
        for (double v : c_) m = std::max(m, std::abs(v));
        return m;
    }

    friend Polynomial operator+(const Polynomial& a, const Polynomial& b) {
        std::vector<double> r(std::max(a.c_.size(), b.c_.size()), 0.0);
        for (std::size_t k = 0; k < r.size(); ++k) r[k] = a.coeff(k) + b.coeff(k);
        return Polynomial(std::move(r));
    }
    friend Polynomial operator-(const Polynomial& a, const Polynomial& b) { return a + (-1.0) * b; }
    friend Polynomial operator*(double s, const Polynomial& p) {
        std::vector<double> r = p.c_;
        for (double& v : r) v *= s;
        return Polynomial(std::move(r));
    }
    friend Polynomial operator*(const Polynomial& a, const Polynomial& b) {
        if (a.c_.empty() || b.c_.empty()) return {};
        std::vector<double> r(a.c_.size() + b.c_.size() - 1, 0.0);
        for (std::size_t i = 0; i < a.c_.size(); ++i)
            for (std::size_t j = 0; j < b.c_.size(); ++j) r[i + j] += a.c_[i] * b.c_[j];
        return Polynomial(std::move(r));
    }

private:
    void trim() {
        while (!c_.empty() && c_.back() == 0.0) c_.pop_back();
    }

    std::vector<double> c_;
};

namespace detail {

inline double bisect_root(const Polynomial& p, double lo, double hi) {
    double flo = p(lo);
    for (int it = 0; it < 200 && hi - lo > 0.0; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (mid <= lo || mid >= hi) break;
        const double fm = p(mid);
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

} // namespace detail

/// Real roots of p in [a, b], sorted, including tangential (even-multiplicity) roots.
///
/// Works by recursive isolation: the roots of p' split [a, b] into monotone segments,
/// each of which holds at most one root. A critical point c is reported as a root when
/// |p(c)| is at rounding level relative to the coefficients.
inline std::vector<double> real_roots(const Polynomial& p, double a, double b) {
    std::vector<double> roots;
    if (p.is_zero() || a > b) return roots;
    const double scale = std::max(1.0, p.max_abs_coeff());
    const double touch_tol = 64.0 * std::numeric_limits<double>::epsilon() * scale;
    if (p.degree() == 0) return roots;
    if (p.degree() == 1) {
        const double r = -p.coeff(0) / p.coeff(1);
        if (r >= a && r <= b) roots.push_back(r);
        return roots;
    }
    std::vector<double> pts{a};
    for (double c : real_roots(p.derivative(), a, b))
        if (c > a && c < b) pts.push_back(c);
    pts.push_back(b);

    for (std::size_t k = 0; k + 1 < pts.size(); ++k) {
        const double l = pts[k];
        const double r = pts[k + 1];
        const double fl = p(l);
        const double fr = p(r);
        if (std::abs(fl) <= touch_tol) {
            roots.push_back(l);
            continue;
        }
        if (std::abs(fr) <= touch_tol) continue; // picked up as the left end of the next segment
        if ((fl < 0.0) != (fr < 0.0)) roots.push_back(detail::bisect_root(p, l, r));
    }
    if (std::abs(p(b)) <= touch_tol) roots.push_back(b);

    std::sort(roots.begin(), roots.end());
    std::vector<double> out;
    for (double r : roots)
        if (out.empty() || r - out.back() > 1e-12) out.push_back(r);
    return out;
}

/// Polynomial pieces on consecutive intervals [lo_k, hi_k] tiling a closed interval.
///
/// Coefficients are global (in x, not in x - lo_k). Evaluation at an interior breakpoint
/// uses the piece to its right; the right end of the domain uses the last piece.
class PiecewisePolynomial {
public:
    struct Piece {
        double lo = 0.0;
        double hi = 0.0;
        Polynomial poly;
    };

    PiecewisePolynomial() = default;

    /// Pieces must be ordered and contiguous; gaps or overlaps above 1e-12 throw std::invalid_argument.
    explicit PiecewisePolynomial(std::vector<Piece> pieces) : pieces_(std::move(pieces)) {
        if (pieces_.empty()) throw std::invalid_argument("piecewise polynomial needs at least one piece");
        for (std::size_t k = 0; k < pieces_.size(); ++k) {
            if (!(pieces_[k].hi > pieces_[k].lo))
                throw std::invalid_argument("piece has empty or reversed interval");
            if (k > 0) {
                if (std::abs(pieces_[k].lo - pieces_[k - 1].hi) > 1e-12)
                    throw std::invalid_argument("pieces leave a gap or overlap");
                pieces_[k].lo = pieces_[k - 1].hi;
            }
        }
    }

    [[nodiscard]] std::span<const Piece> pieces() const noexcept { return pieces_; }
    [[nodiscard]] double lo() const noexcept { return pieces_.front().lo; }
    [[nodiscard]] double hi() const noexcept { return pieces_.back().hi; }

    [[nodiscard]] std::size_t piece_index(double x) const noexcept {
        // First piece whose hi exceeds x; clamps to the ends.
        std::size_t lo = 0;
        std::size_t hi = pieces_.size() - 1;
        while (lo < hi) {
            const std::size_t mid = (lo + hi) / 2;
            if (x < pieces_[mid].hi)
                hi = mid;
            else
                lo = mid + 1;
        }
        return lo;
    }

    [[nodiscard]] double operator()(double x) const noexcept { return pieces_[piece_index(x)].poly(x); }

    /// Left limit f(x-); equals f(x) away from breakpoints.
    [[nodiscard]] double left_limit(double x) const noexcept {
        std::size_t k = piece_index(x);
        if (k > 0 && x <= pieces_[k].lo) --k;
        return pieces_[k].poly(x);
    }

    [[nodiscard]] PiecewisePolynomial derivative() const {
        std::vector<Piece> d;
        d.reserve(pieces_.size());
        for (const auto& p : pieces_) d.push_back({p.lo, p.hi, p.poly.derivative()});
        return PiecewisePolynomial(std::move(d));
    }

    /// Values at the extrema candidates of every piece: endpoints, both one-sided, plus interior critical points.
    [[nodiscard]] std::vector<double> extremum_candidates() const {
        std::vector<double> xs;
        for (const auto& p : pieces_) {
            xs.push_back(p.lo);
            xs.push_back(p.hi);
            for (double c : real_roots(p.poly.derivative(), p.lo, p.hi)) xs.push_back(c);
        }
        return xs;
    }

    /// Exact-ish min and max over the domain: piece endpoints and critical points, plus a uniform grid.
    [[nodiscard]] std::pair<double, double> range(std::size_t grid = 10000) const {
        double mn = std::numeric_limits<double>::infinity();
        double mx = -mn;
        auto visit = [&](double v) {
            mn = std::min(mn, v);
            mx = std::max(mx, v);
        };
        for (const auto& p : pieces_) {
            visit(p.poly(p.lo));
            visit(p.poly(p.hi));
            for (double c : real_roots(p.poly.derivative(), p.lo, p.hi)) visit(p.poly(c));
        }
        for (std::size_t i = 0; i <= grid; ++i)
            visit((*this)(lo() + (hi() - lo()) * static_cast<double>(i) / static_cast<double>(grid)));
        return {mn, mx};
    }

    /// Supremum over the sub-interval [a, b] using the same candidate set as range().
    [[nodiscard]] double sup_on(double a, double b, std::size_t grid = 10000) const {
        double mx = -std::numeric_limits<double>::infinity();
        for (const auto& p : pieces_) {
            const double l = std::max(a, p.lo);
            const double r = std::min(b, p.hi);
            if (l > r) continue;
            // A lone right endpoint belongs to the next piece.
            if (l == r && r == p.hi && &p != &pieces_.back()) continue;
            mx = std::max({mx, p.poly(l), p.poly(r)});
            for (double c : real_roots(p.poly.derivative(), l, r)) mx = std::max(mx, p.poly(c));
        }
        for (std::size_t i = 0; i <= grid; ++i) {
            const double x = a + (b - a) * static_cast<double>(i) / static_cast<double>(grid);
            mx = std::max(mx, (*this)(x));
        }
        return mx;
    }

private:
    std::vector<Piece> pieces_;
};

} // namespace rank_bbm
