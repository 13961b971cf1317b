#pragma once

/// @file particle_engine.hpp
/// @brief Exact simulation of the rank-based branching-selection process and its couplings.
///
/// N particles follow independent Brownian motions. Events arrive as an inhomogeneous
/// Poisson process of intensity N r(t) (sampled by thinning). At an event a uniformly chosen
/// rank I branches and the particle of rank J, drawn from the selection density, is removed:
/// the J-th smallest position is overwritten by the I-th smallest. Between events positions
/// are advanced by exact Gaussian increments, so there is no time discretization.

#include <algorithm>
#include <boost/math/distributions/normal.hpp>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "rank_bbm/errors.hpp"
#include "rank_bbm/rng.hpp"
#include "rank_bbm/selection.hpp"

namespace rank_bbm {

/// A named initial density rho.
struct Density {
    enum class Kind { gaussian, uniform, exponential_tail };

    Kind kind = Kind::uniform;
    double a = -1.0; ///< mean | lower end | x0
    double b = 0.0;  ///< sd   | upper end | decay rate

    static Density gaussian(double mean, double sd) { return {Kind::gaussian, mean, sd}; }
    static Density uniform(double lo, double hi) { return {Kind::uniform, lo, hi}; }
    /// Density rate * exp(-rate (x - x0)) on [x0, inf).
    static Density exponential_tail(double x0, double rate) { return {Kind::exponential_tail, x0, rate}; }

    void validate() const {
        switch (kind) {
        case Kind::gaussian:
            if (!(b > 0.0)) throw InvalidConfig("gaussian density needs sd > 0");
            break;
        case Kind::uniform:
            if (!(b > a)) throw InvalidConfig("uniform density needs hi > lo");
            break;
        case Kind::exponential_tail:
            if (!(b > 0.0)) throw InvalidConfig("exponential-tail density needs rate > 0");
            break;
        }
    }

    [[nodiscard]] double quantile(double q) const {
        switch (kind) {
        case Kind::gaussian: return boost::math::quantile(boost::math::normal_distribution<double>(a, b), q);
        case Kind::uniform: return a + (b - a) * q;
        case Kind::exponential_tail: return a - std::log1p(-q) / b;
        }
        return 0.0;
    }

    /// P(X >= x).
    [[nodiscard]] double tail(double x) const {
        switch (kind) {
        case Kind::gaussian: return 0.5 * std::erfc((x - a) / (b * std::numbers::sqrt2));
        case Kind::uniform: return std::clamp((b - x) / (b - a), 0.0, 1.0);
        case Kind::exponential_tail: return x <= a ? 1.0 : std::exp(-b * (x - a));
        }
        return 0.0;
    }

    /// Interval holding all but `eps` of the mass on each side.
    [[nodiscard]] std::pair<double, double> support(double eps = 1e-9) const { return {quantile(eps), quantile(1.0 - eps)}; }
};

struct InitialCondition {
    enum class Kind { quantile_of, explicit_positions, point_mass };

    Kind kind = Kind::quantile_of;
    Density rho = Density::uniform(-1.0, 0.0);
    std::vector<double> positions;
    double x0 = 0.0;
    /// Draw i.i.d. from rho instead of the deterministic quantile placement x_i = rho^{-1}((i - 1/2)/N).
    bool iid = false;

    static InitialCondition quantiles(Density rho) { return {Kind::quantile_of, rho, {}, 0.0, false}; }
    static InitialCondition point_mass(double x) { return {Kind::point_mass, {}, {}, x, false}; }
    static InitialCondition explicit_positions(std::vector<double> xs) {
        return {Kind::explicit_positions, {}, std::move(xs), 0.0, false};
    }

    [[nodiscard]] std::vector<double> make(std::size_t n, RngStream& rng) const {
        std::vector<double> xs(n);
        switch (kind) {
        case Kind::quantile_of:
            for (std::size_t i = 0; i < n; ++i)
                xs[i] = rho.quantile(iid ? rng.uniform() : (static_cast<double>(i) + 0.5) / static_cast<double>(n));
            break;
        case Kind::point_mass: std::fill(xs.begin(), xs.end(), x0); break;
        case Kind::explicit_positions:
            if (positions.size() != n)
                throw InvalidConfig("explicit initial positions: expected " + std::to_string(n) + ", got " +
                                    std::to_string(positions.size()));
            xs = positions;
            break;
        }
        return xs;
    }

    /// Tail CDF U_0(x) of the limit measure; a point mass gets 1/2 on its atom.
    [[nodiscard]] double tail(double x) const {
        switch (kind) {
        case Kind::quantile_of: return rho.tail(x);
        case Kind::point_mass: return x < x0 ? 1.0 : (x == x0 ? 0.5 : 0.0);
        case Kind::explicit_positions: {
            if (positions.empty()) return 0.0;
            const auto count = std::count_if(positions.begin(), positions.end(), [x](double p) { return p >= x; });
            return static_cast<double>(count) / static_cast<double>(positions.size());
        }
        }
        return 0.0;
    }
};

/// Always remove the leftmost particle (the N-BBM; the psi = delta_0 limit).
struct LeftmostKill {};

using Selection = std::variant<SelectionPsi, LeftmostKill>;

struct EngineConfig {
    std::size_t n = 100;
    Selection selection = presets::fisher();
    BranchingRate rate = BranchingRate::constant(1.0);
    double horizon = 1.0;
    InitialCondition init;
    std::uint64_t seed = 0;
    std::vector<double> snapshot_times;
    bool record_events = false;
    /// Check population and cross-check every rank query against a full sort.
    bool verify = false;

    void validate() const {
        if (n < 2) throw InvalidConfig("n must be >= 2");
        if (!(horizon > 0.0) || !std::isfinite(horizon)) throw InvalidConfig("horizon must be finite and > 0");
        if (!std::is_sorted(snapshot_times.begin(), snapshot_times.end()))
            throw InvalidConfig("snapshot_times must be sorted");
        if (!snapshot_times.empty() && (snapshot_times.front() < 0.0 || snapshot_times.back() > horizon))
            throw InvalidConfig("snapshot_times must lie in [0, horizon]");
        rate.validate_horizon(horizon);
        if (init.kind == InitialCondition::Kind::quantile_of) init.rho.validate();
        if (init.kind == InitialCondition::Kind::explicit_positions && init.positions.size() != n)
            throw InvalidConfig("explicit initial positions must have exactly n entries");
    }
};

/// X^N(t): positions (unsorted between events), clock, event counter and random stream.
struct ParticleState {
    std::vector<double> positions;
    double t = 0.0;
    std::uint64_t event_count = 0;
    RngStream rng;
};

struct EventRecord {
    double t = 0.0;
    std::size_t i = 0; ///< branching rank, 1-based
    std::size_t j = 0; ///< removed rank, 1-based
    std::uint64_t pre_positions_hash = 0;
};

struct Snapshot {
    double t = 0.0;
    std::vector<double> positions;
};

struct SimulationResult {
    std::vector<Snapshot> snapshots;
    std::vector<EventRecord> events;
    std::uint64_t event_count = 0;
    std::uint64_t population_checks = 0;
};

/// FNV-1a over the bytes of the position vector, in slot order.
inline std::uint64_t positions_hash(std::span<const double> xs) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (double x : xs) {
        std::uint64_t bits = 0;
        static_assert(sizeof bits == sizeof x);
        std::memcpy(&bits, &x, sizeof bits);
        for (int k = 0; k < 8; ++k) {
            h ^= (bits >> (8 * k)) & 0xffu;
            h *= 0x100000001b3ull;
        }
    }
    return h;
}

/// First arrival after state.t of a Poisson process with intensity n r(t), by thinning against n r_max.
///
/// Returns +inf when no arrival occurs before `until`. Throws RateBoundExceeded if r(t) > r_max is observed.
inline double next_event_time(ParticleState& state, const BranchingRate& rate, std::size_t n,
                              double until = std::numeric_limits<double>::infinity()) {
    const double r_max = rate.r_max();
    if (r_max <= 0.0 || n == 0) return std::numeric_limits<double>::infinity();
    const double bound = static_cast<double>(n) * r_max;
    const bool homogeneous = rate.kind() == BranchingRate::Kind::constant;
    double t = state.t;
    while (true) {
        t += state.rng.exponential(bound);
        if (t > until) return std::numeric_limits<double>::infinity();
        if (homogeneous) return t;
        const double r = rate(t);
        if (r > r_max * (1.0 + 1e-12))
            throw RateBoundExceeded("r(" + std::to_string(t) + ") = " + std::to_string(r) + " > r_max");
        if (state.rng.uniform() * r_max < r) return t;
    }
}

/// Adds an independent N(0, dt) increment to every position and moves the clock by dt.
inline void advance_brownian(ParticleState& state, double dt) {
    if (dt < 0.0) throw InvalidConfig("advance_brownian needs dt >= 0");
    if (dt == 0.0) return;
    const double sd = std::sqrt(dt);
    for (double& x : state.positions) x += sd * state.rng.normal();
    state.t += dt;
}

/// k-th smallest entry (1-based) by expected-linear selection.
inline double rank_select(std::span<const double> xs, std::size_t k) {
    if (k < 1 || k > xs.size())
        throw RankOutOfRange("rank " + std::to_string(k) + " not in [1, " + std::to_string(xs.size()) + "]");
    std::vector<double> scratch(xs.begin(), xs.end());
    std::nth_element(scratch.begin(), scratch.begin() + static_cast<std::ptrdiff_t>(k - 1), scratch.end());
    return scratch[k - 1];
}

namespace detail {

/// Values of ranks i and j (1-based) using one scratch copy.
inline std::pair<double, double> select_two(std::span<const double> xs, std::size_t i, std::size_t j,
                                            std::vector<double>& scratch) {
    scratch.assign(xs.begin(), xs.end());
    const auto first = scratch.begin();
    const auto at = [&](std::size_t r) { return first + static_cast<std::ptrdiff_t>(r - 1); };
    if (j == 1 && i != 1) {
        // Common N-BBM path: j is the minimum.
        std::nth_element(first, at(i), scratch.end());
        const double vi = *at(i);
        return {vi, *std::min_element(first, at(i))};
    }
    std::nth_element(first, at(i), scratch.end());
    const double vi = *at(i);
    if (j == i) return {vi, vi};
    if (j < i) {
        std::nth_element(first, at(j), at(i));
    } else {
        std::nth_element(at(i) + 1, at(j), scratch.end());
    }
    return {vi, *at(j)};
}

/// Overwrites the slot holding the j-th smallest value with the i-th smallest value.
inline void move_rank(std::vector<double>& positions, std::size_t i, std::size_t j, std::vector<double>& scratch,
                      bool verify) {
    if (i == j) return;
    const auto [vi, vj] = select_two(positions, i, j, scratch);
    if (verify) {
        std::vector<double> sorted(positions);
        std::sort(sorted.begin(), sorted.end());
        if (sorted[i - 1] != vi || sorted[j - 1] != vj)
            throw std::logic_error("rank selection disagrees with full sort");
    }
    const auto slot = std::find(positions.begin(), positions.end(), vj);
    assert(slot != positions.end());
    *slot = vi;
}

inline void check_ranks(std::size_t i, std::size_t j, std::size_t n) {
    if (i < 1 || i > n || j < 1 || j > n)
        throw RankOutOfRange("event ranks (" + std::to_string(i) + ", " + std::to_string(j) + ") not in [1, " +
                             std::to_string(n) + "]");
}

/// Removes the k-th element and duplicates the l-th element of a sorted vector (both 1-based, pre-event ranks).
/// The result is sorted.
inline void delete_and_duplicate(std::vector<double>& sorted, std::size_t k, std::size_t l) {
    if (k == l) return;
    const double dup = sorted[l - 1];
    sorted.erase(sorted.begin() + static_cast<std::ptrdiff_t>(k - 1));
    sorted.insert(std::upper_bound(sorted.begin(), sorted.end(), dup), dup);
}

/// Number of ranks k with lower[k] > upper[offset + k] (both sorted).
inline std::uint64_t dominance_violations(std::span<const double> lower, std::span<const double> upper,
                                          std::size_t offset = 0) {
    std::uint64_t bad = 0;
    for (std::size_t k = 0; k < lower.size(); ++k)
        if (lower[k] > upper[offset + k]) ++bad;
    return bad;
}

} // namespace detail

/// Moves the particle at the j-th smallest position to the i-th smallest position. i == j is a no-op.
inline EventRecord apply_event(ParticleState& state, std::size_t i, std::size_t j) {
    detail::check_ranks(i, j, state.positions.size());
    EventRecord rec{state.t, i, j, positions_hash(state.positions)};
    std::vector<double> scratch;
    detail::move_rank(state.positions, i, j, scratch, false);
    ++state.event_count;
    return rec;
}

/// Full event loop. Snapshots are exact: the state is advanced by a Gaussian sub-step to each
/// requested time. A snapshot at an event time shows the post-event configuration.
inline SimulationResult simulate(const EngineConfig& config) {
    config.validate();
    const std::size_t n = config.n;
    ParticleState state{{}, 0.0, 0, RngStream(config.seed)};
    state.positions = config.init.make(n, state.rng);

    const auto* psi = std::get_if<SelectionPsi>(&config.selection);
    const KillRankSampler sampler = psi ? KillRankSampler(*psi, n) : KillRankSampler();

    SimulationResult result;
    std::vector<double> scratch;
    std::size_t next_snap = 0;
    const auto& snaps = config.snapshot_times;
    const auto emit_before = [&](double t_limit, bool inclusive) {
        while (next_snap < snaps.size() && (snaps[next_snap] < t_limit || (inclusive && snaps[next_snap] == t_limit))) {
            advance_brownian(state, snaps[next_snap] - state.t);
            result.snapshots.push_back({snaps[next_snap], state.positions});
            ++next_snap;
        }
    };

    double next = next_event_time(state, config.rate, n, config.horizon);
    while (next <= config.horizon) {
        emit_before(next, false);
        advance_brownian(state, next - state.t);
        state.t = next; // pin the clock exactly to the event time
        const std::size_t i = state.rng.uniform_rank(n);
        const std::size_t j = psi ? sampler.rank_for(state.rng.uniform()) : 1;
        if (config.record_events) result.events.push_back({state.t, i, j, positions_hash(state.positions)});
        detail::move_rank(state.positions, i, j, scratch, config.verify);
        ++state.event_count;
        if (config.verify) {
            if (state.positions.size() != n) throw std::logic_error("population changed at an event");
            ++result.population_checks;
        }
        next = next_event_time(state, config.rate, n, config.horizon);
    }
    emit_before(config.horizon, true);
    advance_brownian(state, config.horizon - state.t);
    result.event_count = state.event_count;
    return result;
}

/// Two processes on shared randomness, sorted, sampled at the first event at or after each requested time.
struct CoupledTrajectories {
    std::vector<double> times;
    std::vector<std::vector<double>> lower; ///< the dominated process (sorted)
    std::vector<std::vector<double>> upper; ///< the dominating process (sorted)
    std::uint64_t events = 0;
    std::uint64_t checks = 0;
    std::uint64_t violations = 0;
};

namespace detail {

/// Shared driver: both vectors are kept sorted at event times; stream k drives the particle that held
/// rank k at the previous event. `upper_offset` aligns rank k of `lower` with rank upper_offset + k of `upper`.
template <typename OnEvent>
CoupledTrajectories run_coupled(const EngineConfig& config, std::vector<double> lower, std::vector<double> upper,
                                std::size_t upper_offset, RngStream& rng, OnEvent&& on_event) {
    const std::size_t n = upper.size();
    CoupledTrajectories out;
    std::vector<double> increments(n);
    ParticleState clock{{}, 0.0, 0, std::move(rng)};
    const auto& snaps = config.snapshot_times;
    std::size_t next_snap = 0;

    const auto check = [&] {
        out.violations += dominance_violations(lower, upper, upper_offset);
        ++out.checks;
    };
    const auto record = [&](double t) {
        out.times.push_back(t);
        out.lower.push_back(lower);
        out.upper.push_back(upper);
    };

    while (next_snap < snaps.size() && snaps[next_snap] == 0.0) {
        record(0.0);
        ++next_snap;
    }
    check();

    double next = next_event_time(clock, config.rate, n, config.horizon);
    while (next <= config.horizon) {
        const double sd = std::sqrt(next - clock.t);
        for (double& w : increments) w = sd * clock.rng.normal();
        for (std::size_t k = 0; k < n; ++k) upper[k] += increments[k];
        for (std::size_t k = 0; k < lower.size(); ++k) lower[k] += increments[upper_offset + k];
        clock.t = next;
        std::sort(upper.begin(), upper.end());
        std::sort(lower.begin(), lower.end());
        check();
        on_event(clock.rng, lower, upper);
        ++out.events;
        check();
        while (next_snap < snaps.size() && snaps[next_snap] <= clock.t) {
            record(clock.t);
            ++next_snap;
        }
        next = next_event_time(clock, config.rate, n, config.horizon);
    }
    if (next_snap < snaps.size()) {
        const double sd = std::sqrt(config.horizon - clock.t);
        for (double& w : increments) w = sd * clock.rng.normal();
        for (std::size_t k = 0; k < n; ++k) upper[k] += increments[k];
        for (std::size_t k = 0; k < lower.size(); ++k) lower[k] += increments[upper_offset + k];
        std::sort(upper.begin(), upper.end());
        std::sort(lower.begin(), lower.end());
        check();
        while (next_snap < snaps.size()) {
            record(config.horizon);
            ++next_snap;
        }
    }
    return out;
}

} // namespace detail

/// Runs X (selection psi) and the N-BBM X+ on shared event times, branch ranks and rank-indexed
/// Brownian streams; X removes rank J, X+ removes rank 1. lower = X, upper = X+.
inline CoupledTrajectories simulate_coupled_upper(const EngineConfig& config) {
    config.validate();
    const auto* psi = std::get_if<SelectionPsi>(&config.selection);
    if (!psi) throw InvalidConfig("upper coupling needs a selection density, not leftmost-kill mode");
    const std::size_t n = config.n;
    RngStream rng(config.seed);
    std::vector<double> x = config.init.make(n, rng);
    std::sort(x.begin(), x.end());
    const KillRankSampler sampler(*psi, n);
    return detail::run_coupled(config, x, x, 0, rng,
                               [&](RngStream& r, std::vector<double>& lo, std::vector<double>& up) {
                                   const std::size_t i = r.uniform_rank(n);
                                   const std::size_t j = sampler.rank_for(r.uniform());
                                   detail::delete_and_duplicate(lo, j, i);
                                   detail::delete_and_duplicate(up, 1, i);
                               });
}

/// floor(p N), robust to p N landing a hair below an integer.
inline std::size_t coupled_count(double p, std::size_t n) {
    return static_cast<std::size_t>(std::floor(p * static_cast<double>(n) + 1e-9));
}

/// Runs X (selection psi, r = 1) and an floor(pN)-particle N-BBM X- whose rank-k particle shares the
/// Brownian stream of rank N - floor(pN) + k of X. X- branches only when I >= N - floor(pN) + 1.
/// lower = X-, upper = X; violations count ranks with X-_k > X_{N - floor(pN) + k}.
inline CoupledTrajectories simulate_coupled_lower(const EngineConfig& config, double p) {
    config.validate();
    const auto* psi = std::get_if<SelectionPsi>(&config.selection);
    if (!psi) throw InvalidConfig("lower coupling needs a selection density, not leftmost-kill mode");
    if (!(p > 0.0 && p < 1.0)) throw InvalidConfig("lower coupling needs p in (0,1)");
    if (!config.rate.is_constant(1.0)) throw AssumptionViolation("lower coupling needs r == 1");
    if (psi->sup_on(1.0 - p, 1.0) > 1e-12)
        throw AssumptionViolation("psi is positive somewhere on [1-p, 1] for p = " + std::to_string(p));
    const std::size_t n = config.n;
    const std::size_t m = coupled_count(p, n);
    if (m < 1) throw InvalidConfig("floor(pN) must be >= 1");
    const std::size_t offset = n - m;

    RngStream rng(config.seed);
    std::vector<double> x = config.init.make(n, rng);
    std::sort(x.begin(), x.end());
    std::vector<double> minus(x.begin() + static_cast<std::ptrdiff_t>(offset), x.end());
    const KillRankSampler sampler(*psi, n);
    return detail::run_coupled(config, std::move(minus), std::move(x), offset, rng,
                               [&](RngStream& r, std::vector<double>& lo, std::vector<double>& up) {
                                   const std::size_t i = r.uniform_rank(n);
                                   const std::size_t j = sampler.rank_for(r.uniform());
                                   if (j > offset) throw std::logic_error("removed one of the coupled top particles");
                                   detail::delete_and_duplicate(up, j, i);
                                   if (i > offset) detail::delete_and_duplicate(lo, 1, i - offset);
                               });
}

struct ColouredBbmResult {
    std::vector<double> times;
    std::vector<std::vector<double>> blue;  ///< sorted blue positions
    std::vector<std::vector<double>> total; ///< sorted positions of every particle
    std::vector<std::size_t> population;
    std::uint64_t blue_events = 0;
    std::uint64_t subset_violations = 0;
};

inline constexpr std::size_t kColouredPopulationCap = 1'000'000;

/// max_x [#{blue >= x} - #{all >= x}] > 0 ? Counts sample points where the blue tail count exceeds the total.
inline std::uint64_t tail_count_violations(std::span<const double> blue_sorted, std::span<const double> all_sorted) {
    std::uint64_t bad = 0;
    const auto tail = [](std::span<const double> s, double x) {
        return static_cast<std::size_t>(s.end() - std::lower_bound(s.begin(), s.end(), x));
    };
    for (double x : all_sorted)
        if (tail(blue_sorted, x) > tail(all_sorted, x)) ++bad;
    for (double x : blue_sorted)
        if (tail(blue_sorted, x) > tail(all_sorted, x)) ++bad;
    return bad;
}

/// Full BBM at rate r(t) in which exactly N particles are blue: at each blue branching the J-th
/// leftmost blue (J drawn from the selection density) turns red, and the offspring of a blue is blue.
/// The blue sub-population is a copy in law of the rank-based process.
inline ColouredBbmResult simulate_coloured_bbm(const EngineConfig& config,
                                               std::size_t population_cap = kColouredPopulationCap) {
    config.validate();
    const auto* psi = std::get_if<SelectionPsi>(&config.selection);
    if (!psi) throw InvalidConfig("coloured BBM needs a selection density");
    const std::size_t n = config.n;
    RngStream rng(config.seed);

    std::vector<double> pos = config.init.make(n, rng);
    std::vector<double> last_t(n, 0.0);
    std::vector<char> is_blue(n, 1);
    std::vector<std::size_t> blues(n);
    for (std::size_t k = 0; k < n; ++k) blues[k] = k;
    const KillRankSampler sampler(*psi, n);
    const double r_max = config.rate.r_max();

    const auto bring = [&](std::size_t idx, double t) {
        if (t > last_t[idx]) {
            pos[idx] += std::sqrt(t - last_t[idx]) * rng.normal();
            last_t[idx] = t;
        }
    };

    ColouredBbmResult out;
    const auto record = [&](double t) {
        for (std::size_t k = 0; k < pos.size(); ++k) bring(k, t);
        std::vector<double> all(pos);
        std::vector<double> blue;
        blue.reserve(n);
        for (std::size_t b : blues) blue.push_back(pos[b]);
        std::sort(all.begin(), all.end());
        std::sort(blue.begin(), blue.end());
        out.subset_violations += tail_count_violations(blue, all);
        out.times.push_back(t);
        out.population.push_back(pos.size());
        out.blue.push_back(std::move(blue));
        out.total.push_back(std::move(all));
    };

    const auto& snaps = config.snapshot_times;
    std::size_t next_snap = 0;
    std::vector<double> scratch;
    double t = 0.0;
    while (true) {
        if (r_max <= 0.0) break;
        const double proposal = t + rng.exponential(static_cast<double>(pos.size()) * r_max);
        while (next_snap < snaps.size() && snaps[next_snap] < proposal) record(snaps[next_snap++]);
        if (proposal > config.horizon) break;
        t = proposal;
        const double r = config.rate(t);
        if (r > r_max * (1.0 + 1e-12)) throw RateBoundExceeded("r(t) above r_max in coloured BBM");
        if (config.rate.kind() != BranchingRate::Kind::constant && rng.uniform() * r_max >= r) continue;

        const std::size_t parent = static_cast<std::size_t>(rng.uniform_rank(pos.size()) - 1);
        if (is_blue[parent]) {
            ++out.blue_events;
            scratch.resize(n);
            for (std::size_t k = 0; k < n; ++k) {
                bring(blues[k], t);
                scratch[k] = pos[blues[k]];
            }
            const std::size_t j = sampler.rank_for(rng.uniform());
            std::nth_element(scratch.begin(), scratch.begin() + static_cast<std::ptrdiff_t>(j - 1), scratch.end());
            const double vj = scratch[j - 1];
            const auto victim = std::find_if(blues.begin(), blues.end(), [&](std::size_t b) { return pos[b] == vj; });
            is_blue[*victim] = 0;
            const double birth = pos[parent];
            *victim = pos.size(); // the offspring takes the freed blue slot
            pos.push_back(birth);
            last_t.push_back(t);
            is_blue.push_back(1);
        } else {
            bring(parent, t);
            pos.push_back(pos[parent]);
            last_t.push_back(t);
            is_blue.push_back(0);
        }
        if (pos.size() > population_cap)
            throw PopulationCap("coloured BBM exceeded " + std::to_string(population_cap) + " particles");
    }
    while (next_snap < snaps.size()) record(snaps[next_snap++]);
    return out;
}

} // namespace rank_bbm
