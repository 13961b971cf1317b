#include <catch_amalgamated.hpp>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rank_bbm/particle_engine.hpp"

using namespace rank_bbm;
using Catch::Matchers::WithinAbs;

namespace {

std::size_t count_events(const BranchingRate& rate, std::size_t n, double horizon, std::uint64_t seed) {
    ParticleState s{{}, 0.0, 0, RngStream(seed)};
    std::size_t count = 0;
    for (double t = next_event_time(s, rate, n, horizon); std::isfinite(t); t = next_event_time(s, rate, n, horizon)) {
        s.t = t;
        ++count;
    }
    return count;
}

// r = 1 on [0,1], down to 0 by 1.5, 0 on [1.5, 2.5], back up to 1 at 3.
BranchingRate gapped_rate() {
    return BranchingRate::piecewise(PiecewisePolynomial({{0.0, 1.0, Polynomial{1.0}},
                                                         {1.0, 1.5, Polynomial{3.0, -2.0}},
                                                         {1.5, 2.5, Polynomial{}},
                                                         {2.5, 3.0, Polynomial{-5.0, 2.0}}}),
                                    1.0);
}

// psi = n on [0, 1/n]: every kill lands on rank 1.
SelectionPsi rank_one_psi(std::size_t n) {
    const double w = 1.0 / static_cast<double>(n);
    return SelectionPsi({{0.0, w, Polynomial{static_cast<double>(n)}}, {w, 1.0, Polynomial{}}}, "rank-one");
}

EngineConfig base_config(std::size_t n, double horizon, std::uint64_t seed) {
    EngineConfig c;
    c.n = n;
    c.horizon = horizon;
    c.seed = seed;
    c.init = InitialCondition::quantiles(Density::uniform(-1.0, 0.0));
    return c;
}

} // namespace

TEST_CASE("rank_select") {
    CHECK(rank_select(std::vector<double>{3, 1, 2}, 2) == 2.0);
    CHECK(rank_select(std::vector<double>{5, 5, 1}, 3) == 5.0);
    CHECK(rank_select(std::vector<double>{5, 5, 1}, 1) == 1.0);
    CHECK_THROWS_AS(rank_select(std::vector<double>{1, 2}, 0), RankOutOfRange);
    CHECK_THROWS_AS(rank_select(std::vector<double>{1, 2}, 3), RankOutOfRange);

    RngStream rng(7);
    std::vector<double> xs(1001);
    for (double& x : xs) x = rng.normal();
    std::vector<double> sorted(xs);
    std::sort(sorted.begin(), sorted.end());
    CHECK(rank_select(xs, 501) == sorted[500]);
    for (std::size_t k : {1u, 2u, 77u, 1000u, 1001u}) CHECK(rank_select(xs, k) == sorted[k - 1]);
}

TEST_CASE("apply_event") {
    ParticleState s{{0.0, 1.0, 2.0}, 0.0, 0, RngStream(1)};
    apply_event(s, 3, 1);
    std::vector<double> m(s.positions);
    std::sort(m.begin(), m.end());
    CHECK(m == std::vector<double>{1.0, 2.0, 2.0});
    CHECK(s.positions.size() == 3);

    ParticleState u{{0.4, -2.0, 7.0, 1.5}, 0.0, 0, RngStream(1)};
    const auto before = u.positions;
    const EventRecord rec = apply_event(u, 2, 2);
    CHECK(u.positions == before);
    CHECK(rec.i == 2);
    CHECK(rec.j == 2);
    CHECK(rec.pre_positions_hash == positions_hash(before));

    CHECK_THROWS_AS(apply_event(u, 0, 1), RankOutOfRange);
    CHECK_THROWS_AS(apply_event(u, 1, 5), RankOutOfRange);
}

TEST_CASE("advance_brownian") {
    ParticleState s{std::vector<double>(100000, 0.0), 0.0, 0, RngStream(11)};
    advance_brownian(s, 0.0);
    CHECK(std::all_of(s.positions.begin(), s.positions.end(), [](double x) { return x == 0.0; }));
    advance_brownian(s, 2.0);
    CHECK(s.t == 2.0);
    const double mean = std::accumulate(s.positions.begin(), s.positions.end(), 0.0) / 1e5;
    double var = 0.0;
    for (double x : s.positions) var += (x - mean) * (x - mean);
    var /= 1e5 - 1.0;
    CHECK_THAT(var, WithinAbs(2.0, 0.05));
    CHECK_THROWS_AS(advance_brownian(s, -1.0), InvalidConfig);
}

TEST_CASE("point mass with no branching is a Gaussian cloud") {
    EngineConfig c = base_config(100000, 1.0, 3);
    c.rate = BranchingRate::constant(0.0);
    c.init = InitialCondition::point_mass(0.0);
    c.snapshot_times = {1.0};
    const auto res = simulate(c);
    CHECK(res.event_count == 0);
    REQUIRE(res.snapshots.size() == 1);
    const auto& xs = res.snapshots[0].positions;
    const double tail = static_cast<double>(std::count_if(xs.begin(), xs.end(), [](double x) { return x >= 1.0; })) / 1e5;
    const double phi = boost::math::cdf(boost::math::normal_distribution<double>(), -1.0);
    CHECK_THAT(phi, WithinAbs(0.15865525, 1e-8));
    CHECK_THAT(tail, WithinAbs(phi, 0.005));
}

TEST_CASE("event clock") {
    SECTION("constant rate: mean count n * t") {
        double total = 0.0;
        for (std::uint64_t s = 0; s < 200; ++s) total += static_cast<double>(count_events(BranchingRate::constant(1.0), 1000, 1.0, s));
        CHECK_THAT(total / 200.0, WithinAbs(1000.0, 3.0 * std::sqrt(1000.0 / 200.0)));
    }
    SECTION("sinusoidal rate: thinning gives n * integral") {
        const double expected = 500.0 * 2.0 * std::numbers::pi;
        double total = 0.0;
        for (std::uint64_t s = 0; s < 200; ++s)
            total += static_cast<double>(count_events(BranchingRate::sinusoidal(1.0, 0.5), 500, 2.0 * std::numbers::pi, s));
        CHECK_THAT(total / 200.0, WithinAbs(expected, 3.0 * std::sqrt(expected / 200.0)));
    }
    SECTION("zero-rate interval has no events") {
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            EngineConfig c = base_config(200, 3.0, seed);
            c.rate = gapped_rate();
            c.record_events = true;
            const auto res = simulate(c);
            CHECK(res.events.size() > 100);
            CHECK(std::none_of(res.events.begin(), res.events.end(),
                               [](const EventRecord& e) { return e.t >= 1.5 && e.t <= 2.5; }));
        }
    }
    SECTION("zero rate never fires") {
        ParticleState s{{}, 0.0, 0, RngStream(1)};
        CHECK(std::isinf(next_event_time(s, BranchingRate::constant(0.0), 10)));
    }
}

TEST_CASE("simulate: conservation, snapshots and modes") {
    EngineConfig c = base_config(64, 3.0, 5);
    c.selection = presets::uniform();
    c.snapshot_times = {0.0, 0.5, 1.0, 2.0, 3.0};
    c.record_events = true;
    c.verify = true;
    const auto res = simulate(c);
    REQUIRE(res.snapshots.size() == 5);
    for (std::size_t k = 0; k < 5; ++k) {
        CHECK(res.snapshots[k].t == c.snapshot_times[k]);
        CHECK(res.snapshots[k].positions.size() == 64);
    }
    CHECK(res.population_checks == res.event_count);
    CHECK(res.events.size() == res.event_count);
    for (std::size_t k = 0; k < 64; ++k)
        CHECK_THAT(res.snapshots[0].positions[k], WithinAbs(-1.0 + (k + 0.5) / 64.0, 1e-15));
    for (const auto& e : res.events) {
        CHECK(e.i >= 1);
        CHECK(e.i <= 64);
        CHECK(e.j >= 1);
        CHECK(e.j <= 64);
    }
    CHECK(std::is_sorted(res.events.begin(), res.events.end(),
                         [](const EventRecord& a, const EventRecord& b) { return a.t < b.t; }));

    SECTION("N-BBM mode always removes rank 1") {
        EngineConfig b = c;
        b.selection = LeftmostKill{};
        const auto nb = simulate(b);
        REQUIRE_FALSE(nb.events.empty());
        CHECK(std::all_of(nb.events.begin(), nb.events.end(), [](const EventRecord& e) { return e.j == 1; }));
    }
    SECTION("determinism") {
        const auto again = simulate(c);
        REQUIRE(again.snapshots.size() == res.snapshots.size());
        for (std::size_t k = 0; k < res.snapshots.size(); ++k)
            CHECK(again.snapshots[k].positions == res.snapshots[k].positions);
        REQUIRE(again.events.size() == res.events.size());
        for (std::size_t k = 0; k < res.events.size(); ++k) {
            CHECK(again.events[k].t == res.events[k].t);
            CHECK(again.events[k].i == res.events[k].i);
            CHECK(again.events[k].j == res.events[k].j);
            CHECK(again.events[k].pre_positions_hash == res.events[k].pre_positions_hash);
        }
        EngineConfig other = c;
        other.seed = 6;
        CHECK(simulate(other).snapshots.back().positions != res.snapshots.back().positions);
    }
    SECTION("config validation") {
        EngineConfig bad = c;
        bad.n = 1;
        CHECK_THROWS_AS(simulate(bad), InvalidConfig);
        bad = c;
        bad.snapshot_times = {1.0, 0.5};
        CHECK_THROWS_AS(simulate(bad), InvalidConfig);
        bad = c;
        bad.snapshot_times = {4.0};
        CHECK_THROWS_AS(simulate(bad), InvalidConfig);
        bad = c;
        bad.horizon = 0.0;
        CHECK_THROWS_AS(simulate(bad), InvalidConfig);
        bad = c;
        bad.init = InitialCondition::explicit_positions({1.0, 2.0});
        CHECK_THROWS_AS(simulate(bad), InvalidConfig);
        bad = c;
        bad.rate = gapped_rate();
        bad.horizon = 4.0;
        bad.snapshot_times = {};
        CHECK_THROWS_AS(simulate(bad), InvalidRate);
    }
}

TEST_CASE("verified run keeps the population over many events") {
    EngineConfig c = base_config(10, 10100.0, 17);
    c.verify = true;
    const auto res = simulate(c);
    CHECK(res.event_count > 100000);
    CHECK(res.population_checks == res.event_count);
}

TEST_CASE("kill-rank frequencies match rank_kill_probs") {
    EngineConfig c = base_config(10, 10100.0, 23);
    c.record_events = true;
    const auto res = simulate(c);
    REQUIRE(res.events.size() >= 100000);
    std::vector<double> counts(10, 0.0);
    for (const auto& e : res.events) counts[e.j - 1] += 1.0;
    const auto probs = rank_kill_probs(presets::fisher(), 10);
    const double total = static_cast<double>(res.events.size());
    double chi2 = 0.0;
    for (std::size_t k = 0; k < 10; ++k) {
        const double expected = probs[k] * total;
        chi2 += (counts[k] - expected) * (counts[k] - expected) / expected;
    }
    const double p = boost::math::cdf(boost::math::complement(boost::math::chi_squared_distribution<double>(9.0), chi2));
    CHECK(p > 0.001);

    // Branch ranks are uniform.
    std::vector<double> branch(10, 0.0);
    for (const auto& e : res.events) branch[e.i - 1] += 1.0;
    double chi2b = 0.0;
    for (double b : branch) chi2b += (b - total / 10.0) * (b - total / 10.0) / (total / 10.0);
    CHECK(boost::math::cdf(boost::math::complement(boost::math::chi_squared_distribution<double>(9.0), chi2b)) > 0.001);
}

TEST_CASE("upper coupling") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        EngineConfig c = base_config(50, 5.0, seed);
        c.selection = presets::split_cloud();
        c.snapshot_times = {0.0, 1.0, 2.5, 5.0};
        const auto tr = simulate_coupled_upper(c);
        CHECK(tr.events > 0);
        CHECK(tr.checks >= 2 * tr.events + 1);
        CHECK(tr.violations == 0);
        REQUIRE(tr.times.size() == 4);
        for (std::size_t k = 0; k < tr.times.size(); ++k) {
            CHECK(std::is_sorted(tr.lower[k].begin(), tr.lower[k].end()));
            CHECK(tr.lower[k].size() == 50);
            for (std::size_t r = 0; r < 50; ++r) CHECK(tr.lower[k][r] <= tr.upper[k][r]);
        }
    }
    SECTION("rank-one selection is the N-BBM pathwise") {
        EngineConfig c = base_config(40, 3.0, 9);
        c.selection = rank_one_psi(40);
        c.snapshot_times = {0.5, 1.0, 2.0, 3.0};
        const auto tr = simulate_coupled_upper(c);
        REQUIRE(tr.times.size() == 4);
        for (std::size_t k = 0; k < 4; ++k) CHECK(tr.lower[k] == tr.upper[k]);
    }
    SECTION("needs a density") {
        EngineConfig c = base_config(40, 1.0, 9);
        c.selection = LeftmostKill{};
        CHECK_THROWS_AS(simulate_coupled_upper(c), InvalidConfig);
    }
}

TEST_CASE("lower coupling") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        EngineConfig c = base_config(100, 5.0, seed);
        c.selection = presets::split_cloud();
        c.snapshot_times = {5.0};
        const auto tr = simulate_coupled_lower(c, 0.2);
        CHECK(tr.events > 0);
        CHECK(tr.violations == 0);
        REQUIRE(tr.times.size() == 1);
        CHECK(tr.lower[0].size() == 20);
        for (std::size_t k = 0; k < 20; ++k) CHECK(tr.lower[0][k] <= tr.upper[0][80 + k]);
    }
    SECTION("a single coupled particle stays below the maximum") {
        EngineConfig c = base_config(100, 5.0, 4);
        c.selection = presets::split_cloud();
        c.snapshot_times = {1.0, 2.0, 3.0, 4.0, 5.0};
        CHECK(coupled_count(0.015, 100) == 1);
        CHECK(coupled_count(0.2, 100) == 20);
        const auto tr = simulate_coupled_lower(c, 0.015);
        CHECK(tr.violations == 0);
        for (std::size_t k = 0; k < tr.times.size(); ++k) {
            REQUIRE(tr.lower[k].size() == 1);
            CHECK(tr.lower[k][0] <= tr.upper[k].back());
        }
    }
    SECTION("assumption checks") {
        EngineConfig c = base_config(100, 1.0, 1);
        CHECK_THROWS_AS(simulate_coupled_lower(c, 0.2), AssumptionViolation); // fisher
        c.selection = presets::split_cloud();
        CHECK_THROWS_AS(simulate_coupled_lower(c, 0.3), AssumptionViolation); // psi > 0 on [0.7, 0.8]
        CHECK_THROWS_AS(simulate_coupled_lower(c, 0.0), InvalidConfig);
        CHECK_THROWS_AS(simulate_coupled_lower(c, 0.005), InvalidConfig); // floor(pN) = 0
        c.rate = BranchingRate::constant(2.0);
        CHECK_THROWS_AS(simulate_coupled_lower(c, 0.2), AssumptionViolation);
    }
}

TEST_CASE("coloured BBM") {
    EngineConfig c = base_config(50, 1.5, 8);
    c.snapshot_times = {0.0, 0.5, 1.0, 1.5};
    const auto res = simulate_coloured_bbm(c);
    REQUIRE(res.times.size() == 4);
    CHECK(res.population.front() == 50);
    for (std::size_t k = 0; k < 4; ++k) {
        CHECK(res.blue[k].size() == 50);
        CHECK(res.total[k].size() == res.population[k]);
        if (k > 0) CHECK(res.population[k] >= res.population[k - 1]);
    }
    CHECK(res.population.back() > 50);
    CHECK(res.subset_violations == 0);
    CHECK(res.blue_events > 0);

    SECTION("population cap") {
        EngineConfig big = base_config(50, 5.0, 8);
        CHECK_THROWS_AS(simulate_coloured_bbm(big, 200), PopulationCap);
    }
    SECTION("tail counts") {
        const std::vector<double> all{0.0, 1.0, 2.0, 3.0};
        CHECK(tail_count_violations(std::vector<double>{1.0, 3.0}, all) == 0);
        CHECK(tail_count_violations(std::vector<double>{3.0, 3.0}, all) > 0);
    }
}
