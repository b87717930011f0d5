#include "mfne/particle_sim.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace mfne;

namespace {

ParticleState state1d(Vec X, Vec Y) {
    ParticleState s;
    s.n = X.size();
    s.X = std::move(X);
    s.Y = std::move(Y);
    return s;
}

SimConfig gibbs_config(std::size_t n, std::uint64_t seed) {
    SimConfig c;
    c.n = n;
    c.T = 20.0;
    c.h = 1e-2;
    c.beta = 10.0;
    c.init_x = {InitSpec::Kind::gaussian, {0.5}, 0.2};
    c.init_y = {InitSpec::Kind::gaussian, {-0.5}, 0.2};
    c.record_stride = 100;
    c.seed = seed;
    return c;
}

} // namespace

TEST(Drift, BilinearTwoParticles) {
    const Game g = make_bilinear();
    for (auto mode : {DriftMode::generic, DriftMode::separable}) {
        const auto [Bx, By] = drift(g, state1d({0.0, 2.0}, {1.0, 3.0}), mode);
        EXPECT_DOUBLE_EQ(Bx[0], -2.0);
        EXPECT_DOUBLE_EQ(Bx[1], -2.0);
        EXPECT_DOUBLE_EQ(By[0], 1.0);
        EXPECT_DOUBLE_EQ(By[1], 1.0);
    }
}

TEST(Drift, QuadraticBilinearSingleParticle) {
    const auto [Bx, By] = drift(make_quadratic_bilinear(0.5), state1d({1.0}, {2.0}), DriftMode::generic);
    EXPECT_DOUBLE_EQ(Bx[0], -3.0);
    EXPECT_DOUBLE_EQ(By[0], -1.0);
}

TEST(Drift, ZeroAtStationaryPoint) {
    const double half_pi = std::acos(0.0);
    const std::vector<std::pair<Game, double>> cases = {
        {make_bilinear(), 0.0}, {make_quadratic_bilinear(0.5), 0.0}, {make_sin_cos(), half_pi}};
    for (const auto& [g, y0] : cases) {
        const auto [Bx, By] = drift(g, state1d(Vec(5, 0.0), Vec(5, y0)), DriftMode::generic);
        for (double v : Bx) EXPECT_NEAR(v, 0.0, 1e-15);
        for (double v : By) EXPECT_NEAR(v, 0.0, 1e-15);
    }
}

TEST(Drift, SeparableFastPathMatchesPairwiseSum) {
    for (const Game& g : {make_bilinear(2), make_quadratic_bilinear(0.3, 2), make_sin_cos(2, 3)}) {
        SimConfig c;
        c.n = 17;
        c.init_x = {InitSpec::Kind::gaussian, {}, 1.0};
        c.init_y = {InitSpec::Kind::uniform_box, {}, 1.0};
        c.seed = 11;
        const ParticleState s = initial_state(c, g);
        const auto [gx, gy] = drift(g, s, DriftMode::generic);
        const auto [fx, fy] = drift(g, s, DriftMode::separable);
        for (std::size_t i = 0; i < gx.size(); ++i) EXPECT_NEAR(gx[i], fx[i], 1e-13) << g.name;
        for (std::size_t i = 0; i < gy.size(); ++i) EXPECT_NEAR(gy[i], fy[i], 1e-13) << g.name;
    }
}

TEST(EmStep, HandEulerStep) {
    const Vec noise(2, 0.0);
    const ParticleState s = em_step(state1d({1.0}, {2.0}), make_quadratic_bilinear(0.5), 0.01, 10.0, noise);
    EXPECT_NEAR(s.X[0], 0.97, 1e-15);
    EXPECT_NEAR(s.Y[0], 1.99, 1e-15);
    EXPECT_DOUBLE_EQ(s.t, 0.01);
}

TEST(EmStep, RejectsDegenerateStep) {
    const Vec noise(2, 0.0);
    EXPECT_THROW(em_step(state1d({1.0}, {2.0}), make_bilinear(), 0.0, 1.0, noise), UsageError);
    EXPECT_THROW(em_step(state1d({1.0}, {2.0}), make_bilinear(), 0.1, 0.0, noise), UsageError);
    EXPECT_THROW(em_step(state1d({1.0}, {2.0}), make_bilinear(), 0.1, 1.0, Vec(3, 0.0)), UsageError);
}

TEST(EmStep, NoiselessFixedPoint) {
    const ParticleState s0 = state1d(Vec(4, 0.0), Vec(4, 0.0));
    const ParticleState s1 = em_step(s0, make_bilinear(), 0.1, INFINITY, Vec(8, 1.0));
    EXPECT_EQ(s1.X, s0.X);
    EXPECT_EQ(s1.Y, s0.Y);
}

TEST(EmStep, SmallStepConvergesToState) {
    const ParticleState s0 = state1d({0.3, -0.2}, {1.0, 0.4});
    double prev = 1e9;
    for (double h : {1e-2, 1e-4, 1e-6}) {
        const ParticleState s1 = em_step(s0, make_quadratic_bilinear(0.5), h, 1.0, Vec(4, 0.0));
        double d = 0.0;
        for (std::size_t i = 0; i < 2; ++i) d = std::max({d, std::abs(s1.X[i] - s0.X[i]), std::abs(s1.Y[i] - s0.Y[i])});
        EXPECT_LT(d, prev);
        prev = d;
    }
    EXPECT_LT(prev, 1e-5);
}

TEST(EmStep, BlowupReportsParticleAndStep) {
    Game g = make_bilinear();
    g.separable.reset();
    g.grad_x = [](CSpan x, CSpan, MSpan gx) { gx[0] = x[0] > 0.5 ? INFINITY : 0.0; };
    try {
        em_step(state1d({0.0, 1.0}, {0.0, 0.0}), g, 0.1, 1.0, Vec(4, 0.0), 7);
        FAIL() << "expected blowup";
    } catch (const NumericalBlowup& e) {
        EXPECT_EQ(e.particle, 1u);
        EXPECT_EQ(e.step, 7u);
    }
}

TEST(Simulate, NoiselessMeansFollowOde) {
    const double a = 0.5;
    SimConfig c;
    c.n = 1;
    c.T = 2.0;
    c.h = 1e-3;
    c.beta = INFINITY;
    c.init_x = {InitSpec::Kind::point, {1.0}, 0.0};
    c.init_y = {InitSpec::Kind::point, {2.0}, 0.0};
    c.record_stride = 100;
    const TrajectoryRecording rec = simulate(c, make_quadratic_bilinear(a));
    for (std::size_t k = 0; k < rec.times.size(); ++k) {
        const auto m = oracle::mean_ode(a, {1.0, 2.0}, rec.times[k], 4000);
        EXPECT_NEAR(rec.states[k].X[0], m[0], 2.0 * c.h) << rec.times[k];
        EXPECT_NEAR(rec.states[k].Y[0], m[1], 2.0 * c.h) << rec.times[k];
    }
}

TEST(Simulate, NoiselessMeansObeyLinearRecursionExactly) {
    const double a = 0.5, h = 0.01;
    SimConfig c;
    c.n = 7;
    c.T = 0.5;
    c.h = h;
    c.beta = INFINITY;
    c.init_x = {InitSpec::Kind::gaussian, {0.3}, 0.5};
    c.init_y = {InitSpec::Kind::gaussian, {-0.1}, 0.5};
    c.seed = 4;
    const TrajectoryRecording rec = simulate(c, make_quadratic_bilinear(a));
    for (std::size_t k = 0; k + 1 < rec.states.size(); ++k) {
        const double mx = EmpiricalMeasure::uniform(1, rec.states[k].X).mean()[0];
        const double my = EmpiricalMeasure::uniform(1, rec.states[k].Y).mean()[0];
        const double mx1 = EmpiricalMeasure::uniform(1, rec.states[k + 1].X).mean()[0];
        const double my1 = EmpiricalMeasure::uniform(1, rec.states[k + 1].Y).mean()[0];
        EXPECT_NEAR(mx1, mx + h * (-2 * a * mx - my), 1e-14);
        EXPECT_NEAR(my1, my + h * (mx - 2 * a * my), 1e-14);
    }
}

TEST(Simulate, RecordingLayout) {
    SimConfig c;
    c.n = 3;
    c.T = 1.0;
    c.h = 0.1;
    c.record_stride = 2;
    const TrajectoryRecording rec = simulate(c, make_bilinear());
    ASSERT_EQ(rec.times.size(), 6u);
    EXPECT_EQ(rec.times[0], 0.0);
    for (std::size_t k = 1; k < rec.times.size(); ++k) EXPECT_NEAR(rec.times[k] - rec.times[k - 1], 0.2, 1e-12);
    for (const auto& s : rec.states) EXPECT_EQ(s.n, 3u);
}

TEST(Simulate, InvalidConfigRejected) {
    SimConfig c;
    c.h = 0.5;
    c.T = 0.1;
    EXPECT_THROW(simulate(c, make_bilinear()), ConfigError);
    c = SimConfig{};
    c.record_stride = 0;
    EXPECT_THROW(simulate(c, make_bilinear()), ConfigError);
}

TEST(Simulate, BitIdenticalAcrossWorkerCounts) {
    for (auto mode : {DriftMode::generic, DriftMode::separable}) {
        SimConfig c;
        c.n = 64;
        c.T = 0.5;
        c.h = 0.01;
        c.beta = 2.0;
        c.seed = 99;
        c.drift_mode = mode;
        c.min_parallel_work = 0;
        c.workers = 1;
        const auto ref = simulate(c, make_sin_cos());
        for (unsigned w : {2u, 3u, 8u}) {
            c.workers = w;
            const auto other = simulate(c, make_sin_cos());
            ASSERT_EQ(ref.states.size(), other.states.size());
            for (std::size_t k = 0; k < ref.states.size(); ++k) EXPECT_TRUE(ref.states[k] == other.states[k]);
        }
    }
}

TEST(Simulate, ExchangeableUnderKeyPermutation) {
    SimConfig c;
    c.n = 12;
    c.T = 0.3;
    c.h = 0.01;
    c.beta = 3.0;
    c.seed = 5;
    c.record_stride = 10;
    c.init_x = {InitSpec::Kind::uniform_box, {}, 1.0};
    const Game g = make_sin_cos();
    std::vector<std::uint64_t> keys(c.n), perm(c.n);
    std::iota(keys.begin(), keys.end(), 0);
    for (std::size_t i = 0; i < c.n; ++i) perm[i] = (i * 5 + 3) % c.n;
    std::vector<std::uint64_t> permuted(c.n);
    for (std::size_t i = 0; i < c.n; ++i) permuted[i] = keys[perm[i]];
    SimulateOptions o1, o2;
    o1.particle_keys = &keys;
    o2.particle_keys = &permuted;
    const auto a = simulate(c, g, o1), b = simulate(c, g, o2);
    for (std::size_t k = 0; k < a.states.size(); ++k) {
        for (std::size_t i = 0; i < c.n; ++i) {
            EXPECT_NEAR(b.states[k].X[i], a.states[k].X[perm[i]], 1e-12);
            EXPECT_NEAR(b.states[k].Y[i], a.states[k].Y[perm[i]], 1e-12);
        }
        const auto [ma, na] = empirical_marginals(a.states[k]);
        const auto [mb, nb] = empirical_marginals(b.states[k]);
        EXPECT_NEAR(w1_1d(ma, mb), 0.0, 1e-12);
        EXPECT_NEAR(w1_1d(na, nb), 0.0, 1e-12);
    }
}

TEST(Simulate, BoundedGameDriftNeverExceedsC) {
    const Game g = make_sin_cos(1, 1, 3.0);
    const double C = regularity_constants(g, 101).C;
    SimConfig c;
    c.n = 50;
    c.T = 2.0;
    c.h = 0.01;
    c.beta = 1.0;
    c.init_x = {InitSpec::Kind::gaussian, {}, 4.0};
    c.init_y = {InitSpec::Kind::gaussian, {}, 4.0};
    std::size_t checked = 0;
    SimulateOptions opt;
    opt.observer = [&](const ParticleState&, const Vec& Bx, const Vec& By, std::size_t) {
        for (std::size_t i = 0; i < Bx.size(); ++i) EXPECT_LE(std::hypot(Bx[i], By[i]), C + 1e-12);
        ++checked;
    };
    simulate(c, g, opt);
    EXPECT_EQ(checked, c.steps());
}

TEST(Simulate, MeanInExpectationFollowsRecursion) {
    // Average of 200 seeds of the noisy mean matches the deterministic recursion.
    const double a = 0.5;
    double avg = 0.0;
    const int seeds = 200;
    SimConfig c;
    c.n = 10;
    c.T = 1.0;
    c.h = 0.01;
    c.beta = 5.0;
    c.init_x = {InitSpec::Kind::point, {1.0}, 0.0};
    c.init_y = {InitSpec::Kind::point, {0.0}, 0.0};
    c.record_stride = 100;
    for (int s = 0; s < seeds; ++s) {
        c.seed = static_cast<std::uint64_t>(s);
        avg += EmpiricalMeasure::uniform(1, simulate(c, make_quadratic_bilinear(a)).states.back().X).mean()[0];
    }
    avg /= seeds;
    double mx = 1.0, my = 0.0;
    for (int k = 0; k < 100; ++k) {
        const double nx = mx + c.h * (-2 * a * mx - my), ny = my + c.h * (mx - 2 * a * my);
        mx = nx;
        my = ny;
    }
    // sd of the mean of one run is about sqrt(1 / (beta n)) = 0.14; over 200 seeds 0.01.
    EXPECT_NEAR(avg, mx, 0.04);
}

TEST(Simulate, GibbsStationaryVariance) {
    const TrajectoryRecording rec = simulate(gibbs_config(1000, 1), make_quadratic_bilinear(0.5));
    const auto [mu, nu] = empirical_marginals(rec.states.back());
    EXPECT_NEAR(mu.variance()[0], 0.1, 0.02);
    EXPECT_NEAR(nu.variance()[0], 0.1, 0.02);
}

TEST(EmpiricalMarginals, Definitions) {
    const auto [mu, nu] = empirical_marginals(state1d({0.0, 2.0}, {5.0, -1.0}));
    EXPECT_EQ(mu.points, (Vec{0.0, 2.0}));
    EXPECT_EQ(mu.weights, (Vec{0.5, 0.5}));
    const auto [m1, n1] = empirical_marginals(state1d({0.7}, {0.1}));
    EXPECT_EQ(m1.size(), 1u);
    EXPECT_EQ(n1.weights[0], 1.0);
}

TEST(EmpiricalMarginals, JointProjectsToMarginals) {
    ParticleState s;
    s.n = 3;
    s.dx = 2;
    s.dy = 1;
    s.X = {0, 1, 2, 3, 4, 5};
    s.Y = {7, 8, 9};
    const EmpiricalMeasure joint = joint_empirical(s);
    const auto [mu, nu] = empirical_marginals(s);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_EQ(joint.point(i)[0], mu.point(i)[0]);
        EXPECT_EQ(joint.point(i)[1], mu.point(i)[1]);
        EXPECT_EQ(joint.point(i)[2], nu.point(i)[0]);
        EXPECT_EQ(joint.weights[i], mu.weights[i]);
    }
}
