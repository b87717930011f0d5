#include "mfne/measures.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace mfne;

namespace {

EmpiricalMeasure cloud1d(Vec pts) { return EmpiricalMeasure::uniform(1, std::move(pts)); }

EmpiricalMeasure random_cloud(std::size_t m, std::size_t dim, double shift, unsigned seed) {
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> n(shift, 1.0);
    Vec p(m * dim);
    for (double& v : p) v = n(gen);
    return EmpiricalMeasure::uniform(dim, p);
}

} // namespace

TEST(EmpiricalMeasure, ValidationAndMoments) {
    EXPECT_THROW(EmpiricalMeasure::uniform(2, {1.0, 2.0, 3.0}), UsageError);
    EmpiricalMeasure m = cloud1d({0.0, 2.0});
    EXPECT_NO_THROW(m.validate());
    EXPECT_DOUBLE_EQ(m.mean()[0], 1.0);
    EXPECT_DOUBLE_EQ(m.variance()[0], 1.0);
    m.weights = {0.5, 0.6};
    EXPECT_THROW(m.validate(), UsageError);
}

TEST(GridMeasure, UniformAndGaussianAreNormalised) {
    const GridMeasure u = GridMeasure::uniform(box_axes(2, 1.0, 10));
    EXPECT_NEAR(u.total_mass(), 1.0, 1e-12);
    EXPECT_NEAR(u.density[0], 0.25, 1e-12);
    const GridMeasure g = GridMeasure::gaussian(box_axes(1, 3.0, 300), {0.5}, 0.2);
    EXPECT_NO_THROW(g.validate());
    EXPECT_NEAR(g.mean()[0], 0.5, 1e-6);
    EXPECT_NEAR(g.variance()[0], 0.2, 1e-3);
}

TEST(GridMeasure, ValidateRejectsBadMass) {
    GridMeasure g = GridMeasure::uniform(box_axes(1, 1.0, 4));
    g.density[0] = -0.1;
    EXPECT_THROW(g.validate(), UsageError);
    g = GridMeasure::uniform(box_axes(1, 1.0, 4));
    g.density[0] += 1e-6;
    EXPECT_THROW(g.validate(), UsageError);
    g.density.pop_back();
    EXPECT_THROW(g.validate(), UsageError);
}

TEST(GridMeasure, ProductMarginalsRoundTrip) {
    const GridMeasure a = GridMeasure::gaussian(box_axes(1, 2.0, 16), {0.3}, 0.5);
    const GridMeasure b = GridMeasure::gaussian(box_axes(1, 2.0, 12), {-0.4}, 0.3);
    const GridMeasure p = product(a, b);
    EXPECT_NEAR(p.total_mass(), 1.0, 1e-12);
    const GridMeasure ma = p.marginal({0}), mb = p.marginal({1});
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(ma.density[i], a.density[i], 1e-12);
    for (std::size_t i = 0; i < b.size(); ++i) EXPECT_NEAR(mb.density[i], b.density[i], 1e-12);
}

TEST(MeasurePath, RequiresUniformSpacing) {
    const GridMeasure u = GridMeasure::uniform(box_axes(1, 1.0, 4));
    MeasurePath p{{0.0, 0.1, 0.2}, {u, u, u}};
    EXPECT_NO_THROW(p.validate());
    p.times = {0.0, 0.1, 0.3};
    EXPECT_THROW(p.validate(), UsageError);
}

TEST(W1, TwoDiracs) {
    EXPECT_DOUBLE_EQ(w1_1d(EmpiricalMeasure::dirac({1.5}), EmpiricalMeasure::dirac({-2.0})), 3.5);
}

TEST(W1, SortedQuantileCoupling) {
    EXPECT_NEAR(w1_1d(cloud1d({0.0, 1.0}), cloud1d({0.0, 2.0})), 0.5, 1e-15);
}

TEST(W1, IdenticalMeasuresGiveZero) {
    const auto m = random_cloud(50, 1, 0.0, 1);
    EXPECT_EQ(w1_1d(m, m), 0.0);
    const GridMeasure g = GridMeasure::gaussian(box_axes(1, 2.0, 40), {0.0}, 0.3);
    EXPECT_NEAR(w1_1d(g, g), 0.0, 1e-15);
}

TEST(W1, MatchesSortedOracle) {
    for (unsigned s = 0; s < 10; ++s) {
        const auto a = random_cloud(37, 1, 0.0, s), b = random_cloud(37, 1, 0.7, 100 + s);
        EXPECT_NEAR(w1_1d(a, b), oracle::w1_sorted(a.points, b.points), 1e-12);
    }
}

TEST(W1, UniformCellVersusDirac) {
    // Uniform on [0,1] vs delta at 0: int_0^1 u du = 1/2. W2^2 = 1/3.
    GridMeasure g;
    g.axes = {Axis{0.0, 1.0, 1}};
    g.density = {1.0};
    const auto d = EmpiricalMeasure::dirac({0.0});
    EXPECT_NEAR(w1_1d(g, d), 0.5, 1e-15);
    EXPECT_NEAR(wp_1d(to_distribution1d(g), to_distribution1d(d), 2), std::sqrt(1.0 / 3.0), 1e-15);
}

TEST(W1, GridApproachesGaussianShift) {
    const GridMeasure a = GridMeasure::gaussian(box_axes(1, 4.0, 400), {0.0}, 0.25);
    const GridMeasure b = GridMeasure::gaussian(box_axes(1, 4.0, 400), {0.3}, 0.25);
    EXPECT_NEAR(w1_1d(a, b), 0.3, 1e-4);
}

TEST(W1, RejectsHigherDimensions) {
    const auto m = random_cloud(4, 2, 0.0, 1);
    try {
        w1_1d(m, m);
        FAIL();
    } catch (const UsageError& e) {
        EXPECT_NE(std::string(e.what()).find("sliced_wp"), std::string::npos);
    }
}

TEST(W1, SymmetricNonnegativeAndTriangle) {
    for (unsigned s = 0; s < 50; ++s) {
        const auto a = random_cloud(11, 1, 0.0, s);
        const auto b = random_cloud(7, 1, 0.5, 1000 + s);
        const GridMeasure c = GridMeasure::gaussian(box_axes(1, 3.0, 30), {-0.2 + 0.01 * s}, 0.4);
        const double ab = w1_1d(a, b), bc = w1_1d(b, c), ac = w1_1d(a, c);
        EXPECT_GE(ab, 0.0);
        EXPECT_NEAR(ab, w1_1d(b, a), 1e-12);
        EXPECT_NEAR(ac, w1_1d(c, a), 1e-12);
        EXPECT_LE(ac, ab + bc + 1e-12);
        EXPECT_LE(ab, ac + bc + 1e-12);
    }
}

TEST(Quantiles, DiracsAndUniform) {
    const Vec q = quantiles(cloud1d({1.0, 3.0}), {0.25, 0.75, 1.0});
    EXPECT_EQ(q, (Vec{1.0, 3.0, 3.0}));
    const Vec u = quantiles(GridMeasure::uniform(box_axes(1, 1.0, 8)), {0.0, 0.5, 0.75});
    EXPECT_NEAR(u[0], -1.0, 1e-14);
    EXPECT_NEAR(u[1], 0.0, 1e-14);
    EXPECT_NEAR(u[2], 0.5, 1e-14);
}

TEST(SlicedWp, IdenticalCloudsGiveZero) {
    const auto m = random_cloud(30, 3, 0.0, 2);
    EXPECT_EQ(sliced_wp(m, m, 1, 20, 7), 0.0);
    EXPECT_EQ(sliced_wp(m, m, 2, 20, 7), 0.0);
}

TEST(SlicedWp, TranslationIsMeanProjectedShift) {
    const auto m = random_cloud(25, 2, 0.0, 3);
    auto shifted = m;
    const Vec c{0.6, -0.8};
    for (std::size_t i = 0; i < m.size(); ++i)
        for (std::size_t k = 0; k < 2; ++k) shifted.points[i * 2 + k] += c[k];
    const std::size_t n_proj = 64;
    double expected = 0.0;
    for (std::size_t k = 0; k < n_proj; ++k) {
        const Vec dir = detail::random_direction(42, rng::Stream::projection, k, 2);
        expected += std::abs(dir[0] * c[0] + dir[1] * c[1]);
    }
    expected /= n_proj;
    const double v = sliced_wp(m, shifted, 1, n_proj, 42);
    EXPECT_NEAR(v, expected, 1e-12);
    EXPECT_LE(v, 1.0 + 1e-12);
    EXPECT_EQ(v, sliced_wp(m, shifted, 1, n_proj, 42));
    // 2-D average of |cos| is 2/pi.
    EXPECT_NEAR(sliced_wp(m, shifted, 1, 4000, 1), 2.0 / 3.141592653589793, 0.02);
}

TEST(SlicedWp, OneDimensionReducesToExact) {
    const auto a = random_cloud(20, 1, 0.0, 4), b = random_cloud(15, 1, 1.0, 5);
    EXPECT_EQ(sliced_wp(a, b, 1, 10, 3), w1_1d(a, b));
}

TEST(SlicedWp, BadArguments) {
    const auto a = random_cloud(5, 2, 0.0, 4), b = random_cloud(5, 1, 0.0, 4);
    EXPECT_THROW(sliced_wp(a, b, 1, 4, 0), UsageError);
    EXPECT_THROW(sliced_wp(a, a, 1, 0, 0), UsageError);
}

TEST(Dbl, IdenticalMeasuresGiveZero) {
    const auto m = random_cloud(30, 2, 0.0, 6);
    EXPECT_EQ(dbl_lower_bound(m, m, 64, 1), 0.0);
}

TEST(Dbl, TwoDiracsNearClosedForm) {
    const double v = dbl_lower_bound(EmpiricalMeasure::dirac({0.0}), EmpiricalMeasure::dirac({2.0}), 64, 1);
    EXPECT_LE(v, oracle::dbl_two_diracs(2.0) + 1e-12);
    EXPECT_GE(v, 0.9);
}

TEST(Dbl, BoundedByTwoAndByW1) {
    for (unsigned s = 0; s < 30; ++s) {
        const auto a = random_cloud(9, 1, 0.0, s), b = random_cloud(13, 1, 0.2 * s, 300 + s);
        const double v = dbl_lower_bound(a, b, 48, s);
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 2.0);
        EXPECT_LE(v, w1_1d(a, b) + 1e-12);
        EXPECT_NEAR(v, dbl_lower_bound(b, a, 48, s), 1e-12);
        for (double dist : {0.01, 0.3, 1.0, 5.0, 50.0}) {
            const double dd = dbl_lower_bound(EmpiricalMeasure::dirac({s * 0.1}), EmpiricalMeasure::dirac({s * 0.1 + dist}), 48, s);
            EXPECT_LE(dd, oracle::dbl_two_diracs(dist) + 1e-12);
            EXPECT_LE(dd, std::min(2.0, dist) + 1e-12);
        }
    }
}

TEST(Kde, SinglePointAtCentreIsSymmetricBump) {
    const auto axes = box_axes(1, 2.0, 41);
    const KdeResult r = kde_lift(EmpiricalMeasure::dirac({0.0}), axes, 0.3);
    EXPECT_NEAR(r.measure.total_mass(), 1.0, 1e-12);
    EXPECT_NEAR(r.clipped_fraction, 0.0, 1e-10);
    for (std::size_t i = 0; i < 41; ++i) EXPECT_NEAR(r.measure.density[i], r.measure.density[40 - i], 1e-12);
    EXPECT_EQ(std::max_element(r.measure.density.begin(), r.measure.density.end()) - r.measure.density.begin(), 20);
}

TEST(Kde, ReflectionSymmetricPair) {
    const auto axes = box_axes(2, 1.5, 24);
    const auto e = EmpiricalMeasure::uniform(2, {-0.4, 0.25, 0.4, -0.25});
    const GridMeasure g = kde_lift(e, axes, 0.2).measure;
    for (std::size_t i = 0; i < 24; ++i)
        for (std::size_t j = 0; j < 24; ++j) EXPECT_NEAR(g.density[i * 24 + j], g.density[(23 - i) * 24 + (23 - j)], 1e-12);
}

TEST(Kde, GaussianVarianceIdentity) {
    const auto e = random_cloud(10000, 1, 0.0, 77);
    const double h = default_bandwidth(e);
    const KdeResult r = kde_lift(e, box_axes(1, 6.0, 240));
    EXPECT_NEAR(r.measure.variance()[0], 1.0 + h * h, 0.1 * (1.0 + h * h));
    EXPECT_NEAR(r.measure.total_mass(), 1.0, 1e-9);
}

TEST(Kde, ClippedMassIsReported) {
    const KdeResult r = kde_lift(EmpiricalMeasure::dirac({1.0}), box_axes(1, 1.0, 20), 0.1);
    EXPECT_NEAR(r.clipped_fraction, 0.5, 1e-9);
    EXPECT_NEAR(r.measure.total_mass(), 1.0, 1e-12);
}

TEST(Kde, AllMassOutsideIsDegenerate) {
    EXPECT_THROW(kde_lift(EmpiricalMeasure::dirac({50.0}), box_axes(1, 1.0, 20), 0.1), DegenerateInput);
    EXPECT_THROW(kde_lift(EmpiricalMeasure::dirac({0.0}), box_axes(1, 1.0, 20), 0.0), UsageError);
}

TEST(Kde, PermutationInvariant) {
    const auto e = random_cloud(200, 2, 0.0, 8);
    auto p = e;
    std::mt19937_64 gen(1);
    std::vector<std::size_t> perm(e.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), gen);
    for (std::size_t i = 0; i < e.size(); ++i)
        for (std::size_t k = 0; k < 2; ++k) p.points[i * 2 + k] = e.points[perm[i] * 2 + k];
    const auto axes = box_axes(2, 3.0, 20);
    EXPECT_EQ(kde_lift(e, axes, 0.3).measure.density, kde_lift(p, axes, 0.3).measure.density);
}
