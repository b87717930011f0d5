#pragma once

// Nikaido-Isoda error
//   NI(mu_x, mu_y) = sup_{mu_y'} L(mu_x, mu_y') - inf_{mu_x'} L(mu_x', mu_y).
// L is linear in each argument, so both extrema are attained at Dirac
// measures and reduce to optimising an opponent-averaged loss over the box.

#include "mfne/error.hpp"
#include "mfne/game.hpp"
#include "mfne/meanfield.hpp"
#include "mfne/measures.hpp"
#include "mfne/parallel.hpp"
#include "mfne/particle_sim.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

namespace mfne {

struct SearchConfig {
    std::size_t grid_per_dim = 33; ///< coarse scan, endpoints included
    std::size_t refine_iters = 3;  ///< coordinate golden-section sweeps
    std::size_t golden_iters = 60;

    void validate() const {
        if (grid_per_dim < 3) throw ConfigError("search.grid_per_dim must be >= 3");
    }
};

struct BestResponse {
    Vec point;
    double value = 0.0;
};

namespace detail {

/// Maximises f over [-R, R]^d: lexicographic grid scan (ties keep the first,
/// i.e. lexicographically smallest, point) then coordinate golden-section
/// refinement inside one grid cell that only ever accepts improvements.
inline BestResponse maximise_on_box(const std::function<double(CSpan)>& f, std::size_t d, double R,
                                    const SearchConfig& sc) {
    sc.validate();
    const std::size_t m = sc.grid_per_dim;
    const double spacing = 2.0 * R / static_cast<double>(m - 1);
    std::size_t total = 1;
    for (std::size_t k = 0; k < d; ++k) total *= m;
    BestResponse best;
    best.value = -std::numeric_limits<double>::infinity();
    Vec p(d);
    for (std::size_t flat = 0; flat < total; ++flat) {
        std::size_t rem = flat;
        for (std::size_t k = d; k-- > 0;) {
            p[k] = -R + spacing * static_cast<double>(rem % m);
            rem /= m;
        }
        const double v = f(p);
        if (v > best.value) {
            best.value = v;
            best.point = p;
        }
    }
    constexpr double inv_phi = 0.6180339887498949;
    double half = spacing;
    for (std::size_t it = 0; it < sc.refine_iters; ++it) {
        for (std::size_t k = 0; k < d; ++k) {
            Vec q = best.point;
            auto fk = [&](double t) {
                q[k] = t;
                return f(q);
            };
            double a = std::max(-R, best.point[k] - half), b = std::min(R, best.point[k] + half);
            double c = b - inv_phi * (b - a), e = a + inv_phi * (b - a);
            double fc = fk(c), fe = fk(e);
            for (std::size_t g = 0; g < sc.golden_iters; ++g) {
                if (fc > fe) {
                    b = e;
                    e = c;
                    fe = fc;
                    c = b - inv_phi * (b - a);
                    fc = fk(c);
                } else {
                    a = c;
                    c = e;
                    fc = fe;
                    e = a + inv_phi * (b - a);
                    fe = fk(e);
                }
            }
            const double t = 0.5 * (a + b);
            const double v = fk(t);
            if (v > best.value) {
                best.value = v;
                best.point[k] = t;
            }
        }
        half *= 0.5;
    }
    return best;
}

} // namespace detail

/// argmax_y int l(x, y) dmu_x(x) over the box.
template <class M>
BestResponse best_response_y(const Game& g, const M& mu_x_in, const SearchConfig& sc) {
    const EmpiricalMeasure mu_x = detail::as_atoms(mu_x_in);
    if (mu_x.dim != g.dx) throw UsageError("best_response_y: measure dimension does not match dx");
    auto f = [&](CSpan y) {
        double s = 0.0;
        for (std::size_t i = 0; i < mu_x.size(); ++i)
            if (mu_x.weights[i] != 0.0) s += mu_x.weights[i] * g.loss(mu_x.point(i), y);
        return s;
    };
    return detail::maximise_on_box(f, g.dy, g.box_radius, sc);
}

/// argmin_x int l(x, y) dmu_y(y) over the box.
template <class M>
BestResponse best_response_x(const Game& g, const M& mu_y_in, const SearchConfig& sc) {
    const EmpiricalMeasure mu_y = detail::as_atoms(mu_y_in);
    if (mu_y.dim != g.dy) throw UsageError("best_response_x: measure dimension does not match dy");
    auto f = [&](CSpan x) {
        double s = 0.0;
        for (std::size_t j = 0; j < mu_y.size(); ++j)
            if (mu_y.weights[j] != 0.0) s += mu_y.weights[j] * g.loss(x, mu_y.point(j));
        return -s;
    };
    BestResponse r = detail::maximise_on_box(f, g.dx, g.box_radius, sc);
    r.value = -r.value;
    return r;
}

struct NiResult {
    double value = 0.0;
    double sup_value = 0.0; ///< sup over y-strategies of L(mu_x, .)
    double inf_value = 0.0; ///< inf over x-strategies of L(., mu_y)
    Vec y_star;
    Vec x_star;
};

/// Optimiser tolerance below zero before the result is reported as a failure.
inline constexpr double ni_negative_tolerance = 1e-8;

template <class MX, class MY>
NiResult ni_error(const Game& g, const MX& mu_x, const MY& mu_y, const SearchConfig& sc) {
    const BestResponse by = best_response_y(g, mu_x, sc);
    const BestResponse bx = best_response_x(g, mu_y, sc);
    NiResult r{by.value - bx.value, by.value, bx.value, by.point, bx.point};
    if (r.value < -ni_negative_tolerance)
        throw OptimizerFailure("NI error " + std::to_string(r.value) + " is negative beyond tolerance");
    return r;
}

struct NiSeries {
    Vec times;
    Vec values;
    std::vector<Vec> y_star;
    std::vector<Vec> x_star;
};

namespace detail {

template <class Eval>
NiSeries ni_series(const Vec& times, Eval&& eval) {
    NiSeries s;
    s.times = times;
    s.values.resize(times.size());
    s.y_star.resize(times.size());
    s.x_star.resize(times.size());
    parallel_for(times.size(), worker_count_from_env(), [&](std::size_t b, std::size_t e) {
        for (std::size_t k = b; k < e; ++k) {
            const NiResult r = eval(k);
            s.values[k] = r.value;
            s.y_star[k] = r.y_star;
            s.x_star[k] = r.x_star;
        }
    });
    return s;
}

} // namespace detail

/// NI at every recorded time of a particle run; integrals are exact particle averages.
inline NiSeries ni_trajectory(const Game& g, const TrajectoryRecording& rec, const SearchConfig& sc) {
    return detail::ni_series(rec.times, [&](std::size_t k) {
        const auto [mx, my] = empirical_marginals(rec.states[k]);
        return ni_error(g, mx, my, sc);
    });
}

/// NI along a mean-field path, midpoint quadrature.
inline NiSeries ni_trajectory(const Game& g, const MeanFieldPath& path, const SearchConfig& sc) {
    return detail::ni_series(path.times, [&](std::size_t k) { return ni_error(g, path.mu_x[k], path.mu_y[k], sc); });
}

/// NI along a joint 2-D path through its marginals.
inline NiSeries ni_trajectory(const Game& g, const MeasurePath& joint, const SearchConfig& sc) {
    return detail::ni_series(joint.times, [&](std::size_t k) {
        return ni_error(g, joint.measures[k].marginal({0}), joint.measures[k].marginal({1}), sc);
    });
}

// ------------------------------------------------------------ Lipschitz check

struct MeasurePair {
    EmpiricalMeasure x;
    EmpiricalMeasure y;
};

/// Upper bound on W_1: exact in one dimension, otherwise the cost of the
/// index coupling of two equal-size uniform clouds.
inline double w1_upper_bound(const EmpiricalMeasure& a, const EmpiricalMeasure& b) {
    if (a.dim != b.dim) throw UsageError("w1_upper_bound: dimension mismatch");
    if (a.dim == 1) return w1_1d(a, b);
    if (a.size() != b.size()) throw UsageError("w1_upper_bound: d > 1 needs equal-size clouds");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (std::abs(a.weights[i] - b.weights[i]) > 1e-15)
            throw UsageError("w1_upper_bound: d > 1 needs matching weights");
        double d2 = 0.0;
        for (std::size_t k = 0; k < a.dim; ++k) d2 += (a.point(i)[k] - b.point(i)[k]) * (a.point(i)[k] - b.point(i)[k]);
        s += a.weights[i] * std::sqrt(d2);
    }
    return s;
}

struct LipschitzEntry {
    double lhs = 0.0; ///< |NI(p1) - NI(p2)|
    double rhs = 0.0; ///< C_tilde * (W1(x1, x2) + W1(y1, y2))
    double margin() const { return rhs - lhs; }
};

struct LipschitzReport {
    std::vector<LipschitzEntry> entries;
    std::size_t violations = 0;
    double min_margin = std::numeric_limits<double>::infinity();
    bool holds() const { return violations == 0; }
};

/// Checks |NI(p1) - NI(p2)| <= C_tilde (W1(x1, x2) + W1(y1, y2)); W1 dominates
/// d_BL so this is a valid test of the BL-Lipschitz bound. Violations beyond
/// the optimiser tolerance are counted, not thrown.
inline LipschitzReport ni_lipschitz_check(const Game& g, const std::vector<std::pair<MeasurePair, MeasurePair>>& pairs,
                                          const SearchConfig& sc, double C_tilde) {
    LipschitzReport rep;
    for (const auto& [p1, p2] : pairs) {
        const double n1 = ni_error(g, p1.x, p1.y, sc).value;
        const double n2 = ni_error(g, p2.x, p2.y, sc).value;
        LipschitzEntry e{std::abs(n1 - n2), C_tilde * (w1_upper_bound(p1.x, p2.x) + w1_upper_bound(p1.y, p2.y))};
        if (e.lhs > e.rhs + ni_negative_tolerance) ++rep.violations;
        rep.min_margin = std::min(rep.min_margin, e.margin());
        rep.entries.push_back(e);
    }
    return rep;
}

} // namespace mfne
