#pragma once

// Numerical rate functionals for the empirical-measure LDP.
//
// Variational form on a path theta(t) of joint measures:
//   I(theta) = beta/4 int_0^T sup_f <theta' - A*_theta theta, f>^2 / <|grad f|^2, theta> dt,
// evaluated with a finite test basis, where the sup over span{f_k} is g^T M^-1 g.
// Control form for gradient feedback u = grad phi:
//   cost = 1/2 int_0^T <|grad phi(t)|^2, theta(t)> dt.
// Both use the same face-based discrete Dirichlet form, so for a path generated
// by controlled_pde_step with phi in the basis span the two agree up to the
// time discretisation.

#include "mfne/error.hpp"
#include "mfne/game.hpp"
#include "mfne/meanfield.hpp"
#include "mfne/measures.hpp"
#include "mfne/ni.hpp"
#include "mfne/parallel.hpp"
#include "mfne/particle_sim.hpp"
#include "mfne/rng.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

namespace mfne {

// ------------------------------------------------------------ test basis

struct TestBasis {
    std::vector<Axis> axes;
    std::size_t order = 0;             ///< largest cosine mode K
    std::vector<Vec> fields;           ///< values at cell centres
    std::vector<FaceField> gradients;  ///< face differences
    std::vector<std::size_t> mode_order; ///< nesting level of each function (nondecreasing)
    double gram_condition = 0.0;

    std::size_t size() const { return fields.size(); }
    /// Number of leading functions making up the nested basis of order k.
    std::size_t prefix(std::size_t k) const {
        return static_cast<std::size_t>(std::upper_bound(mode_order.begin(), mode_order.end(), k) - mode_order.begin());
    }
};

/// Degree <= 2 monomials in z / R, followed by tensor cosines
/// cos(kx pi s1) cos(ky pi s2), s the box coordinate rescaled to [0, 1],
/// 0 <= kx, ky <= K, ordered by max(kx, ky). Cosines have zero normal derivative
/// at the box boundary. Bases of lower order are prefixes of higher ones.
inline TestBasis make_test_basis(const std::vector<Axis>& axes, std::size_t K) {
    if (axes.size() != 2) throw UsageError("make_test_basis: the joint grid must be 2-D");
    if (K < 1) throw UsageError("make_test_basis: order must be >= 1");
    TestBasis b;
    b.axes = axes;
    b.order = K;
    GridMeasure probe{axes, {}};
    const std::size_t n = probe.size();
    auto add = [&](std::size_t level, auto&& f) {
        Vec field(n);
        for (std::size_t i = 0; i < n; ++i) field[i] = f(probe.center(i));
        b.gradients.push_back(ControlPotential::face_gradient(axes, field));
        b.fields.push_back(std::move(field));
        b.mode_order.push_back(level);
    };
    const double r0 = std::max(std::abs(axes[0].lo), std::abs(axes[0].hi));
    const double r1 = std::max(std::abs(axes[1].lo), std::abs(axes[1].hi));
    add(1, [&](const Vec& z) { return z[0] / r0; });
    add(1, [&](const Vec& z) { return z[1] / r1; });
    add(1, [&](const Vec& z) { return (z[0] / r0) * (z[0] / r0); });
    add(1, [&](const Vec& z) { return (z[0] / r0) * (z[1] / r1); });
    add(1, [&](const Vec& z) { return (z[1] / r1) * (z[1] / r1); });
    auto s = [&](const Vec& z, std::size_t k) { return (z[k] - axes[k].lo) / (axes[k].hi - axes[k].lo); };
    for (std::size_t level = 1; level <= K; ++level) {
        for (std::size_t kx = 0; kx <= level; ++kx)
            for (std::size_t ky = 0; ky <= level; ++ky) {
                if (std::max(kx, ky) != level) continue;
                add(level, [&](const Vec& z) {
                    return std::cos(static_cast<double>(kx) * std::numbers::pi * s(z, 0)) *
                           std::cos(static_cast<double>(ky) * std::numbers::pi * s(z, 1));
                });
            }
    }
    const std::size_t m = b.size();
    Eigen::MatrixXd G(m, m);
    const double vol = probe.cell_volume();
    for (std::size_t a = 0; a < m; ++a)
        for (std::size_t c = a; c < m; ++c) {
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i) acc += b.fields[a][i] * b.fields[c][i];
            G(a, c) = G(c, a) = acc * vol;
        }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(G, Eigen::EigenvaluesOnly);
    const double lo = es.eigenvalues().minCoeff(), hi = es.eigenvalues().maxCoeff();
    b.gram_condition = lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
    return b;
}

// ------------------------------------------------------------ operators

/// A*_theta theta = -div_z(theta b(., theta)) + beta^-1 Lap_z theta, same
/// discrete operator as the mean-field solver. Integrates to zero.
inline Vec adjoint_apply(const GridMeasure& theta, const Game& g, double beta) {
    return flux_divergence(theta, joint_face_velocity(g, theta), 1.0 / beta);
}

/// sup_c (c^T g)^2 / (c^T M c) = g^T (M + ridge I)^-1 g.
inline double rayleigh_sup(const Eigen::VectorXd& g, const Eigen::MatrixXd& M, double ridge) {
    if (g.size() != M.rows() || M.rows() != M.cols()) throw UsageError("rayleigh_sup: dimension mismatch");
    if (ridge < 0.0) throw UsageError("rayleigh_sup: ridge must be nonnegative");
    if (g.size() == 0 || g.isZero(0.0)) return 0.0;
    Eigen::MatrixXd A = M;
    A.diagonal().array() += ridge;
    Eigen::LLT<Eigen::MatrixXd> llt(A);
    const double scale = std::max(A.diagonal().cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());
    bool ok = llt.info() == Eigen::Success;
    if (ok) {
        const Eigen::VectorXd diagL = Eigen::MatrixXd(llt.matrixL()).diagonal();
        ok = (diagL.array().square() > 1e-14 * scale).all();
    }
    if (!ok) throw NumericalError("rayleigh_sup: singular metric; use a nonzero ridge");
    return std::max(0.0, g.dot(llt.solve(g)));
}

namespace detail {

// M_ab = sum over interior faces of theta_face Df_a Df_b vol.
inline Eigen::MatrixXd dirichlet_metric(const GridMeasure& th, const TestBasis& b, std::size_t m) {
    std::size_t faces = 0;
    for_each_interior_face(th, [&](std::size_t, std::size_t, std::size_t) { ++faces; });
    Eigen::MatrixXd W(faces, m);
    const double vol = th.cell_volume();
    std::size_t row = 0;
    for_each_interior_face(th, [&](std::size_t k, std::size_t L, std::size_t R) {
        const double w = std::sqrt(std::max(0.0, 0.5 * (th.density[L] + th.density[R])) * vol);
        for (std::size_t a = 0; a < m; ++a) W(row, a) = w * b.gradients[a].axis[k][L];
        ++row;
    });
    return W.transpose() * W;
}

inline double dirichlet_energy(const GridMeasure& th, const FaceField& grad) {
    double s = 0.0;
    for_each_interior_face(th, [&](std::size_t k, std::size_t L, std::size_t R) {
        s += 0.5 * (th.density[L] + th.density[R]) * grad.axis[k][L] * grad.axis[k][L];
    });
    return s * th.cell_volume();
}

inline double default_ridge(const Eigen::MatrixXd& M) { return 1e-10 * M.trace() / static_cast<double>(M.rows()); }

inline double trapezoid(const Vec& t, const Vec& f) {
    double s = 0.0;
    for (std::size_t k = 1; k < t.size(); ++k) s += 0.5 * (t[k] - t[k - 1]) * (f[k] + f[k - 1]);
    return s;
}

} // namespace detail

/// Sentinel asking for the default ridge 1e-10 trace(M) / dim.
inline constexpr double auto_ridge = -1.0;

/// Integrand at interior index t_index for the nested bases of the given orders
/// (all sharing the ridge chosen on the largest one so the values are monotone).
inline Vec rate_integrand_nested(const MeasurePath& path, std::size_t t_index, const Game& g, const TestBasis& basis,
                                 double beta, double ridge, const std::vector<std::size_t>& orders) {
    if (t_index < 1 || t_index + 1 >= path.size()) throw UsageError("rate_integrand: index must be interior");
    const GridMeasure& th = path.measures[t_index];
    if (th.axes != basis.axes) throw UsageError("rate_integrand: basis grid does not match the path");
    const GridMeasure& prev = path.measures[t_index - 1];
    const GridMeasure& next = path.measures[t_index + 1];
    const double dt2 = path.times[t_index + 1] - path.times[t_index - 1];
    const Vec A = adjoint_apply(th, g, beta);
    const std::size_t n = th.size(), m = basis.size();
    const double vol = th.cell_volume();
    Eigen::VectorXd gvec(m);
    for (std::size_t a = 0; a < m; ++a) {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) acc += ((next.density[i] - prev.density[i]) / dt2 - A[i]) * basis.fields[a][i];
        gvec(a) = acc * vol;
    }
    const Eigen::MatrixXd M = detail::dirichlet_metric(th, basis, m);
    if (M.isZero(0.0)) throw DegenerateInput("rate_integrand: all basis gradients vanish where theta has mass");
    const double r = ridge < 0.0 ? detail::default_ridge(M) : ridge;
    Vec out;
    for (std::size_t k : orders) {
        const std::size_t p = basis.prefix(k);
        out.push_back(0.25 * beta * rayleigh_sup(gvec.head(p), M.topLeftCorner(p, p), r));
    }
    return out;
}

inline double rate_integrand(const MeasurePath& path, std::size_t t_index, const Game& g, const TestBasis& basis,
                             double beta, double ridge = auto_ridge) {
    return rate_integrand_nested(path, t_index, g, basis, beta, ridge, {basis.order}).front();
}

struct RateReport {
    double I_total = 0.0;
    Vec times;     ///< interior times
    Vec integrand; ///< at the full basis order
    std::size_t basis_order = 0;
    std::size_t basis_size = 0;
    double gram_condition = 0.0;
    std::vector<std::size_t> grid_resolution;
    double dt = 0.0;
    std::vector<std::pair<std::size_t, double>> nested; ///< (order, I_total)
    bool monotone = true;
};

/// Trapezoidal integral of the integrand over interior times, plus the trace
/// over nested orders {2, 4, 8} (those not above the basis order) and the full order.
inline RateReport rate_functional(const MeasurePath& path, const Game& g, const TestBasis& basis, double beta,
                                  double ridge = auto_ridge) {
    if (path.size() < 3) throw UsageError("rate_functional: path needs at least 3 times");
    std::vector<std::size_t> orders;
    for (std::size_t k : {2, 4, 8})
        if (k < basis.order) orders.push_back(k);
    orders.push_back(basis.order);
    const std::size_t inner = path.size() - 2;
    std::vector<Vec> values(inner);
    parallel_for(inner, worker_count_from_env(), [&](std::size_t b, std::size_t e) {
        for (std::size_t k = b; k < e; ++k) values[k] = rate_integrand_nested(path, k + 1, g, basis, beta, ridge, orders);
    });
    RateReport rep;
    rep.basis_order = basis.order;
    rep.basis_size = basis.size();
    rep.gram_condition = basis.gram_condition;
    for (const auto& a : path.measures.front().axes) rep.grid_resolution.push_back(a.cells);
    rep.dt = path.dt();
    rep.times.assign(path.times.begin() + 1, path.times.end() - 1);
    for (std::size_t o = 0; o < orders.size(); ++o) {
        Vec f(inner);
        for (std::size_t k = 0; k < inner; ++k) f[k] = values[k][o];
        const double I = detail::trapezoid(rep.times, f);
        if (!rep.nested.empty() && I < rep.nested.back().second * (1.0 - 1e-9) - 1e-300) rep.monotone = false;
        rep.nested.emplace_back(orders[o], I);
        if (o + 1 == orders.size()) {
            rep.integrand = f;
            rep.I_total = I;
        }
    }
    return rep;
}

/// 1/2 int <|grad phi|^2, theta> dt with the solver's face-based gradient.
inline double control_cost(const ControlPotential& phi, const MeasurePath& path) {
    if (phi.times.size() != path.size()) throw UsageError("control_cost: time grids differ");
    Vec f(path.size());
    for (std::size_t k = 0; k < path.size(); ++k) {
        if (std::abs(phi.times[k] - path.times[k]) > 1e-12 * std::max(1.0, std::abs(path.times[k])))
            throw UsageError("control_cost: time grids differ");
        if (phi.axes != path.measures[k].axes || phi.phi[k].size() != path.measures[k].size())
            throw UsageError("control_cost: spatial grids differ");
        f[k] = 0.5 * detail::dirichlet_energy(path.measures[k], ControlPotential::face_gradient(phi.axes, phi.phi[k]));
    }
    return detail::trapezoid(path.times, f);
}

// ------------------------------------------------------------ NI / rate pairs

struct NiRatePair {
    NiSeries ni;
    double I_total = 0.0;
};

inline std::vector<NiRatePair> ni_rate_pairs(const Game& g, const std::vector<MeasurePath>& paths,
                                             const TestBasis& basis, double beta, const SearchConfig& sc,
                                             double ridge = auto_ridge) {
    std::vector<NiRatePair> out;
    for (const auto& p : paths) out.push_back({ni_trajectory(g, p, sc), rate_functional(p, g, basis, beta, ridge).I_total});
    return out;
}

// ------------------------------------------------------------ deviation probabilities

struct DeviationEvent {
    enum class Statistic { mean_x, w1_x };
    Statistic statistic = Statistic::mean_x;
    double delta = 0.3;
    double t = 5.0;
};

struct DeviationRow {
    std::size_t n = 0;
    std::size_t replicas = 0;
    std::size_t hits = 0;
    double p_hat = 0.0;
    double rate = std::numeric_limits<double>::quiet_NaN(); ///< -log p_hat / n; NaN when censored
    double ci_lo = 0.0;
    double ci_hi = 0.0;
    bool censored = false;
};

struct DeviationTable {
    DeviationEvent event;
    std::vector<DeviationRow> rows;
};

/// Wilson score interval.
inline std::pair<double, double> wilson_interval(std::size_t hits, std::size_t trials, double z = 1.959963984540054) {
    const double N = static_cast<double>(trials), p = static_cast<double>(hits) / N;
    const double denom = 1.0 + z * z / N;
    const double centre = (p + z * z / (2.0 * N)) / denom;
    const double half = z * std::sqrt(p * (1.0 - p) / N + z * z / (4.0 * N * N)) / denom;
    return {hits == 0 ? 0.0 : std::max(0.0, centre - half), hits == trials ? 1.0 : std::min(1.0, centre + half)};
}

/// Grid version of an initial law for PDE reference solutions. Point masses
/// become Gaussians one cell wide.
inline GridMeasure grid_initial(const InitSpec& s, const std::vector<Axis>& axes, double game_box) {
    const std::size_t d = axes.size();
    const Vec mean = s.mean.empty() ? Vec(d, 0.0) : s.mean;
    switch (s.kind) {
    case InitSpec::Kind::point: {
        const double w = axes.front().width();
        return GridMeasure::gaussian(axes, mean, w * w);
    }
    case InitSpec::Kind::uniform_box:
        return GridMeasure::from_density(axes, [&](CSpan z) {
            for (double v : z)
                if (std::abs(v) > game_box) return 0.0;
            return 1.0;
        });
    case InitSpec::Kind::gaussian:
        break;
    }
    return GridMeasure::gaussian(axes, mean, std::max(s.variance, axes.front().width() * axes.front().width()));
}

/// For each n, `replicas` independent particle runs to time event.t; the event
/// compares the x-player cloud against the mean-field reference at that time.
inline DeviationTable deviation_probability(const Game& g, const SimConfig& base, const std::vector<std::size_t>& n_ladder,
                                            std::size_t replicas, const DeviationEvent& ev, std::uint64_t seed,
                                            const PdeConfig& pde) {
    for (std::size_t k = 1; k < n_ladder.size(); ++k)
        if (n_ladder[k] <= n_ladder[k - 1]) throw ConfigError("deviation.n_ladder must be increasing");
    if (replicas < 1) throw ConfigError("deviation.replicas must be >= 1");
    if (!(ev.t > 0.0)) throw ConfigError("deviation.t must be positive");
    if (ev.statistic == DeviationEvent::Statistic::w1_x && g.dx != 1)
        throw ConfigError("deviation statistic w1_x needs dx = 1");

    PdeConfig pc = pde;
    pc.T = ev.t;
    pc.record_stride = std::numeric_limits<std::size_t>::max();
    const MeanFieldPath ref = solve_meanfield(grid_initial(base.init_x, pc.axes(g.dx), g.box_radius),
                                              grid_initial(base.init_y, pc.axes(g.dy), g.box_radius), g, pc);
    const GridMeasure& ref_x = ref.final_x;
    const Vec ref_mean = ref_x.mean();

    DeviationTable table;
    table.event = ev;
    for (std::size_t n : n_ladder) {
        std::vector<char> hit(replicas, 0);
        parallel_for(replicas, worker_count_from_env(), [&](std::size_t b, std::size_t e) {
            for (std::size_t r = b; r < e; ++r) {
                SimConfig c = base;
                c.n = n;
                c.T = ev.t;
                c.workers = 1;
                c.seed = rng::stream_key(seed, rng::Stream::replica, n, r);
                c.record_stride = c.steps();
                const TrajectoryRecording rec = simulate(c, g);
                const auto [mx, my] = empirical_marginals(rec.states.back());
                double stat = 0.0;
                if (ev.statistic == DeviationEvent::Statistic::mean_x) {
                    const Vec m = mx.mean();
                    for (std::size_t k = 0; k < m.size(); ++k) stat += (m[k] - ref_mean[k]) * (m[k] - ref_mean[k]);
                    stat = std::sqrt(stat);
                } else {
                    stat = w1_1d(mx, ref_x);
                }
                hit[r] = stat >= ev.delta ? 1 : 0;
            }
        });
        DeviationRow row;
        row.n = n;
        row.replicas = replicas;
        for (char h : hit) row.hits += static_cast<std::size_t>(h);
        row.p_hat = static_cast<double>(row.hits) / static_cast<double>(replicas);
        if (row.hits == 0) {
            row.censored = true;
            row.ci_lo = 0.0;
            row.ci_hi = 1.0 - std::pow(0.05, 1.0 / static_cast<double>(replicas));
        } else {
            std::tie(row.ci_lo, row.ci_hi) = wilson_interval(row.hits, replicas);
            row.rate = -std::log(row.p_hat) / static_cast<double>(n);
        }
        table.rows.push_back(row);
    }
    return table;
}

} // namespace mfne
