#pragma once

// Finite-volume solver for the mean-field limit
//   d/dt mu_x =  div_x(mu_x grad_x V_x(mu_y, .)) + beta^-1 Lap_x mu_x
//   d/dt mu_y = -div_y(mu_y grad_y V_y(mu_x, .)) + beta^-1 Lap_y mu_y
// and of its controlled joint form on Z = X x Y. Fluxes live on cell faces;
// boundary faces carry zero flux so total mass is conserved exactly.

#include "mfne/error.hpp"
#include "mfne/game.hpp"
#include "mfne/measures.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace mfne {

/// Velocity on the interior faces of a grid, one array per axis. Entry
/// [k][i] belongs to the face between cell i and cell i + stride(k); entries
/// of cells on the upper boundary along k are unused.
struct FaceField {
    std::vector<Vec> axis;

    double max_abs() const {
        double m = 0.0;
        for (const auto& a : axis)
            for (double v : a) m = std::max(m, std::abs(v));
        return m;
    }
};

namespace detail {

// Bernoulli function z / (e^z - 1).
inline double bernoulli(double z) {
    if (std::abs(z) < 1e-8) return 1.0 - 0.5 * z;
    return z / std::expm1(z);
}

template <class FaceFn>
void for_each_interior_face(const GridMeasure& g, FaceFn&& fn) {
    for (std::size_t k = 0; k < g.dim(); ++k) {
        const std::size_t st = g.stride(k);
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (g.index_along(i, k) + 1 == g.axes[k].cells) continue;
            fn(k, i, i + st);
        }
    }
}

} // namespace detail

/// Rate of change -div F of the conservative scheme with flux
///   F = exponentially fitted (Scharfetter-Gummel) flux of v theta - D grad theta
///     + centred flux of w theta
/// on interior faces; zero flux on the boundary.
inline Vec flux_divergence(const GridMeasure& th, const FaceField& v, double D, const FaceField* w = nullptr) {
    if (!(D > 0.0)) throw UsageError("flux_divergence: diffusion coefficient must be positive");
    Vec out(th.size(), 0.0);
    detail::for_each_interior_face(th, [&](std::size_t k, std::size_t L, std::size_t R) {
        const double dz = th.axes[k].width();
        const double P = v.axis[k][L] * dz / D;
        double F = (D / dz) * (detail::bernoulli(-P) * th.density[L] - detail::bernoulli(P) * th.density[R]);
        if (w) F += w->axis[k][L] * 0.5 * (th.density[L] + th.density[R]);
        out[L] -= F / dz;
        out[R] += F / dz;
    });
    return out;
}

// ------------------------------------------------------------ drift fields

namespace detail {

inline Vec grid_mean_features(const GridMeasure& m, std::size_t count, const std::function<void(CSpan, MSpan)>& feat) {
    Vec mean(count, 0.0), f(count), c(m.dim());
    const double vol = m.cell_volume();
    for (std::size_t j = 0; j < m.size(); ++j) {
        if (m.density[j] == 0.0) continue;
        m.center(j, c);
        feat(c, f);
        for (std::size_t k = 0; k < count; ++k) mean[k] += m.density[j] * vol * f[k];
    }
    return mean;
}

inline Vec face_position(const GridMeasure& g, std::size_t cell, std::size_t axis) {
    Vec p = g.center(cell);
    p[axis] += 0.5 * g.axes[axis].width();
    return p;
}

} // namespace detail

/// Face velocities of the x-player: v = -grad_x V_x(mu_y, x) = -int grad_x l(x, y) dmu_y(y).
inline FaceField x_face_velocity(const Game& g, const GridMeasure& mu_x, const GridMeasure& mu_y) {
    FaceField f;
    f.axis.assign(mu_x.dim(), Vec(mu_x.size(), 0.0));
    Vec gx(g.dx);
    if (g.separable) {
        const auto& s = *g.separable;
        const Vec m = detail::grid_mean_features(mu_y, s.y_feature_count, s.y_features);
        detail::for_each_interior_face(mu_x, [&](std::size_t k, std::size_t L, std::size_t) {
            const Vec p = detail::face_position(mu_x, L, k);
            s.grad_x_from(p, m, gx);
            f.axis[k][L] = -gx[k];
        });
        return f;
    }
    const EmpiricalMeasure atoms = mu_y.to_atoms();
    detail::for_each_interior_face(mu_x, [&](std::size_t k, std::size_t L, std::size_t) {
        const Vec p = detail::face_position(mu_x, L, k);
        double acc = 0.0;
        for (std::size_t j = 0; j < atoms.size(); ++j) {
            if (atoms.weights[j] == 0.0) continue;
            g.grad_x(p, atoms.point(j), gx);
            acc += atoms.weights[j] * gx[k];
        }
        f.axis[k][L] = -acc;
    });
    return f;
}

/// Face velocities of the y-player: v = +int grad_y l(x, y) dmu_x(x).
inline FaceField y_face_velocity(const Game& g, const GridMeasure& mu_x, const GridMeasure& mu_y) {
    FaceField f;
    f.axis.assign(mu_y.dim(), Vec(mu_y.size(), 0.0));
    Vec gy(g.dy);
    if (g.separable) {
        const auto& s = *g.separable;
        const Vec m = detail::grid_mean_features(mu_x, s.x_feature_count, s.x_features);
        detail::for_each_interior_face(mu_y, [&](std::size_t k, std::size_t L, std::size_t) {
            const Vec p = detail::face_position(mu_y, L, k);
            s.grad_y_from(p, m, gy);
            f.axis[k][L] = gy[k];
        });
        return f;
    }
    const EmpiricalMeasure atoms = mu_x.to_atoms();
    detail::for_each_interior_face(mu_y, [&](std::size_t k, std::size_t L, std::size_t) {
        const Vec p = detail::face_position(mu_y, L, k);
        double acc = 0.0;
        for (std::size_t j = 0; j < atoms.size(); ++j) {
            if (atoms.weights[j] == 0.0) continue;
            g.grad_y(atoms.point(j), p, gy);
            acc += atoms.weights[j] * gy[k];
        }
        f.axis[k][L] = acc;
    });
    return f;
}

/// Opponent-averaged losses at cell centres (midpoint quadrature):
/// V_x(x) = int l(x, y) dmu_y(y), V_y(y) = int l(x, y) dmu_x(x).
inline std::pair<Vec, Vec> potentials(const Game& g, const GridMeasure& mu_y, const GridMeasure& mu_x) {
    if (mu_x.dim() != g.dx || mu_y.dim() != g.dy) throw UsageError("potentials: grid dimensions do not match the game");
    const EmpiricalMeasure ax = mu_x.to_atoms(), ay = mu_y.to_atoms();
    Vec Vx(mu_x.size(), 0.0), Vy(mu_y.size(), 0.0);
    for (std::size_t i = 0; i < ax.size(); ++i)
        for (std::size_t j = 0; j < ay.size(); ++j) {
            const double l = g.loss(ax.point(i), ay.point(j));
            Vx[i] += ay.weights[j] * l;
            Vy[j] += ax.weights[i] * l;
        }
    return {std::move(Vx), std::move(Vy)};
}

// ------------------------------------------------------------ stepping

struct StepStats {
    std::size_t positivity_events = 0; ///< steps where tiny negative densities were clamped
};

namespace detail {

inline double min_width(const GridMeasure& m) {
    double w = m.axes.front().width();
    for (const auto& a : m.axes) w = std::min(w, a.width());
    return w;
}

/// Explicit-scheme bound min(dz^2 beta / (2 d), dz / vmax).
inline double explicit_bound(const GridMeasure& m, double beta, double vmax) {
    const double dz = min_width(m);
    double b = dz * dz * beta / (2.0 * static_cast<double>(m.dim()));
    if (vmax > 0.0) b = std::min(b, dz / vmax);
    return b;
}

inline void check_stability(const GridMeasure& m, double h_t, double beta, double vmax, const char* what) {
    const double b = explicit_bound(m, beta, vmax);
    if (h_t > b * (1.0 + 1e-12))
        throw ConfigError(std::string(what) + ": h_t = " + std::to_string(h_t) +
                          " violates the explicit stability bound min(dz^2*beta/(2d), dz/max|v|) = " + std::to_string(b));
}

inline GridMeasure advance(const GridMeasure& m, const Vec& rate, double h_t, StepStats* stats) {
    GridMeasure out = m;
    double mn = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.density[i] += h_t * rate[i];
        if (!std::isfinite(out.density[i])) throw SchemeError("non-finite density after step");
        mn = std::min(mn, out.density[i]);
    }
    if (mn < -1e-12) throw SchemeError("negative density " + std::to_string(mn) + " after explicit step");
    if (mn < 0.0) {
        for (double& v : out.density) v = std::max(v, 0.0);
        out.normalize();
        if (stats) ++stats->positivity_events;
    }
    return out;
}

} // namespace detail

/// One explicit step of the coupled marginal equations, drift frozen at the
/// pre-step pair.
inline std::pair<GridMeasure, GridMeasure> pde_step(const GridMeasure& mu_x, const GridMeasure& mu_y, const Game& g,
                                                    double h_t, double beta, StepStats* stats = nullptr) {
    if (!(h_t > 0.0) || !(beta > 0.0)) throw ConfigError("pde_step: h_t and beta must be positive");
    if (mu_x.dim() != g.dx || mu_y.dim() != g.dy) throw UsageError("pde_step: grid dimensions do not match the game");
    const FaceField vx = x_face_velocity(g, mu_x, mu_y);
    const FaceField vy = y_face_velocity(g, mu_x, mu_y);
    detail::check_stability(mu_x, h_t, beta, vx.max_abs(), "pde_step (x grid)");
    detail::check_stability(mu_y, h_t, beta, vy.max_abs(), "pde_step (y grid)");
    const double D = 1.0 / beta;
    return {detail::advance(mu_x, flux_divergence(mu_x, vx, D), h_t, stats),
            detail::advance(mu_y, flux_divergence(mu_y, vy, D), h_t, stats)};
}

/// L1 norm of the discrete right-hand side at the pair; zero at a discrete
/// stationary point.
inline double stationarity_residual(const GridMeasure& mu_x, const GridMeasure& mu_y, const Game& g, double beta) {
    const double D = 1.0 / beta;
    const Vec rx = flux_divergence(mu_x, x_face_velocity(g, mu_x, mu_y), D);
    const Vec ry = flux_divergence(mu_y, y_face_velocity(g, mu_x, mu_y), D);
    double s = 0.0;
    for (double v : rx) s += std::abs(v) * mu_x.cell_volume();
    for (double v : ry) s += std::abs(v) * mu_y.cell_volume();
    return s;
}

// ------------------------------------------------------------ full solve

struct PdeConfig {
    double box_radius = 2.0;
    std::size_t resolution = 128; ///< cells per dimension
    double h_t = 0.0;             ///< 0: choose safety * stability bound
    double beta = 10.0;
    double T = 1.0;
    std::size_t record_stride = 1;
    double safety = 0.5;

    std::vector<Axis> axes(std::size_t dim) const { return box_axes(dim, box_radius, resolution); }
};

/// Largest h_t allowed by the config's safety factor:
/// safety * min(dz^2 beta / (2d), dz / C), C the box estimate of sup |grad l|.
inline double stable_time_step(const PdeConfig& c, const Game& g) {
    const double dz = 2.0 * c.box_radius / static_cast<double>(c.resolution);
    const double vmax = regularity_constants(
                            [&] {
                                Game gg = g;
                                gg.box_radius = c.box_radius;
                                return gg;
                            }(),
                            g.dx + g.dy <= 2 ? 65 : 9)
                            .C;
    const double d = static_cast<double>(std::max(g.dx, g.dy));
    double b = dz * dz * c.beta / (2.0 * d);
    if (vmax > 0.0) b = std::min(b, dz / vmax);
    return c.safety * b;
}

inline void validate(const PdeConfig& c, const Game& g) {
    if (!(c.box_radius > 0.0)) throw ConfigError("pde.box_radius must be positive");
    if (c.resolution < 3) throw ConfigError("pde.resolution must be >= 3");
    if (!(c.beta > 0.0)) throw ConfigError("pde.beta must be positive");
    if (!(c.T > 0.0)) throw ConfigError("pde.T must be positive");
    if (c.record_stride < 1) throw ConfigError("pde.record_stride must be >= 1");
    if (!(c.safety > 0.0 && c.safety <= 0.5)) throw ConfigError("pde.safety must lie in (0, 0.5]");
    if (c.h_t < 0.0) throw ConfigError("pde.h_t must be positive (or 0 for automatic)");
    if (c.h_t > 0.0) {
        const double bound = stable_time_step(c, g);
        if (c.h_t > bound * (1.0 + 1e-12))
            throw ConfigError("pde.h_t = " + std::to_string(c.h_t) +
                              " violates the CFL bound h_t <= safety*min(dz^2*beta/(2d), dz/max|grad l|) = " +
                              std::to_string(bound));
    }
}

struct MeanFieldPath {
    Vec times;
    std::vector<GridMeasure> mu_x;
    std::vector<GridMeasure> mu_y;
    Vec boundary_mass; ///< boundary-cell mass of both marginals, summed
    std::size_t positivity_events = 0;
    double h_t = 0.0;
    /// State after the last step, whether or not it fell on the record stride.
    double final_time = 0.0;
    GridMeasure final_x;
    GridMeasure final_y;

    std::size_t size() const { return times.size(); }

    MeasurePath x_path() const { return {times, mu_x}; }
    MeasurePath y_path() const { return {times, mu_y}; }

    /// theta(t) = mu_x(t) (x) mu_y(t), a 2-D joint grid when dx = dy = 1.
    MeasurePath joint_path() const {
        MeasurePath p;
        p.times = times;
        for (std::size_t k = 0; k < size(); ++k) p.measures.push_back(product(mu_x[k], mu_y[k]));
        return p;
    }
};

inline MeanFieldPath solve_meanfield(const GridMeasure& mu_x0, const GridMeasure& mu_y0, const Game& g, PdeConfig c) {
    validate(c, g);
    if (c.h_t == 0.0) {
        // Largest stable step that lands exactly on T.
        const double bound = stable_time_step(c, g);
        c.h_t = c.T / std::ceil(c.T / bound - 1e-9);
    }
    mu_x0.validate();
    mu_y0.validate();
    const std::size_t steps = static_cast<std::size_t>(std::ceil(c.T / c.h_t - 1e-9));
    MeanFieldPath path;
    path.h_t = c.h_t;
    GridMeasure mx = mu_x0, my = mu_y0;
    auto record = [&](double t) {
        path.times.push_back(t);
        path.mu_x.push_back(mx);
        path.mu_y.push_back(my);
        path.boundary_mass.push_back(mx.boundary_mass() + my.boundary_mass());
    };
    record(0.0);
    StepStats stats;
    for (std::size_t s = 0; s < steps; ++s) {
        std::tie(mx, my) = pde_step(mx, my, g, c.h_t, c.beta, &stats);
        if ((s + 1) % c.record_stride == 0) record(static_cast<double>(s + 1) * c.h_t);
    }
    path.positivity_events = stats.positivity_events;
    path.final_time = static_cast<double>(steps) * c.h_t;
    path.final_x = std::move(mx);
    path.final_y = std::move(my);
    return path;
}

// ------------------------------------------------------------ controlled joint flow

/// Scalar potential phi(t, z) on the joint grid; the control is u = grad_z phi.
struct ControlPotential {
    std::vector<Axis> axes;
    Vec times;
    std::vector<Vec> phi; ///< one field per time, row-major over `axes`

    /// Time-constant potential sampled at cell centres.
    static ControlPotential constant_in_time(std::vector<Axis> axes, const Vec& times,
                                             const std::function<double(CSpan)>& f) {
        ControlPotential c;
        c.axes = std::move(axes);
        c.times = times;
        GridMeasure probe{c.axes, {}};
        Vec field(probe.size());
        for (std::size_t i = 0; i < field.size(); ++i) field[i] = f(probe.center(i));
        c.phi.assign(times.size(), field);
        return c;
    }

    /// Face differences of phi along each axis (the staggered central gradient).
    static FaceField face_gradient(const std::vector<Axis>& axes, const Vec& phi) {
        GridMeasure probe{axes, {}};
        FaceField f;
        f.axis.assign(axes.size(), Vec(probe.size(), 0.0));
        detail::for_each_interior_face(probe, [&](std::size_t k, std::size_t L, std::size_t R) {
            f.axis[k][L] = (phi[R] - phi[L]) / axes[k].width();
        });
        return f;
    }
};

namespace detail {

inline void require_pair_joint(const Game& g, const GridMeasure& theta) {
    if (g.dx != 1 || g.dy != 1 || theta.dim() != 2)
        throw UsageError("joint grids are supported only for dx = dy = 1 (2-D theta)");
}

} // namespace detail

/// Face velocities of b(., theta) on the 2-D joint grid; b depends on theta only
/// through its marginals, given explicitly or taken from theta itself.
inline FaceField joint_face_velocity(const Game& g, const GridMeasure& theta,
                                     const std::optional<std::pair<GridMeasure, GridMeasure>>& marginals = std::nullopt) {
    detail::require_pair_joint(g, theta);
    const GridMeasure mx = marginals ? marginals->first : theta.marginal({0});
    const GridMeasure my = marginals ? marginals->second : theta.marginal({1});
    const FaceField vx = x_face_velocity(g, mx, my);
    const FaceField vy = y_face_velocity(g, mx, my);
    const std::size_t nx = theta.axes[0].cells, ny = theta.axes[1].cells;
    FaceField f;
    f.axis.assign(2, Vec(theta.size(), 0.0));
    for (std::size_t i = 0; i < nx; ++i)
        for (std::size_t j = 0; j < ny; ++j) {
            f.axis[0][i * ny + j] = vx.axis[0][i];
            f.axis[1][i * ny + j] = vy.axis[0][j];
        }
    return f;
}

/// One explicit step of
///   d/dt theta = -div_z(theta b(., theta)) + sqrt(2/beta) div_z(u theta) + beta^-1 Lap_z theta,
/// u = grad_z phi. The control enters as a centred face flux -sqrt(2/beta) theta_face grad phi,
/// i.e. a transport velocity of -sqrt(2/beta) u. With phi = 0 the marginals of the
/// stepped joint measure coincide with pde_step on product data.
inline GridMeasure controlled_pde_step(const GridMeasure& theta, const Game& g, const Vec& phi, double h_t, double beta,
                                       const std::optional<std::pair<GridMeasure, GridMeasure>>& marginals = std::nullopt,
                                       StepStats* stats = nullptr) {
    if (!(h_t > 0.0) || !(beta > 0.0)) throw ConfigError("controlled_pde_step: h_t and beta must be positive");
    if (phi.size() != theta.size()) throw UsageError("controlled_pde_step: control field does not match the grid");
    const FaceField v = joint_face_velocity(g, theta, marginals);
    FaceField w = ControlPotential::face_gradient(theta.axes, phi);
    const double c = -std::sqrt(2.0 / beta);
    for (auto& a : w.axis)
        for (double& x : a) x *= c;
    detail::check_stability(theta, h_t, beta, v.max_abs() + w.max_abs(), "controlled_pde_step");
    return detail::advance(theta, flux_divergence(theta, v, 1.0 / beta, &w), h_t, stats);
}

/// Controlled path from theta0 under a control potential sampled at the path
/// times (one PDE step per interval).
inline MeasurePath solve_controlled(const GridMeasure& theta0, const Game& g, const ControlPotential& control,
                                    double beta) {
    MeasurePath p;
    p.times = control.times;
    p.measures.push_back(theta0);
    for (std::size_t k = 0; k + 1 < control.times.size(); ++k) {
        const double h = control.times[k + 1] - control.times[k];
        p.measures.push_back(controlled_pde_step(p.measures.back(), g, control.phi[k], h, beta));
    }
    return p;
}

} // namespace mfne
