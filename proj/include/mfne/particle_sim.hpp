#pragma once

// Interacting particle system for Langevin descent-ascent:
//   dX_i = -(1/n) sum_j grad_x l(X_i, Y_j) dt + sqrt(2/beta) dW_i
//   dY_i = +(1/n) sum_j grad_y l(X_j, Y_i) dt + sqrt(2/beta) dW'_i
// integrated with explicit Euler-Maruyama and counter-based noise.

#include "mfne/error.hpp"
#include "mfne/game.hpp"
#include "mfne/measures.hpp"
#include "mfne/parallel.hpp"
#include "mfne/rng.hpp"

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace mfne {

struct ParticleState {
    double t = 0.0;
    std::size_t n = 0;
    std::size_t dx = 1;
    std::size_t dy = 1;
    Vec X; ///< n x dx, row-major
    Vec Y; ///< n x dy, row-major

    CSpan x(std::size_t i) const { return CSpan(X.data() + i * dx, dx); }
    CSpan y(std::size_t i) const { return CSpan(Y.data() + i * dy, dy); }

    void validate() const {
        if (n < 1) throw UsageError("ParticleState: need at least one particle");
        if (X.size() != n * dx || Y.size() != n * dy) throw UsageError("ParticleState: array sizes do not match n");
        for (double v : X)
            if (!std::isfinite(v)) throw UsageError("ParticleState: non-finite position");
        for (double v : Y)
            if (!std::isfinite(v)) throw UsageError("ParticleState: non-finite position");
    }

    bool operator==(const ParticleState&) const = default;
};

struct InitSpec {
    enum class Kind { point, uniform_box, gaussian };
    Kind kind = Kind::gaussian;
    Vec mean;              ///< location of the point mass or Gaussian mean; empty means origin
    double variance = 1.0; ///< isotropic Gaussian variance
};

enum class DriftMode { automatic, generic, separable };

struct SimConfig {
    std::size_t n = 100;
    double T = 1.0;
    double h = 1e-2;
    double beta = 10.0;
    InitSpec init_x;
    InitSpec init_y;
    std::size_t record_stride = 1;
    std::uint64_t seed = 0;

    unsigned workers = 0; ///< 0: take the count from the environment
    DriftMode drift_mode = DriftMode::automatic;
    /// Per-step work (drift pair evaluations) below which a step runs serially.
    std::size_t min_parallel_work = std::size_t{1} << 15;

    std::size_t steps() const { return static_cast<std::size_t>(std::ceil(T / h - 1e-9)); }

    void validate() const {
        if (n < 1) throw ConfigError("sim.n must be >= 1");
        if (!(h > 0.0)) throw ConfigError("sim.h must be positive");
        if (!(T >= h)) throw ConfigError("sim.T must be >= sim.h");
        if (!(beta > 0.0)) throw ConfigError("sim.beta must be positive");
        if (record_stride < 1) throw ConfigError("sim.record_stride must be >= 1");
        for (const auto* s : {&init_x, &init_y})
            if (s->kind == InitSpec::Kind::gaussian && !(s->variance >= 0.0))
                throw ConfigError("initial Gaussian variance must be nonnegative");
    }
};

struct TrajectoryRecording {
    Vec times;
    std::vector<ParticleState> states;
    SimConfig config;
};

// ------------------------------------------------------------ drift

namespace detail {

inline bool use_separable(const Game& g, DriftMode mode) {
    if (mode == DriftMode::separable && !g.separable)
        throw UsageError("game '" + g.name + "' declares no separable drift structure");
    return mode != DriftMode::generic && g.separable.has_value();
}

inline Vec mean_features(std::size_t count, std::size_t n, std::size_t dim, const Vec& pts,
                         const std::function<void(CSpan, MSpan)>& feat) {
    Vec mean(count, 0.0), f(count);
    for (std::size_t j = 0; j < n; ++j) {
        feat(CSpan(pts.data() + j * dim, dim), f);
        for (std::size_t k = 0; k < count; ++k) mean[k] += f[k];
    }
    for (double& v : mean) v /= static_cast<double>(n);
    return mean;
}

} // namespace detail

/// Empirical-measure drift b(Z_i, gamma^n): Bx[i] = -(1/n) sum_j grad_x l(X_i, Y_j),
/// By[i] = (1/n) sum_j grad_y l(X_j, Y_i).
inline std::pair<Vec, Vec> drift(const Game& g, const ParticleState& s, DriftMode mode = DriftMode::automatic,
                                 unsigned workers = 1) {
    if (s.dx != g.dx || s.dy != g.dy) throw UsageError("drift: state dimensions do not match the game");
    const std::size_t n = s.n;
    Vec Bx(n * g.dx), By(n * g.dy);
    const double inv_n = 1.0 / static_cast<double>(n);
    if (detail::use_separable(g, mode)) {
        const auto& sep = *g.separable;
        const Vec my = detail::mean_features(sep.y_feature_count, n, g.dy, s.Y, sep.y_features);
        const Vec mx = detail::mean_features(sep.x_feature_count, n, g.dx, s.X, sep.x_features);
        parallel_for(n, workers, [&](std::size_t b, std::size_t e) {
            for (std::size_t i = b; i < e; ++i) {
                MSpan bx(Bx.data() + i * g.dx, g.dx), by(By.data() + i * g.dy, g.dy);
                sep.grad_x_from(s.x(i), my, bx);
                for (double& v : bx) v = -v;
                sep.grad_y_from(s.y(i), mx, by);
            }
        });
        return {std::move(Bx), std::move(By)};
    }
    parallel_for(n, workers, [&](std::size_t b, std::size_t e) {
        Vec gx(g.dx), gy(g.dy);
        for (std::size_t i = b; i < e; ++i) {
            MSpan bx(Bx.data() + i * g.dx, g.dx), by(By.data() + i * g.dy, g.dy);
            std::fill(bx.begin(), bx.end(), 0.0);
            std::fill(by.begin(), by.end(), 0.0);
            for (std::size_t j = 0; j < n; ++j) {
                g.grad_x(s.x(i), s.y(j), gx);
                for (std::size_t k = 0; k < g.dx; ++k) bx[k] -= gx[k];
                g.grad_y(s.x(j), s.y(i), gy);
                for (std::size_t k = 0; k < g.dy; ++k) by[k] += gy[k];
            }
            for (double& v : bx) v *= inv_n;
            for (double& v : by) v *= inv_n;
        }
    });
    return {std::move(Bx), std::move(By)};
}

// ------------------------------------------------------------ stepping

namespace detail {

inline void apply_step(const ParticleState& s, ParticleState& out, const Vec& Bx, const Vec& By, double h,
                       double amp, std::size_t i, CSpan noise_i, std::size_t step) {
    for (std::size_t k = 0; k < s.dx; ++k) {
        const double v = s.X[i * s.dx + k] + h * Bx[i * s.dx + k] + amp * noise_i[k];
        if (!std::isfinite(v))
            throw NumericalBlowup("non-finite x-particle " + std::to_string(i) + " at step " + std::to_string(step), i,
                                  step);
        out.X[i * s.dx + k] = v;
    }
    for (std::size_t k = 0; k < s.dy; ++k) {
        const double v = s.Y[i * s.dy + k] + h * By[i * s.dy + k] + amp * noise_i[s.dx + k];
        if (!std::isfinite(v))
            throw NumericalBlowup("non-finite y-particle " + std::to_string(i) + " at step " + std::to_string(step), i,
                                  step);
        out.Y[i * s.dy + k] = v;
    }
}

} // namespace detail

/// One explicit Euler-Maruyama step with drift frozen at the pre-step state.
/// `noise` holds n x (dx + dy) standard normals, x-components first per particle.
/// beta = +infinity gives the noiseless descent-ascent step.
inline ParticleState em_step(const ParticleState& s, const Game& g, double h, double beta, CSpan noise,
                             std::size_t step_index = 0, DriftMode mode = DriftMode::automatic) {
    if (!(h > 0.0)) throw UsageError("em_step: h must be positive");
    if (!(beta > 0.0)) throw UsageError("em_step: beta must be positive");
    const std::size_t w = s.dx + s.dy;
    if (noise.size() != s.n * w) throw UsageError("em_step: noise must have n x (dx + dy) entries");
    const auto [Bx, By] = drift(g, s, mode);
    const double amp = std::isinf(beta) ? 0.0 : std::sqrt(2.0 * h / beta);
    ParticleState out = s;
    out.t = s.t + h;
    for (std::size_t i = 0; i < s.n; ++i) detail::apply_step(s, out, Bx, By, h, amp, i, noise.subspan(i * w, w), step_index);
    return out;
}

inline void draw_initial(const InitSpec& spec, double box_radius, std::uint64_t key, MSpan out) {
    switch (spec.kind) {
    case InitSpec::Kind::point:
        for (std::size_t k = 0; k < out.size(); ++k) out[k] = spec.mean.empty() ? 0.0 : spec.mean[k];
        break;
    case InitSpec::Kind::uniform_box:
        for (std::size_t k = 0; k < out.size(); ++k) out[k] = box_radius * (2.0 * rng::uniform(key, k) - 1.0);
        break;
    case InitSpec::Kind::gaussian: {
        const double sd = std::sqrt(spec.variance);
        for (std::size_t k = 0; k < out.size(); ++k)
            out[k] = (spec.mean.empty() ? 0.0 : spec.mean[k]) + sd * rng::normal(key, k);
        break;
    }
    }
}

/// Initial particles drawn i.i.d.; particle i uses RNG key `keys[i]` (default i).
inline ParticleState initial_state(const SimConfig& c, const Game& g, const std::vector<std::uint64_t>* keys = nullptr) {
    ParticleState s;
    s.n = c.n;
    s.dx = g.dx;
    s.dy = g.dy;
    s.X.resize(c.n * g.dx);
    s.Y.resize(c.n * g.dy);
    for (std::size_t i = 0; i < c.n; ++i) {
        const std::uint64_t k = keys ? (*keys)[i] : i;
        draw_initial(c.init_x, g.box_radius, rng::stream_key(c.seed, rng::Stream::init_x, k), MSpan(s.X.data() + i * g.dx, g.dx));
        draw_initial(c.init_y, g.box_radius, rng::stream_key(c.seed, rng::Stream::init_y, k), MSpan(s.Y.data() + i * g.dy, g.dy));
    }
    return s;
}

struct SimulateOptions {
    /// Per-particle RNG keys; a permutation of them permutes the trajectory.
    const std::vector<std::uint64_t>* particle_keys = nullptr;
    /// Starting state instead of drawing from the configured initial laws.
    const ParticleState* initial = nullptr;
    /// Called with the pre-step state and its drift at every step.
    std::function<void(const ParticleState&, const Vec& Bx, const Vec& By, std::size_t step)> observer;
};

/// Runs ceil(T/h) steps, recording every record_stride steps from t = 0.
/// Output is bit-identical for any worker count.
inline TrajectoryRecording simulate(const SimConfig& c, const Game& g, const SimulateOptions& opt = {}) {
    c.validate();
    if (opt.particle_keys && opt.particle_keys->size() != c.n) throw UsageError("simulate: need one key per particle");
    std::vector<std::uint64_t> default_keys;
    const std::vector<std::uint64_t>* keys = opt.particle_keys;
    if (!keys) {
        default_keys.resize(c.n);
        std::iota(default_keys.begin(), default_keys.end(), std::uint64_t{0});
        keys = &default_keys;
    }
    ParticleState s = opt.initial ? *opt.initial : initial_state(c, g, keys);
    s.validate();
    if (s.n != c.n || s.dx != g.dx || s.dy != g.dy) throw UsageError("simulate: initial state does not match config");

    const bool separable = detail::use_separable(g, c.drift_mode);
    const std::size_t work = separable ? c.n : c.n * c.n;
    const unsigned pool = c.workers ? c.workers : worker_count_from_env();
    const unsigned workers = work >= c.min_parallel_work ? pool : 1;

    TrajectoryRecording rec;
    rec.config = c;
    const std::size_t steps = c.steps();
    const double amp = std::sqrt(2.0 * c.h / c.beta);
    const std::size_t w = g.dx + g.dy;
    rec.times.push_back(0.0);
    rec.states.push_back(s);
    ParticleState next = s;
    for (std::size_t step = 0; step < steps; ++step) {
        const auto [Bx, By] = drift(g, s, c.drift_mode, workers);
        if (opt.observer) opt.observer(s, Bx, By, step);
        parallel_for(c.n, workers, [&](std::size_t b, std::size_t e) {
            Vec noise(w);
            for (std::size_t i = b; i < e; ++i) {
                const auto key = rng::stream_key(c.seed, rng::Stream::step_noise, (*keys)[i], step);
                for (std::size_t k = 0; k < w; ++k) noise[k] = rng::normal(key, k);
                detail::apply_step(s, next, Bx, By, c.h, amp, i, noise, step);
            }
        });
        next.t = static_cast<double>(step + 1) * c.h;
        std::swap(s, next);
        if ((step + 1) % c.record_stride == 0) {
            rec.times.push_back(s.t);
            rec.states.push_back(s);
        }
    }
    return rec;
}

inline std::pair<EmpiricalMeasure, EmpiricalMeasure> empirical_marginals(const ParticleState& s) {
    s.validate();
    return {EmpiricalMeasure::uniform(s.dx, s.X), EmpiricalMeasure::uniform(s.dy, s.Y)};
}

/// gamma^n: the paired cloud (X_i, Y_i) on Z = X x Y.
inline EmpiricalMeasure joint_empirical(const ParticleState& s) {
    s.validate();
    Vec pts(s.n * (s.dx + s.dy));
    for (std::size_t i = 0; i < s.n; ++i) {
        std::copy(s.x(i).begin(), s.x(i).end(), pts.begin() + static_cast<std::ptrdiff_t>(i * (s.dx + s.dy)));
        std::copy(s.y(i).begin(), s.y(i).end(), pts.begin() + static_cast<std::ptrdiff_t>(i * (s.dx + s.dy) + s.dx));
    }
    return EmpiricalMeasure::uniform(s.dx + s.dy, std::move(pts));
}

} // namespace mfne
