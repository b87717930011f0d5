#pragma once

// Two-player zero-sum games on R^dx x R^dy. Player one (x) receives the loss
// l(x, y) and minimises it; player two (y) receives -l(x, y).

#include "mfne/error.hpp"
#include "mfne/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace mfne {

using Vec = std::vector<double>;
using CSpan = std::span<const double>;
using MSpan = std::span<double>;

/// Optional structure a game can declare when each partial gradient depends on
/// the opponent only through a finite feature vector, linearly:
///   grad_x l(x, y) = grad_x_from(x, phi_y(y)),  linear in phi_y,
/// and symmetrically for grad_y. Averaging over an opponent cloud then reduces
/// to averaging its features, turning the O(n^2) drift into O(n).
struct SeparableStructure {
    std::size_t y_feature_count = 0;
    std::function<void(CSpan y, MSpan features)> y_features;
    std::function<void(CSpan x, CSpan mean_y_features, MSpan gx)> grad_x_from;

    std::size_t x_feature_count = 0;
    std::function<void(CSpan x, MSpan features)> x_features;
    std::function<void(CSpan y, CSpan mean_x_features, MSpan gy)> grad_y_from;
};

struct Game {
    std::string name;
    std::size_t dx = 1;
    std::size_t dy = 1;
    /// Half-width of the evaluation box [-R, R] per coordinate.
    double box_radius = 1.0;
    std::function<double(CSpan x, CSpan y)> loss;
    std::function<void(CSpan x, CSpan y, MSpan gx)> grad_x;
    std::function<void(CSpan x, CSpan y, MSpan gy)> grad_y;
    std::optional<SeparableStructure> separable;
};

struct RegularityConstants {
    double C = 0.0;       ///< max |grad l| over the box grid
    double L = 0.0;       ///< max axis difference quotient of grad l
    double C_tilde = 0.0; ///< max |l| + C, bounds the BL-norm of opponent-averaged losses
};

struct GradientReport {
    double max_rel_error = 0.0;
    Vec worst_x;
    Vec worst_y;
};

namespace detail {

inline void check_dims(const Game& g, CSpan x, CSpan y) {
    if (x.size() != g.dx || y.size() != g.dy)
        throw UsageError("game '" + g.name + "' expects dims (" + std::to_string(g.dx) + ", " +
                         std::to_string(g.dy) + "), got (" + std::to_string(x.size()) + ", " +
                         std::to_string(y.size()) + ")");
}

inline double dot(CSpan a, CSpan b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm(CSpan a) { return std::sqrt(dot(a, a)); }

} // namespace detail

inline double loss_eval(const Game& g, CSpan x, CSpan y) {
    detail::check_dims(g, x, y);
    return g.loss(x, y);
}

/// Payoff of player two.
inline double opponent_payoff(const Game& g, CSpan x, CSpan y) { return -loss_eval(g, x, y); }

inline std::pair<Vec, Vec> grad_loss(const Game& g, CSpan x, CSpan y) {
    detail::check_dims(g, x, y);
    Vec gx(g.dx), gy(g.dy);
    g.grad_x(x, y, gx);
    g.grad_y(x, y, gy);
    return {std::move(gx), std::move(gy)};
}

// ---------------------------------------------------------------- built-ins

/// l(x, y) = x . y
inline Game make_bilinear(std::size_t d = 1, double box_radius = 1.0) {
    Game g;
    g.name = "bilinear";
    g.dx = g.dy = d;
    g.box_radius = box_radius;
    g.loss = [](CSpan x, CSpan y) { return detail::dot(x, y); };
    g.grad_x = [](CSpan, CSpan y, MSpan gx) { std::copy(y.begin(), y.end(), gx.begin()); };
    g.grad_y = [](CSpan x, CSpan, MSpan gy) { std::copy(x.begin(), x.end(), gy.begin()); };
    SeparableStructure s;
    s.y_feature_count = d;
    s.y_features = [](CSpan y, MSpan f) { std::copy(y.begin(), y.end(), f.begin()); };
    s.grad_x_from = [](CSpan, CSpan m, MSpan gx) { std::copy(m.begin(), m.end(), gx.begin()); };
    s.x_feature_count = d;
    s.x_features = [](CSpan x, MSpan f) { std::copy(x.begin(), x.end(), f.begin()); };
    s.grad_y_from = [](CSpan, CSpan m, MSpan gy) { std::copy(m.begin(), m.end(), gy.begin()); };
    g.separable = std::move(s);
    return g;
}

/// l(x, y) = x . y + a (|x|^2 - |y|^2). For a > 0 the entropic-regularised
/// flow has a Gaussian stationary pair with variance 1 / (2 a beta).
inline Game make_quadratic_bilinear(double a = 0.5, std::size_t d = 1, double box_radius = 1.0) {
    Game g;
    g.name = "quadratic_bilinear";
    g.dx = g.dy = d;
    g.box_radius = box_radius;
    g.loss = [a](CSpan x, CSpan y) {
        return detail::dot(x, y) + a * (detail::dot(x, x) - detail::dot(y, y));
    };
    g.grad_x = [a](CSpan x, CSpan y, MSpan gx) {
        for (std::size_t i = 0; i < x.size(); ++i) gx[i] = y[i] + 2.0 * a * x[i];
    };
    g.grad_y = [a](CSpan x, CSpan y, MSpan gy) {
        for (std::size_t i = 0; i < y.size(); ++i) gy[i] = x[i] - 2.0 * a * y[i];
    };
    SeparableStructure s;
    s.y_feature_count = d;
    s.y_features = [](CSpan y, MSpan f) { std::copy(y.begin(), y.end(), f.begin()); };
    s.grad_x_from = [a](CSpan x, CSpan m, MSpan gx) {
        for (std::size_t i = 0; i < x.size(); ++i) gx[i] = m[i] + 2.0 * a * x[i];
    };
    s.x_feature_count = d;
    s.x_features = [](CSpan x, MSpan f) { std::copy(x.begin(), x.end(), f.begin()); };
    s.grad_y_from = [a](CSpan y, CSpan m, MSpan gy) {
        for (std::size_t i = 0; i < y.size(); ++i) gy[i] = m[i] - 2.0 * a * y[i];
    };
    g.separable = std::move(s);
    return g;
}

/// l(x, y) = sin(x_1) cos(y_1); bounded with bounded Lipschitz gradient on all of R^d.
inline Game make_sin_cos(std::size_t dx = 1, std::size_t dy = 1, double box_radius = 3.0) {
    Game g;
    g.name = "sin_cos";
    g.dx = dx;
    g.dy = dy;
    g.box_radius = box_radius;
    g.loss = [](CSpan x, CSpan y) { return std::sin(x[0]) * std::cos(y[0]); };
    g.grad_x = [](CSpan x, CSpan y, MSpan gx) {
        std::fill(gx.begin(), gx.end(), 0.0);
        gx[0] = std::cos(x[0]) * std::cos(y[0]);
    };
    g.grad_y = [](CSpan x, CSpan y, MSpan gy) {
        std::fill(gy.begin(), gy.end(), 0.0);
        gy[0] = -std::sin(x[0]) * std::sin(y[0]);
    };
    SeparableStructure s;
    s.y_feature_count = 1;
    s.y_features = [](CSpan y, MSpan f) { f[0] = std::cos(y[0]); };
    s.grad_x_from = [](CSpan x, CSpan m, MSpan gx) {
        std::fill(gx.begin(), gx.end(), 0.0);
        gx[0] = std::cos(x[0]) * m[0];
    };
    s.x_feature_count = 1;
    s.x_features = [](CSpan x, MSpan f) { f[0] = std::sin(x[0]); };
    s.grad_y_from = [](CSpan y, CSpan m, MSpan gy) {
        std::fill(gy.begin(), gy.end(), 0.0);
        gy[0] = -std::sin(y[0]) * m[0];
    };
    g.separable = std::move(s);
    return g;
}

/// l == c. With c = 0 the dynamics reduce to independent heat flows.
inline Game make_constant(double c = 0.0, std::size_t dx = 1, std::size_t dy = 1,
                          double box_radius = 1.0) {
    Game g;
    g.name = "constant";
    g.dx = dx;
    g.dy = dy;
    g.box_radius = box_radius;
    g.loss = [c](CSpan, CSpan) { return c; };
    g.grad_x = [](CSpan, CSpan, MSpan gx) { std::fill(gx.begin(), gx.end(), 0.0); };
    g.grad_y = [](CSpan, CSpan, MSpan gy) { std::fill(gy.begin(), gy.end(), 0.0); };
    SeparableStructure s;
    s.y_features = [](CSpan, MSpan) {};
    s.grad_x_from = [](CSpan, CSpan, MSpan gx) { std::fill(gx.begin(), gx.end(), 0.0); };
    s.x_features = [](CSpan, MSpan) {};
    s.grad_y_from = [](CSpan, CSpan, MSpan gy) { std::fill(gy.begin(), gy.end(), 0.0); };
    g.separable = std::move(s);
    return g;
}

using GameParams = std::map<std::string, double>;

/// Built-in game by name. Recognised parameters: "a" (quadratic_bilinear),
/// "c" (constant), "d" / "dx" / "dy" (dimensions).
inline Game make_game(const std::string& name, const GameParams& params, double box_radius) {
    auto get = [&](const std::string& k, double def) {
        auto it = params.find(k);
        return it == params.end() ? def : it->second;
    };
    auto dim = [&](const std::string& k, double def) {
        const double v = get(k, def);
        if (v < 1 || v != std::floor(v)) throw ConfigError("game parameter '" + k + "' must be a positive integer");
        return static_cast<std::size_t>(v);
    };
    const std::map<std::string, std::vector<std::string>> allowed = {
        {"bilinear", {"d"}},
        {"quadratic_bilinear", {"a", "d"}},
        {"sin_cos", {"dx", "dy"}},
        {"constant", {"c", "dx", "dy"}},
    };
    auto it = allowed.find(name);
    if (it == allowed.end()) throw ConfigError("unknown game '" + name + "'");
    for (const auto& [k, v] : params) {
        if (std::find(it->second.begin(), it->second.end(), k) == it->second.end())
            throw ConfigError("unknown parameter '" + k + "' for game '" + name + "'");
    }
    if (!(box_radius > 0.0)) throw ConfigError("game.box_radius must be positive");
    if (name == "bilinear") return make_bilinear(dim("d", 1), box_radius);
    if (name == "quadratic_bilinear") return make_quadratic_bilinear(get("a", 0.5), dim("d", 1), box_radius);
    if (name == "sin_cos") return make_sin_cos(dim("dx", 1), dim("dy", 1), box_radius);
    return make_constant(get("c", 0.0), dim("dx", 1), dim("dy", 1), box_radius);
}

// ---------------------------------------------------------------- diagnostics

/// Analytic gradients against central differences of the loss at uniform box
/// samples. Error per point is |g - g_fd| / max(1, |g|) over the joint gradient.
inline GradientReport check_gradients(const Game& g, std::size_t n_points, double eps, std::uint64_t seed) {
    if (!(eps > 0.0)) throw UsageError("check_gradients: eps must be positive");
    if (n_points < 1) throw UsageError("check_gradients: n_points must be >= 1");
    const std::size_t d = g.dx + g.dy;
    GradientReport rep;
    rep.max_rel_error = -1.0;
    Vec z(d), gx(g.dx), gy(g.dy), fd(d);
    for (std::size_t p = 0; p < n_points; ++p) {
        const auto k = rng::stream_key(seed, rng::Stream::gradcheck, p);
        for (std::size_t i = 0; i < d; ++i) z[i] = g.box_radius * (2.0 * rng::uniform(k, i) - 1.0);
        CSpan x(z.data(), g.dx), y(z.data() + g.dx, g.dy);
        g.grad_x(x, y, gx);
        g.grad_y(x, y, gy);
        for (std::size_t i = 0; i < d; ++i) {
            Vec zp = z, zm = z;
            zp[i] += eps;
            zm[i] -= eps;
            const double lp = g.loss(CSpan(zp.data(), g.dx), CSpan(zp.data() + g.dx, g.dy));
            const double lm = g.loss(CSpan(zm.data(), g.dx), CSpan(zm.data() + g.dx, g.dy));
            fd[i] = (lp - lm) / (2.0 * eps);
        }
        double diff2 = 0.0, norm2 = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            const double a = i < g.dx ? gx[i] : gy[i - g.dx];
            diff2 += (a - fd[i]) * (a - fd[i]);
            norm2 += a * a;
        }
        const double err = std::sqrt(diff2) / std::max(1.0, std::sqrt(norm2));
        if (err > rep.max_rel_error) {
            rep.max_rel_error = err;
            rep.worst_x.assign(z.begin(), z.begin() + static_cast<std::ptrdiff_t>(g.dx));
            rep.worst_y.assign(z.begin() + static_cast<std::ptrdiff_t>(g.dx), z.end());
        }
    }
    return rep;
}

/// Box-restricted estimates of sup |grad l|, the Lipschitz constant of grad l
/// and the BL-norm bound, from a tensor grid with grid_per_dim points per
/// coordinate (endpoints included). Cost grows as grid_per_dim^(dx+dy).
inline RegularityConstants regularity_constants(const Game& g, std::size_t grid_per_dim) {
    if (grid_per_dim < 2) throw UsageError("regularity_constants: grid_per_dim must be >= 2");
    const std::size_t d = g.dx + g.dy;
    std::size_t total = 1;
    for (std::size_t i = 0; i < d; ++i) total *= grid_per_dim;
    const double R = g.box_radius;
    const double spacing = 2.0 * R / static_cast<double>(grid_per_dim - 1);
    std::vector<double> grads(total * d);
    RegularityConstants rc;
    double max_abs_l = 0.0;
    Vec z(d);
    std::vector<std::size_t> idx(d, 0);
    for (std::size_t p = 0; p < total; ++p) {
        std::size_t rem = p;
        for (std::size_t i = d; i-- > 0;) {
            idx[i] = rem % grid_per_dim;
            rem /= grid_per_dim;
            z[i] = -R + spacing * static_cast<double>(idx[i]);
        }
        CSpan x(z.data(), g.dx), y(z.data() + g.dx, g.dy);
        MSpan gp(grads.data() + p * d, d);
        g.grad_x(x, y, gp.subspan(0, g.dx));
        g.grad_y(x, y, gp.subspan(g.dx, g.dy));
        rc.C = std::max(rc.C, detail::norm(gp));
        max_abs_l = std::max(max_abs_l, std::abs(g.loss(x, y)));
    }
    // Neighbour along axis i has flat index p + stride_i.
    std::size_t stride = 1;
    for (std::size_t i = d; i-- > 0;) {
        for (std::size_t p = 0; p < total; ++p) {
            if ((p / stride) % grid_per_dim == grid_per_dim - 1) continue;
            const std::size_t q = p + stride;
            double diff2 = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
                const double dd = grads[q * d + k] - grads[p * d + k];
                diff2 += dd * dd;
            }
            rc.L = std::max(rc.L, std::sqrt(diff2) / spacing);
        }
        stride *= grid_per_dim;
    }
    rc.C_tilde = max_abs_l + rc.C;
    return rc;
}

} // namespace mfne
