#pragma once

// Probability measures as weighted point clouds or cell-centred grid densities,
// plus transport-type distances between them.

#include "mfne/error.hpp"
#include "mfne/game.hpp"
#include "mfne/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace mfne {

/// Weighted point cloud; points are stored row-major (m x dim).
struct EmpiricalMeasure {
    std::size_t dim = 1;
    Vec points;
    Vec weights;

    std::size_t size() const { return weights.size(); }
    CSpan point(std::size_t i) const { return CSpan(points.data() + i * dim, dim); }

    static EmpiricalMeasure uniform(std::size_t dim, Vec points) {
        if (dim == 0 || points.size() % dim != 0 || points.empty())
            throw UsageError("EmpiricalMeasure: point array is not a non-empty multiple of dim");
        EmpiricalMeasure m;
        m.dim = dim;
        const std::size_t n = points.size() / dim;
        m.points = std::move(points);
        m.weights.assign(n, 1.0 / static_cast<double>(n));
        return m;
    }

    static EmpiricalMeasure dirac(Vec at) {
        const std::size_t d = at.size();
        return uniform(d, std::move(at));
    }

    void validate() const {
        if (size() == 0) throw UsageError("EmpiricalMeasure: empty");
        if (points.size() != size() * dim) throw UsageError("EmpiricalMeasure: points/weights size mismatch");
        double s = 0.0;
        for (double w : weights) {
            if (!(w >= 0.0)) throw UsageError("EmpiricalMeasure: negative weight");
            s += w;
        }
        if (std::abs(s - 1.0) > 1e-12) throw UsageError("EmpiricalMeasure: weights do not sum to 1");
    }

    Vec mean() const {
        Vec m(dim, 0.0);
        for (std::size_t i = 0; i < size(); ++i)
            for (std::size_t k = 0; k < dim; ++k) m[k] += weights[i] * points[i * dim + k];
        return m;
    }

    /// Per-coordinate variance.
    Vec variance() const {
        const Vec m = mean();
        Vec v(dim, 0.0);
        for (std::size_t i = 0; i < size(); ++i)
            for (std::size_t k = 0; k < dim; ++k) {
                const double d = points[i * dim + k] - m[k];
                v[k] += weights[i] * d * d;
            }
        return v;
    }
};

struct Axis {
    double lo = -1.0;
    double hi = 1.0;
    std::size_t cells = 1;

    double width() const { return (hi - lo) / static_cast<double>(cells); }
    double center(std::size_t i) const { return lo + (static_cast<double>(i) + 0.5) * width(); }
    double edge(std::size_t i) const { return lo + static_cast<double>(i) * width(); }
    bool operator==(const Axis&) const = default;
};

inline std::vector<Axis> box_axes(std::size_t dim, double radius, std::size_t cells) {
    return std::vector<Axis>(dim, Axis{-radius, radius, cells});
}

/// Cell-centred density on a tensor box grid, row-major with the last axis
/// fastest. Integrals use the midpoint rule.
struct GridMeasure {
    std::vector<Axis> axes;
    Vec density;

    std::size_t dim() const { return axes.size(); }
    std::size_t size() const {
        std::size_t n = 1;
        for (const auto& a : axes) n *= a.cells;
        return n;
    }
    double cell_volume() const {
        double v = 1.0;
        for (const auto& a : axes) v *= a.width();
        return v;
    }
    /// Flat-index stride of axis k.
    std::size_t stride(std::size_t k) const {
        std::size_t s = 1;
        for (std::size_t j = k + 1; j < axes.size(); ++j) s *= axes[j].cells;
        return s;
    }
    std::size_t index_along(std::size_t flat, std::size_t k) const { return (flat / stride(k)) % axes[k].cells; }

    void center(std::size_t flat, MSpan out) const {
        for (std::size_t k = axes.size(); k-- > 0;) {
            out[k] = axes[k].center(flat % axes[k].cells);
            flat /= axes[k].cells;
        }
    }
    Vec center(std::size_t flat) const {
        Vec c(dim());
        center(flat, c);
        return c;
    }

    double total_mass() const {
        double s = 0.0;
        for (double v : density) s += v;
        return s * cell_volume();
    }

    Vec mean() const {
        Vec m(dim(), 0.0), c(dim());
        const double vol = cell_volume();
        for (std::size_t i = 0; i < density.size(); ++i) {
            center(i, c);
            for (std::size_t k = 0; k < dim(); ++k) m[k] += density[i] * vol * c[k];
        }
        return m;
    }

    Vec variance() const {
        const Vec m = mean();
        Vec v(dim(), 0.0), c(dim());
        const double vol = cell_volume();
        for (std::size_t i = 0; i < density.size(); ++i) {
            center(i, c);
            for (std::size_t k = 0; k < dim(); ++k) v[k] += density[i] * vol * (c[k] - m[k]) * (c[k] - m[k]);
        }
        return v;
    }

    /// Mass in cells touching the boundary of the box.
    double boundary_mass() const {
        double s = 0.0;
        for (std::size_t i = 0; i < density.size(); ++i) {
            for (std::size_t k = 0; k < dim(); ++k) {
                const std::size_t j = index_along(i, k);
                if (j == 0 || j + 1 == axes[k].cells) {
                    s += density[i];
                    break;
                }
            }
        }
        return s * cell_volume();
    }

    void validate(double tol = 1e-9) const {
        if (axes.empty()) throw UsageError("GridMeasure: no axes");
        if (density.size() != size()) throw UsageError("GridMeasure: density size does not match resolution");
        for (double v : density)
            if (!(v >= 0.0)) throw UsageError("GridMeasure: negative or non-finite density");
        if (std::abs(total_mass() - 1.0) > tol) throw UsageError("GridMeasure: total mass is not 1");
    }

    void normalize() {
        const double m = total_mass();
        if (!(m > 0.0)) throw DegenerateInput("GridMeasure: zero total mass");
        for (double& v : density) v /= m;
    }

    /// Samples f at cell centres and normalises.
    static GridMeasure from_density(std::vector<Axis> axes, const std::function<double(CSpan)>& f) {
        GridMeasure g;
        g.axes = std::move(axes);
        g.density.resize(g.size());
        Vec c(g.dim());
        for (std::size_t i = 0; i < g.density.size(); ++i) {
            g.center(i, c);
            g.density[i] = f(c);
        }
        g.normalize();
        return g;
    }

    static GridMeasure uniform(std::vector<Axis> axes) {
        return from_density(std::move(axes), [](CSpan) { return 1.0; });
    }

    /// Isotropic Gaussian sampled at cell centres and renormalised on the box.
    static GridMeasure gaussian(std::vector<Axis> axes, const Vec& mean, double variance) {
        return from_density(std::move(axes), [&](CSpan z) {
            double q = 0.0;
            for (std::size_t k = 0; k < z.size(); ++k) q += (z[k] - mean[k]) * (z[k] - mean[k]);
            return std::exp(-0.5 * q / variance);
        });
    }

    /// Midpoint-rule atoms: one atom per cell at its centre.
    EmpiricalMeasure to_atoms() const {
        EmpiricalMeasure e;
        e.dim = dim();
        e.points.resize(size() * dim());
        e.weights.resize(size());
        const double vol = cell_volume();
        for (std::size_t i = 0; i < size(); ++i) {
            center(i, MSpan(e.points.data() + i * dim(), dim()));
            e.weights[i] = density[i] * vol;
        }
        return e;
    }

    /// Marginal over the axes listed in `keep` (in order).
    GridMeasure marginal(const std::vector<std::size_t>& keep) const {
        GridMeasure out;
        for (auto k : keep) out.axes.push_back(axes[k]);
        out.density.assign(out.size(), 0.0);
        double removed_volume = 1.0;
        for (std::size_t k = 0; k < dim(); ++k)
            if (std::find(keep.begin(), keep.end(), k) == keep.end()) removed_volume *= axes[k].width();
        for (std::size_t i = 0; i < size(); ++i) {
            std::size_t o = 0;
            for (auto k : keep) o = o * axes[k].cells + index_along(i, k);
            out.density[o] += density[i] * removed_volume;
        }
        return out;
    }
};

/// theta = a (x) b on the concatenated grid.
inline GridMeasure product(const GridMeasure& a, const GridMeasure& b) {
    GridMeasure g;
    g.axes = a.axes;
    g.axes.insert(g.axes.end(), b.axes.begin(), b.axes.end());
    g.density.resize(a.size() * b.size());
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < b.size(); ++j) g.density[i * b.size() + j] = a.density[i] * b.density[j];
    return g;
}

/// Time-indexed grid measures on a uniform time grid.
struct MeasurePath {
    Vec times;
    std::vector<GridMeasure> measures;

    std::size_t size() const { return times.size(); }
    double dt() const { return times.size() > 1 ? times[1] - times[0] : 0.0; }

    void validate() const {
        if (times.size() != measures.size()) throw UsageError("MeasurePath: times/measures size mismatch");
        for (std::size_t k = 1; k < times.size(); ++k) {
            if (!(times[k] > times[k - 1])) throw UsageError("MeasurePath: times not increasing");
            if (std::abs((times[k] - times[k - 1]) - dt()) > 1e-9 * std::max(1.0, std::abs(times[k])))
                throw UsageError("MeasurePath: non-uniform time spacing");
        }
        for (const auto& m : measures) m.validate();
    }
};

// ------------------------------------------------------------ 1-D transport

/// A 1-D probability measure as sorted disjoint pieces: atoms (lo == hi) or
/// uniform mass on [lo, hi]. Its quantile function is piecewise linear.
struct Distribution1D {
    struct Piece {
        double lo, hi, mass;
    };
    std::vector<Piece> pieces;
};

inline Distribution1D to_distribution1d(const EmpiricalMeasure& m) {
    if (m.dim != 1) throw UsageError("1-D transport needs one-dimensional measures; use sliced_wp for d > 1");
    Distribution1D d;
    d.pieces.reserve(m.size());
    for (std::size_t i = 0; i < m.size(); ++i)
        if (m.weights[i] > 0.0) d.pieces.push_back({m.points[i], m.points[i], m.weights[i]});
    std::sort(d.pieces.begin(), d.pieces.end(), [](const auto& a, const auto& b) { return a.lo < b.lo; });
    return d;
}

inline Distribution1D to_distribution1d(const GridMeasure& g) {
    if (g.dim() != 1) throw UsageError("1-D transport needs one-dimensional measures; use sliced_wp for d > 1");
    Distribution1D d;
    const double w = g.axes[0].width();
    for (std::size_t i = 0; i < g.size(); ++i)
        if (g.density[i] > 0.0) d.pieces.push_back({g.axes[0].edge(i), g.axes[0].edge(i + 1), g.density[i] * w});
    return d;
}

namespace detail {

inline double normalised_total(const Distribution1D& d) {
    double s = 0.0;
    for (const auto& p : d.pieces) s += p.mass;
    if (!(s > 0.0)) throw DegenerateInput("1-D transport: measure with zero mass");
    return s;
}

// Integral over an interval of length len of |f|^p for f linear from f0 to f1.
inline double abs_power_integral(double f0, double f1, double len, int p) {
    if (p == 2) return len * (f0 * f0 + f0 * f1 + f1 * f1) / 3.0;
    if ((f0 >= 0.0) == (f1 >= 0.0)) return len * 0.5 * (std::abs(f0) + std::abs(f1));
    return len * 0.5 * (f0 * f0 + f1 * f1) / (std::abs(f0) + std::abs(f1));
}

} // namespace detail

/// Exact W_p, p in {1, 2}, between 1-D measures via their quantile functions.
inline double wp_1d(const Distribution1D& a, const Distribution1D& b, int p) {
    if (p != 1 && p != 2) throw UsageError("wp_1d: p must be 1 or 2");
    const double ta = detail::normalised_total(a), tb = detail::normalised_total(b);
    std::size_t i = 0, j = 0;
    double ua0 = 0.0, ub0 = 0.0, u = 0.0, acc = 0.0;
    auto quant = [](const Distribution1D::Piece& pc, double u0, double mass, double uu) {
        return pc.lo + (pc.hi - pc.lo) * std::clamp((uu - u0) / mass, 0.0, 1.0);
    };
    while (i < a.pieces.size() && j < b.pieces.size()) {
        const auto& pa = a.pieces[i];
        const auto& pb = b.pieces[j];
        const double ma = pa.mass / ta, mb = pb.mass / tb;
        double ua1 = ua0 + ma, ub1 = ub0 + mb;
        if (i + 1 == a.pieces.size()) ua1 = 1.0;
        if (j + 1 == b.pieces.size()) ub1 = 1.0;
        const double u1 = std::min(ua1, ub1);
        if (u1 > u) {
            const double f0 = quant(pa, ua0, ma, u) - quant(pb, ub0, mb, u);
            const double f1 = quant(pa, ua0, ma, u1) - quant(pb, ub0, mb, u1);
            acc += detail::abs_power_integral(f0, f1, u1 - u, p);
            u = u1;
        }
        if (ua1 <= u1) {
            ua0 = ua1;
            ++i;
        }
        if (ub1 <= u1) {
            ub0 = ub1;
            ++j;
        }
    }
    return p == 1 ? acc : std::sqrt(std::max(0.0, acc));
}

template <class A, class B>
double w1_1d(const A& mu, const B& nu) {
    return wp_1d(to_distribution1d(mu), to_distribution1d(nu), 1);
}

/// Quantiles of a 1-D measure at the given levels in [0, 1].
template <class M>
Vec quantiles(const M& m, const Vec& levels) {
    const Distribution1D d = to_distribution1d(m);
    const double total = detail::normalised_total(d);
    Vec out;
    for (double q : levels) {
        double u0 = 0.0;
        double value = d.pieces.back().hi;
        for (const auto& pc : d.pieces) {
            const double u1 = u0 + pc.mass / total;
            if (q <= u1) {
                value = pc.lo + (pc.hi - pc.lo) * std::clamp((q - u0) / (pc.mass / total), 0.0, 1.0);
                break;
            }
            u0 = u1;
        }
        out.push_back(value);
    }
    return out;
}

namespace detail {

inline EmpiricalMeasure as_atoms(const EmpiricalMeasure& m) { return m; }
inline EmpiricalMeasure as_atoms(const GridMeasure& g) { return g.to_atoms(); }

inline std::size_t measure_dim(const EmpiricalMeasure& m) { return m.dim; }
inline std::size_t measure_dim(const GridMeasure& g) { return g.dim(); }

inline Vec random_direction(std::uint64_t seed, rng::Stream s, std::size_t index, std::size_t dim) {
    const auto k = rng::stream_key(seed, s, index);
    Vec dir(dim);
    double n2 = 0.0;
    do {
        n2 = 0.0;
        for (std::size_t j = 0; j < dim; ++j) {
            dir[j] = rng::normal(k, j);
            n2 += dir[j] * dir[j];
        }
    } while (n2 == 0.0);
    for (double& v : dir) v /= std::sqrt(n2);
    return dir;
}

inline Distribution1D project(const EmpiricalMeasure& m, const Vec& dir) {
    Distribution1D d;
    d.pieces.reserve(m.size());
    for (std::size_t i = 0; i < m.size(); ++i) {
        if (m.weights[i] <= 0.0) continue;
        const double t = dot(m.point(i), dir);
        d.pieces.push_back({t, t, m.weights[i]});
    }
    std::sort(d.pieces.begin(), d.pieces.end(), [](const auto& a, const auto& b) { return a.lo < b.lo; });
    return d;
}

} // namespace detail

/// Sliced W_p: mean over n_proj seeded uniform directions of the exact 1-D
/// W_p of the projections. In one dimension this is exactly wp_1d.
template <class A, class B>
double sliced_wp(const A& mu, const B& nu, int p, std::size_t n_proj, std::uint64_t seed) {
    const std::size_t d = detail::measure_dim(mu);
    if (d != detail::measure_dim(nu)) throw UsageError("sliced_wp: dimension mismatch");
    if (n_proj < 1) throw UsageError("sliced_wp: n_proj must be >= 1");
    if (d == 1) return wp_1d(to_distribution1d(mu), to_distribution1d(nu), p);
    const EmpiricalMeasure a = detail::as_atoms(mu), b = detail::as_atoms(nu);
    double s = 0.0;
    for (std::size_t k = 0; k < n_proj; ++k) {
        const Vec dir = detail::random_direction(seed, rng::Stream::projection, k, d);
        s += wp_1d(detail::project(a, dir), detail::project(b, dir), p);
    }
    return s / static_cast<double>(n_proj);
}

// ------------------------------------------------------------ d_BL from below

/// max over a fixed dictionary of unit-BL-norm functions of |int f d(mu - nu)|.
/// Every member satisfies |f|_inf + Lip f <= 1, so this never exceeds d_BL.
/// The dictionary always contains coordinate ramps clamp(z_k - c, -a, a)/(1 + a)
/// on a deterministic lattice of centres and half-widths, plus `dictionary_size`
/// seeded ramps, sigmoids and cosines along random directions.
template <class A, class B>
double dbl_lower_bound(const A& mu_in, const B& nu_in, std::size_t dictionary_size, std::uint64_t seed) {
    const EmpiricalMeasure mu = detail::as_atoms(mu_in), nu = detail::as_atoms(nu_in);
    if (mu.dim != nu.dim) throw UsageError("dbl_lower_bound: dimension mismatch");
    const std::size_t d = mu.dim;

    auto integrate = [&](const EmpiricalMeasure& m, auto&& f) {
        double s = 0.0;
        for (std::size_t i = 0; i < m.size(); ++i) s += m.weights[i] * f(m.point(i));
        return s;
    };
    auto gap = [&](auto&& f) { return std::abs(integrate(mu, f) - integrate(nu, f)); };

    // Pooled coordinate ranges.
    Vec lo(d, std::numeric_limits<double>::infinity()), hi(d, -std::numeric_limits<double>::infinity());
    for (const auto* m : {&mu, &nu})
        for (std::size_t i = 0; i < m->size(); ++i)
            for (std::size_t k = 0; k < d; ++k) {
                lo[k] = std::min(lo[k], m->point(i)[k]);
                hi[k] = std::max(hi[k], m->point(i)[k]);
            }

    double best = 0.0;
    constexpr std::size_t n_centres = 33;
    const double half_widths[] = {0.0625, 0.125, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 4.0, 8.0};
    for (std::size_t k = 0; k < d; ++k) {
        for (std::size_t c = 0; c < n_centres; ++c) {
            const double centre = lo[k] + (hi[k] - lo[k]) * static_cast<double>(c) / (n_centres - 1);
            for (double a : half_widths) {
                best = std::max(best, gap([&](CSpan z) { return std::clamp(z[k] - centre, -a, a) / (1.0 + a); }));
            }
        }
    }

    double span = 0.0;
    for (std::size_t k = 0; k < d; ++k) span = std::max(span, hi[k] - lo[k]);
    span = std::max(span, 1e-3);
    for (std::size_t j = 0; j < dictionary_size; ++j) {
        const Vec dir = detail::random_direction(seed, rng::Stream::dictionary, j, d);
        const auto key = rng::stream_key(seed, rng::Stream::dictionary, j, 1);
        double plo = std::numeric_limits<double>::infinity(), phi = -plo;
        for (const auto* m : {&mu, &nu})
            for (std::size_t i = 0; i < m->size(); ++i) {
                const double t = detail::dot(m->point(i), dir);
                plo = std::min(plo, t);
                phi = std::max(phi, t);
            }
        const double centre = plo + (phi - plo) * rng::uniform(key, 0);
        // Log-uniform scale in [span / 64, 4 span].
        const double scale = span * std::exp2(-6.0 + 8.0 * rng::uniform(key, 1));
        const double phase = 2.0 * 3.141592653589793 * rng::uniform(key, 2);
        switch (j % 3) {
        case 0:
            best = std::max(best, gap([&](CSpan z) {
                return std::clamp(detail::dot(z, dir) - centre, -scale, scale) / (1.0 + scale);
            }));
            break;
        case 1: {
            const double amp = scale / (1.0 + scale);
            best = std::max(best, gap([&](CSpan z) { return amp * std::tanh((detail::dot(z, dir) - centre) / scale); }));
            break;
        }
        default: {
            const double omega = 1.0 / scale;
            const double amp = 1.0 / (1.0 + omega);
            best = std::max(best, gap([&](CSpan z) { return amp * std::cos(omega * detail::dot(z, dir) + phase); }));
            break;
        }
        }
    }
    return best;
}

// ------------------------------------------------------------ KDE lifting

struct KdeResult {
    GridMeasure measure;
    double clipped_fraction = 0.0;
};

/// sigma-hat * m^(-1/(d+4)), sigma-hat the mean per-coordinate standard deviation.
inline double default_bandwidth(const EmpiricalMeasure& e) {
    const Vec v = e.variance();
    double s = 0.0;
    for (double x : v) s += std::sqrt(x);
    s /= static_cast<double>(v.size());
    return s * std::pow(static_cast<double>(e.size()), -1.0 / (static_cast<double>(e.dim) + 4.0));
}

/// Gaussian kernel density integrated exactly over each cell, clipped to the
/// box and renormalised. Points are accumulated in sorted order so the result
/// does not depend on their input order.
inline KdeResult kde_lift(const EmpiricalMeasure& emp, const std::vector<Axis>& axes, double bandwidth) {
    if (!(bandwidth > 0.0)) throw UsageError("kde_lift: bandwidth must be positive");
    if (axes.size() != emp.dim) throw UsageError("kde_lift: grid dimension does not match the measure");
    const std::size_t d = emp.dim;
    KdeResult res;
    res.measure.axes = axes;
    const std::size_t total = res.measure.size();
    Vec mass(total, 0.0);

    std::vector<std::size_t> order(emp.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const CSpan pa = emp.point(a), pb = emp.point(b);
        if (!std::equal(pa.begin(), pa.end(), pb.begin())) {
            return std::lexicographical_compare(pa.begin(), pa.end(), pb.begin(), pb.end());
        }
        return emp.weights[a] < emp.weights[b];
    });

    const double inv = 1.0 / (bandwidth * std::sqrt(2.0));
    std::vector<Vec> per_axis(d);
    std::vector<std::size_t> first(d), last(d);
    for (std::size_t i : order) {
        const CSpan p = emp.point(i);
        bool empty = false;
        for (std::size_t k = 0; k < d; ++k) {
            const Axis& ax = axes[k];
            const double w = ax.width();
            const double lo = p[k] - 8.0 * bandwidth, hi = p[k] + 8.0 * bandwidth;
            const long f = std::max(0L, static_cast<long>(std::floor((lo - ax.lo) / w)));
            const long l = std::min(static_cast<long>(ax.cells) - 1, static_cast<long>(std::floor((hi - ax.lo) / w)));
            if (l < f) {
                empty = true;
                break;
            }
            first[k] = static_cast<std::size_t>(f);
            last[k] = static_cast<std::size_t>(l);
            per_axis[k].assign(ax.cells, 0.0);
            for (std::size_t c = first[k]; c <= last[k]; ++c) {
                per_axis[k][c] = 0.5 * (std::erf((ax.edge(c + 1) - p[k]) * inv) - std::erf((ax.edge(c) - p[k]) * inv));
            }
        }
        if (empty) continue;
        // Odometer over the window.
        std::vector<std::size_t> idx(first);
        while (true) {
            double m = emp.weights[i];
            std::size_t flat = 0;
            for (std::size_t k = 0; k < d; ++k) {
                m *= per_axis[k][idx[k]];
                flat = flat * axes[k].cells + idx[k];
            }
            mass[flat] += m;
            bool done = true;
            for (std::size_t k = d; k-- > 0;) {
                if (idx[k] < last[k]) {
                    ++idx[k];
                    done = false;
                    break;
                }
                idx[k] = first[k];
            }
            if (done) break;
        }
    }
    double kept = 0.0;
    for (double m : mass) kept += m;
    if (!(kept > 1e-300)) throw DegenerateInput("kde_lift: all mass lies outside the grid box");
    res.clipped_fraction = std::max(0.0, 1.0 - kept);
    const double vol = res.measure.cell_volume();
    res.measure.density.resize(total);
    for (std::size_t c = 0; c < total; ++c) res.measure.density[c] = mass[c] / (kept * vol);
    return res;
}

inline KdeResult kde_lift(const EmpiricalMeasure& emp, const std::vector<Axis>& axes) {
    double h = default_bandwidth(emp);
    if (!(h > 0.0)) h = axes.front().width();
    return kde_lift(emp, axes, h);
}

} // namespace mfne
