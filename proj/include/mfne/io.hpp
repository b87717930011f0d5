#pragma once

// CSV and JSON serialisation of simulation artifacts. CSV follows RFC 4180:
// header row, comma separator, CRLF line ends, '.' decimal point.

#include "mfne/error.hpp"
#include "mfne/ldp.hpp"
#include "mfne/meanfield.hpp"
#include "mfne/measures.hpp"
#include "mfne/ni.hpp"
#include "mfne/particle_sim.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace mfne::io {

using json = nlohmann::ordered_json;

inline constexpr int schema_version = 1;

/// Shortest representation that round-trips; locale independent.
inline std::string format_number(double v) {
    if (std::isnan(v)) return "";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    for (int prec = 15; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) break;
    }
    return buf;
}

inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

class CsvWriter {
public:
    explicit CsvWriter(const std::vector<std::string>& header) : width_(header.size()) { row(header); }

    void row(const std::vector<std::string>& fields) {
        if (fields.size() != width_) throw UsageError("CsvWriter: row width does not match header");
        for (std::size_t i = 0; i < fields.size(); ++i) {
            if (i) out_ << ',';
            out_ << csv_field(fields[i]);
        }
        out_ << "\r\n";
    }

    std::string str() const { return out_.str(); }

private:
    std::size_t width_;
    std::ostringstream out_;
};

/// Space-separated coordinates, for points stored in a single CSV field.
inline std::string format_point(const Vec& p) {
    std::string s;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (i) s += ' ';
        s += format_number(p[i]);
    }
    return s;
}

inline json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

// ------------------------------------------------------------ configs

inline std::string to_string(InitSpec::Kind k) {
    switch (k) {
    case InitSpec::Kind::point: return "point";
    case InitSpec::Kind::uniform_box: return "uniform_box";
    case InitSpec::Kind::gaussian: return "gaussian";
    }
    return "gaussian";
}

inline std::string to_string(DriftMode m) {
    switch (m) {
    case DriftMode::automatic: return "automatic";
    case DriftMode::generic: return "generic";
    case DriftMode::separable: return "separable";
    }
    return "automatic";
}

inline json to_json(const InitSpec& s) {
    return {{"kind", to_string(s.kind)}, {"mean", s.mean}, {"variance", s.variance}};
}

inline json to_json(const SimConfig& c) {
    return {{"n", c.n},
            {"T", c.T},
            {"h", c.h},
            {"beta", std::isinf(c.beta) ? json("inf") : json(c.beta)},
            {"init_x", to_json(c.init_x)},
            {"init_y", to_json(c.init_y)},
            {"record_stride", c.record_stride},
            {"drift_mode", to_string(c.drift_mode)}};
}

inline json to_json(const PdeConfig& c) {
    return {{"box_radius", c.box_radius}, {"resolution", c.resolution}, {"h_t", c.h_t}, {"beta", c.beta},
            {"T", c.T},                   {"record_stride", c.record_stride}, {"safety", c.safety}};
}

inline json to_json(const SearchConfig& c) {
    return {{"grid_per_dim", c.grid_per_dim}, {"refine_iters", c.refine_iters}, {"golden_iters", c.golden_iters}};
}

// ------------------------------------------------------------ particles

inline json to_json(const TrajectoryRecording& rec) {
    json states = json::array();
    for (const auto& s : rec.states) states.push_back({{"t", s.t}, {"X", s.X}, {"Y", s.Y}});
    const std::size_t n = rec.states.empty() ? 0 : rec.states.front().n;
    const std::size_t dx = rec.states.empty() ? 0 : rec.states.front().dx;
    const std::size_t dy = rec.states.empty() ? 0 : rec.states.front().dy;
    return {{"schema_version", schema_version},
            {"type", "trajectory"},
            {"n", n},
            {"dx", dx},
            {"dy", dy},
            {"layout", "row-major n x d"},
            {"config", to_json(rec.config)},
            {"seed", rec.config.seed},
            {"times", rec.times},
            {"states", states}};
}

inline InitSpec init_from_json(const json& j) {
    InitSpec s;
    const std::string k = j.at("kind").get<std::string>();
    s.kind = k == "point" ? InitSpec::Kind::point : k == "uniform_box" ? InitSpec::Kind::uniform_box : InitSpec::Kind::gaussian;
    s.mean = j.at("mean").get<Vec>();
    s.variance = j.at("variance").get<double>();
    return s;
}

inline SimConfig sim_config_from_json(const json& j, std::uint64_t seed) {
    SimConfig c;
    c.n = j.at("n").get<std::size_t>();
    c.T = j.at("T").get<double>();
    c.h = j.at("h").get<double>();
    c.beta = j.at("beta").is_string() ? std::numeric_limits<double>::infinity() : j.at("beta").get<double>();
    c.init_x = init_from_json(j.at("init_x"));
    c.init_y = init_from_json(j.at("init_y"));
    c.record_stride = j.at("record_stride").get<std::size_t>();
    const std::string m = j.at("drift_mode").get<std::string>();
    c.drift_mode = m == "generic" ? DriftMode::generic : m == "separable" ? DriftMode::separable : DriftMode::automatic;
    c.seed = seed;
    return c;
}

inline TrajectoryRecording trajectory_from_json(const json& j) {
    if (j.value("schema_version", 0) != schema_version || j.value("type", "") != "trajectory")
        throw UsageError("not a trajectory artifact of schema version " + std::to_string(schema_version));
    TrajectoryRecording rec;
    rec.config = sim_config_from_json(j.at("config"), j.at("seed").get<std::uint64_t>());
    rec.times = j.at("times").get<Vec>();
    for (const auto& s : j.at("states")) {
        ParticleState st;
        st.t = s.at("t").get<double>();
        st.n = j.at("n").get<std::size_t>();
        st.dx = j.at("dx").get<std::size_t>();
        st.dy = j.at("dy").get<std::size_t>();
        st.X = s.at("X").get<Vec>();
        st.Y = s.at("Y").get<Vec>();
        st.validate();
        rec.states.push_back(std::move(st));
    }
    return rec;
}

/// time, then per-coordinate means and variances of both clouds.
inline std::string trajectory_summary_csv(const TrajectoryRecording& rec) {
    if (rec.states.empty()) return CsvWriter({"time"}).str();
    const std::size_t dx = rec.states.front().dx, dy = rec.states.front().dy;
    std::vector<std::string> h{"time"};
    for (std::size_t k = 0; k < dx; ++k) h.push_back("mean_x" + std::to_string(k));
    for (std::size_t k = 0; k < dx; ++k) h.push_back("var_x" + std::to_string(k));
    for (std::size_t k = 0; k < dy; ++k) h.push_back("mean_y" + std::to_string(k));
    for (std::size_t k = 0; k < dy; ++k) h.push_back("var_y" + std::to_string(k));
    CsvWriter w(h);
    for (std::size_t i = 0; i < rec.states.size(); ++i) {
        const auto [mx, my] = empirical_marginals(rec.states[i]);
        std::vector<std::string> r{format_number(rec.times[i])};
        for (double v : mx.mean()) r.push_back(format_number(v));
        for (double v : mx.variance()) r.push_back(format_number(v));
        for (double v : my.mean()) r.push_back(format_number(v));
        for (double v : my.variance()) r.push_back(format_number(v));
        w.row(r);
    }
    return w.str();
}

// ------------------------------------------------------------ grids

inline json to_json(const GridMeasure& g) {
    json box = json::array(), res = json::array();
    for (const auto& a : g.axes) {
        box.push_back({a.lo, a.hi});
        res.push_back(a.cells);
    }
    return {{"schema_version", schema_version},
            {"type", "grid_measure"},
            {"box", box},
            {"resolution", res},
            {"layout", "row-major, last axis fastest, cell-centred"},
            {"density", g.density}};
}

inline GridMeasure grid_from_json(const json& j) {
    if (j.value("schema_version", 0) != schema_version || j.value("type", "") != "grid_measure")
        throw UsageError("not a grid_measure artifact of schema version " + std::to_string(schema_version));
    GridMeasure g;
    const auto& box = j.at("box");
    const auto& res = j.at("resolution");
    if (box.size() != res.size()) throw UsageError("grid_measure: box and resolution lengths differ");
    for (std::size_t k = 0; k < box.size(); ++k)
        g.axes.push_back(Axis{box[k].at(0).get<double>(), box[k].at(1).get<double>(), res[k].get<std::size_t>()});
    g.density = j.at("density").get<Vec>();
    g.validate();
    return g;
}

/// Long format: time, cell-centre coordinates, density.
inline std::string density_csv(const Vec& times, const std::vector<GridMeasure>& ms) {
    const std::size_t d = ms.empty() ? 1 : ms.front().dim();
    std::vector<std::string> h{"time"};
    for (std::size_t k = 0; k < d; ++k) h.push_back("z" + std::to_string(k));
    h.push_back("density");
    CsvWriter w(h);
    for (std::size_t t = 0; t < ms.size(); ++t) {
        for (std::size_t i = 0; i < ms[t].size(); ++i) {
            std::vector<std::string> r{format_number(times[t])};
            for (double c : ms[t].center(i)) r.push_back(format_number(c));
            r.push_back(format_number(ms[t].density[i]));
            w.row(r);
        }
    }
    return w.str();
}

template <class M>
std::string quantile_csv(const M& m, std::size_t levels = 99) {
    Vec q(levels);
    for (std::size_t i = 0; i < levels; ++i) q[i] = static_cast<double>(i + 1) / static_cast<double>(levels + 1);
    const Vec v = quantiles(m, q);
    CsvWriter w({"level", "quantile"});
    for (std::size_t i = 0; i < levels; ++i) w.row({format_number(q[i]), format_number(v[i])});
    return w.str();
}

// ------------------------------------------------------------ NI, rates, deviations

inline std::string ni_csv(const NiSeries& s) {
    CsvWriter w({"time", "ni_value", "y_star", "x_star"});
    for (std::size_t k = 0; k < s.times.size(); ++k)
        w.row({format_number(s.times[k]), format_number(s.values[k]), format_point(s.y_star[k]), format_point(s.x_star[k])});
    return w.str();
}

inline json to_json(const RateReport& r) {
    json nested = json::array();
    for (const auto& [o, I] : r.nested) nested.push_back({{"order", o}, {"I_total", I}});
    return {{"schema_version", schema_version},
            {"type", "rate_report"},
            {"I_total", r.I_total},
            {"basis_order", r.basis_order},
            {"basis_size", r.basis_size},
            {"gram_condition", number_or_null(r.gram_condition)},
            {"grid_resolution", r.grid_resolution},
            {"dt", r.dt},
            {"monotone", r.monotone},
            {"nested", nested},
            {"times", r.times},
            {"integrand", r.integrand}};
}

inline std::string rate_csv(const RateReport& r) {
    CsvWriter w({"time", "integrand"});
    for (std::size_t k = 0; k < r.times.size(); ++k) w.row({format_number(r.times[k]), format_number(r.integrand[k])});
    return w.str();
}

inline std::string to_string(DeviationEvent::Statistic s) {
    return s == DeviationEvent::Statistic::mean_x ? "mean_x" : "w1_x";
}

inline json to_json(const DeviationTable& t) {
    json rows = json::array();
    for (const auto& r : t.rows)
        rows.push_back({{"n", r.n},
                        {"replicas", r.replicas},
                        {"hits", r.hits},
                        {"p_hat", r.p_hat},
                        {"rate", number_or_null(r.rate)},
                        {"ci_lo", r.ci_lo},
                        {"ci_hi", r.ci_hi},
                        {"censored", r.censored}});
    return {{"schema_version", schema_version},
            {"type", "deviation_table"},
            {"event", {{"statistic", to_string(t.event.statistic)}, {"delta", t.event.delta}, {"t", t.event.t}}},
            {"rows", rows}};
}

inline std::string deviation_csv(const DeviationTable& t) {
    CsvWriter w({"n", "replicas", "hits", "p_hat", "rate", "ci_lo", "ci_hi", "censored"});
    for (const auto& r : t.rows)
        w.row({std::to_string(r.n), std::to_string(r.replicas), std::to_string(r.hits), format_number(r.p_hat),
               format_number(r.rate), format_number(r.ci_lo), format_number(r.ci_hi), r.censored ? "true" : "false"});
    return w.str();
}

/// Plot-ready long format; censored rates are empty fields.
inline std::string deviation_long_csv(const DeviationTable& t) {
    CsvWriter w({"n", "p_hat", "rate", "ci_lo", "ci_hi"});
    for (const auto& r : t.rows)
        w.row({std::to_string(r.n), format_number(r.p_hat), format_number(r.rate), format_number(r.ci_lo),
               format_number(r.ci_hi)});
    return w.str();
}

// ------------------------------------------------------------ files

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw UsageError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("io", "cannot write " + path);
    out << content;
    if (!out) throw Error("io", "write failed for " + path);
}

} // namespace mfne::io
