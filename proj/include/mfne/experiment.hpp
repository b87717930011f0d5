#pragma once

// Experiment configuration files and the batch pipelines behind the CLI.

#include "mfne/error.hpp"
#include "mfne/game.hpp"
#include "mfne/io.hpp"
#include "mfne/ldp.hpp"
#include "mfne/meanfield.hpp"
#include "mfne/ni.hpp"
#include "mfne/particle_sim.hpp"

#include <json.hpp>
#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <string>
#include <vector>

#ifndef MFNE_VERSION
#define MFNE_VERSION "0.1.0"
#endif
#ifndef MFNE_GIT_REVISION
#define MFNE_GIT_REVISION "unknown"
#endif

namespace mfne {

inline const std::vector<std::string>& experiment_kinds() {
    static const std::vector<std::string> k{"simulate", "meanfield", "ni",       "rate",
                                            "deviation", "gradcheck", "full-pipeline"};
    return k;
}

struct GameSpec {
    std::string name = "quadratic_bilinear";
    GameParams params;
    double box_radius = 0.0; ///< 0: game default (4 Gibbs standard deviations for quadratic_bilinear)
};

struct BasisSpec {
    std::size_t order = 8;
    double ridge = auto_ridge;
};

struct DeviationSpec {
    std::vector<std::size_t> n_ladder{10, 20, 40, 80, 160};
    std::size_t replicas = 200;
    DeviationEvent event;
};

struct GradcheckSpec {
    std::size_t n_points = 1000;
    double eps = 1e-5;
    std::size_t grid_per_dim = 65;
};

/// Time-constant cosine potential A cos(kx pi s1) cos(ky pi s2) on the joint
/// PDE grid, s the box coordinates rescaled to [0, 1].
struct ControlSpec {
    double amplitude = 0.5;
    std::size_t kx = 1;
    std::size_t ky = 0;
};

struct ExperimentConfig {
    std::string kind;
    std::uint64_t seed = 0;
    std::string output_dir = "out";
    GameSpec game;
    std::optional<SimConfig> sim;
    std::optional<PdeConfig> pde;
    std::optional<InitSpec> pde_init_x, pde_init_y;
    std::optional<SearchConfig> search;
    std::optional<BasisSpec> basis;
    std::optional<DeviationSpec> deviation;
    std::optional<GradcheckSpec> gradcheck;
    std::optional<ControlSpec> control;
};

namespace detail {

using json = io::json;

/// Reads fields of one JSON object, rejecting keys nobody asked about.
class ObjectReader {
public:
    ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(where() + " must be an object");
    }

    bool has(const std::string& key) {
        seen_.insert(key);
        return j_.contains(key) && !j_.at(key).is_null();
    }

    const json& at(const std::string& key) {
        seen_.insert(key);
        return j_.at(key);
    }

    std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    template <class T>
    void get(const std::string& key, T& out) {
        if (!has(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const nlohmann::json::exception&) {
            throw ConfigError(field(key) + " has the wrong type");
        }
    }

    void get_real(const std::string& key, double& out) {
        if (!has(key)) return;
        const json& v = j_.at(key);
        if (v.is_string() && (v == "inf" || v == "infinity")) {
            out = std::numeric_limits<double>::infinity();
            return;
        }
        if (!v.is_number()) throw ConfigError(field(key) + " must be a number");
        out = v.get<double>();
    }

    void get_count(const std::string& key, std::size_t& out) {
        if (!has(key)) return;
        const json& v = j_.at(key);
        if (!v.is_number_integer() || v.get<long long>() < 0)
            throw ConfigError(field(key) + " must be a nonnegative integer");
        out = v.get<std::size_t>();
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key())) throw ConfigError("unknown key '" + field(it.key()) + "'");
    }

private:
    std::string where() const { return path_.empty() ? "config" : path_; }
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

inline InitSpec read_init(const json& j, const std::string& path) {
    ObjectReader r(j, path);
    InitSpec s;
    std::string kind = "gaussian";
    r.get("kind", kind);
    if (kind == "point") s.kind = InitSpec::Kind::point;
    else if (kind == "uniform_box") s.kind = InitSpec::Kind::uniform_box;
    else if (kind == "gaussian") s.kind = InitSpec::Kind::gaussian;
    else throw ConfigError(r.field("kind") + " must be one of point, uniform_box, gaussian");
    r.get("mean", s.mean);
    r.get_real("variance", s.variance);
    if (!(s.variance >= 0.0)) throw ConfigError(r.field("variance") + " must be nonnegative");
    r.finish();
    return s;
}

inline SimConfig read_sim(const json& j) {
    ObjectReader r(j, "sim");
    SimConfig c;
    r.get_count("n", c.n);
    r.get_real("T", c.T);
    r.get_real("h", c.h);
    r.get_real("beta", c.beta);
    if (r.has("init_x")) c.init_x = read_init(r.at("init_x"), "sim.init_x");
    if (r.has("init_y")) c.init_y = read_init(r.at("init_y"), "sim.init_y");
    r.get_count("record_stride", c.record_stride);
    std::string mode = "automatic";
    r.get("drift_mode", mode);
    if (mode == "automatic") c.drift_mode = DriftMode::automatic;
    else if (mode == "generic") c.drift_mode = DriftMode::generic;
    else if (mode == "separable") c.drift_mode = DriftMode::separable;
    else throw ConfigError("sim.drift_mode must be one of automatic, generic, separable");
    r.finish();
    try {
        c.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(std::string("sim: ") + e.what());
    }
    return c;
}

inline json config_error_context(const std::string& text, std::size_t byte) {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
        if (text[i] == '\n') {
            ++line;
            col = 1;
        } else {
            ++col;
        }
    }
    return {{"line", line}, {"column", col}};
}

} // namespace detail

inline double default_box_radius(const GameSpec& g, double beta) {
    if (g.name == "quadratic_bilinear") {
        const auto it = g.params.find("a");
        const double a = it == g.params.end() ? 0.5 : it->second;
        if (a > 0.0 && std::isfinite(beta)) return 4.0 / std::sqrt(2.0 * a * beta);
        return 4.0;
    }
    if (g.name == "sin_cos") return 3.0;
    return 1.0;
}

inline Game build_game(const ExperimentConfig& c) {
    double R = c.game.box_radius;
    if (R == 0.0) R = default_box_radius(c.game, c.sim ? c.sim->beta : c.pde ? c.pde->beta : 10.0);
    return make_game(c.game.name, c.game.params, R);
}

/// Parses and validates a configuration. `origin` names the source in errors.
inline ExperimentConfig parse_config(const std::string& text, const std::string& origin = "config") {
    using detail::json;
    json j;
    try {
        j = json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        const json pos = detail::config_error_context(text, e.byte == 0 ? 0 : e.byte - 1);
        throw ConfigError(origin + ": parse error at line " + std::to_string(pos["line"].get<int>()) + ", column " +
                          std::to_string(pos["column"].get<int>()) + ": " + e.what());
    }
    detail::ObjectReader r(j, "");
    ExperimentConfig c;
    r.get("kind", c.kind);
    if (!c.kind.empty() &&
        std::find(experiment_kinds().begin(), experiment_kinds().end(), c.kind) == experiment_kinds().end())
        throw ConfigError("kind '" + c.kind + "' is not one of simulate, meanfield, ni, rate, deviation, gradcheck, full-pipeline");
    if (!r.has("seed")) throw ConfigError("seed is required (no implicit seeding)");
    {
        const json& s = r.at("seed");
        if (!s.is_number_unsigned() && !(s.is_number_integer() && s.get<long long>() >= 0))
            throw ConfigError("seed must be a nonnegative integer");
        c.seed = s.get<std::uint64_t>();
    }
    r.get("output_dir", c.output_dir);

    if (r.has("game")) {
        detail::ObjectReader g(r.at("game"), "game");
        g.get("name", c.game.name);
        if (g.has("params")) {
            detail::ObjectReader p(g.at("params"), "game.params");
            for (auto it = g.at("params").begin(); it != g.at("params").end(); ++it) {
                double v = 0.0;
                p.get_real(it.key(), v);
                c.game.params[it.key()] = v;
            }
            p.finish();
        }
        g.get_real("box_radius", c.game.box_radius);
        if (c.game.box_radius < 0.0) throw ConfigError("game.box_radius must be positive");
        g.finish();
    }
    if (r.has("sim")) c.sim = detail::read_sim(r.at("sim"));
    if (r.has("pde")) {
        detail::ObjectReader p(r.at("pde"), "pde");
        PdeConfig pc;
        if (c.sim) pc.beta = c.sim->beta;
        p.get_real("box_radius", pc.box_radius);
        p.get_count("resolution", pc.resolution);
        p.get_real("h_t", pc.h_t);
        p.get_real("beta", pc.beta);
        p.get_real("T", pc.T);
        p.get_count("record_stride", pc.record_stride);
        p.get_real("safety", pc.safety);
        if (p.has("init_x")) c.pde_init_x = detail::read_init(p.at("init_x"), "pde.init_x");
        if (p.has("init_y")) c.pde_init_y = detail::read_init(p.at("init_y"), "pde.init_y");
        p.finish();
        if (!std::isfinite(pc.beta)) throw ConfigError("pde.beta must be finite");
        c.pde = pc;
    }
    if (r.has("search")) {
        detail::ObjectReader s(r.at("search"), "search");
        SearchConfig sc;
        s.get_count("grid_per_dim", sc.grid_per_dim);
        s.get_count("refine_iters", sc.refine_iters);
        s.get_count("golden_iters", sc.golden_iters);
        s.finish();
        if (sc.grid_per_dim < 3) throw ConfigError("search.grid_per_dim must be >= 3");
        c.search = sc;
    }
    if (r.has("basis")) {
        detail::ObjectReader b(r.at("basis"), "basis");
        BasisSpec bs;
        b.get_count("order", bs.order);
        if (b.has("ridge") && b.at("ridge") != "auto") {
            b.get_real("ridge", bs.ridge);
            if (bs.ridge < 0.0) throw ConfigError("basis.ridge must be nonnegative");
        }
        b.finish();
        if (bs.order < 1) throw ConfigError("basis.order must be >= 1");
        c.basis = bs;
    }
    if (r.has("deviation")) {
        detail::ObjectReader d(r.at("deviation"), "deviation");
        DeviationSpec ds;
        d.get("n_ladder", ds.n_ladder);
        d.get_count("replicas", ds.replicas);
        std::string stat = "mean_x";
        d.get("statistic", stat);
        if (stat == "mean_x") ds.event.statistic = DeviationEvent::Statistic::mean_x;
        else if (stat == "w1_x") ds.event.statistic = DeviationEvent::Statistic::w1_x;
        else throw ConfigError("deviation.statistic must be mean_x or w1_x");
        d.get_real("delta", ds.event.delta);
        d.get_real("t", ds.event.t);
        d.finish();
        if (ds.n_ladder.empty()) throw ConfigError("deviation.n_ladder must not be empty");
        for (std::size_t k = 0; k < ds.n_ladder.size(); ++k) {
            if (ds.n_ladder[k] < 1) throw ConfigError("deviation.n_ladder entries must be >= 1");
            if (k && ds.n_ladder[k] <= ds.n_ladder[k - 1]) throw ConfigError("deviation.n_ladder must be increasing");
        }
        if (ds.replicas < 1) throw ConfigError("deviation.replicas must be >= 1");
        if (!(ds.event.delta >= 0.0)) throw ConfigError("deviation.delta must be nonnegative");
        if (!(ds.event.t > 0.0)) throw ConfigError("deviation.t must be positive");
        c.deviation = ds;
    }
    if (r.has("gradcheck")) {
        detail::ObjectReader g(r.at("gradcheck"), "gradcheck");
        GradcheckSpec gs;
        g.get_count("n_points", gs.n_points);
        g.get_real("eps", gs.eps);
        g.get_count("grid_per_dim", gs.grid_per_dim);
        g.finish();
        if (gs.n_points < 1) throw ConfigError("gradcheck.n_points must be >= 1");
        if (!(gs.eps > 0.0)) throw ConfigError("gradcheck.eps must be positive");
        if (gs.grid_per_dim < 2) throw ConfigError("gradcheck.grid_per_dim must be >= 2");
        c.gradcheck = gs;
    }
    if (r.has("control")) {
        detail::ObjectReader k(r.at("control"), "control");
        ControlSpec cs;
        k.get_real("amplitude", cs.amplitude);
        k.get_count("kx", cs.kx);
        k.get_count("ky", cs.ky);
        k.finish();
        c.control = cs;
    }
    r.finish();

    const Game g = build_game(c);
    if (c.pde) validate(*c.pde, g);
    return c;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::string text;
    try {
        text = io::read_file(path);
    } catch (const UsageError&) {
        throw ConfigError("config file '" + path + "' cannot be read");
    }
    return parse_config(text, path);
}

/// Checks that the sub-configs a pipeline needs are present.
inline void require_sections(const ExperimentConfig& c, const std::string& kind) {
    auto need = [&](bool present, const char* name) {
        if (!present) throw ConfigError("experiment kind '" + kind + "' requires the '" + name + "' section");
    };
    if (kind == "simulate") need(c.sim.has_value(), "sim");
    if (kind == "meanfield") need(c.pde.has_value(), "pde");
    if (kind == "ni") {
        need(c.search.has_value(), "search");
        if (!c.sim && !c.pde) throw ConfigError("experiment kind 'ni' requires a 'sim' or 'pde' section");
    }
    if (kind == "rate") {
        need(c.pde.has_value(), "pde");
        need(c.basis.has_value(), "basis");
    }
    if (kind == "deviation") {
        need(c.sim.has_value(), "sim");
        need(c.pde.has_value(), "pde");
        need(c.deviation.has_value(), "deviation");
    }
    if (kind == "full-pipeline") {
        for (auto [p, name] : {std::pair{c.sim.has_value(), "sim"}, {c.pde.has_value(), "pde"},
                               {c.search.has_value(), "search"}, {c.basis.has_value(), "basis"},
                               {c.deviation.has_value(), "deviation"}})
            need(p, name);
    }
}

/// Fully expanded configuration, defaults included.
inline io::json config_echo(const ExperimentConfig& c) {
    using io::json;
    const Game g = build_game(c);
    json params = json::object();
    for (const auto& [k, v] : c.game.params) params[k] = v;
    json j = {{"kind", c.kind},
              {"seed", c.seed},
              {"output_dir", c.output_dir},
              {"game", {{"name", c.game.name}, {"params", params}, {"box_radius", g.box_radius}}}};
    if (c.sim) j["sim"] = io::to_json(*c.sim);
    if (c.pde) {
        j["pde"] = io::to_json(*c.pde);
        if (c.pde_init_x) j["pde"]["init_x"] = io::to_json(*c.pde_init_x);
        if (c.pde_init_y) j["pde"]["init_y"] = io::to_json(*c.pde_init_y);
    }
    if (c.search) j["search"] = io::to_json(*c.search);
    if (c.basis) j["basis"] = {{"order", c.basis->order}, {"ridge", c.basis->ridge < 0 ? json("auto") : json(c.basis->ridge)}};
    if (c.deviation)
        j["deviation"] = {{"n_ladder", c.deviation->n_ladder},
                          {"replicas", c.deviation->replicas},
                          {"statistic", io::to_string(c.deviation->event.statistic)},
                          {"delta", c.deviation->event.delta},
                          {"t", c.deviation->event.t}};
    if (c.gradcheck)
        j["gradcheck"] = {{"n_points", c.gradcheck->n_points}, {"eps", c.gradcheck->eps}, {"grid_per_dim", c.gradcheck->grid_per_dim}};
    if (c.control) j["control"] = {{"amplitude", c.control->amplitude}, {"kx", c.control->kx}, {"ky", c.control->ky}};
    return j;
}

// ------------------------------------------------------------ running

inline std::string sha256_hex(const std::string& data) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1)
        throw Error("io", "SHA-256 computation failed");
    static const char* hex = "0123456789abcdef";
    std::string s;
    for (unsigned int i = 0; i < len; ++i) {
        s += hex[md[i] >> 4];
        s += hex[md[i] & 15];
    }
    return s;
}

struct Artifact {
    std::string path; ///< relative to the output directory
    std::string sha256;
    std::size_t bytes = 0;
};

struct RunResult {
    std::filesystem::path output_dir;
    std::vector<Artifact> artifacts;
    double wall_seconds = 0.0;
};

namespace detail {

class ArtifactSink {
public:
    explicit ArtifactSink(std::filesystem::path dir) : dir_(std::move(dir)) { std::filesystem::create_directories(dir_); }

    void write(const std::string& rel, const std::string& content) {
        const auto p = dir_ / rel;
        std::filesystem::create_directories(p.parent_path());
        io::write_file(p.string(), content);
        artifacts_.push_back({rel, sha256_hex(content), content.size()});
    }
    void write_json(const std::string& rel, const io::json& j) { write(rel, j.dump(1) + "\n"); }

    const std::vector<Artifact>& artifacts() const { return artifacts_; }
    const std::filesystem::path& dir() const { return dir_; }

private:
    std::filesystem::path dir_;
    std::vector<Artifact> artifacts_;
};

inline std::string zero_pad(std::size_t k) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04zu", k);
    return buf;
}

inline PdeConfig pde_with_defaults(const ExperimentConfig& c) { return c.pde ? *c.pde : PdeConfig{}; }

inline std::pair<GridMeasure, GridMeasure> pde_initial(const ExperimentConfig& c, const Game& g) {
    const PdeConfig p = pde_with_defaults(c);
    const InitSpec ix = c.pde_init_x ? *c.pde_init_x : c.sim ? c.sim->init_x : InitSpec{};
    const InitSpec iy = c.pde_init_y ? *c.pde_init_y : c.sim ? c.sim->init_y : InitSpec{};
    return {grid_initial(ix, p.axes(g.dx), g.box_radius), grid_initial(iy, p.axes(g.dy), g.box_radius)};
}

inline void write_meanfield(ArtifactSink& out, const MeanFieldPath& path, const PdeConfig& pc) {
    io::json files = io::json::array();
    for (std::size_t k = 0; k < path.size(); ++k) {
        const std::string fx = "meanfield/x_" + zero_pad(k) + ".json", fy = "meanfield/y_" + zero_pad(k) + ".json";
        out.write_json(fx, io::to_json(path.mu_x[k]));
        out.write_json(fy, io::to_json(path.mu_y[k]));
        files.push_back({{"time", path.times[k]}, {"mu_x", fx}, {"mu_y", fy}});
    }
    out.write_json("meanfield/path.json", {{"schema_version", io::schema_version},
                                           {"type", "measure_path"},
                                           {"config", io::to_json(pc)},
                                           {"h_t", path.h_t},
                                           {"final_time", path.final_time},
                                           {"positivity_events", path.positivity_events},
                                           {"boundary_mass", path.boundary_mass},
                                           {"snapshots", files}});
    out.write("meanfield_density_x.csv", io::density_csv(path.times, path.mu_x));
    out.write("meanfield_density_y.csv", io::density_csv(path.times, path.mu_y));
    io::CsvWriter sum({"time", "mean_x0", "var_x0", "mean_y0", "var_y0", "boundary_mass"});
    for (std::size_t k = 0; k < path.size(); ++k)
        sum.row({io::format_number(path.times[k]), io::format_number(path.mu_x[k].mean()[0]),
                 io::format_number(path.mu_x[k].variance()[0]), io::format_number(path.mu_y[k].mean()[0]),
                 io::format_number(path.mu_y[k].variance()[0]), io::format_number(path.boundary_mass[k])});
    out.write("meanfield_summary.csv", sum.str());
    if (path.final_x.dim() == 1) out.write("quantiles_x.csv", io::quantile_csv(path.final_x));
    if (path.final_y.dim() == 1) out.write("quantiles_y.csv", io::quantile_csv(path.final_y));
}

} // namespace detail

/// Runs the pipeline for `kind` (the config's kind when empty), writing every
/// artifact plus manifest.json under `output_dir`.
inline RunResult run_experiment(const ExperimentConfig& cfg, const std::string& kind_override = "",
                                const std::string& output_dir = "") {
    const auto t0 = std::chrono::steady_clock::now();
    const std::string kind = kind_override.empty() ? cfg.kind : kind_override;
    if (kind.empty()) throw UsageError("no experiment kind given");
    if (std::find(experiment_kinds().begin(), experiment_kinds().end(), kind) == experiment_kinds().end())
        throw UsageError("unknown experiment kind '" + kind + "'");
    if (!cfg.kind.empty() && !kind_override.empty() && cfg.kind != kind_override)
        throw UsageError("subcommand '" + kind_override + "' does not match config kind '" + cfg.kind + "'");
    require_sections(cfg, kind);
    ExperimentConfig c = cfg;
    c.kind = kind;
    if (!output_dir.empty()) c.output_dir = output_dir;
    const Game g = build_game(c);
    const bool all = kind == "full-pipeline";

    detail::ArtifactSink out(c.output_dir);

    std::optional<TrajectoryRecording> rec;
    std::optional<MeanFieldPath> mf;
    auto simulate_once = [&] {
        if (rec) return;
        SimConfig s = *c.sim;
        s.seed = c.seed;
        rec = simulate(s, g);
        out.write_json("trajectory.json", io::to_json(*rec));
        out.write("trajectory_summary.csv", io::trajectory_summary_csv(*rec));
    };
    auto meanfield_once = [&] {
        if (mf) return;
        const auto [x0, y0] = detail::pde_initial(c, g);
        mf = solve_meanfield(x0, y0, g, *c.pde);
        detail::write_meanfield(out, *mf, *c.pde);
    };

    if (kind == "gradcheck" || all) {
        const GradcheckSpec gs = c.gradcheck ? *c.gradcheck : GradcheckSpec{};
        const GradientReport gr = check_gradients(g, gs.n_points, gs.eps, c.seed);
        const RegularityConstants rc = regularity_constants(g, g.dx + g.dy <= 2 ? gs.grid_per_dim : 9);
        out.write_json("gradcheck.json", {{"schema_version", io::schema_version},
                                          {"type", "gradcheck"},
                                          {"game", g.name},
                                          {"n_points", gs.n_points},
                                          {"eps", gs.eps},
                                          {"max_rel_error", gr.max_rel_error},
                                          {"worst_x", gr.worst_x},
                                          {"worst_y", gr.worst_y},
                                          {"C", rc.C},
                                          {"L", rc.L},
                                          {"C_tilde", rc.C_tilde}});
    }
    if (kind == "simulate" || all) simulate_once();
    if (kind == "meanfield" || all) meanfield_once();
    if (kind == "ni" || all) {
        if (c.sim) {
            simulate_once();
            out.write("ni_particles.csv", io::ni_csv(ni_trajectory(g, *rec, *c.search)));
        }
        if (c.pde) {
            meanfield_once();
            out.write("ni_meanfield.csv", io::ni_csv(ni_trajectory(g, *mf, *c.search)));
        }
    }
    if (kind == "rate" || all) {
        if (g.dx != 1 || g.dy != 1) throw ConfigError("rate experiments need a game with dx = dy = 1");
        meanfield_once();
        const MeasurePath joint = mf->joint_path();
        const TestBasis basis = make_test_basis(joint.measures.front().axes, c.basis->order);
        const RateReport rr = rate_functional(joint, g, basis, c.pde->beta, c.basis->ridge);
        out.write_json("rate_report.json", io::to_json(rr));
        out.write("rate_integrand.csv", io::rate_csv(rr));
        const SearchConfig sc = c.search ? *c.search : SearchConfig{};
        io::CsvWriter pairs({"path", "I_total", "control_cost", "ni_initial", "ni_final"});
        const NiSeries ni_mf = ni_trajectory(g, joint, sc);
        pairs.row({"meanfield", io::format_number(rr.I_total), "0", io::format_number(ni_mf.values.front()),
                   io::format_number(ni_mf.values.back())});
        if (c.control) {
            const auto& axes = joint.measures.front().axes;
            const ControlSpec cs = *c.control;
            const auto phi = ControlPotential::constant_in_time(axes, joint.times, [&](CSpan z) {
                const double s1 = (z[0] - axes[0].lo) / (axes[0].hi - axes[0].lo);
                const double s2 = (z[1] - axes[1].lo) / (axes[1].hi - axes[1].lo);
                return cs.amplitude * std::cos(static_cast<double>(cs.kx) * std::numbers::pi * s1) *
                       std::cos(static_cast<double>(cs.ky) * std::numbers::pi * s2);
            });
            const MeasurePath ctl = solve_controlled(joint.measures.front(), g, phi, c.pde->beta);
            const RateReport cr = rate_functional(ctl, g, basis, c.pde->beta, c.basis->ridge);
            const double cost = control_cost(phi, ctl);
            io::json j = io::to_json(cr);
            j["type"] = "controlled_rate_report";
            j["control_cost"] = cost;
            out.write_json("controlled_rate_report.json", j);
            const NiSeries ni_c = ni_trajectory(g, ctl, sc);
            pairs.row({"controlled", io::format_number(cr.I_total), io::format_number(cost),
                       io::format_number(ni_c.values.front()), io::format_number(ni_c.values.back())});
        }
        out.write("ni_rate_pairs.csv", pairs.str());
    }
    if (kind == "deviation" || all) {
        SimConfig base = *c.sim;
        const DeviationTable t = deviation_probability(g, base, c.deviation->n_ladder, c.deviation->replicas,
                                                       c.deviation->event, c.seed, *c.pde);
        out.write_json("deviation_table.json", io::to_json(t));
        out.write("deviation_table.csv", io::deviation_csv(t));
        out.write("deviation_long.csv", io::deviation_long_csv(t));
    }

    RunResult res;
    res.output_dir = out.dir();
    res.artifacts = out.artifacts();
    res.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    io::json arts = io::json::array();
    for (const auto& a : res.artifacts) arts.push_back({{"path", a.path}, {"sha256", a.sha256}, {"bytes", a.bytes}});
    const io::json manifest = {{"schema_version", io::schema_version},
                               {"type", "manifest"},
                               {"tool", "mfne"},
                               {"version", MFNE_VERSION},
                               {"git_revision", MFNE_GIT_REVISION},
                               {"kind", kind},
                               {"config", config_echo(c)},
                               {"wall_time_seconds", res.wall_seconds},
                               {"artifacts", arts}};
    io::write_file((out.dir() / "manifest.json").string(), manifest.dump(1) + "\n");
    return res;
}

/// Structured error report, written next to where the artifacts would go.
inline io::json error_report(const std::exception& e) {
    io::json err = {{"message", e.what()}};
    if (const auto* me = dynamic_cast<const Error*>(&e)) {
        err["kind"] = me->kind();
        if (const auto* nb = dynamic_cast<const NumericalBlowup*>(&e)) {
            err["particle"] = nb->particle;
            err["step"] = nb->step;
        }
    } else {
        err["kind"] = "internal";
    }
    return {{"schema_version", io::schema_version}, {"type", "error"}, {"error", err}};
}

} // namespace mfne
