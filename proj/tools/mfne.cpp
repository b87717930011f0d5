// Command-line front end: mfne <subcommand> <config.json> [--out DIR]

#include "mfne/experiment.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

namespace {

int report(const std::exception& e, const std::string& out_dir) {
    const auto rep = mfne::error_report(e);
    std::cerr << "mfne: " << rep["error"]["kind"].get<std::string>() << ": " << e.what() << "\n";
    if (!out_dir.empty()) {
        try {
            std::filesystem::create_directories(out_dir);
            mfne::io::write_file((std::filesystem::path(out_dir) / "error.json").string(), rep.dump(1) + "\n");
        } catch (const std::exception&) {
        }
    }
    const auto* me = dynamic_cast<const mfne::Error*>(&e);
    return me && (me->kind() == "usage" || me->kind() == "config") ? 2 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Mean-field Nash equilibrium toolkit"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(MFNE_VERSION) + " (" + MFNE_GIT_REVISION + ")");

    std::string config_path, out_dir;
    for (const auto& kind : mfne::experiment_kinds()) {
        auto* sub = app.add_subcommand(kind, "run the " + kind + " pipeline");
        sub->add_option("config", config_path, "experiment config (JSON)")->required();
        sub->add_option("--out", out_dir, "output directory (overrides output_dir)");
    }
    auto* val = app.add_subcommand("validate", "check a config and print it with defaults filled in");
    val->add_option("config", config_path, "experiment config (JSON)")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    const std::string kind = app.get_subcommands().front()->get_name();
    std::string err_dir = out_dir;
    try {
        mfne::ExperimentConfig cfg = mfne::load_config(config_path);
        if (err_dir.empty()) err_dir = cfg.output_dir;
        if (kind == "validate") {
            if (!cfg.kind.empty()) mfne::require_sections(cfg, cfg.kind);
            std::cout << mfne::config_echo(cfg).dump(1) << "\n";
            return 0;
        }
        const auto res = mfne::run_experiment(cfg, kind == cfg.kind ? "" : kind, out_dir);
        std::cout << "wrote " << res.artifacts.size() << " artifacts to " << res.output_dir.string() << " in "
                  << res.wall_seconds << " s\n";
        return 0;
    } catch (const std::exception& e) {
        return report(e, kind == "validate" ? "" : err_dir);
    }
}
