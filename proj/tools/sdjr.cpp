#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "sdjr/cli.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Regime-switching jump-diffusions with delay: simulation, Picard iteration, duality and checks"};
    std::string command;
    std::string config_path;
    std::string out_dir = ".";
    std::optional<std::uint64_t> seed, paths;
    std::optional<int> grid_k;
    std::optional<unsigned> workers;

    app.add_option("command", command, "simulate | picard | duality | oracle-gap | check-ito | check-product | validate")
        ->required()
        ->check(CLI::IsMember(sdjr::commands()));
    app.add_option("--config", config_path, "scenario JSON file")->required();
    app.add_option("--seed", seed, "override run.seed");
    app.add_option("--out", out_dir, "output directory");
    app.add_option("--paths", paths, "override run.n_paths");
    app.add_option("--grid-k", grid_k, "override grid.K");
    app.add_option("--workers", workers, "worker threads (results do not depend on it)");
    app.set_version_flag("--version", sdjr::kVersion);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : sdjr::exit_code::validation;
    }

    sdjr::ScenarioConfig config;
    try {
        config = sdjr::load_config(config_path, {seed, paths, grid_k, workers});
    } catch (const sdjr::ValidationError& e) {
        std::cerr << "invalid: " << e.what() << "\n";
        return sdjr::exit_code::validation;
    }
    return sdjr::run_command(command, config, out_dir);
}
