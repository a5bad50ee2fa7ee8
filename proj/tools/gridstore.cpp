#include "gridstore/harness.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <string>

int main(int argc, char** argv) {
    CLI::App app{"Storage and transmission design on ring and torus grids"};
    app.require_subcommand(1, 1);
    std::string config_path;
    std::string out_dir = ".";
    for (const char* name : {"design", "simulate", "sweep", "bounds", "conjecture"}) {
        auto* sub = app.add_subcommand(name);
        sub->add_option("--config", config_path, "Experiment configuration file")->required();
        sub->add_option("--out", out_dir, "Directory for the CSV artifacts");
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : gridstore::kExitValidation;
    }
    const std::string command = app.get_subcommands().front()->get_name();
    const auto result = gridstore::run_cli(command, config_path, out_dir);
    if (result.exit_code != gridstore::kExitOk) {
        std::cerr << "gridstore " << command << ": " << result.message << '\n';
        return result.exit_code;
    }
    for (const auto& p : result.artifacts) std::cout << p.string() << '\n';
    return gridstore::kExitOk;
}
