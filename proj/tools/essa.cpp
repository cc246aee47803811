#include "app.hpp"

#include <CLI11.hpp>

using namespace essa;

namespace {

int report_config_error(const app::ConfigError& e) {
    std::cerr << "essa: " << e.what() << "\n";
    return app::kConfigError;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App cli{"Optimal control of delay systems by proximal sweeps"};
    cli.require_subcommand(1);

    std::string config_path, out_dir, control_file;
    bool dry_run = false;

    auto* solve_cmd = cli.add_subcommand("solve", "Solve the configured problem and write CSV results");
    solve_cmd->add_option("config", config_path, "JSON config")->required();
    solve_cmd->add_option("--out", out_dir, "Output directory (overrides output.directory)");
    solve_cmd->add_flag("--dry-run", dry_run, "Validate and print the resolved grid only");

    auto* check_cmd = cli.add_subcommand("check", "Finite-difference and oracle checks for the configured model");
    check_cmd->add_option("config", config_path, "JSON config")->required();

    auto* sim_cmd = cli.add_subcommand("simulate", "Integrate the model under a given control table");
    sim_cmd->add_option("config", config_path, "JSON config")->required();
    sim_cmd->add_option("--control", control_file, "CSV with header t,<control names>, one row per node")->required();
    sim_cmd->add_option("--out", out_dir, "Output directory (overrides output.directory)");

    CLI11_PARSE(cli, argc, argv);

    app::Log log;
    log.level = app::log_level_from_env();

    try {
        const app::RunConfig cfg = app::load_config(config_path);
        const app::fs::path out = out_dir.empty() ? cfg.output_dir : app::fs::path(out_dir);
        if (*solve_cmd) {
            if (dry_run) {
                app::print_grid(std::cout, cfg);
                return app::kOk;
            }
            return app::run_solve(cfg, out, log).exit_code;
        }
        if (*check_cmd) return app::run_check(cfg, log).pass ? app::kOk : app::kCheckFailed;
        if (*sim_cmd) {
            app::run_simulate(cfg, control_file, out, log);
            return app::kOk;
        }
    } catch (const app::ConfigError& e) {
        return report_config_error(e);
    } catch (const essa::Error& e) {
        std::cerr << "essa: " << e.what() << "\n";
        return app::kNotConverged;
    }
    return app::kOk;
}
