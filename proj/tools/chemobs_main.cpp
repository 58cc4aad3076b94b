// Scenario-driven front end: parse a JSON scenario, run it, and emit
// trajectory.csv / report.json into the output directory.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "chemobs/scenario.hpp"

namespace {

struct CommonArgs {
    std::string config;
    std::string out_dir = "out";
    std::optional<double> h_override;
    std::optional<std::uint64_t> seed_override;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->set_help_flag("--help", "print help");  // keep --h free for the step override
    cmd->add_option("config", args.config, "scenario JSON file")->required();
    cmd->add_option("--out", args.out_dir, "output directory (default: out)");
    cmd->add_option("--h", args.h_override, "override numerics.h");
    cmd->add_option("--seed", args.seed_override, "override the noise seed");
}

int run(const CommonArgs& args, chemobs::ScenarioKind expected) {
    chemobs::Scenario sc = chemobs::parse_scenario(args.config);
    if (sc.kind != expected)
        throw chemobs::ConfigError(std::string("scenario kind is '") +
                                       chemobs::to_string(sc.kind) + "' but the '" +
                                       chemobs::to_string(expected) +
                                       "' subcommand was invoked",
                                   "kind");
    if (args.h_override) {
        sc.echo["numerics"]["h"] = *args.h_override;
        sc = chemobs::parse_scenario_json(sc.echo);
    }
    if (args.seed_override) {
        sc.echo["seed"] = *args.seed_override;
        sc = chemobs::parse_scenario_json(sc.echo);
    }
    const chemobs::RunResult res = chemobs::run_scenario(sc, args.out_dir);
    std::cout << "report: " << res.report_path.string() << "\n";
    if (!res.csv_path.empty()) std::cout << "trajectory: " << res.csv_path.string() << "\n";
    if (res.exit_code != 0)
        std::cerr << "scenario finished with status " << res.exit_code << "\n";
    return res.exit_code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"chemostat simulation, dead-beat observation and analysis toolkit"};
    app.require_subcommand(1);

    struct Sub {
        const char* name;
        const char* help;
        chemobs::ScenarioKind kind;
    };
    const Sub subs[] = {
        {"simulate", "integrate the chemostat and record the trajectory",
         chemobs::ScenarioKind::simulate},
        {"observe", "simulate and run the dead-beat observer on the measurements",
         chemobs::ScenarioKind::observe},
        {"closed-loop", "simulate the output-feedback stabilized loop",
         chemobs::ScenarioKind::closed_loop},
        {"analyze", "coexistence, batch identifiability and observability conditions",
         chemobs::ScenarioKind::analyze},
        {"singular", "integrate the singular output trajectory",
         chemobs::ScenarioKind::singular},
    };

    CommonArgs args;
    chemobs::ScenarioKind selected{};
    for (const Sub& s : subs) {
        CLI::App* cmd = app.add_subcommand(s.name, s.help);
        add_common(cmd, args);
        cmd->callback([&selected, kind = s.kind] { selected = kind; });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        return run(args, selected);
    } catch (const chemobs::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const chemobs::IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 5;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
