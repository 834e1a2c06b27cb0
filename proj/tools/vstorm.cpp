#include <iostream>

#include "CLI11.hpp"
#include "vstorm/io.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Variational multislice dynamic MRI reconstruction on a simulated phantom"};
    app.set_version_flag("--version", vstorm::version_string);
    app.require_subcommand(1, 1);

    std::string config_path;
    std::string output;
    std::uint64_t seed = 0;
    std::string mode;
    auto* cfg_opt = app.add_option("--config", config_path, "JSON experiment config")->required();
    auto* out_opt = app.add_option("--output", output, "output directory (overrides output_dir)");
    auto* seed_opt = app.add_option("--seed", seed, "global seed (overrides seed)");
    auto* mode_opt = app.add_option("--mode", mode,
                                    "training mode: V-SToRM:MS, G-SToRM:MS, V-SToRM:SS or G-SToRM:SS");
    for (auto* o : {cfg_opt, out_opt, seed_opt, mode_opt}) o->configurable(false);

    for (const char* name : {"simulate", "train", "reconstruct", "evaluate", "export-frames", "report"})
        app.add_subcommand(name)->fallthrough();
    app.add_subcommand("all", "run every stage in order")->fallthrough();

    CLI11_PARSE(app, argc, argv);
    const std::string command = app.get_subcommands().front()->get_name();

    try {
        vstorm::ExperimentConfig cfg = vstorm::parse_config(config_path);
        if (*out_opt) cfg.output_dir = output;
        if (*seed_opt) cfg.seed = seed;
        if (*mode_opt) cfg.train.mode = vstorm::parse_mode(mode);
        cfg.propagate();
        if (command == "all") {
            for (const char* c : {"simulate", "train", "reconstruct", "evaluate", "export-frames", "report"}) {
                std::cerr << "vstorm: " << c << "\n";
                vstorm::run_pipeline(c, cfg);
            }
        } else {
            vstorm::run_pipeline(command, cfg);
        }
    } catch (const std::exception& e) {
        std::cerr << "vstorm " << command << ": " << e.what() << "\n";
        return vstorm::exit_code(e);
    }
    return 0;
}
