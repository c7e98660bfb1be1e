// SPDX-License-Identifier: Apache-2.0
//
// levy-periodic <subcommand> --config <path> [--seed N] [--out DIR] [--threads N]

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "levy_periodic/config.hpp"
#include "levy_periodic/pipeline.hpp"

namespace lp = levy_periodic;

int main(int argc, char** argv) {
    CLI::App app{"Simulation and ergodic verification for tau-periodic Levy-driven SDEs", "levy-periodic"};
    app.require_subcommand(1);

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;
    unsigned threads = 0;

    const std::vector<std::pair<std::string, std::string>> subs{
        {"simulate", "simulate an ensemble and write it as CSV"},
        {"hypotheses", "estimate the hypothesis constants and check the moment bound"},
        {"periodic-measure", "estimate phase measures and the periodicity diagnostics"},
        {"contraction", "fit the exponential contraction rate"},
        {"slln", "strong law diagnostics for the configured observable"},
        {"clt", "variance estimators, CLT tests and martingale conditions"},
        {"full", "run every stage with a shared seed"},
    };
    for (const auto& [name, help] : subs) {
        auto* sub = app.add_subcommand(name, help);
        sub->add_option("--config", config_path, "configuration file")->required();
        sub->add_option("--seed", seed, "override the master seed");
        sub->add_option("--out", out_dir, "output directory (overrides run.out)");
        sub->add_option("--threads", threads, "worker threads (default: $" + std::string(lp::kThreadsEnv) + " or hardware)");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return lp::pipeline::kUsage;
    }

    const std::string sub = app.get_subcommands().front()->get_name();
    if (!std::filesystem::is_regular_file(config_path)) {
        std::cerr << "levy-periodic: config file '" << config_path << "' not found\n" << app.help();
        return lp::pipeline::kUsage;
    }

    lp::ExperimentConfig cfg;
    try {
        cfg = lp::load_config(config_path);
    } catch (const lp::ConfigError& e) {
        std::cerr << "levy-periodic: " << e.what() << "\n";
        return lp::pipeline::kUsage;
    }
    if (seed) cfg.seed = *seed;
    if (out_dir) cfg.out = *out_dir;

    lp::pipeline::RunOptions opt;
    opt.out_dir = cfg.out;
    opt.threads = threads;
    const int code = lp::pipeline::run(cfg, sub, opt);
    std::cout << sub << ": exit " << code << " (manifest: " << (opt.out_dir / "manifest.json").string() << ")\n";
    return code;
}
