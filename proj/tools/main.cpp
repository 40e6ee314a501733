// Copyright (c) 2026 the gradnorm authors
// Licensed under the Apache License 2.0.
//
// gradnorm: measure how resampling distorts gradient statistics across an
// image pyramid, fit the piecewise normalization function g(s), and apply
// it to gradient channel features.

#include <cstdio>
#include <exception>
#include <functional>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "gradnorm/commands.hpp"

namespace {

using gradnorm::ExitCode;

int run_measure(const gradnorm::RunConfig& cfg) {
    const auto res = gradnorm::cmd_measure(cfg);
    std::cout << "measured " << res.images << " images (" << res.skipped_files
              << " unreadable files skipped, " << res.degenerate_images
              << " degenerate), c mean=" << gradnorm::format_real(res.c_stats.mean)
              << " stdev=" << gradnorm::format_real(res.c_stats.stdev) << "\n";
    std::cout << "wrote " << res.samples_path << " and " << res.summary_path << "\n";
    return static_cast<int>(ExitCode::ok);
}

int run_fit(const gradnorm::RunConfig& cfg) {
    const auto res = gradnorm::cmd_fit(cfg);
    std::cout << "up: g(s) = " << gradnorm::format_real(res.model.a1) << "*s + "
              << gradnorm::format_real(res.model.b1) << "\n";
    std::cout << "down: g(s) = " << gradnorm::format_real(res.model.a2) << "*s^2 + "
              << gradnorm::format_real(res.model.b2) << "*s + "
              << gradnorm::format_real(res.model.c2) << "\n";
    std::cout << "rmse_ratio poly=" << gradnorm::format_real(res.ratio_rmse_poly)
              << " powerlaw=" << gradnorm::format_real(res.ratio_rmse_powerlaw) << "\n";
    std::cout << "rmse_residual poly=" << gradnorm::format_real(res.model.rmse_total)
              << " powerlaw=" << gradnorm::format_real(res.power_law.rmse) << "\n";
    std::cout << "wrote " << res.model_path << " and " << res.report_path << "\n";
    return static_cast<int>(ExitCode::ok);
}

int run_verify(std::uint64_t seed, bool corrupt_rho) {
    std::function<double(double, double)> hook;
    if (corrupt_rho)
        hook = [](double s, double c) { return 1.0 / gradnorm::rho(s, c); };
    const auto report = gradnorm::cmd_verify(seed, hook);
    for (const auto& suite : report.suites) {
        std::cout << "suite " << suite.name << ": " << (suite.pass ? "PASS" : "FAIL")
                  << " max_abs_error=" << gradnorm::format_real(suite.max_abs_error) << " ("
                  << suite.detail << ")\n";
    }
    if (!report.all_pass) {
        std::cerr << "error: verify: one or more suites failed\n";
        return static_cast<int>(ExitCode::verify_failed);
    }
    return static_cast<int>(ExitCode::ok);
}

int run_normalize(const gradnorm::RunConfig& cfg) {
    const auto res = gradnorm::cmd_normalize(cfg);
    std::cout << "wrote " << res.dump_files.size() << " channel dumps and " << res.index_path
              << "\n";
    return static_cast<int>(ExitCode::ok);
}

int run_experiment(const gradnorm::RunConfig& cfg) {
    const auto res = gradnorm::cmd_experiment_variance(cfg);
    std::cout << "mean_variance_raw=" << gradnorm::format_real(res.mean_variance_raw)
              << " mean_variance_normalized="
              << gradnorm::format_real(res.mean_variance_normalized)
              << " ratio=" << gradnorm::format_real(res.ratio) << "\n";
    std::cout << "wrote " << res.report_path << "\n";
    return static_cast<int>(ExitCode::ok);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"gradient-statistics measurement and scale normalization over image pyramids"};
    app.require_subcommand(1);

    gradnorm::RunConfig cfg;
    bool corrupt_rho = false;

    auto add_scale_flags = [&](CLI::App* cmd) {
        cmd->add_option("--scale-min", cfg.scale_min, "smallest scale (default 0.1)");
        cmd->add_option("--scale-max", cfg.scale_max, "largest scale (default 2.0)");
        cmd->add_option("--scale-step", cfg.scale_step, "scale increment (default 0.1)");
    };
    auto add_cell_flags = [&](CLI::App* cmd) {
        cmd->add_option("--cell-size", cfg.cell_size, "cell size in pixels (default 4)");
        cmd->add_option("--bins", cfg.bins, "orientation bins (default 6)");
    };

    CLI::App* measure = app.add_subcommand(
        "measure", "collect gradient expectations of a corpus over a scale grid");
    measure->add_option("--input", cfg.input, "directory of PNG/PGM images")->required();
    measure->add_option("--output", cfg.output, "samples CSV path")->required();
    add_scale_flags(measure);
    measure->add_option("--jobs", cfg.jobs, "worker threads (default 1)");

    CLI::App* fit = app.add_subcommand("fit", "fit g(s) and the power-law baseline to samples");
    fit->add_option("--input", cfg.input, "samples CSV path")->required();
    fit->add_option("--output", cfg.output, "model JSON path")->required();
    fit->add_option("--c", cfg.c_override, "override the corpus constant recorded in the model");

    CLI::App* verify = app.add_subcommand("verify", "run the built-in oracle suites");
    verify->add_option("--seed", cfg.seed, "seed for randomized suites");
    verify->add_flag("--corrupt-rho", corrupt_rho)->group("");  // negative-control hook

    CLI::App* normalize =
        app.add_subcommand("normalize", "write normalized channel dumps for one image");
    normalize->add_option("--input", cfg.input, "image path (PNG or PGM)")->required();
    normalize->add_option("--model", cfg.model_path, "model JSON (optional: raw channels without)");
    normalize->add_option("--output", cfg.output, "output directory")->required();
    add_scale_flags(normalize);
    add_cell_flags(normalize);

    CLI::App* experiment = app.add_subcommand(
        "experiment-variance", "cross-scale channel variance, raw vs normalized");
    experiment->add_option("--input", cfg.input, "directory of PNG/PGM images")->required();
    experiment->add_option("--model", cfg.model_path, "model JSON")->required();
    experiment->add_option("--output", cfg.output, "report JSON path")->required();
    add_scale_flags(experiment);
    add_cell_flags(experiment);
    experiment->add_option("--jobs", cfg.jobs, "worker threads (default 1)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        std::cerr << "error: usage: " << e.what() << "\n";
        return static_cast<int>(ExitCode::usage);
    }

    try {
        if (app.got_subcommand(measure)) return run_measure(cfg);
        if (app.got_subcommand(fit)) return run_fit(cfg);
        if (app.got_subcommand(verify)) return run_verify(cfg.seed, corrupt_rho);
        if (app.got_subcommand(normalize)) return run_normalize(cfg);
        if (app.got_subcommand(experiment)) return run_experiment(cfg);
    } catch (const gradnorm::usage_error& e) {
        std::cerr << "error: usage: " << e.what() << "\n";
        return static_cast<int>(ExitCode::usage);
    } catch (const gradnorm::io_error& e) {
        std::cerr << "error: io: " << e.what() << "\n";
        return static_cast<int>(ExitCode::io);
    } catch (const gradnorm::numeric_error& e) {
        std::cerr << "error: numeric: " << e.what() << "\n";
        return static_cast<int>(ExitCode::numeric);
    } catch (const std::exception& e) {
        std::cerr << "error: internal: " << e.what() << "\n";
        return static_cast<int>(ExitCode::numeric);
    }
    return static_cast<int>(ExitCode::usage);
}
