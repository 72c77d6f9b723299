#include <iostream>

#include "CLI11.hpp"
#include "ieatforge/pipeline.hpp"

namespace {

using ieatforge::pipeline::Pipeline;
using ieatforge::pipeline::PipelineConfig;

struct CliOptions {
    std::string config_path = "configs/default.toml";
    std::optional<uint64_t> seed;
    std::optional<std::string> out_dir;
    bool mock = false;
};

PipelineConfig load_config(const CliOptions& options) {
    PipelineConfig config = PipelineConfig::from_file(options.config_path);
    if (options.seed) config.seed = *options.seed;
    if (options.out_dir) config.out_dir = *options.out_dir;
    if (options.mock) config.mock = true;
    return config;
}

void print_report(const ieatforge::pipeline::StageReport& report) {
    std::cout << report.stage << (report.skipped ? " [skipped]" : "") << "\n";
    for (const auto& [key, value] : report.counts) {
        std::cout << "  " << key << " = " << value << "\n";
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"IEAT data construction, toy training and evaluation pipeline"};
    app.require_subcommand(1);

    CliOptions options;
    app.add_option("--config", options.config_path, "pipeline config (TOML)");
    uint64_t seed_value = 0;
    auto* seed_opt = app.add_option("--seed", seed_value, "override the config seed");
    std::string out_value;
    auto* out_opt = app.add_option("--out", out_value, "override the output directory");
    app.add_flag("--mock", options.mock, "force mock clients");

    auto* validate_cmd = app.add_subcommand("validate", "validate the config and exit");
    auto* run_cmd = app.add_subcommand("run", "run a single pipeline stage");
    std::string stage;
    run_cmd->add_option("stage", stage, "stage name")->required();
    auto* run_all_cmd = app.add_subcommand("run-all", "run the full pipeline");
    auto* report_cmd = app.add_subcommand("report", "re-render the report from eval outputs");

    CLI11_PARSE(app, argc, argv);
    if (*seed_opt) options.seed = seed_value;
    if (*out_opt) options.out_dir = out_value;

    try {
        PipelineConfig config = load_config(options);
        if (validate_cmd->parsed()) {
            config.validate();
            std::cout << "config ok\n";
            return 0;
        }
        Pipeline pipeline(config);
        if (run_cmd->parsed()) {
            config.validate();
            print_report(pipeline.run_stage(stage));
            return 0;
        }
        if (report_cmd->parsed()) {
            config.validate();
            print_report(pipeline.run_stage("report"));
            return 0;
        }
        if (run_all_cmd->parsed()) {
            auto summary = pipeline.run_all();
            for (const auto& report : summary.reports) print_report(report);
            std::cout << "report: " << summary.report_path.string() << "\n";
            return 0;
        }
    } catch (const ieatforge::ConfigValidationError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
