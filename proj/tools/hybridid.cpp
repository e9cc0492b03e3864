// Command-line front end: one subcommand per pipeline stage plus `pipeline`.

#include <chrono>
#include <iostream>

#include <CLI11.hpp>

#include "hybridid/pipeline.hpp"

using namespace hybridid;

namespace {

int exit_code(ErrorCategory c) {
    switch (c) {
        case ErrorCategory::config: return 2;
        case ErrorCategory::data: return 2;
        case ErrorCategory::dependency: return 3;
        case ErrorCategory::numerical: return 4;
    }
    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Incremental hybrid model identification and MPC"};
    app.require_subcommand(1, 1);

    std::string config_path, out_dir, case_name_opt;
    std::optional<std::uint64_t> seed;
    std::optional<double> tau, wreg;
    std::optional<int> epochs;

    std::vector<std::string> commands = Pipeline::stage_names();
    commands.push_back("pipeline");
    for (const auto& name : commands) {
        auto* sub = app.add_subcommand(name, name == "pipeline" ? "run every stage in order" : "run the " + name + " stage");
        sub->add_option("--config", config_path, "pipeline configuration (JSON)")->check(CLI::ExistingFile);
        sub->add_option("--out", out_dir, "output directory");
        sub->add_option("--seed", seed, "random seed");
        sub->add_option("--case", case_name_opt, "cstr, three-tank or user-model");
        sub->add_option("--tau", tau, "correlation threshold");
        sub->add_option("--wreg", wreg, "regularization weight");
        sub->add_option("--epochs", epochs, "training epochs");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }
    const std::string command = app.get_subcommands().front()->get_name();

    try {
        std::optional<std::string> case_override;
        if (!case_name_opt.empty()) case_override = case_name_opt;
        PipelineConfig cfg;
        if (!config_path.empty()) {
            cfg = load_config(config_path, case_override);
        } else {
            cfg = default_config(parse_case(case_override.value_or("cstr"), "--case"));
        }
        if (seed) cfg.seed = *seed;
        if (tau) cfg.analysis.tau = *tau;
        if (wreg) cfg.estimation.w_reg = *wreg;
        if (epochs) cfg.training.train.epochs = *epochs;
        if (!out_dir.empty()) cfg.out = out_dir;

        Pipeline pipe(cfg, cfg.out);
        const std::vector<std::string> stages = command == "pipeline" ? pipe.stages() : std::vector<std::string>{command};
        for (const auto& s : stages) {
            const auto t0 = std::chrono::steady_clock::now();
            StageResult r = pipe.run(s);
            const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            std::cout << r.summary << " (" << dt << " s)" << std::endl;
        }
    } catch (const Error& e) {
        std::cerr << "error[" << category_name(e.category()) << "]: " << e.what() << std::endl;
        return exit_code(e.category());
    } catch (const std::exception& e) {
        std::cerr << "error[internal]: " << e.what() << std::endl;
        return 1;
    }
    return 0;
}
