#include "mbnet/commands.hpp"
#include "mbnet/errors.hpp"
#include "mbnet/run_config.hpp"

#include <CLI11.hpp>
#include <torch/torch.h>

#include <cstdlib>
#include <iostream>
#include <sstream>

namespace {

std::string key_listing() {
    std::ostringstream out;
    out << "\nConfig keys (section.key = value):\n";
    for (const auto& info : mbnet::config_keys()) {
        out << "  " << info.key;
        if (info.key.size() < 30) {
            out << std::string(30 - info.key.size(), ' ');
        } else {
            out << ' ';
        }
        out << info.description << '\n';
    }
    return out.str();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"MBNet depth-guided image relighting"};
    app.footer(key_listing());
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> overrides;
    for (const auto command : mbnet::kCommands) {
        auto* sub = app.add_subcommand(std::string(command));
        sub->add_option("-c,--config", config_path, "config file with section.key = value lines");
        sub->add_option("--set", overrides, "override one key, e.g. --set train.epochs=2")->allow_extra_args(false);
    }
    app.get_subcommand("index")->description("scan data.root and write data.manifest");
    app.get_subcommand("train")->description("fit a model and write checkpoints and loss_curve.txt");
    app.get_subcommand("infer")->description("relight every (6500, N) input in infer.input_dir");
    app.get_subcommand("evaluate")->description("score eval.pred_dir against eval.gt_dir");

    CLI11_PARSE(app, argc, argv);

    const auto* chosen = app.get_subcommands().front();
    const std::string command = chosen->get_name();

    mbnet::RunConfig config;
    try {
        if (!config_path.empty()) {
            config = mbnet::parse_config(config_path);
        }
        if (!config.is_set("train.seed")) {
            if (const char* seed = std::getenv("MBNET_SEED"); seed != nullptr && *seed != '\0') {
                config.set("train.seed", seed);
            }
        }
        for (const auto& assignment : overrides) {
            mbnet::apply_override(config, assignment);
        }
    } catch (const mbnet::Error& e) {
        std::cerr << "mbnet " << command << ": config error: " << e.what() << '\n';
        return 2;
    }

    torch::set_num_threads(1);
    return mbnet::run_command(command, config, std::cout, std::cerr);
}
