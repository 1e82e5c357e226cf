#include "mbnet/synthetic_scene.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

int main(int argc, char** argv) {
    CLI::App app{"Write a small synthetic relighting dataset"};
    std::string root;
    std::string targets;
    mbnet::SyntheticDatasetOptions options;
    app.add_option("root", root, "output directory")->required();
    app.add_option("--scenes", options.scenes, "number of scenes");
    app.add_option("--height", options.height, "image height");
    app.add_option("--width", options.width, "image width");
    app.add_option("--seed", options.seed, "scene seed");
    app.add_option("--targets", targets, "also copy the (4500, E) targets into this directory");
    CLI11_PARSE(app, argc, argv);

    try {
        const auto ids = mbnet::write_synthetic_dataset(root, options);
        std::cout << "wrote " << ids.size() << " scenes to " << root << '\n';
        if (!targets.empty()) {
            namespace fs = std::filesystem;
            fs::create_directories(targets);
            for (const auto& id : ids) {
                const auto name = options.naming.image_name(id, mbnet::kTargetTemp, mbnet::Angle::E);
                fs::copy_file(fs::path(root) / name, fs::path(targets) / name, fs::copy_options::overwrite_existing);
            }
            std::cout << "copied " << ids.size() << " targets to " << targets << '\n';
        }
    } catch (const std::exception& e) {
        std::cerr << "mbnet_fixture: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
