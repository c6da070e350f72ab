#include "sepnet/synthetic.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
    CLI::App app{"Write the two-class synthetic blob dataset (class0/, class1/ of PNG files)", "sepnet-synth"};
    std::filesystem::path root;
    sepnet::SyntheticSpec spec;
    app.add_option("root", root, "Output directory")->required();
    app.add_option("--per-class", spec.per_class)->check(CLI::PositiveNumber)->capture_default_str();
    app.add_option("--size", spec.size, "Image edge length")->check(CLI::Range(9, 4096))->capture_default_str();
    app.add_option("--seed", spec.seed)->capture_default_str();
    CLI11_PARSE(app, argc, argv);
    if (std::filesystem::exists(root) && !std::filesystem::is_empty(root)) {
        std::cerr << "error: " << root.string() << " exists and is not empty\n";
        return 1;
    }
    try {
        sepnet::write_synthetic_dataset(root, spec);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    std::cout << "wrote " << 2 * spec.per_class << " images to " << root.string() << '\n';
    return 0;
}
