#ifndef SEPNET_TESTS_FIXTURES_HPP
#define SEPNET_TESTS_FIXTURES_HPP

#include "sepnet/dataset.hpp"
#include "sepnet/model.hpp"
#include "sepnet/synthetic.hpp"
#include "test_util.hpp"

#include <fstream>
#include <iterator>
#include <string>

namespace sepnet::testutil {

struct Fixture {
    std::filesystem::path root;
    DatasetManifest manifest;
};

/// Small generated two-class dataset, already split.
inline Fixture synthetic_fixture(const std::string& name, int per_class, int val, int test, std::uint64_t seed = 5,
                                 int size = 32) {
    Fixture f;
    f.root = scratch_dir(name) / "data";
    write_synthetic_dataset(f.root, {per_class, size, seed});
    f.manifest = split_dataset(build_manifest(f.root), SplitSpec::from_counts(val, test), seed);
    return f;
}

inline ModelConfig small_model(int resolution = 32, std::uint64_t seed = 42) {
    ModelConfig c;
    c.alpha = 0.25;
    c.resolution = resolution;
    c.head = Head::binary;
    c.seed = seed;
    return c;
}

inline std::string file_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace sepnet::testutil

#endif  // SEPNET_TESTS_FIXTURES_HPP
